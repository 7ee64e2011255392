#pragma once

#include <string>

#include "fpb/datasets.hpp"
#include "fpb/model.hpp"

namespace fixture {

// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& name);

// Small synthetic dataset: `ids` identities of `per_id` 64x32 images, mild
// spatial jitter.
fpb::ToySpec tiny_toy_spec(int ids = 8, int per_id = 8, std::uint64_t seed = 3);

// base_width 4, 64x32 input, 3 parts.
fpb::ModelConfig tiny_model(int num_identities, bool use_fpb = true, std::uint64_t seed = 1);

}  // namespace fixture
