#include "fixtures.hpp"

#include <filesystem>

namespace fixture {

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fpb_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

fpb::ToySpec tiny_toy_spec(int ids, int per_id, std::uint64_t seed) {
  fpb::ToySpec spec;
  spec.num_identities = ids;
  spec.images_per_identity = per_id;
  spec.height = 64;
  spec.width = 32;
  spec.seed = seed;
  spec.num_cameras = 4;
  spec.max_shift_fraction = 0.05;
  spec.scale_jitter = 0.05;
  return spec;
}

fpb::ModelConfig tiny_model(int num_identities, bool use_fpb, std::uint64_t seed) {
  fpb::ModelConfig mc;
  mc.backbone.base_width = 4;
  mc.backbone.input_height = 64;
  mc.backbone.input_width = 32;
  mc.fpb.inner_channels = 8;
  mc.fpb.out_channels = 16;
  mc.fpb.reduced_dim = 8;
  mc.fpb.parts = 2;
  mc.use_fpb = use_fpb;
  mc.num_identities = num_identities;
  mc.init_seed = seed;
  return mc;
}

}  // namespace fixture
