#pragma once

#include <string>
#include <vector>

#include "fpb/tensor.hpp"

namespace fpb {

// NumPy .npy (format 1.0, little-endian float64, C order).
void save_npy(const std::string& path, const Tensor& t);
Tensor load_npy(const std::string& path);

// Same container for int32 label vectors.
void save_npy_int(const std::string& path, const std::vector<int>& values);

}  // namespace fpb
