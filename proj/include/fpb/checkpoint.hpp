#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "fpb/nn.hpp"

namespace fpb {

// Single-file container of named arrays plus a JSON metadata block.
//
// Layout (little-endian):
//   "FPBCKPT\0" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   | u64 entry_count | entries...
// entry: u8 kind (0 param, 1 buffer, 2 optimizer) | u32 name_len | name
//        | u32 rank | i64 dims[rank] | f64 data[numel]
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> optimizer;
};

// Written to a temporary sibling and renamed, so an existing file at `path`
// is only replaced by a complete one.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const ParamTable& table);
// Strict restore: every table entry must be present with a matching shape.
void restore(const ParamTable& table, const Checkpoint& ck);

}  // namespace fpb
