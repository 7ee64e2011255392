#include "fpb/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fpb {

namespace {

constexpr char kMagic[8] = {'F', 'P', 'B', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_entry(std::ostream& os, std::uint8_t kind, const std::string& name, const Tensor& t) {
  put<std::uint8_t>(os, kind);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(real)));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, Checkpoint::kVersion);
    const std::string meta = ck.meta.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, ck.params.size() + ck.buffers.size() + ck.optimizer.size());
    for (const auto& [name, t] : ck.params) put_entry(os, 0, name, t);
    for (const auto& [name, t] : ck.buffers) put_entry(os, 1, name, t);
    for (const auto& [name, t] : ck.optimizer) put_entry(os, 2, name, t);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  const auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto meta_len = get<std::uint64_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  ck.meta = nlohmann::json::parse(meta);
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto kind = get<std::uint8_t>(is);
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::int64_t>(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(real)));
    if (!is) throw std::runtime_error("checkpoint: truncated entry " + name);
    auto& dst = kind == 0 ? ck.params : kind == 1 ? ck.buffers : ck.optimizer;
    dst.emplace(std::move(name), std::move(t));
  }
  return ck;
}

Checkpoint snapshot(const ParamTable& table) {
  Checkpoint ck;
  for (const auto& p : table.params()) ck.params.emplace(p.name, p.var->value());
  for (const auto& b : table.buffers()) ck.buffers.emplace(b.name, *b.tensor);
  return ck;
}

void restore(const ParamTable& table, const Checkpoint& ck) {
  for (const auto& p : table.params()) {
    auto it = ck.params.find(p.name);
    if (it == ck.params.end()) throw std::runtime_error("checkpoint: missing parameter " + p.name);
    if (it->second.shape() != p.var->shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " + shape_str(it->second.shape()) +
                               " vs " + shape_str(p.var->shape()));
    p.var->mutable_value() = it->second;
  }
  for (const auto& b : table.buffers()) {
    auto it = ck.buffers.find(b.name);
    if (it == ck.buffers.end()) throw std::runtime_error("checkpoint: missing buffer " + b.name);
    *b.tensor = it->second;
  }
}

}  // namespace fpb
