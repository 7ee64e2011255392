#include "fpb/npy.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <stdexcept>

namespace fpb {

namespace {

void write_npy(const std::string& path, const std::string& descr, const std::vector<std::int64_t>& shape,
               const char* data, std::size_t bytes) {
  std::string shape_str = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) shape_str += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) shape_str += ",";
  shape_str += ")";
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape_str + ", }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out << header;
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace

void save_npy(const std::string& path, const Tensor& t) {
  std::vector<std::int64_t> shape(t.shape().begin(), t.shape().end());
  write_npy(path, "<f8", shape, reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * 8);
}

void save_npy_int(const std::string& path, const std::vector<int>& values) {
  std::vector<std::int32_t> v(values.begin(), values.end());
  write_npy(path, "<i4", {static_cast<std::int64_t>(v.size())}, reinterpret_cast<const char*>(v.data()), v.size() * 4);
}

Tensor load_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1)
    throw std::runtime_error(path + ": not a version 1 .npy file");
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  std::string header(static_cast<std::size_t>(len_bytes[0] | (len_bytes[1] << 8)), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  if (header.find("'descr': '<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos)
    throw std::runtime_error(path + ": only little-endian float64 C-order arrays are supported");
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('shape': \(([^)]*)\))")))
    throw std::runtime_error(path + ": malformed header");
  Shape shape;
  const std::string dims = m[1];
  std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it)
    shape.push_back(std::stoll(it->str()));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
  if (!in) throw std::runtime_error(path + ": truncated data");
  return t;
}

}  // namespace fpb
