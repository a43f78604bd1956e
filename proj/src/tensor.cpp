#include "mml/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mml {

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool all_finite(const TensorMap& m) {
  for (const auto& [name, t] : m)
    if (!t.all_finite()) return false;
  return true;
}

namespace {

constexpr char kMagic[7] = {'M', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  put_u32(out, std::bit_cast<uint32_t>(f));
}

uint32_t get_u32(const std::string& in, size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = static_cast<uint8_t>(in[pos]) |
               (static_cast<uint8_t>(in[pos + 1]) << 8) |
               (static_cast<uint8_t>(in[pos + 2]) << 16) |
               (static_cast<uint8_t>(in[pos + 3]) << 24);
  pos += 4;
  return v;
}

std::string serialize(const TensorMap& m) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(m.size()));
  for (const auto& [name, t] : m) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    for (float f : t.data) put_f32(out, f);
  }
  return out;
}

}  // namespace

void save_tensor_map(const TensorMap& m, const std::string& path) {
  std::string bytes = serialize(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

TensorMap load_tensor_map(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string in((std::istreambuf_iterator<char>(f)),
                 std::istreambuf_iterator<char>());
  size_t pos = 0;
  if (in.size() < sizeof(kMagic) ||
      std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  pos = sizeof(kMagic);
  uint32_t version = get_u32(in, pos);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  uint32_t count = get_u32(in, pos);
  TensorMap m;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get_u32(in, pos);
    if (pos + name_len > in.size())
      throw std::runtime_error("checkpoint: truncated name");
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    uint32_t rank = get_u32(in, pos);
    std::vector<int> shape(rank);
    for (uint32_t r = 0; r < rank; ++r)
      shape[r] = static_cast<int>(get_u32(in, pos));
    int64_t n = Tensor::numel_of(shape);
    std::vector<float> data(static_cast<size_t>(n));
    for (int64_t k = 0; k < n; ++k)
      data[static_cast<size_t>(k)] = std::bit_cast<float>(get_u32(in, pos));
    if (m.count(name)) throw std::runtime_error("checkpoint: duplicate entry " + name);
    m.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return m;
}

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a_bytes(buf, static_cast<size_t>(f.gcount()), h);
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

uint64_t tensor_map_hash(const TensorMap& m) {
  std::string bytes = serialize(m);
  return fnv1a_bytes(bytes.data(), bytes.size());
}

}  // namespace mml
