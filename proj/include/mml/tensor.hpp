#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mml {

// Dense row-major float tensor. All model weights, activations and dataset
// pixels go through this one type; layouts are documented at the use sites.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dim");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), 0.0f);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const;
};

// Named collection of weight tensors; the unit of checkpointing and
// weight transfer. std::map keeps iteration (and file) order deterministic.
using TensorMap = std::map<std::string, Tensor>;

bool all_finite(const TensorMap& m);

// Checkpoint container: magic "MMLCKPT", version u32, entry count u32, then
// per entry (name length u32, name bytes, rank u32, dims u32[], f32 data).
// All integers and floats little-endian.
void save_tensor_map(const TensorMap& m, const std::string& path);
TensorMap load_tensor_map(const std::string& path);

// FNV-1a 64-bit over a file's bytes; manifest content hashes.
uint64_t fnv1a_file(const std::string& path);
uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 14695981039346656037ull);
std::string hash_hex(uint64_t h);

// Hash of a TensorMap's serialized form without touching disk.
uint64_t tensor_map_hash(const TensorMap& m);

}  // namespace mml
