#pragma once

// Parameter blobs: little-endian float32 values packed back to back, described
// by a JSON manifest entry per tensor {name, shape, offset, count}.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mash/errors.hpp"
#include "mash/mlp.hpp"

namespace mash::nn {

using json = nlohmann::json;

namespace detail {

inline void put_f32_le(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFFu));
}

inline float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

// 64-bit FNV-1a, used for blob and config fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

struct ParamBlob {
  std::vector<std::uint8_t> bytes;
  json manifest = json::array();

  std::string hash() const {
    return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
  }
};

template <typename Scalar>
void append_tensors(ParamBlob& blob, const std::vector<TensorRef<Scalar>>& tensors) {
  for (const auto& t : tensors) {
    blob.manifest.push_back({{"name", t.name},
                             {"shape", t.shape},
                             {"offset", blob.bytes.size()},
                             {"count", t.data.size()},
                             {"dtype", "float32-le"}});
    for (Scalar v : t.data) detail::put_f32_le(blob.bytes, static_cast<float>(v));
  }
}

// Fills every tensor from the blob by name; shapes must match the manifest.
template <typename Scalar>
void load_tensors(const ParamBlob& blob, const std::vector<TensorRef<Scalar>>& tensors) {
  for (const auto& t : tensors) {
    const json* entry = nullptr;
    for (const auto& e : blob.manifest)
      if (e.at("name") == t.name) entry = &e;
    if (!entry) throw ConfigError("parameter blob has no tensor named " + t.name);
    if (entry->at("shape").get<std::vector<std::size_t>>() != t.shape)
      throw ConfigError("parameter blob shape mismatch for " + t.name);
    const auto offset = entry->at("offset").get<std::size_t>();
    const auto count = entry->at("count").get<std::size_t>();
    if (count != t.data.size() || offset + 4 * count > blob.bytes.size())
      throw ConfigError("parameter blob truncated at " + t.name);
    for (std::size_t k = 0; k < count; ++k)
      t.data[k] = static_cast<Scalar>(detail::get_f32_le(blob.bytes.data() + offset + 4 * k));
  }
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mash::nn
