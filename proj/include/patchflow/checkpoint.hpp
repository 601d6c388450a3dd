// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor bundle format shared by checkpoints and latent dumps.
//
//   patchflow-tensors 1\n
//   meta <key> <value to end of line>\n        (any number)
//   tensor <name> <dtype> <d0>x<d1>x... <offset> <nbytes>\n
//   data\n
//   <payload: raw little-endian IEEE-754 / two's-complement buffers>
//
// Offsets are relative to the first payload byte. Tensors are stored
// contiguously in header order. dtypes: f32, f64, i64. Round-trips are
// bit-identical.

#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "patchflow/tensor.hpp"

namespace patchflow {

struct RawTensor {
  std::string dtype;
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct TensorBundle {
  std::vector<std::pair<std::string, std::string>> meta;       // ordered
  std::vector<std::pair<std::string, RawTensor>> tensors;      // ordered

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
      if (k == key) {
        v = value;
        return;
      }
    meta.emplace_back(key, value);
  }
  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
  std::string require_meta(const std::string& key) const {
    const std::string* v = find_meta(key);
    require(v != nullptr, ErrorKind::Format, "checkpoint missing meta key '" + key + "'");
    return *v;
  }
  void add_tensor(const std::string& name, RawTensor t) {
    tensors.emplace_back(name, std::move(t));
  }
  const RawTensor* find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_bundle(const std::string& path, const TensorBundle& bundle);
TensorBundle load_bundle(const std::string& path);

// ---------------------------------------------------------------------------
// Tensor <-> RawTensor
// ---------------------------------------------------------------------------

namespace detail {
template <typename S>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}
}  // namespace detail

template <typename S>
RawTensor to_raw(const Tensor<S>& t) {
  RawTensor r;
  r.dtype = detail::dtype_name<S>();
  r.shape = t.shape();
  r.bytes.resize(t.data().size_bytes());
  std::memcpy(r.bytes.data(), t.data().data(), r.bytes.size());
  return r;
}

template <typename S>
Tensor<S> from_raw(const RawTensor& r, const std::string& name) {
  require(r.dtype == detail::dtype_name<S>(), ErrorKind::Format,
          "tensor '" + name + "' has dtype " + r.dtype + ", expected " +
              detail::dtype_name<S>());
  require(r.bytes.size() == static_cast<std::size_t>(numel(r.shape)) * sizeof(S),
          ErrorKind::Format, "tensor '" + name + "' byte size does not match its shape");
  std::vector<S> v(static_cast<std::size_t>(numel(r.shape)));
  std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
  return Tensor<S>::from(r.shape, std::move(v));
}

inline RawTensor raw_from_i64(const std::vector<long long>& values) {
  RawTensor r;
  r.dtype = "i64";
  r.shape = {static_cast<int>(values.size())};
  r.bytes.resize(values.size() * sizeof(long long));
  std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
  return r;
}

inline std::vector<long long> i64_from_raw(const RawTensor& r, const std::string& name) {
  require(r.dtype == "i64", ErrorKind::Format, "tensor '" + name + "' is not i64");
  std::vector<long long> v(r.bytes.size() / sizeof(long long));
  std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
  return v;
}

}  // namespace patchflow
