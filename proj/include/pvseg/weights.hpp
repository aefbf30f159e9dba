/* Copyright 2026 The pvseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Named-tensor weight files: "PVSGWTS1", u32 count, then per tensor
// u32 name length, name bytes, u64 element count, float32 values
// (little-endian host order).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pvseg/error.hpp"
#include "pvseg/segmentation_model.hpp"

namespace pvseg {

namespace io_detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated file while reading " + what);
  return v;
}

inline void write_floats(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_floats(std::istream& in, std::size_t n,
                                      const std::string& what) {
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw IoError("truncated file while reading " + what);
  return v;
}

}  // namespace io_detail

inline constexpr char kWeightsMagic[8] = {'P', 'V', 'S', 'G', 'W', 'T', 'S', '1'};

using NamedTensors = std::map<std::string, std::vector<float>>;

inline void save_named_tensors(const NamedTensors& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights '" + path + "'");
  out.write(kWeightsMagic, sizeof(kWeightsMagic));
  io_detail::write_pod(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, values] : tensors) {
    io_detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io_detail::write_pod(out, static_cast<std::uint64_t>(values.size()));
    io_detail::write_floats(out, values);
  }
  if (!out) throw IoError("failed writing weights '" + path + "'");
}

inline NamedTensors load_named_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights '" + path + "'");
  char magic[sizeof(kWeightsMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw IoError("'" + path + "' is not a pvseg weight file");
  }
  const auto count = io_detail::read_pod<std::uint32_t>(in, "tensor count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io_detail::read_pod<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto n = io_detail::read_pod<std::uint64_t>(in, "tensor size");
    out[name] = io_detail::read_floats(in, n, name);
  }
  return out;
}

// Parameters and buffers of a model, keyed by name.
inline NamedTensors named_tensors(SegmentationModel& model) {
  NamedTensors out;
  for (auto* p : model.parameters()) out[p->name] = p->value;
  for (auto* b : model.buffers()) out[b->name] = b->value;
  return out;
}

inline void save_named_parameters(SegmentationModel& model, const std::string& path) {
  save_named_tensors(named_tensors(model), path);
}

// Loads every tensor whose name starts with `prefix` and exists in the
// model; returns how many were loaded. Size mismatches are errors.
inline std::size_t load_named_parameters(SegmentationModel& model, const std::string& path,
                                         const std::string& prefix = "") {
  const NamedTensors file = load_named_tensors(path);
  std::size_t loaded = 0;
  auto assign = [&](const std::string& name, std::vector<float>& dst) {
    if (name.rfind(prefix, 0) != 0) return;
    auto it = file.find(name);
    if (it == file.end()) return;
    if (it->second.size() != dst.size()) {
      throw ShapeMismatch("weight '" + name + "' has " + std::to_string(it->second.size()) +
                          " values, model expects " + std::to_string(dst.size()));
    }
    dst = it->second;
    ++loaded;
  };
  for (auto* p : model.parameters()) assign(p->name, p->value);
  for (auto* b : model.buffers()) assign(b->name, b->value);
  return loaded;
}

}  // namespace pvseg
