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

// Checkpoint container: "PVSGCKPT", u32 format version, u64 header length,
// JSON header, then each float32 section named in header["sections"] in
// order, then a u64 FNV-1a checksum over everything after the magic.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvseg/error.hpp"
#include "pvseg/weights.hpp"

namespace pvseg {

inline constexpr char kCheckpointMagic[8] = {'P', 'V', 'S', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, std::vector<float>> sections;

  const std::vector<float>& section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw IoError("checkpoint lacks section '" + name + "'");
    return it->second;
  }
};

namespace ckpt_detail {

class Fnv1a {
 public:
  void update(const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= static_cast<unsigned char>(data[i]);
      h_ *= 0x100000001b3ull;
    }
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = ckpt.header;
  nlohmann::json names = nlohmann::json::array();
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& [name, values] : ckpt.sections) {
    names.push_back(name);
    sizes.push_back(values.size());
  }
  header["sections"] = names;
  header["section_sizes"] = sizes;
  const std::string text = header.dump();

  std::ostringstream body;
  io_detail::write_pod(body, kCheckpointVersion);
  io_detail::write_pod(body, static_cast<std::uint64_t>(text.size()));
  body.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, values] : ckpt.sections) io_detail::write_floats(body, values);
  const std::string bytes = body.str();
  ckpt_detail::Fnv1a sum;
  sum.update(bytes.data(), bytes.size());

  // Atomic replace through a sibling temp file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io_detail::write_pod(out, sum.value());
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t magic = sizeof(kCheckpointMagic);
  if (all.size() < magic + 8 || std::memcmp(all.data(), kCheckpointMagic, magic) != 0) {
    throw IoError("'" + path.string() + "' is not a pvseg checkpoint");
  }
  const std::string bytes = all.substr(magic, all.size() - magic - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, all.data() + all.size() - 8, 8);
  ckpt_detail::Fnv1a sum;
  sum.update(bytes.data(), bytes.size());
  if (sum.value() != stored) throw IoError("checkpoint '" + path.string() + "' is corrupt");

  std::istringstream body(bytes);
  const auto version = io_detail::read_pod<std::uint32_t>(body, "version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = io_detail::read_pod<std::uint64_t>(body, "header length");
  std::string text(len, '\0');
  body.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  const auto& names = ckpt.header.at("sections");
  const auto& sizes = ckpt.header.at("section_sizes");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string name = names[i].get<std::string>();
    ckpt.sections[name] = io_detail::read_floats(body, sizes[i].get<std::size_t>(), name);
  }
  ckpt.header.erase("sections");
  ckpt.header.erase("section_sizes");
  return ckpt;
}

}  // namespace pvseg
