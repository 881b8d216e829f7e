// Copyright 2026 The polarlayout Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "polar/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "polar/errors.hpp"

namespace polar {
namespace {

constexpr std::array<char, 8> kMagic = {'P', 'L', 'R', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> bytes;
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xFF);
  os.write(bytes.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), 8);
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw IndexError("checkpoint has no entry named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json manifest = checkpoint.manifest;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : checkpoint.entries) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  manifest["tensors"] = std::move(index);
  const std::string header = manifest.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    put_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& entry : checkpoint.entries) {
      for (double v : entry.second.values()) put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw ParseError("not a checkpoint file: " + path.string());
  const std::uint64_t header_len = get_u64(is);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw ParseError("truncated checkpoint manifest: " + path.string());

  Checkpoint out;
  try {
    out.manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt checkpoint manifest in " + path.string() + ": " + e.what());
  }
  for (const auto& item : out.manifest.at("tensors")) {
    Shape shape = item.at("shape").get<Shape>();
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = std::bit_cast<double>(get_u64(is));
    if (!is) throw ParseError("truncated checkpoint data for " + item.at("name").get<std::string>());
    out.entries.emplace_back(item.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
  }
  out.manifest.erase("tensors");
  return out;
}

}  // namespace polar
