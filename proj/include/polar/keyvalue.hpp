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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace polar {

/// Flat "key = value" document. Blank lines and lines starting with '#' are
/// ignored. Serialization sorts keys, so equal contents give equal text and
/// equal hashes.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text);
  static KeyValueDoc load(const std::filesystem::path& path);

  std::string serialize() const;
  /// FNV-1a over serialize().
  std::uint64_t hash() const;

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void set_int(const std::string& key, long long value) { set(key, std::to_string(value)); }
  /// Shortest text that parses back to the same double.
  void set_double(const std::string& key, double value);
  void set_bool(const std::string& key, bool value) { set(key, value ? "true" : "false"); }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Typed accessors; ParseError names the key when the value does not convert.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::map<std::string, std::string> entries_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

}  // namespace polar
