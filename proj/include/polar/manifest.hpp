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
#include <string>

#include "json.hpp"

namespace polar {

/// Provenance written next to every output a command produces.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string preset;
  std::string version;
  int threads = 1;
  std::string started_at;
  std::string finished_at;
  nlohmann::json extra = nlohmann::json::object();

  /// Hash over everything except the timestamps, so identical runs agree.
  std::string fingerprint() const;
  nlohmann::ordered_json to_json() const;
};

/// ISO-8601 UTC time of the call.
std::string utc_timestamp();

/// Writes through a temporary file and a rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace polar
