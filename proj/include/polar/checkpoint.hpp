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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "polar/tensor.hpp"

namespace polar {

/// Flat archive of named tensors plus a free-form JSON manifest.
///
/// On-disk layout: the 8-byte magic "PLRCKPT1", the manifest length as a
/// little-endian u64, the manifest as UTF-8 JSON (with a "tensors" index of
/// name, shape and element offset), then every tensor's values as raw
/// little-endian IEEE-754 doubles in index order.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const;
  /// Throws IndexError naming the missing entry.
  const Tensor& at(const std::string& name) const;
};

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace polar
