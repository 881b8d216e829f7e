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

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polar/document.hpp"

namespace polar::data {

enum class TagKind { kOutside, kBegin, kInside };

struct ParsedTag {
  TagKind kind = TagKind::kOutside;
  std::string type;
};

/// Accepts "O", "B-<type>", "I-<type>" with a nonempty type; ParseError otherwise.
ParsedTag parse_tag(std::string_view tag);

/// Half-open token span [start, end) carrying an entity type.
struct EntitySpan {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;
  auto operator<=>(const EntitySpan&) const = default;
};

/// Lenient BIO decoding: an I- tag that does not continue an open entity of
/// the same type opens a new one.
std::vector<EntitySpan> bio_decode(std::span<const std::string> tags);

/// Inverse of bio_decode for non-overlapping spans; uncovered tokens get "O".
std::vector<std::string> bio_encode(std::span<const EntitySpan> spans, std::size_t n_tokens);

struct F1Report {
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Exact (type, start, end) matches pooled over the corpus.
F1Report entity_f1(std::span<const std::vector<std::string>> predicted,
                   std::span<const std::vector<std::string>> gold);

/// Documents are paired by position. Throws ContractError naming the
/// document id when token or label counts disagree.
F1Report entity_f1(std::span<const Document> predicted, std::span<const Document> gold);

}  // namespace polar::data
