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

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polar/document.hpp"

namespace polar::data {

/// Lowercases ASCII letters; other bytes pass through.
std::string normalize_word(std::string_view text);

/// Splits on ASCII whitespace. An all-blank string yields no words.
std::vector<std::string> split_words(std::string_view text);

/// Word-level vocabulary with the special entries pinned at ids 0..4.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  Vocab();
  /// `words` excludes the specials; duplicates are rejected.
  explicit Vocab(std::vector<std::string> words);

  int id(std::string_view word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(entries_.size()); }
  /// All entries, specials first.
  const std::vector<std::string>& entries() const { return entries_; }
  /// Entries after the specials.
  std::vector<std::string> words() const;

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Word types with count >= min_freq, ordered by count descending then bytes.
Vocab build_vocab(std::span<const Document> corpus, int min_freq);

/// BIO tag inventory: "O" at id 0, then B-/I- pairs per entity type in type order.
class LabelSet {
 public:
  LabelSet();
  explicit LabelSet(std::vector<std::string> entity_types);

  /// Collects entity types from every labeled document. Throws ParseError on a malformed tag.
  static LabelSet from_documents(std::span<const Document> docs);

  /// Throws ContractError for a tag outside the set.
  int id(std::string_view tag) const;
  bool contains(std::string_view tag) const;
  const std::string& tag(int id) const;
  int size() const { return static_cast<int>(tags_.size()); }
  const std::vector<std::string>& tags() const { return tags_; }
  const std::vector<std::string>& entity_types() const { return types_; }

 private:
  std::vector<std::string> types_;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace polar::data
