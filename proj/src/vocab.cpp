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

#include "polar/vocab.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "polar/errors.hpp"
#include "polar/ner_metrics.hpp"

namespace polar::data {
namespace {

const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

}  // namespace

std::string normalize_word(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && blank(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !blank(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> words) {
  entries_ = kSpecials;
  entries_.insert(entries_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i], static_cast<int>(i)).second) {
      throw ContractError("duplicate vocabulary entry '" + entries_[i] + "'");
    }
  }
}

int Vocab::id(std::string_view word) const {
  const auto it = index_.find(normalize_word(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  return entries_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::words() const { return {entries_.begin() + kNumSpecial, entries_.end()}; }

Vocab build_vocab(std::span<const Document> corpus, int min_freq) {
  std::map<std::string, int> counts;
  for (const Document& doc : corpus)
    for (const OcrToken& tok : doc.tokens)
      for (const std::string& w : split_words(tok.text)) ++counts[normalize_word(w)];
  for (const std::string& s : kSpecials) counts.erase(s);
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [w, c] : counts)
    if (c >= min_freq) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, c] : kept) words.push_back(std::move(w));
  return Vocab(std::move(words));
}

LabelSet::LabelSet() : LabelSet(std::vector<std::string>{}) {}

LabelSet::LabelSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {
  tags_.push_back("O");
  for (const std::string& t : types_) {
    tags_.push_back("B-" + t);
    tags_.push_back("I-" + t);
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (!index_.emplace(tags_[i], static_cast<int>(i)).second) {
      throw ContractError("duplicate entity type in label set: " + tags_[i]);
    }
  }
}

LabelSet LabelSet::from_documents(std::span<const Document> docs) {
  std::set<std::string> types;
  for (const Document& doc : docs) {
    if (!doc.labels) continue;
    for (const std::string& tag : *doc.labels) {
      const ParsedTag parsed = parse_tag(tag);
      if (parsed.kind != TagKind::kOutside) types.insert(parsed.type);
    }
  }
  return LabelSet(std::vector<std::string>(types.begin(), types.end()));
}

int LabelSet::id(std::string_view tag) const {
  const auto it = index_.find(std::string(tag));
  if (it == index_.end()) throw ContractError("label '" + std::string(tag) + "' is not in the label set");
  return it->second;
}

bool LabelSet::contains(std::string_view tag) const { return index_.count(std::string(tag)) > 0; }

const std::string& LabelSet::tag(int id) const {
  if (id < 0 || id >= size()) throw IndexError("label id " + std::to_string(id) + " out of range");
  return tags_[static_cast<std::size_t>(id)];
}

}  // namespace polar::data
