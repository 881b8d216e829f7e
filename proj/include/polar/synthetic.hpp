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
#include <string>
#include <vector>

#include "polar/document.hpp"

namespace polar::data {

enum class CorpusKind { kForms, kTables };

CorpusKind parse_corpus_kind(const std::string& name);
std::string corpus_kind_name(CorpusKind kind);

struct SyntheticCorpus {
  std::vector<Document> train;
  std::vector<Document> eval;
  std::vector<Document> all() const;
};

/// Labeled documents whose entity types can only be recovered from layout.
///
/// forms:  key words scattered on the page, each followed (to the right or
///         below) by one or two value words drawn from a pool shared by all
///         keys; values carry the key's type.
/// tables: a title, a header row and up to six body rows. Cell texts come
///         from one number pool shared by every column, some cells are empty,
///         and each cell is labeled with the type named by its column header.
///         Column pitch exceeds table height, so a cell's own header is the
///         only header within 45 degrees of straight up.
///
/// The last floor(n_docs * eval_fraction) documents form the eval split.
SyntheticCorpus generate_synthetic_corpus(CorpusKind kind, std::size_t n_docs, std::uint64_t seed,
                                          double eval_fraction = 0.25);

}  // namespace polar::data
