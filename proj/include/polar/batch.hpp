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
#include <span>
#include <string>
#include <vector>

#include "polar/document.hpp"
#include "polar/geometry.hpp"
#include "polar/vocab.hpp"

namespace polar::data {

inline constexpr int kIgnoreIndex = -100;

/// Contiguous positions sharing one normalized box.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Segment&) const = default;
};

struct EncodeOptions {
  int max_seq_len = 128;
  geometry::BinningConfig binning;
  const LabelSet* labels = nullptr;  // when set, label ids are filled in
  bool special_tokens = true;        // wrap in [CLS] ... [SEP]
};

/// One document mapped to model positions: [CLS] words... [SEP].
///
/// Each OCR token contributes one position per whitespace-separated word, all
/// sharing the token's box. Special positions carry the full-page box.
struct EncodedDoc {
  std::string doc_id;
  std::vector<int> token_ids;
  std::vector<geometry::BBox> boxes;
  std::vector<int> source_token;  // OCR token index, -1 for specials
  std::vector<bool> first_piece;  // first word of its OCR token
  std::vector<int> labels;        // label ids or kIgnoreIndex
  std::size_t n_source_tokens = 0;
  geometry::PairMatrix<geometry::PolarBinPair> polar_bins;
  geometry::PairMatrix<geometry::CartesianBinPair> cartesian_bins;

  std::size_t length() const { return token_ids.size(); }
  bool is_special(std::size_t pos) const { return source_token[pos] < 0; }
};

inline constexpr geometry::BBox kFullPage{0, 0, 1000, 1000};

/// Truncates to max_seq_len positions including [CLS] and [SEP].
EncodedDoc encode(const Document& doc, const Vocab& vocab, const EncodeOptions& options);

std::vector<Segment> find_segments(const EncodedDoc& doc);

/// Padded batch. Per-position arrays are batch x length; pair arrays are
/// batch x length x length.
struct Batch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> token_ids;
  std::vector<int> pos_ids;
  std::vector<geometry::BBox> boxes;
  std::vector<std::uint8_t> mask;  // 1 for real positions
  std::vector<std::int32_t> dist_bins, angle_bins;
  std::vector<std::int32_t> dx_bins, dy_bins;
  std::vector<int> mlm_targets, lop_targets, ner_targets;

  std::size_t rows() const { return batch * length; }
};

/// Pads to the longest document. Targets start as kIgnoreIndex except
/// ner_targets, which copy each document's label ids.
Batch collate(std::span<const EncodedDoc* const> docs);
Batch collate(const EncodedDoc& doc);

}  // namespace polar::data
