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

#include "polar/batch.hpp"

#include <algorithm>

#include "polar/errors.hpp"
#include "polar/ner_metrics.hpp"

namespace polar::data {
namespace {

// Tag for the k-th word of an OCR token tagged `tag`.
std::string piece_tag(const std::string& tag, std::size_t k) {
  if (k == 0) return tag;
  const ParsedTag parsed = parse_tag(tag);
  return parsed.kind == TagKind::kOutside ? "O" : "I-" + parsed.type;
}

}  // namespace

EncodedDoc encode(const Document& doc, const Vocab& vocab, const EncodeOptions& options) {
  const int reserved = options.special_tokens ? 2 : 0;
  if (options.max_seq_len < reserved + 1) throw ContractError("encode: max_seq_len leaves no room for tokens");
  const std::size_t budget = static_cast<std::size_t>(options.max_seq_len - reserved);
  const bool with_labels = options.labels != nullptr && doc.labels.has_value();

  EncodedDoc out;
  out.doc_id = doc.id;
  out.n_source_tokens = doc.tokens.size();
  auto push = [&](int id, geometry::BBox box, int source, bool first, int label) {
    out.token_ids.push_back(id);
    out.boxes.push_back(box);
    out.source_token.push_back(source);
    out.first_piece.push_back(first);
    out.labels.push_back(label);
  };
  const std::size_t offset = options.special_tokens ? 1 : 0;
  if (options.special_tokens) push(Vocab::kCls, kFullPage, -1, false, kIgnoreIndex);
  for (std::size_t t = 0; t < doc.tokens.size() && out.length() - offset < budget; ++t) {
    const OcrToken& tok = doc.tokens[t];
    const geometry::BBox box = normalize_bbox(tok.box, doc.page_width, doc.page_height);
    std::vector<std::string> words = split_words(tok.text);
    if (words.empty()) words.push_back("");  // keeps every OCR token addressable
    for (std::size_t k = 0; k < words.size() && out.length() - offset < budget; ++k) {
      const int label = with_labels ? options.labels->id(piece_tag((*doc.labels)[t], k)) : kIgnoreIndex;
      push(words[k].empty() ? Vocab::kUnk : vocab.id(words[k]), box, static_cast<int>(t), k == 0, label);
    }
  }
  if (options.special_tokens) push(Vocab::kSep, kFullPage, -1, false, kIgnoreIndex);

  std::vector<geometry::Center> centers;
  for (const auto& b : out.boxes) centers.push_back(geometry::center(b));
  out.polar_bins = geometry::relative_bins(centers, options.binning);
  out.cartesian_bins = geometry::cartesian_relative_bins(out.boxes, options.binning);
  return out;
}

std::vector<Segment> find_segments(const EncodedDoc& doc) {
  std::vector<Segment> segments;
  for (std::size_t p = 0; p < doc.length(); ++p) {
    if (doc.is_special(p)) continue;
    if (!segments.empty() && segments.back().end == p && doc.boxes[p] == doc.boxes[p - 1]) {
      segments.back().end = p + 1;
    } else {
      segments.push_back({p, p + 1});
    }
  }
  return segments;
}

Batch collate(std::span<const EncodedDoc* const> docs) {
  Batch b;
  b.batch = docs.size();
  for (const EncodedDoc* d : docs) b.length = std::max(b.length, d->length());
  const std::size_t L = b.length, rows = b.rows();
  b.token_ids.assign(rows, Vocab::kPad);
  b.pos_ids.assign(rows, 0);
  b.boxes.assign(rows, geometry::BBox{});
  b.mask.assign(rows, 0);
  b.dist_bins.assign(rows * L, 0);
  b.angle_bins.assign(rows * L, 0);
  b.dx_bins.assign(rows * L, 0);
  b.dy_bins.assign(rows * L, 0);
  b.mlm_targets.assign(rows, kIgnoreIndex);
  b.lop_targets.assign(rows, kIgnoreIndex);
  b.ner_targets.assign(rows, kIgnoreIndex);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const EncodedDoc& doc = *docs[d];
    const std::size_t n = doc.length();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = d * L + i;
      b.token_ids[r] = doc.token_ids[i];
      b.pos_ids[r] = static_cast<int>(i);
      b.boxes[r] = doc.boxes[i];
      b.mask[r] = 1;
      b.ner_targets[r] = doc.labels[i];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t pr = r * L + j;
        b.dist_bins[pr] = doc.polar_bins(i, j).dist_bin;
        b.angle_bins[pr] = doc.polar_bins(i, j).angle_bin;
        b.dx_bins[pr] = doc.cartesian_bins(i, j).dx_bin;
        b.dy_bins[pr] = doc.cartesian_bins(i, j).dy_bin;
      }
    }
  }
  return b;
}

Batch collate(const EncodedDoc& doc) {
  const EncodedDoc* one[] = {&doc};
  return collate(one);
}

}  // namespace polar::data
