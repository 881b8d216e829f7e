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

#include "polar/ner_metrics.hpp"

#include <algorithm>
#include <iterator>

#include "polar/errors.hpp"

namespace polar::data {

ParsedTag parse_tag(std::string_view tag) {
  if (tag == "O") return {};
  if (tag.size() > 2 && tag[1] == '-' && (tag[0] == 'B' || tag[0] == 'I')) {
    return {tag[0] == 'B' ? TagKind::kBegin : TagKind::kInside, std::string(tag.substr(2))};
  }
  throw ParseError("unknown BIO tag '" + std::string(tag) + "'");
}

std::vector<EntitySpan> bio_decode(std::span<const std::string> tags) {
  std::vector<EntitySpan> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const ParsedTag t = parse_tag(tags[i]);
    const bool continues = t.kind == TagKind::kInside && open && spans.back().type == t.type;
    if (continues) {
      spans.back().end = i + 1;
      continue;
    }
    open = false;
    if (t.kind != TagKind::kOutside) {
      spans.push_back({t.type, i, i + 1});
      open = true;
    }
  }
  return spans;
}

std::vector<std::string> bio_encode(std::span<const EntitySpan> spans, std::size_t n_tokens) {
  std::vector<std::string> tags(n_tokens, "O");
  for (const EntitySpan& s : spans) {
    if (s.start >= s.end || s.end > n_tokens) throw ContractError("bio_encode: span outside sequence");
    tags[s.start] = "B-" + s.type;
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = "I-" + s.type;
  }
  return tags;
}

namespace {

F1Report finish(std::size_t tp, std::size_t predicted, std::size_t gold) {
  F1Report r{tp, predicted, gold, 0.0, 0.0, 0.0};
  r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::size_t matches(std::vector<EntitySpan> a, std::vector<EntitySpan> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<EntitySpan> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return common.size();
}

}  // namespace

F1Report entity_f1(std::span<const std::vector<std::string>> predicted,
                   std::span<const std::vector<std::string>> gold) {
  if (predicted.size() != gold.size()) {
    throw ContractError("entity_f1: " + std::to_string(predicted.size()) + " predicted vs " +
                        std::to_string(gold.size()) + " gold sequences");
  }
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    if (predicted[d].size() != gold[d].size()) {
      throw ContractError("entity_f1: sequence " + std::to_string(d) + " has mismatched lengths");
    }
    auto p = bio_decode(predicted[d]);
    auto g = bio_decode(gold[d]);
    n_pred += p.size();
    n_gold += g.size();
    tp += matches(std::move(p), std::move(g));
  }
  return finish(tp, n_pred, n_gold);
}

F1Report entity_f1(std::span<const Document> predicted, std::span<const Document> gold) {
  if (predicted.size() != gold.size()) {
    throw ContractError("entity_f1: " + std::to_string(predicted.size()) + " predicted vs " +
                        std::to_string(gold.size()) + " gold documents");
  }
  std::vector<std::vector<std::string>> p, g;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const bool aligned = predicted[d].tokens.size() == gold[d].tokens.size() && predicted[d].labels &&
                         gold[d].labels && predicted[d].labels->size() == gold[d].labels->size();
    if (!aligned) throw ContractError("entity_f1: document '" + gold[d].id + "' is not aligned");
    p.push_back(*predicted[d].labels);
    g.push_back(*gold[d].labels);
  }
  return entity_f1(p, g);
}

}  // namespace polar::data
