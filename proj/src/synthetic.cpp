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

#include "polar/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string_view>

#include "polar/errors.hpp"
#include "polar/rng.hpp"

namespace polar::data {
namespace {

constexpr std::array<std::string_view, 8> kHeaders = {"date", "amount", "price", "qty",
                                                      "rate", "tax",    "total", "code"};
constexpr std::array<std::string_view, 24> kNumbers = {
    "12", "45",  "3.50", "100", "7",  "19.99", "250", "8",  "64", "0.75", "33",  "1200",
    "5",  "42",  "99",   "18",  "2.25", "600", "71",  "14", "9.10", "300", "27", "55"};
constexpr std::array<std::string_view, 5> kTitles = {"invoice", "statement", "report", "summary", "ledger"};

constexpr std::array<std::string_view, 6> kKeys = {"name", "date", "phone", "city", "account", "amount"};
constexpr std::array<std::string_view, 12> kValues = {"alpha", "north", "river", "42",    "2019", "blue",
                                                      "main",  "7.50",  "oak",   "delta", "smith", "lee"};

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

int uniform_int(CounterRng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

template <typename T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// Builds documents in normalized coordinates and maps them to pixels so that
// normalize_bbox recovers the normalized box exactly.
class PageBuilder {
 public:
  PageBuilder(std::string id, int width, int height) {
    doc_.id = std::move(id);
    doc_.page_width = width;
    doc_.page_height = height;
    doc_.labels.emplace();
  }

  void add(std::string_view text, int x0, int y0, int x1, int y1, std::string tag) {
    x0 = std::clamp(x0, 0, 1000);
    x1 = std::clamp(x1, x0, 1000);
    y0 = std::clamp(y0, 0, 1000);
    y1 = std::clamp(y1, y0, 1000);
    doc_.tokens.push_back({std::string(text),
                           {to_px(x0, doc_.page_width), to_px(y0, doc_.page_height), to_px(x1, doc_.page_width),
                            to_px(y1, doc_.page_height)}});
    doc_.labels->push_back(std::move(tag));
  }

  Document finish() { return std::move(doc_); }

  /// Reorders tokens by (center y, center x), the reading order an OCR engine emits.
  void sort_reading_order() {
    std::vector<std::size_t> order(doc_.tokens.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t t) {
      const RawBox& b = doc_.tokens[t].box;
      return std::pair{b.y0 + b.y1, b.x0 + b.x1};
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    Document sorted = doc_;
    for (std::size_t k = 0; k < order.size(); ++k) {
      sorted.tokens[k] = doc_.tokens[order[k]];
      (*sorted.labels)[k] = (*doc_.labels)[order[k]];
    }
    doc_ = std::move(sorted);
  }

 private:
  static int to_px(int v, int extent) { return static_cast<int>((static_cast<long long>(v) * extent + 999) / 1000); }
  Document doc_;
};

Document make_table(std::string id, CounterRng& rng) {
  PageBuilder page(std::move(id), uniform_int(rng, 1000, 1400), uniform_int(rng, 1000, 1500));
  constexpr int kPitch = 230, kRowHeight = 28;

  const auto title = kTitles[rng.below(kTitles.size())];
  const int title_x = uniform_int(rng, 20, 600);
  page.add(title, title_x, 20, title_x + 120, 44, "O");

  const int n_cols = uniform_int(rng, 3, 4);
  const int n_rows = uniform_int(rng, 3, 6);
  std::vector<std::size_t> headers(kHeaders.size());
  std::iota(headers.begin(), headers.end(), std::size_t{0});
  shuffle(headers, rng);
  headers.resize(static_cast<std::size_t>(n_cols));

  const int left = uniform_int(rng, 20, 1000 - 20 - n_cols * kPitch);
  const int top = uniform_int(rng, 90, 1000 - 60 - (n_rows + 1) * kRowHeight);
  std::vector<int> col_center(static_cast<std::size_t>(n_cols));
  for (int c = 0; c < n_cols; ++c) {
    col_center[static_cast<std::size_t>(c)] = left + kPitch / 2 + c * kPitch;
    const int cx = col_center[static_cast<std::size_t>(c)] + uniform_int(rng, -6, 6);
    const int half = uniform_int(rng, 35, 50);
    page.add(kHeaders[headers[static_cast<std::size_t>(c)]], cx - half, top - 10, cx + half, top + 10, "O");
  }
  bool any_cell = false;
  for (int r = 1; r <= n_rows; ++r) {
    const int cy = top + r * kRowHeight;
    for (int c = 0; c < n_cols; ++c) {
      const bool last_chance = !any_cell && r == n_rows && c == n_cols - 1;
      if (rng.uniform() < 0.3 && !last_chance) continue;
      any_cell = true;
      const int cx = col_center[static_cast<std::size_t>(c)] + uniform_int(rng, -8, 8);
      const int half = uniform_int(rng, 15, 35);
      page.add(kNumbers[rng.below(kNumbers.size())], cx - half, cy - 8, cx + half, cy + 8,
               "B-" + upper(kHeaders[headers[static_cast<std::size_t>(c)]]));
    }
  }
  return page.finish();
}

Document make_form(std::string id, CounterRng& rng) {
  PageBuilder page(std::move(id), uniform_int(rng, 1000, 1400), uniform_int(rng, 1000, 1500));
  std::vector<std::size_t> keys(kKeys.size());
  std::iota(keys.begin(), keys.end(), std::size_t{0});
  shuffle(keys, rng);
  keys.resize(static_cast<std::size_t>(uniform_int(rng, 3, 5)));

  std::vector<int> slots(14);
  std::iota(slots.begin(), slots.end(), 0);
  shuffle(slots, rng);
  for (std::size_t f = 0; f < keys.size(); ++f) {
    const int slot = slots[f];
    const int x = 40 + (slot % 2) * 480 + uniform_int(rng, 0, 40);
    const int y = 60 + (slot / 2) * 125 + uniform_int(rng, 0, 20);
    const auto key = kKeys[keys[f]];
    page.add(key, x, y, x + 90, y + 20, "O");

    const bool right = rng.uniform() < 0.5;
    int vx = right ? x + 105 : x;
    const int vy = right ? y : y + 32;
    const int n_words = uniform_int(rng, 1, 2);
    for (int w = 0; w < n_words; ++w) {
      const int width = uniform_int(rng, 50, 75);
      page.add(kValues[rng.below(kValues.size())], vx, vy, vx + width, vy + 20,
               (w == 0 ? "B-" : "I-") + upper(key));
      vx += width + 10;
    }
  }
  page.sort_reading_order();
  return page.finish();
}

}  // namespace

CorpusKind parse_corpus_kind(const std::string& name) {
  if (name == "forms") return CorpusKind::kForms;
  if (name == "tables") return CorpusKind::kTables;
  throw ContractError("unknown corpus kind '" + name + "' (expected forms or tables)");
}

std::string corpus_kind_name(CorpusKind kind) { return kind == CorpusKind::kForms ? "forms" : "tables"; }

std::vector<Document> SyntheticCorpus::all() const {
  std::vector<Document> out = train;
  out.insert(out.end(), eval.begin(), eval.end());
  return out;
}

SyntheticCorpus generate_synthetic_corpus(CorpusKind kind, std::size_t n_docs, std::uint64_t seed,
                                          double eval_fraction) {
  if (n_docs == 0) throw ContractError("generate_synthetic_corpus: n_docs must be >= 1");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) {
    throw ContractError("generate_synthetic_corpus: eval_fraction must lie in [0, 1)");
  }
  const std::size_t n_eval = static_cast<std::size_t>(std::floor(static_cast<double>(n_docs) * eval_fraction));
  SyntheticCorpus corpus;
  for (std::size_t d = 0; d < n_docs; ++d) {
    CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(kind), d}));
    std::string id = corpus_kind_name(kind) + "-" + std::to_string(seed) + "-" + std::to_string(d);
    Document doc = kind == CorpusKind::kTables ? make_table(std::move(id), rng) : make_form(std::move(id), rng);
    (d < n_docs - n_eval ? corpus.train : corpus.eval).push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace polar::data
