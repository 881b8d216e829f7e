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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "polar/geometry.hpp"

namespace polar::data {

/// Box in raw page pixels, as produced by an OCR engine.
struct RawBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  bool operator==(const RawBox&) const = default;
};

struct OcrToken {
  std::string text;
  RawBox box;
  bool operator==(const OcrToken&) const = default;
};

struct Document {
  std::string id;
  int page_width = 0;
  int page_height = 0;
  std::vector<OcrToken> tokens;
  std::optional<std::vector<std::string>> labels;  // BIO tags, one per token

  bool operator==(const Document&) const = default;
};

/// One JSON object per line:
///   {"id": str, "page_width": int, "page_height": int,
///    "tokens": [{"text": str, "bbox": [x0, y0, x1, y1]}, ...],
///    "labels": [str, ...]}            // optional
/// Throws ParseError with the 1-based line number and the offending field.
std::vector<Document> parse_documents(std::istream& in);
std::vector<Document> parse_documents(const std::filesystem::path& path);

void write_documents(std::ostream& out, const std::vector<Document>& docs);
void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs);

/// Throws ParseError naming the token index when a box leaves the page or is inverted.
void validate_document(const Document& doc);

/// floor(1000 * v / extent) per coordinate, clamped to [0, 1000].
geometry::BBox normalize_bbox(const RawBox& box, int page_width, int page_height);

}  // namespace polar::data
