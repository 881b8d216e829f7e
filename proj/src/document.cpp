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

#include "polar/document.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "polar/errors.hpp"

namespace polar::data {
namespace {

using nlohmann::json;

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": " + what);
}

template <typename T>
T field(const json& obj, const char* key, std::size_t line, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) fail(line, "missing field '" + where + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(line, "field '" + where + key + "' has the wrong type");
  }
}

Document parse_record(const std::string& text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(line, std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) fail(line, "record is not an object");

  Document doc;
  doc.id = field<std::string>(obj, "id", line, "");
  doc.page_width = field<int>(obj, "page_width", line, "");
  doc.page_height = field<int>(obj, "page_height", line, "");
  if (doc.page_width <= 0 || doc.page_height <= 0) fail(line, "page dimensions must be positive");

  const auto tokens = obj.find("tokens");
  if (tokens == obj.end() || !tokens->is_array()) fail(line, "missing array field 'tokens'");
  for (std::size_t t = 0; t < tokens->size(); ++t) {
    const json& tok = (*tokens)[t];
    const std::string where = "tokens[" + std::to_string(t) + "].";
    if (!tok.is_object()) fail(line, "'" + where.substr(0, where.size() - 1) + "' is not an object");
    OcrToken out;
    out.text = field<std::string>(tok, "text", line, where);
    const auto raw = tok.find("bbox");
    if (raw == tok.end() || !raw->is_array() || raw->size() != 4 ||
        !std::all_of(raw->begin(), raw->end(), [](const json& v) { return v.is_number_integer(); })) {
      fail(line, "field '" + where + "bbox' needs 4 integers");
    }
    const auto box = raw->get<std::vector<int>>();
    out.box = {box[0], box[1], box[2], box[3]};
    doc.tokens.push_back(std::move(out));
  }
  if (const auto labels = obj.find("labels"); labels != obj.end() && !labels->is_null()) {
    doc.labels = field<std::vector<std::string>>(obj, "labels", line, "");
  }
  try {
    validate_document(doc);
  } catch (const ParseError& e) {
    fail(line, e.what());
  }
  return doc;
}

}  // namespace

void validate_document(const Document& doc) {
  for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
    const RawBox& b = doc.tokens[t].box;
    if (b.x1 < b.x0 || b.y1 < b.y0) {
      throw ParseError("document '" + doc.id + "' token " + std::to_string(t) + ": inverted box");
    }
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > doc.page_width || b.y1 > doc.page_height) {
      throw ParseError("document '" + doc.id + "' token " + std::to_string(t) + ": box outside page");
    }
  }
  if (doc.labels && doc.labels->size() != doc.tokens.size()) {
    throw ParseError("document '" + doc.id + "': " + std::to_string(doc.labels->size()) + " labels for " +
                     std::to_string(doc.tokens.size()) + " tokens");
  }
}

std::vector<Document> parse_documents(std::istream& in) {
  std::vector<Document> docs;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    docs.push_back(parse_record(text, line));
  }
  return docs;
}

std::vector<Document> parse_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open document file: " + path.string());
  return parse_documents(in);
}

void write_documents(std::ostream& out, const std::vector<Document>& docs) {
  for (const Document& doc : docs) {
    nlohmann::ordered_json obj;
    obj["id"] = doc.id;
    obj["page_width"] = doc.page_width;
    obj["page_height"] = doc.page_height;
    obj["tokens"] = nlohmann::ordered_json::array();
    for (const OcrToken& t : doc.tokens) {
      obj["tokens"].push_back({{"text", t.text}, {"bbox", {t.box.x0, t.box.y0, t.box.x1, t.box.y1}}});
    }
    if (doc.labels) obj["labels"] = *doc.labels;
    out << obj.dump() << '\n';
  }
}

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_documents(out, docs);
  if (!out) throw IoError("failed writing " + path.string());
}

geometry::BBox normalize_bbox(const RawBox& box, int page_width, int page_height) {
  auto scale = [](int v, int extent) {
    const std::int64_t scaled = (1000LL * std::max(v, 0)) / extent;
    return static_cast<int>(std::min<std::int64_t>(scaled, 1000));
  };
  return {scale(box.x0, page_width), scale(box.y0, page_height), scale(box.x1, page_width),
          scale(box.y1, page_height)};
}

}  // namespace polar::data
