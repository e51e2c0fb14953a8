#pragma once

// Handwritten-letter OCR rows, one letter per line, tab separated:
//
//   id  letter  next_id  word_id  position  fold  p0 ... p127
//
// Words are rebuilt by following next_id from each letter nothing points at;
// next_id = -1 ends a word. Labels are the 26 lower-case letters and each lit
// pixel becomes one binary attribute.

#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/io/conll.hpp"

namespace sdcacrf::io {

inline constexpr std::size_t kOcrPixels = 128;
inline constexpr std::size_t kOcrLetters = 26;

inline LabelSet ocr_labels() {
  std::vector<std::string> names;
  for (char c = 'a'; c <= 'z'; ++c) names.emplace_back(1, c);
  return LabelSet(std::move(names));
}

inline Vocabulary ocr_attributes() {
  Vocabulary v;
  for (std::size_t p = 0; p < kOcrPixels; ++p) v.insert("p" + std::to_string(p));
  return v;
}

inline Dataset read_ocr(std::istream& in, const std::string& source) {
  struct Row {
    long long id;
    long long next;
    Token token;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::unordered_map<long long, std::size_t> by_id;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, '\t');) f.push_back(field);
    if (f.size() != 6 + kOcrPixels)
      throw ParseError(source, lineno,
                       "expected " + std::to_string(6 + kOcrPixels) + " tab-separated fields, got " +
                           std::to_string(f.size()));
    Row r;
    r.line = lineno;
    try {
      r.id = std::stoll(f[0]);
      r.next = std::stoll(f[2]);
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "id and next_id must be integers");
    }
    if (f[1].size() != 1 || f[1][0] < 'a' || f[1][0] > 'z')
      throw ParseError(source, lineno, "letter must be one of a-z, got '" + f[1] + "'");
    r.token.label = static_cast<Label>(f[1][0] - 'a');
    for (std::size_t p = 0; p < kOcrPixels; ++p) {
      const std::string& px = f[6 + p];
      if (px == "1") {
        r.token.attributes.push_back(static_cast<AttributeId>(p));
      } else if (px != "0") {
        throw ParseError(source, lineno, "pixel " + std::to_string(p) + " is not binary: '" + px + "'");
      }
    }
    if (!by_id.emplace(r.id, rows.size()).second)
      throw ParseError(source, lineno, "duplicate letter id " + std::to_string(r.id));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError(source, lineno, "no letters found (empty file)");

  std::vector<int> pointed(rows.size(), 0);
  for (const auto& r : rows) {
    if (r.next == -1) continue;
    auto it = by_id.find(r.next);
    if (it == by_id.end())
      throw ParseError(source, r.line, "broken chain: next_id " + std::to_string(r.next) + " not found");
    if (++pointed[it->second] > 1)
      throw ParseError(source, r.line, "broken chain: letter " + std::to_string(r.next) + " has two predecessors");
  }

  Dataset ds;
  ds.provenance = {source, "ocr", std::nullopt};
  ds.labels = ocr_labels();
  ds.attributes = ocr_attributes();
  std::vector<bool> used(rows.size(), false);
  std::size_t consumed = 0;
  for (std::size_t start = 0; start < rows.size(); ++start) {
    if (pointed[start]) continue;
    Sequence seq;
    for (std::size_t cur = start;;) {
      used[cur] = true;
      ++consumed;
      seq.tokens.push_back(rows[cur].token);
      if (rows[cur].next == -1) break;
      cur = by_id.at(rows[cur].next);
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (consumed != rows.size()) {
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (!used[j]) throw ParseError(source, rows[j].line, "broken chain: letter is part of a cycle");
  }
  return ds;
}

inline Dataset load_ocr(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_ocr(in, path);
}

}  // namespace sdcacrf::io
