#pragma once

// Token-per-line attribute files in the style used by crfsuite corpora:
//
//   attr1 attr2 ... LABEL
//   attr1 ... LABEL
//   <blank line>
//
// Every whitespace-separated field but the last is an opaque attribute name,
// the last field is the label, and blank lines end sequences.

#include <algorithm>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdcacrf/dataset.hpp"

namespace sdcacrf::io {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Label set and vocabulary to resolve against instead of growing new ones
/// (test data). Unknown attributes are dropped; unknown labels are errors.
struct FrozenSchema {
  const LabelSet* labels = nullptr;
  const Vocabulary* attributes = nullptr;
};

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t j = 1; j < len; ++j)
      if ((static_cast<unsigned char>(s[i + j]) >> 6) != 0x2) return false;
    if (len == 1 && c < 0x20 && c != '\t') return false;  // control characters
    i += len;
  }
  return true;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  for (std::string f; in >> f;) fields.push_back(std::move(f));
  return fields;
}

}  // namespace detail

inline Dataset read_conll(std::istream& in, const std::string& source,
                          std::optional<FrozenSchema> frozen = std::nullopt) {
  Dataset ds;
  ds.provenance = {source, "conll", std::nullopt};
  Vocabulary label_names;
  if (frozen) {
    if (!frozen->labels || !frozen->attributes)
      throw std::invalid_argument("frozen schema needs labels and attributes");
    ds.attributes = *frozen->attributes;
  }

  Sequence current;
  auto close = [&]() {
    if (!current.tokens.empty()) ds.sequences.push_back(std::move(current));
    current = Sequence{};
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!detail::valid_utf8(line)) throw ParseError(source, lineno, "malformed line (invalid UTF-8 or control character)");
    std::vector<std::string> fields = detail::split_fields(line);
    if (fields.empty()) {
      close();
      continue;
    }
    Token tok;
    const std::string& label = fields.back();
    if (frozen) {
      const auto& names = frozen->labels->names();
      auto it = std::find(names.begin(), names.end(), label);
      if (it == names.end()) throw ParseError(source, lineno, "unknown label '" + label + "'");
      tok.label = static_cast<Label>(it - names.begin());
    } else {
      tok.label = label_names.insert(label);
    }
    fields.pop_back();
    for (const auto& f : fields) {
      if (frozen) {
        if (auto id = ds.attributes.find(f)) tok.attributes.push_back(*id);
      } else {
        tok.attributes.push_back(ds.attributes.insert(f));
      }
    }
    std::sort(tok.attributes.begin(), tok.attributes.end());
    tok.attributes.erase(std::unique(tok.attributes.begin(), tok.attributes.end()),
                         tok.attributes.end());
    current.tokens.push_back(std::move(tok));
  }
  close();

  if (ds.sequences.empty()) throw ParseError(source, lineno, "no sequences found (empty file)");
  if (frozen) {
    ds.labels = *frozen->labels;
  } else {
    if (label_names.size() < 2)
      throw ParseError(source, lineno,
                       "found " + std::to_string(label_names.size()) +
                           " distinct label(s); training needs at least 2");
    ds.labels = LabelSet(label_names.names());
  }
  return ds;
}

inline Dataset load_conll(const std::string& path,
                          std::optional<FrozenSchema> frozen = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_conll(in, path, frozen);
}

inline void write_conll(const Dataset& ds, std::ostream& out) {
  for (const auto& seq : ds.sequences) {
    for (const auto& tok : seq.tokens) {
      for (AttributeId a : tok.attributes) out << ds.attributes.name(a) << ' ';
      out << ds.labels.name(tok.label) << '\n';
    }
    out << '\n';
  }
}

inline void save_conll(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_conll(ds, out);
}

}  // namespace sdcacrf::io
