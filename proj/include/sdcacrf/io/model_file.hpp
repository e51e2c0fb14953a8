#pragma once

// Model and checkpoint files: a UTF-8 "key: value" header followed by base64
// payloads of little-endian doubles, so weights round-trip bit for bit.
//
//   sdca-crf
//   version: 1
//   kind: model                 (or checkpoint)
//   lambda: <shortest round-trip decimal>
//   labels: K                   then K "label: <name>" lines
//   attributes: A               then A "attribute: <name>" lines
//   dimension: d
//   weights: <base64, d doubles>
//
// A checkpoint continues with the dual state needed to audit gaps:
//
//   blocks: n
//   block_lengths: T_1 ... T_n
//   gap_estimates: <base64, n doubles>
//   marginals: <base64; per block, node table then edge table>

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/inference.hpp"
#include "sdcacrf/io/base64.hpp"
#include "sdcacrf/metrics.hpp"

namespace sdcacrf::io {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelMagic = "sdca-crf";

struct Model {
  double lambda = 0.0;
  LabelSet labels;
  Vocabulary attributes;
  std::vector<double> weights;

  FeatureIndexer indexer() const { return FeatureIndexer(attributes.size(), labels.size()); }
};

struct Checkpoint {
  Model model;
  std::vector<double> gap_estimates;
  std::vector<MarginalSet> marginals;
};

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_header(const Model& m, std::string_view kind, std::ostream& out) {
  if (m.weights.size() != m.indexer().dimension())
    throw std::invalid_argument("model weights do not match its label set and vocabulary");
  out << kModelMagic << '\n';
  out << "version: " << kModelFormatVersion << '\n';
  out << "kind: " << kind << '\n';
  out << "lambda: " << format_double(m.lambda) << '\n';
  out << "labels: " << m.labels.size() << '\n';
  for (const auto& name : m.labels.names()) out << "label: " << name << '\n';
  out << "attributes: " << m.attributes.size() << '\n';
  for (const auto& name : m.attributes.names()) out << "attribute: " << name << '\n';
  out << "dimension: " << m.weights.size() << '\n';
  out << "weights: " << encode_doubles(m.weights) << '\n';
}

class HeaderReader {
 public:
  HeaderReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string value(std::string_view key) {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file, expected '" + std::string(key) + "'");
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string prefix = std::string(key) + ": ";
    if (line.rfind(prefix, 0) != 0) fail("expected '" + std::string(key) + ":' but got '" + line + "'");
    return line.substr(prefix.size());
  }

  std::size_t count(std::string_view key) {
    const std::string v = value(key);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail("'" + std::string(key) + "' is not a count");
    return out;
  }

  double real(std::string_view key) {
    const std::string v = value(key);
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail("'" + std::string(key) + "' is not a number");
    return out;
  }

  std::string magic() {
    std::string line;
    if (!std::getline(in_, line)) fail("empty file");
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ModelFormatError(source_ + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 0;
};

inline Model read_header(HeaderReader& r, std::string_view expected_kind) {
  if (r.magic() != kModelMagic) r.fail("not an sdca-crf model file");
  const std::size_t version = r.count("version");
  if (version != static_cast<std::size_t>(kModelFormatVersion))
    r.fail("unsupported model file version " + std::to_string(version) + " (this build reads version " +
           std::to_string(kModelFormatVersion) + ")");
  const std::string kind = r.value("kind");
  if (kind != expected_kind) r.fail("expected a " + std::string(expected_kind) + " file, got " + kind);
  Model m;
  m.lambda = r.real("lambda");
  std::vector<std::string> labels(r.count("labels"));
  for (auto& l : labels) l = r.value("label");
  try {
    m.labels = LabelSet(std::move(labels));
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  const std::size_t num_attributes = r.count("attributes");
  for (std::size_t a = 0; a < num_attributes; ++a) {
    if (m.attributes.insert(r.value("attribute")) != a) r.fail("duplicate attribute name");
  }
  const std::size_t d = r.count("dimension");
  if (d != m.indexer().dimension())
    r.fail("dimension " + std::to_string(d) + " does not match " + std::to_string(m.labels.size()) +
           " labels and " + std::to_string(num_attributes) + " attributes");
  m.weights = decode_doubles(r.value("weights"));
  if (m.weights.size() != d) r.fail("weight payload holds " + std::to_string(m.weights.size()) + " values, expected " + std::to_string(d));
  return m;
}

}  // namespace detail

inline void write_model(const Model& m, std::ostream& out) { detail::write_header(m, "model", out); }

inline Model read_model(std::istream& in, const std::string& source = "<model>") {
  detail::HeaderReader r(in, source);
  return detail::read_header(r, "model");
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_model(m, out);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_model(in, path);
}

inline void write_checkpoint(const Checkpoint& c, std::ostream& out) {
  if (c.marginals.size() != c.gap_estimates.size())
    throw std::invalid_argument("checkpoint needs one gap estimate per block");
  detail::write_header(c.model, "checkpoint", out);
  out << "blocks: " << c.marginals.size() << '\n';
  out << "block_lengths:";
  std::vector<double> flat;
  for (const auto& m : c.marginals) {
    out << ' ' << m.length();
    flat.insert(flat.end(), m.prob.unary.begin(), m.prob.unary.end());
    flat.insert(flat.end(), m.prob.pairwise.begin(), m.prob.pairwise.end());
  }
  out << '\n';
  out << "gap_estimates: " << encode_doubles(c.gap_estimates) << '\n';
  out << "marginals: " << encode_doubles(flat) << '\n';
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
  detail::HeaderReader r(in, source);
  Checkpoint c;
  c.model = detail::read_header(r, "checkpoint");
  const std::size_t n = r.count("blocks");
  std::vector<std::size_t> lengths;
  {
    std::istringstream ls(r.value("block_lengths").insert(0, " "));
    for (std::size_t t; ls >> t;) lengths.push_back(t);
  }
  if (lengths.size() != n) r.fail("block_lengths lists " + std::to_string(lengths.size()) + " blocks, expected " + std::to_string(n));
  c.gap_estimates = decode_doubles(r.value("gap_estimates"));
  if (c.gap_estimates.size() != n) r.fail("gap estimate payload has the wrong size");
  const std::vector<double> flat = decode_doubles(r.value("marginals"));
  const std::size_t K = c.model.labels.size();
  std::size_t pos = 0;
  for (std::size_t T : lengths) {
    if (T == 0) r.fail("zero-length block");
    CliqueTables t(T, K);
    if (pos + t.unary.size() + t.pairwise.size() > flat.size()) r.fail("marginal payload too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.unary.size(), t.unary.begin());
    pos += t.unary.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.pairwise.size(), t.pairwise.begin());
    pos += t.pairwise.size();
    c.marginals.push_back(MarginalSet::from_linear(std::move(t)));
  }
  if (pos != flat.size()) r.fail("marginal payload too long");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_checkpoint(c, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_checkpoint(in, path);
}

}  // namespace sdcacrf::io
