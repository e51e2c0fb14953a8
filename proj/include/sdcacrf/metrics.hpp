#pragma once

// Convergence telemetry rows and their CSV encoding, plus token error rate.

#include <charconv>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <system_error>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/inference.hpp"

namespace sdcacrf {

struct MetricsRecord {
  std::uint64_t update_count = 0;
  std::uint64_t oracle_calls = 0;
  double epoch_equivalent = 0.0;
  std::optional<double> primal;  // batch rows only
  double dual = 0.0;
  double gap_estimate = 0.0;
  std::optional<double> true_gap;  // batch rows only
  std::optional<double> test_error;
  std::optional<double> elapsed_s;
};

inline constexpr const char* kMetricsHeader =
    "update_count,oracle_calls,epoch_equivalent,primal,dual,gap_estimate,true_gap,test_error,"
    "elapsed_s";

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

inline std::string to_csv_row(const MetricsRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string s;
  s += std::to_string(r.update_count) + ',';
  s += std::to_string(r.oracle_calls) + ',';
  s += format_double(r.epoch_equivalent) + ',';
  s += opt(r.primal) + ',';
  s += format_double(r.dual) + ',';
  s += format_double(r.gap_estimate) + ',';
  s += opt(r.true_gap) + ',';
  s += opt(r.test_error) + ',';
  s += opt(r.elapsed_s);
  return s;
}

/// Appends rows to a stream, flushing after each one so the file can be read
/// while training runs.
class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(std::ostream& out) : out_(out) { out_ << kMetricsHeader << '\n' << std::flush; }
  void write(const MetricsRecord& r) { out_ << to_csv_row(r) << '\n' << std::flush; }

 private:
  std::ostream& out_;
};

/// Fraction of tokens whose Viterbi label differs from the gold label.
inline double token_error_rate(std::span<const double> w, const Dataset& ds) {
  const FeatureIndexer idx = ds.indexer();
  std::size_t wrong = 0, total = 0;
  for (const auto& seq : ds.sequences) {
    const Labeling y = viterbi(score_tables(w, seq, idx));
    for (std::size_t t = 0; t < seq.length(); ++t) wrong += (y[t] != seq.tokens[t].label);
    total += seq.length();
  }
  return total ? static_cast<double>(wrong) / static_cast<double>(total) : 0.0;
}

}  // namespace sdcacrf
