// sdca-crf: train, evaluate and audit linear-chain CRFs from the command line.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "sdcacrf/sdcacrf.hpp"

using namespace sdcacrf;
using nlohmann::json;

namespace {

constexpr int kExitConverged = 0;
constexpr int kExitError = 1;
constexpr int kExitBudget = 2;

io::SyntheticSpec read_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(path + ": synthetic spec must be a JSON object");
  io::SyntheticSpec s;
  for (const auto& [key, value] : j.items()) {
    auto get = [&](auto& field) {
      try {
        field = value.get<std::remove_reference_t<decltype(field)>>();
      } catch (const json::exception&) {
        throw std::runtime_error(path + ": '" + key + "' has the wrong type");
      }
    };
    if (key == "num_sequences") get(s.num_sequences);
    else if (key == "min_length") get(s.min_length);
    else if (key == "max_length") get(s.max_length);
    else if (key == "num_labels") get(s.num_labels);
    else if (key == "num_attributes") get(s.num_attributes);
    else if (key == "attributes_per_token") get(s.attributes_per_token);
    else if (key == "class_pool") get(s.class_pool);
    else if (key == "transition_peak") get(s.transition_peak);
    else if (key == "label_skew") get(s.label_skew);
    else if (key == "emission_noise_percent") get(s.emission_noise_percent);
    else if (key == "seed") get(s.seed);
    else throw std::runtime_error(path + ": unknown synthetic spec key '" + key + "'");
  }
  s.validate();
  return s;
}

bool same_schema(const Dataset& a, const LabelSet& labels, const Vocabulary& attributes) {
  return a.labels.names() == labels.names() && a.attributes == attributes;
}

/// Loads a dataset; with a schema, labels and attributes are resolved against
/// it (CoNLL) or required to match it (OCR, synthetic).
Dataset load_dataset(const std::string& path, const std::string& format,
                     const LabelSet* labels = nullptr, const Vocabulary* attributes = nullptr) {
  Dataset ds;
  if (format == "conll") {
    if (labels) return io::load_conll(path, io::FrozenSchema{labels, attributes});
    ds = io::load_conll(path);
  } else if (format == "ocr") {
    ds = io::load_ocr(path);
  } else {
    ds = io::generate_synthetic(read_synthetic_spec(path));
  }
  if (labels && !same_schema(ds, *labels, *attributes))
    throw std::runtime_error(path + ": labels or attributes differ from the training data");
  return ds;
}

void add_format_option(CLI::App* cmd, std::string& format) {
  cmd->add_option("--format", format, "Input format")
      ->check(CLI::IsMember({"conll", "ocr", "synthetic"}))
      ->capture_default_str();
}

struct TrainFlags {
  std::string data, format = "conll", test_data;
  std::optional<double> lambda;
  std::string sampler = "uniform";
  double nonuniform_ratio = 0.8;
  double epsilon = 1e-2;
  double line_search_precision = 1e-3;
  std::optional<double> fixed_step_size;
  bool fixed_step = false;
  double stop_gap = 1e-6;
  double max_epochs = 100.0;
  std::uint64_t seed = 0;
  std::string metrics_out, model_out, checkpoint_out;
  double true_gap_every = 5.0;
  std::uint64_t metrics_every = 0;
  bool no_timing = false;
};

int cmd_train(const TrainFlags& f) {
  const Dataset ds = load_dataset(f.data, f.format);
  ds.validate();
  std::optional<Dataset> test;
  if (!f.test_data.empty()) test = load_dataset(f.test_data, f.format, &ds.labels, &ds.attributes);

  TrainConfig cfg;
  if (f.lambda) {
    if (!(*f.lambda > 0.0)) throw std::invalid_argument("--lambda must be positive");
    cfg.lambda = *f.lambda;
  } else {
    cfg.lambda = default_lambda(ds);
  }
  cfg.epsilon = f.epsilon;
  cfg.sampler.scheme = parse_scheme(f.sampler);
  cfg.sampler.nonuniform_ratio = f.nonuniform_ratio;
  cfg.stop_gap = f.stop_gap;
  cfg.max_epochs = f.max_epochs;
  cfg.seed = f.seed;
  if (f.fixed_step) {
    cfg.line_search.mode = LineSearchMode::fixed_step;
    cfg.line_search.fixed_step = f.fixed_step_size.value_or(0.0);
    if (f.fixed_step_size && !(*f.fixed_step_size > 0.0 && *f.fixed_step_size <= 1.0))
      throw std::invalid_argument("--fixed-step must lie in (0, 1]");
  } else {
    cfg.line_search.sub_precision = f.line_search_precision;
  }
  if (!(f.max_epochs > 0.0)) throw std::invalid_argument("--max-epochs must be positive");

  TelemetryConfig tel;
  tel.metrics_every = f.metrics_every;
  tel.true_gap_every_epochs = f.true_gap_every;
  tel.test = test ? &*test : nullptr;
  tel.record_time = !f.no_timing;

  std::ofstream metrics_file;
  std::optional<MetricsCsvWriter> writer;
  if (!f.metrics_out.empty()) {
    metrics_file.open(f.metrics_out, std::ios::binary);
    if (!metrics_file) throw std::runtime_error("cannot write '" + f.metrics_out + "'");
    writer.emplace(metrics_file);
  }
  TrainCallbacks cb;
  if (writer) cb.on_metrics = [&](const MetricsRecord& r) { writer->write(r); };

  std::cerr << "training on " << ds.size() << " sequences, " << ds.num_tokens() << " tokens, "
            << ds.num_labels() << " labels, " << ds.num_attributes() << " attributes, lambda "
            << format_double(cfg.lambda) << ", sampler " << f.sampler << '\n';
  const TrainResult res = sdca_train(ds, cfg, tel, cb);

  io::Model model{cfg.lambda, ds.labels, ds.attributes,
                  std::vector<double>(res.state.weights.values().begin(),
                                      res.state.weights.values().end())};
  if (!f.model_out.empty()) io::save_model(model, f.model_out);
  if (!f.checkpoint_out.empty())
    io::save_checkpoint({model, res.state.gap_estimates, res.state.marginals}, f.checkpoint_out);

  const double epochs = static_cast<double>(res.updates) / static_cast<double>(ds.size());
  if (res.converged) {
    std::cerr << "converged after " << res.updates << " updates (" << epochs
              << " epochs), duality gap " << *res.true_gap << '\n';
    return kExitConverged;
  }
  std::cerr << "epoch budget exhausted after " << res.updates << " updates (" << epochs
            << " epochs) without reaching gap " << cfg.stop_gap << '\n';
  return kExitBudget;
}

int cmd_evaluate(const std::string& model_path, const std::string& data, const std::string& format) {
  const io::Model model = io::load_model(model_path);
  const Dataset ds = load_dataset(data, format, &model.labels, &model.attributes);
  ds.validate();
  const double err = token_error_rate(model.weights, ds);
  std::cout << "sequences: " << ds.size() << '\n'
            << "tokens: " << ds.num_tokens() << '\n'
            << "token_error_rate: " << format_double(err) << '\n';
  return 0;
}

int cmd_gap_report(const std::string& checkpoint_path, const std::string& data,
                   const std::string& format) {
  const io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
  const Dataset ds = load_dataset(data, format, &ck.model.labels, &ck.model.attributes);
  ds.validate();
  if (ds.size() != ck.marginals.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(ck.marginals.size()) +
                             " blocks but the dataset has " + std::to_string(ds.size()) + " sequences");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.sequences[i].length() != ck.marginals[i].length())
      throw std::runtime_error("sequence " + std::to_string(i) + " length differs from the checkpoint");
    check_marginals(ck.marginals[i]);
  }

  DualState st;
  st.lambda = ck.model.lambda;
  st.marginals = ck.marginals;
  st.weights = conjugate_weights(ds, st.marginals, st.lambda);
  st.gap_estimates = ck.gap_estimates;
  const std::vector<double> gaps = batch_block_gaps(ds, st);

  std::cout << "block,length,estimate,true_gap,ratio\n";
  double mean_true = 0.0, mean_est = 0.0;
  const double n = static_cast<double>(ds.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    const double est = ck.gap_estimates[i];
    const std::string ratio = gaps[i] > 0.0 ? format_double(est / gaps[i]) : std::string();
    std::cout << i << ',' << ds.sequences[i].length() << ',' << format_double(est) << ','
              << format_double(gaps[i]) << ',' << ratio << '\n';
    mean_true += gaps[i] / n;
    mean_est += est / n;
  }
  const double primal = primal_objective(st.weights.values(), ds, st.lambda);
  const double dual = dual_objective(ds, st);
  std::cout << "mean_estimate: " << format_double(mean_est) << '\n'
            << "mean_true_gap: " << format_double(mean_true) << '\n'
            << "primal_minus_dual: " << format_double(primal - dual) << '\n'
            << "chi: " << format_double(nonuniformity(gaps)) << '\n';
  return 0;
}

int cmd_generate(const std::string& spec_path, const std::string& out) {
  const Dataset ds = io::generate_synthetic(read_synthetic_spec(spec_path));
  if (out.empty() || out == "-") {
    io::write_conll(ds, std::cout);
  } else {
    io::save_conll(ds, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SDCA training and diagnostics for linear-chain CRFs", "sdca-crf"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model with stochastic dual coordinate ascent");
  train->add_option("--data", tf.data, "Training data (a JSON spec for --format synthetic)")
      ->required();
  add_format_option(train, tf.format);
  train->add_option("--lambda", tf.lambda, "Regularization strength (default 1/n)");
  train->add_option("--sampler", tf.sampler, "Block sampling scheme")
      ->check(CLI::IsMember({"uniform", "gap", "importance", "gap-importance", "max"}))
      ->capture_default_str();
  train->add_option("--nonuniform-ratio", tf.nonuniform_ratio,
                    "Probability of drawing from the adaptive distribution")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  train->add_option("--epsilon", tf.epsilon, "Weight of the uniform part of the initial marginals")
      ->capture_default_str();
  auto* precision = train->add_option("--line-search-precision", tf.line_search_precision,
                                      "Newton step tolerance of the line search")
                        ->check(CLI::PositiveNumber)
                        ->capture_default_str();
  std::string fixed_value;
  auto* fixed = train->add_option("--fixed-step", fixed_value,
                                  "Use a constant step instead of the line search "
                                  "(no value: 1/(1+R/(lambda n)))")
                    ->expected(0, 1);
  fixed->excludes(precision);
  train->add_option("--stop-gap", tf.stop_gap, "Target duality gap")->capture_default_str();
  train->add_option("--max-epochs", tf.max_epochs, "Budget in passes over the data")
      ->capture_default_str();
  train->add_option("--seed", tf.seed, "Sampler seed")->capture_default_str();
  train->add_option("--metrics-out", tf.metrics_out, "Metrics CSV path");
  train->add_option("--model-out", tf.model_out, "Model file path");
  train->add_option("--checkpoint-out", tf.checkpoint_out,
                    "Dual state file for gap-report");
  train->add_option("--true-gap-every", tf.true_gap_every,
                    "Epochs between batch evaluation rows (0 disables)")
      ->capture_default_str();
  train->add_option("--metrics-every", tf.metrics_every,
                    "Updates between metrics rows (default: one epoch)");
  train->add_option("--test-data", tf.test_data, "Held-out data for test error");
  train->add_flag("--no-timing", tf.no_timing,
                  "Leave elapsed_s empty so the CSV is bit-reproducible");

  std::string model_path, data, format = "conll", checkpoint_path, out;
  auto* evaluate = app.add_subcommand("evaluate", "Token error rate of a model on a dataset");
  evaluate->add_option("--model", model_path, "Model file")->required();
  evaluate->add_option("--data", data, "Dataset")->required();
  add_format_option(evaluate, format);

  auto* report = app.add_subcommand("gap-report", "Stored against true block gaps of a checkpoint");
  report->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  report->add_option("--data", data, "Dataset the checkpoint was trained on")->required();
  add_format_option(report, format);

  std::string spec_path;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset as CoNLL");
  generate->add_option("--spec", spec_path, "Synthetic spec (JSON)")->required();
  generate->add_option("--out", out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitError;
  }
  tf.fixed_step = fixed->count() > 0;
  if (tf.fixed_step && !fixed_value.empty()) {
    try {
      tf.fixed_step_size = std::stod(fixed_value);
    } catch (const std::exception&) {
      std::cerr << "--fixed-step: '" << fixed_value << "' is not a number\n\n" << train->help();
      return kExitError;
    }
  }

  try {
    if (*train) return cmd_train(tf);
    if (*evaluate) return cmd_evaluate(model_path, data, format);
    if (*report) return cmd_gap_report(checkpoint_path, data, format);
    if (*generate) return cmd_generate(spec_path, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
