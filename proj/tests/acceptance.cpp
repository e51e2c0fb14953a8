// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status if
// any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"

using namespace sdcacrf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// Collects failed checks; the first few are kept for the report.
struct Checks {
  std::size_t total = 0;
  std::size_t failed = 0;
  std::string first_failure;

  void expect(bool ok, const std::string& what) {
    ++total;
    if (ok) return;
    if (failed++ == 0) first_failure = what;
  }
  bool ok() const { return failed == 0; }
  std::string summary() const {
    if (ok()) return std::to_string(total) + " checks";
    return std::to_string(failed) + "/" + std::to_string(total) + " checks failed, first: " + first_failure;
  }
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < limit_s;
  const bool pass = out.pass && in_time;
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << out.detail << " ("
            << fmt(secs) << " s, limit " << limit_s << " s" << (in_time ? "" : ", TOO SLOW") << ")"
            << std::endl;
}

// 1. Message passing against brute-force enumeration.
Outcome inference_exactness() {
  Rng rng(101);
  Checks c;
  double worst_marg = 0, worst_logz = 0, worst_joint = 0, worst_h = 0, worst_kl = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + bounded(rng, 5), K = 2 + bounded(rng, 2);
    const ScoreTables s = fixtures::random_scores(rng, T, K, 5.0);
    const OracleResult got = marginal_oracle(s);
    const EnumerationResult ref = enumerate_oracle(s);

    double marg = 0;
    for (std::size_t j = 0; j < got.marginals.prob.unary.size(); ++j)
      marg = std::max(marg, std::abs(got.marginals.prob.unary[j] - ref.marginals.prob.unary[j]));
    for (std::size_t j = 0; j < got.marginals.prob.pairwise.size(); ++j)
      marg = std::max(marg, std::abs(got.marginals.prob.pairwise[j] - ref.marginals.prob.pairwise[j]));
    const double logz = std::abs(got.log_partition - ref.log_partition);

    const std::vector<double> joint = joint_table(got.marginals);
    double jerr = 0;
    for (std::size_t j = 0; j < joint.size(); ++j) jerr = std::max(jerr, std::abs(joint[j] - ref.joint[j]));

    const double h = std::abs(entropy_marginals(got.marginals) - joint_entropy(ref.joint));

    const ScoreTables s2 = fixtures::random_scores(rng, T, K, 5.0);
    const EnumerationResult ref2 = enumerate_oracle(s2);
    const double kl = std::abs(kl_marginals(got.marginals, marginal_oracle(s2).marginals) -
                               joint_kl(ref.joint, ref2.joint));

    c.expect(marg <= 1e-10, "marginal error " + fmt(marg) + " at trial " + std::to_string(trial));
    c.expect(logz <= 1e-8, "log-partition error " + fmt(logz) + " at trial " + std::to_string(trial));
    c.expect(jerr <= 1e-10, "joint error " + fmt(jerr) + " at trial " + std::to_string(trial));
    c.expect(h <= 1e-8, "entropy error " + fmt(h) + " at trial " + std::to_string(trial));
    c.expect(kl <= 1e-8, "KL error " + fmt(kl) + " at trial " + std::to_string(trial));
    worst_marg = std::max(worst_marg, marg);
    worst_logz = std::max(worst_logz, logz);
    worst_joint = std::max(worst_joint, jerr);
    worst_h = std::max(worst_h, h);
    worst_kl = std::max(worst_kl, kl);
  }
  return {c.ok(), c.summary() + "; worst marginal " + fmt(worst_marg) + ", logZ " + fmt(worst_logz) +
                      ", joint " + fmt(worst_joint) + ", entropy " + fmt(worst_h) + ", KL " + fmt(worst_kl)};
}

// 2. Weak duality, gap decomposition, gradient-gap identity and the primal
// gradient on random dual states.
Outcome duality() {
  Rng rng(202);
  Checks c;
  double worst_decomp = 0, worst_identity = 0, worst_grad = 0, min_gap = INFINITY;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + bounded(rng, 10), K = 2 + bounded(rng, 2);
    const Dataset ds = fixtures::random_dataset(rng, n, 4, K, 4, 2);
    const double lambda = std::exp(fixtures::uniform(rng, std::log(1e-2), std::log(10.0)));
    DualState st;
    st.lambda = lambda;
    for (const auto& seq : ds.sequences) st.marginals.push_back(fixtures::random_marginals(rng, seq.length(), K));
    st.weights = conjugate_weights(ds, st.marginals, lambda);
    const double dual = dual_objective(ds, st);

    const double gap = primal_objective(st.weights.values(), ds, lambda) - dual;
    std::vector<double> w = fixtures::random_weights(rng, st.weights.size(), 2.0);
    const double other_gap = primal_objective(w, ds, lambda) - dual;
    c.expect(gap >= -1e-10 && other_gap >= -1e-10, "weak duality violated by " + fmt(std::min(gap, other_gap)));
    min_gap = std::min({min_gap, gap, other_gap});

    double mean_kl = 0;
    for (double g : batch_block_gaps(ds, st)) mean_kl += g / static_cast<double>(n);
    const double decomp = std::abs(gap - mean_kl);
    c.expect(decomp <= 1e-8, "gap decomposition off by " + fmt(decomp));
    worst_decomp = std::max(worst_decomp, decomp);

    const auto [lhs, rhs] = gradient_gap_identity_check(w, ds, lambda);
    const double rel = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
    c.expect(rel <= 1e-8, "gradient-gap identity off by " + fmt(rel) + " relative");
    worst_identity = std::max(worst_identity, rel);

    const std::vector<double> g = primal_gradient(w, ds, lambda);
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t j = bounded(rng, w.size());
      const double h = 1e-5, keep = w[j];
      w[j] = keep + h;
      const double up = primal_objective(w, ds, lambda);
      w[j] = keep - h;
      const double down = primal_objective(w, ds, lambda);
      w[j] = keep;
      const double fd = (up - down) / (2 * h);
      const double err = std::abs(g[j] - fd) / std::max(1.0, std::abs(fd));
      c.expect(err <= 1e-5, "gradient off by " + fmt(err) + " relative");
      worst_grad = std::max(worst_grad, err);
    }
  }
  return {c.ok(), c.summary() + "; min gap " + fmt(min_gap) + ", worst decomposition " + fmt(worst_decomp) +
                      ", identity " + fmt(worst_identity) + ", gradient " + fmt(worst_grad)};
}

// 3. Every fixed-step update gains at least s * g_i / n.
Outcome fixed_step_ascent() {
  const Dataset ds = fixtures::fixed_length_synthetic(50, 8, 4, 40, 4, 3);
  TrainConfig cfg;
  cfg.line_search.mode = LineSearchMode::fixed_step;
  cfg.seed = 3;
  Trainer tr(ds, cfg);
  const double s = fixed_step(tr.radii().max, tr.config().lambda, ds.size());
  const double n = static_cast<double>(ds.size());
  Checks c;
  double worst = INFINITY;
  const int steps = 6000;
  for (int r = 0; r < steps; ++r) {
    const StepRecord rec = tr.step();
    const double slack = n * rec.dual_gain - s * rec.block_gap;
    c.expect(rec.step == s, "step " + fmt(rec.step) + " differs from " + fmt(s));
    c.expect(slack >= -1e-9, "ascent bound violated by " + fmt(-slack) + " at step " + std::to_string(r));
    worst = std::min(worst, slack);
  }
  return {c.ok(), std::to_string(steps) + " steps at s = " + fmt(s) + "; min n*dD - s*g = " + fmt(worst) +
                      "; " + c.summary()};
}

Dataset convergence_set() { return fixtures::fixed_length_synthetic(100, 10, 5, 50, 5, 1); }

struct RunStats {
  TrainResult result;
  std::uint64_t steps = 0;
  std::uint64_t newton = 0;
  double worst_relative_decrease = 0.0;
};

RunStats run_line_search(const Dataset& ds, double precision) {
  TrainConfig cfg;
  cfg.line_search.sub_precision = precision;
  cfg.stop_gap = 1e-6;
  cfg.max_epochs = 200;
  RunStats st;
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r, const Trainer&) {
    ++st.steps;
    st.newton += r.newton_iterations;
    st.worst_relative_decrease =
        std::max(st.worst_relative_decrease, -r.dual_gain / std::max(1.0, std::abs(r.dual_after)));
  };
  TelemetryConfig tel;
  tel.record_time = false;
  st.result = sdca_train(ds, cfg, tel, cb);
  return st;
}

// 4. Uniform sampling with line search reaches a 1e-6 gap.
Outcome uniform_convergence() {
  const Dataset ds = convergence_set();
  const RunStats st = run_line_search(ds, 1e-3);
  const TrainResult& r = st.result;
  const double lambda = default_lambda(ds);
  const double gap = primal_objective(r.state.weights.values(), ds, lambda) - dual_objective(ds, r.state);
  Checks c;
  c.expect(r.converged, "did not converge within 200 epochs");
  c.expect(gap <= 1e-6, "final P - D = " + fmt(gap));
  c.expect(st.worst_relative_decrease <= 1e-12, "dual decreased by " + fmt(st.worst_relative_decrease) + " relative");
  c.expect(r.state.oracle_calls == r.updates, "oracle calls " + std::to_string(r.state.oracle_calls) +
                                                  " != updates " + std::to_string(r.updates));
  return {c.ok(), fmt(r.updates / 100.0, 4) + " epochs, P - D = " + fmt(gap) + ", worst relative dual decrease " +
                      fmt(st.worst_relative_decrease) + ", training oracle calls " +
                      std::to_string(r.state.oracle_calls) + " for " + std::to_string(r.updates) + " updates; " +
                      c.summary()};
}

// Shared by criteria 5 and 9: a sparse set with 2000 attributes.
struct SamplingRuns {
  double pstar = 0.0;
  std::vector<double> mean_updates;          // uniform, gap, importance
  std::vector<std::vector<double>> ratios;   // estimate / true gap at batch rows after epoch 1
  std::size_t missed = 0;
};

const std::vector<SamplingScheme> kSchemes = {SamplingScheme::uniform, SamplingScheme::gap, SamplingScheme::importance};

const SamplingRuns& sampling_runs() {
  static const SamplingRuns runs = [] {
    io::SyntheticSpec spec;
    spec.num_sequences = 200;
    spec.min_length = 5;
    spec.max_length = 15;
    spec.num_labels = 5;
    spec.num_attributes = 2000;
    spec.attributes_per_token = 5;
    spec.emission_noise_percent = 65;
    spec.seed = 1;
    const Dataset ds = io::generate_synthetic(spec);
    const double lambda = default_lambda(ds);
    const double n = static_cast<double>(ds.size());

    TrainConfig ref;
    ref.stop_gap = 1e-10;
    ref.max_epochs = 2000;
    const TrainResult rr = sdca_train(ds, ref);
    SamplingRuns out;
    out.pstar = primal_objective(rr.state.weights.values(), ds, lambda);

    for (auto scheme : kSchemes) {
      double total = 0;
      std::vector<double> ratios;
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;
        cfg.sampler.scheme = scheme;
        cfg.seed = seed;
        cfg.stop_gap = 1e-9;
        cfg.max_epochs = 500;
        std::uint64_t hit = 0;
        TrainCallbacks cb;
        cb.on_step = [&](const StepRecord&, const Trainer& tr) {
          if (hit || tr.updates() % 20) return;
          if (primal_objective(tr.state().weights.values(), ds, lambda) - out.pstar <= 1e-4) hit = tr.updates();
        };
        cb.on_metrics = [&](const MetricsRecord& r) {
          if (r.true_gap && r.epoch_equivalent > 1.0) ratios.push_back(r.gap_estimate / *r.true_gap);
        };
        TelemetryConfig tel;
        tel.true_gap_every_epochs = 1.0;
        tel.record_time = false;
        const TrainResult res = sdca_train(ds, cfg, tel, cb);
        if (!hit) {
          ++out.missed;
          hit = res.updates;
        }
        total += static_cast<double>(hit);
      }
      out.mean_updates.push_back(total / 5.0 / n);
      out.ratios.push_back(std::move(ratios));
    }
    return out;
  }();
  return runs;
}

// 5. Gap sampling needs no more updates than uniform sampling (10% slack)
// and importance sampling does not beat it.
Outcome sampling_speed() {
  const SamplingRuns& r = sampling_runs();
  const double uni = r.mean_updates[0], gap = r.mean_updates[1], imp = r.mean_updates[2];
  Checks c;
  c.expect(r.missed == 0, std::to_string(r.missed) + " runs never reached the target");
  c.expect(gap <= 1.1 * uni, "gap " + fmt(gap) + " epochs vs uniform " + fmt(uni));
  c.expect(imp >= gap, "importance " + fmt(imp) + " epochs beats gap " + fmt(gap));
  return {c.ok(), "epochs to P - P* <= 1e-4 (mean of 5 seeds): uniform " + fmt(uni, 4) + ", gap " + fmt(gap, 4) +
                      ", importance " + fmt(imp, 4) + "; gap/uniform = " + fmt(gap / uni) + "; " + c.summary()};
}

// 6. Coarser line-search precision changes the trajectory very little.
Outcome precision_insensitivity() {
  const Dataset ds = convergence_set();
  const RunStats coarse = run_line_search(ds, 1e-2);
  const RunStats fine = run_line_search(ds, 1e-3);
  const double a = static_cast<double>(coarse.result.updates), b = static_cast<double>(fine.result.updates);
  const double rel = std::abs(a - b) / std::max(a, b);
  const double it_coarse = static_cast<double>(coarse.newton) / static_cast<double>(coarse.steps);
  const double it_fine = static_cast<double>(fine.newton) / static_cast<double>(fine.steps);
  Checks c;
  c.expect(coarse.result.converged && fine.result.converged, "a run did not converge");
  c.expect(rel <= 0.05, "update counts differ by " + fmt(100 * rel) + "%");
  c.expect(it_coarse <= 3.0 && it_fine <= 3.0, "too many Newton iterations per step");
  return {c.ok(), "updates " + std::to_string(coarse.result.updates) + " (1e-2) vs " +
                      std::to_string(fine.result.updates) + " (1e-3), difference " + fmt(100 * rel) +
                      "%; Newton iterations per step " + fmt(it_coarse) + " / " + fmt(it_fine) + "; " + c.summary()};
}

// 7. Safeguarded Newton against a dense grid.
Outcome line_search_accuracy() {
  Rng rng(707);
  LineSearchConfig cfg;
  LineSearchConfig grid;
  grid.mode = LineSearchMode::grid_oracle;
  Checks c;
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto L = fixtures::random_line_instance(rng);
    const LineObjective f = L.objective();
    const double got = line_search(f, cfg).step;
    const double ref = line_search(f, grid).step;
    const double err = std::abs(got - ref);
    c.expect(err <= 2 * cfg.sub_precision, "step " + fmt(got) + " vs grid " + fmt(ref));
    worst = std::max(worst, err);
  }
  return {c.ok(), "worst |step - grid argmax| = " + fmt(worst) + " (bound " + fmt(2 * cfg.sub_precision) + "); " +
                      c.summary()};
}

// 8. A near-gold start has gap (N / n) log K.
Outcome initial_gap() {
  const Dataset ds = convergence_set();
  const double lambda = default_lambda(ds);
  const DualState st = init_dual(ds, lambda, 1e-6);
  const double gap = primal_objective(st.weights.values(), ds, lambda) - dual_objective(ds, st);
  double tokens = 0;
  for (const auto& seq : ds.sequences) tokens += static_cast<double>(seq.length());
  const double expect = tokens / static_cast<double>(ds.size()) * std::log(static_cast<double>(ds.num_labels()));
  const double rel = std::abs(gap - expect) / expect;
  return {rel <= 0.01, "gap " + fmt(gap, 6) + " vs (N/n) log K = " + fmt(expect, 6) + ", relative error " + fmt(rel)};
}

// 9. Stored gap estimates track the true gap on the gap-sampling runs.
Outcome estimate_fidelity() {
  const SamplingRuns& r = sampling_runs();
  const std::vector<double>& g = r.ratios[1];
  if (g.empty()) return {false, "no batch rows after epoch 1"};
  const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
  const auto in_band = [&](double a, double b) {
    return std::count_if(g.begin(), g.end(), [&](double x) { return x >= a && x <= b; });
  };
  std::ostringstream others;
  for (std::size_t s : {std::size_t{0}, std::size_t{2}}) {
    const auto [a, b] = std::minmax_element(r.ratios[s].begin(), r.ratios[s].end());
    others << "; " << scheme_name(kSchemes[s]) << " runs (not asserted) [" << fmt(*a) << ", " << fmt(*b) << "]";
  }
  const auto inside = in_band(0.3, 3.0);
  return {static_cast<std::size_t>(inside) == g.size(),
          "gap runs: estimate/true in [" + fmt(*lo) + ", " + fmt(*hi) + "] over " + std::to_string(g.size()) +
              " checkpoints; " + std::to_string(inside) + " inside [0.3, 3], " + std::to_string(in_band(0.5, 2.0)) +
              " inside the factor-2 band" + others.str()};
}

// 10. Closed forms of the non-uniformity measure.
Outcome nonuniformity_forms() {
  Checks c;
  double worst = 0;
  for (std::size_t n : {1u, 2u, 3u, 7u, 10u, 100u, 1000u, 12345u}) {
    const std::vector<double> constant(n, 0.37);
    c.expect(nonuniformity(constant) == 1.0, "constant n=" + std::to_string(n));
    std::vector<double> one_hot(n, 0.0);
    one_hot[n / 2] = 2.5;
    c.expect(nonuniformity(one_hot) == std::sqrt(static_cast<double>(n)), "one-hot n=" + std::to_string(n));
    std::vector<double> spaced(n);
    for (std::size_t j = 0; j < n; ++j) spaced[j] = static_cast<double>(j + 1);
    const double chi = nonuniformity(spaced);
    const double nn = static_cast<double>(n);
    const double expect = 2.0 / 3.0 * (2 * nn + 1) / (nn + 1);
    const double rel = std::abs(chi * chi - expect) / expect;
    c.expect(rel <= 1e-13, "evenly spaced n=" + std::to_string(n) + " off by " + fmt(rel));
    worst = std::max(worst, rel);
  }
  return {c.ok(), "constant and one-hot exact, evenly spaced worst relative error " + fmt(worst) + "; " + c.summary()};
}

// 11. The radius estimate bounds every corrected feature norm.
Outcome radius_soundness() {
  Rng rng(1111);
  Checks c;
  double tightest = INFINITY;
  int instances = 0;
  while (instances < 200) {
    const std::size_t K = 2 + bounded(rng, 2);
    const std::size_t max_T = K == 2 ? 7 : 5;
    const Dataset ds = fixtures::random_dataset(rng, 1, max_T, K, 6, 1 + bounded(rng, 4));
    const Sequence& seq = ds.sequences[0];
    if (std::pow(static_cast<double>(K), static_cast<double>(seq.length())) > 243.0) continue;
    ++instances;
    const auto idx = ds.indexer();
    double best = 0;
    for_each_labeling(seq.length(), K, [&](const Labeling& y, std::size_t) {
      best = std::max(best, corrected_feature(seq, y, idx).squared_norm());
    });
    const double r = estimate_radius(seq, idx);
    c.expect(r >= best, "radius " + fmt(r) + " below enumerated " + fmt(best));
    if (best > 0) tightest = std::min(tightest, r / best);
  }
  return {c.ok(), std::to_string(instances) + " instances; smallest radius / enumerated max = " + fmt(tightest) + "; " +
                      c.summary()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 12. Same dataset, flags and seed give the same metrics file.
Outcome cli_determinism() {
  const fs::path dir = fs::path(TEST_SCRATCH_DIR) / "acceptance";
  fs::create_directories(dir);
  const fs::path spec = dir / "spec.json";
  std::ofstream(spec) << R"({"num_sequences": 60, "min_length": 3, "max_length": 9, "num_labels": 4,
                             "num_attributes": 80, "attributes_per_token": 4, "seed": 12})";
  std::vector<std::string> files;
  for (int k = 0; k < 2; ++k) {
    const fs::path csv = dir / ("run" + std::to_string(k) + ".csv");
    fs::remove(csv);
    const std::string cmd = std::string(SDCA_CRF_BIN) + " train --data " + spec.string() +
                            " --format synthetic --sampler gap --seed 9 --max-epochs 30 --true-gap-every 2"
                            " --no-timing --metrics-out " + csv.string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code != 0 && code != 2) return {false, "training run exited with " + std::to_string(code)};
    files.push_back(slurp(csv));
  }
  const auto rows = std::count(files[0].begin(), files[0].end(), '\n');
  const bool same = !files[0].empty() && files[0] == files[1];
  fs::remove_all(dir);
  return {same, std::string(same ? "identical" : "different") + " metrics files (" + std::to_string(rows) +
                    " lines, " + std::to_string(files[0].size()) + " bytes)"};
}

}  // namespace

int main() {
  criterion(1, "inference matches enumeration", 10, inference_exactness);
  criterion(2, "duality identities", 30, duality);
  criterion(3, "fixed-step ascent bound", 60, fixed_step_ascent);
  criterion(4, "uniform SDCA converges to gap 1e-6", 300, uniform_convergence);
  criterion(5, "gap sampling is no slower than uniform", 600, sampling_speed);
  criterion(6, "line-search precision insensitivity", 300, precision_insensitivity);
  criterion(7, "line search matches dense grid", 60, line_search_accuracy);
  criterion(8, "initial duality gap", 60, initial_gap);
  criterion(9, "gap estimates track the true gap", 600, estimate_fidelity);
  criterion(10, "non-uniformity closed forms", 10, nonuniformity_forms);
  criterion(11, "radius estimate is an upper bound", 60, radius_soundness);
  criterion(12, "metrics are deterministic", 120, cli_determinism);
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << 12 - failures << "/12 criteria" << std::endl;
  return failures ? 1 : 0;
}
