#pragma once

// Exact step-size search for one SDCA block update.
//
// Along mu + gamma * delta (delta = nu - mu), n times the change of the dual
// objective is, up to a constant,
//
//   f(gamma) = H(mu + gamma delta) - lambda n (gamma <w, v> + gamma^2 |v|^2 / 2)
//
// where H is the chain entropy written over edges and interior nodes. f is
// concave; we find the zero of f' on [0, 1] with a bracketed Newton method
// that falls back to bisection whenever the Newton step leaves the bracket or
// stalls. No marginalization call is needed: only the two endpoint tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "sdcacrf/inference.hpp"

namespace sdcacrf {

enum class LineSearchMode { newton_safeguarded, fixed_step, grid_oracle };

struct LineSearchConfig {
  double sub_precision = 1e-3;  // stop once the last step is shorter than this
  std::size_t max_newton_iters = 50;
  LineSearchMode mode = LineSearchMode::newton_safeguarded;
  double fixed_step = 0.0;           // fixed_step mode; <= 0 means "use the safe step"
  std::size_t grid_points = 100001;  // grid_oracle mode

  void validate() const {
    if (!(sub_precision > 0.0 && sub_precision <= 0.5))
      throw std::invalid_argument("line-search sub-precision must lie in (0, 0.5]");
    if (max_newton_iters < 1) throw std::invalid_argument("need at least one Newton iteration");
    if (mode == LineSearchMode::grid_oracle && grid_points < 2)
      throw std::invalid_argument("grid search needs at least two points");
    if (!(fixed_step <= 1.0)) throw std::invalid_argument("fixed step must not exceed 1");
  }
};

/// The one-dimensional objective f above, between marginals mu (gamma = 0)
/// and nu (gamma = 1).
class LineObjective {
 public:
  LineObjective(const MarginalSet& mu, const MarginalSet& nu, double w_dot_v, double v_sq_norm,
                double lambda_n)
      : mu_(mu), nu_(nu), wv_(w_dot_v), vv_(v_sq_norm), ln_(lambda_n) {
    if (!mu.prob.same_shape(nu.prob)) throw std::invalid_argument("LineObjective: shape mismatch");
  }

  double value(double gamma) const {
    double h = 0.0;
    visit(gamma, [&](double sign, double x, double logx, double) {
      if (x > 0.0) h -= sign * x * logx;
    });
    return h - ln_ * (gamma * wv_ + 0.5 * gamma * gamma * vv_);
  }

  struct Derivatives {
    double first = 0.0;
    double second = 0.0;
    double curvature_scale = 0.0;  // sum of |terms| in `second`, for tolerance checks
  };

  Derivatives derivatives(double gamma) const {
    Derivatives d;
    visit(gamma, [&](double sign, double x, double logx, double delta) {
      if (delta == 0.0) return;
      d.first -= sign * delta * logx;
      const double c = delta * delta / std::max(x, kLogFloor);
      d.second -= sign * c;
      d.curvature_scale += c;
    });
    d.first -= ln_ * (wv_ + gamma * vv_);
    d.second -= ln_ * vv_;
    d.curvature_scale += ln_ * vv_;
    return d;
  }

 private:
  // Calls f(sign, x, log x, delta) for every table entry at mu + gamma delta;
  // sign is +1 on cliques and -1 on separators.
  template <typename F>
  void visit(double gamma, F&& f) const {
    const CliqueTables& a = mu_.prob;
    const CliqueTables& b = nu_.prob;
    const CliqueTables& la = mu_.log_prob;
    const CliqueTables& lb = nu_.log_prob;
    const double keep = 1.0 - gamma;
    auto entry = [&](double sign, double pa, double pb, double lpa, double lpb) {
      double x, lx;
      if (gamma == 0.0) {
        x = pa;
        lx = lpa;
      } else if (gamma == 1.0) {
        x = pb;
        lx = lpb;
      } else {
        x = keep * pa + gamma * pb;
        lx = x > 0.0 ? std::log(std::max(x, kLogFloor))
                     : -std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(lx)) lx = std::log(kLogFloor);
      f(sign, x, lx, pb - pa);
    };
    const std::size_t K = a.num_labels;
    if (a.length == 1) {
      for (std::size_t j = 0; j < K; ++j)
        entry(1.0, a.unary[j], b.unary[j], la.unary[j], lb.unary[j]);
      return;
    }
    for (std::size_t j = 0; j < a.pairwise.size(); ++j)
      entry(1.0, a.pairwise[j], b.pairwise[j], la.pairwise[j], lb.pairwise[j]);
    for (std::size_t j = K; j + K < a.unary.size(); ++j)
      entry(-1.0, a.unary[j], b.unary[j], la.unary[j], lb.unary[j]);
  }

  const MarginalSet& mu_;
  const MarginalSet& nu_;
  double wv_, vv_, ln_;
};

struct LineSearchResult {
  double step = 0.0;
  std::size_t iterations = 0;  // Newton/bisection iterations, endpoint checks excluded
};

namespace detail {

inline void check_concave(const LineObjective::Derivatives& d, double gamma) {
  if (d.second > 1e-9 * (1.0 + d.curvature_scale)) {
    throw std::logic_error("line-search objective is not concave at gamma = " +
                           std::to_string(gamma) + " (f'' = " + std::to_string(d.second) +
                           "); marginals are inconsistent");
  }
}

inline LineSearchResult grid_search(const LineObjective& f, std::size_t points) {
  LineSearchResult r;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < points; ++j) {
    const double g = static_cast<double>(j) / static_cast<double>(points - 1);
    const double v = f.value(g);
    if (v > best) {
      best = v;
      r.step = g;
    }
  }
  r.iterations = points;
  return r;
}

}  // namespace detail

/// Maximizes f over [0, 1]. In fixed_step mode returns cfg.fixed_step.
inline LineSearchResult line_search(const LineObjective& f, const LineSearchConfig& cfg) {
  cfg.validate();
  if (cfg.mode == LineSearchMode::fixed_step) {
    if (!(cfg.fixed_step > 0.0)) throw std::invalid_argument("fixed-step mode needs a step in (0, 1]");
    return {cfg.fixed_step, 0};
  }
  if (cfg.mode == LineSearchMode::grid_oracle) return detail::grid_search(f, cfg.grid_points);

  const auto d0 = f.derivatives(0.0);
  if (d0.first <= 0.0) return {0.0, 0};
  const auto d1 = f.derivatives(1.0);
  if (d1.first >= 0.0) return {1.0, 0};

  double lo = 0.0, hi = 1.0;  // f'(lo) > 0 > f'(hi)
  double x = 0.5;
  double dx = hi - lo, dx_old = dx;
  LineSearchResult r;
  for (std::size_t it = 1; it <= cfg.max_newton_iters; ++it) {
    r.iterations = it;
    const auto d = f.derivatives(x);
    detail::check_concave(d, x);
    if (d.first == 0.0) {
      r.step = x;
      return r;
    }
    if (d.first > 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const bool newton_ok = d.second < 0.0;
    const double xn = newton_ok ? x - d.first / d.second : 0.0;
    if (!newton_ok || xn <= lo || xn >= hi ||
        std::abs(2.0 * d.first) > std::abs(dx_old * d.second)) {
      dx_old = dx;
      dx = 0.5 * (hi - lo);
      x = lo + dx;
    } else {
      dx_old = dx;
      dx = x - xn;
      x = xn;
    }
    if (std::abs(dx) < cfg.sub_precision) break;
  }
  r.step = std::clamp(x, 0.0, 1.0);
  return r;
}

}  // namespace sdcacrf
