// SPDX-License-Identifier: Apache-2.0
//
// Numerical check of strong duality for the risk-constrained problem
//
//   min_q R_s(q)  s.t.  max_d R_d(q) <= alpha,   R_d(q) = -sum_k p_d(k) log q_k
//
// where q ranges over the probability simplex itself (2 or 3 outcomes), not
// over model weights: convexity holds in the predicted distribution, so this
// is the setting where the argument applies verbatim.
//
// Both sides use a grid followed by local refinement. Every function being
// minimized is convex, so golden-section search on a bracket from the grid
// (nested once for three outcomes) is exact up to its tolerance.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "drm/config.hpp"
#include "drm/errors.hpp"

namespace drm::duality {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct DualityProblem {
  std::vector<std::vector<double>> label_dists;  // p_d, one row per domain
  std::size_t source_index = 0;
  double alpha = kInf;

  std::size_t n_outcomes() const { return label_dists.empty() ? 0 : label_dists.front().size(); }

  void check() const {
    if (label_dists.empty()) throw ConfigError("duality: need at least one domain");
    const std::size_t k = n_outcomes();
    if (k != 2 && k != 3) throw ConfigError("duality: only 2 or 3 outcomes are supported");
    for (const auto& p : label_dists) {
      if (p.size() != k) throw ConfigError("duality: label distributions differ in length");
      double s = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) throw ConfigError("duality: negative probability");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("duality: label distribution does not sum to 1");
    }
    if (source_index >= label_dists.size()) throw ConfigError("duality: source_index out of range");
    if (std::isnan(alpha)) throw ConfigError("duality: alpha is NaN");
  }

  double risk(std::size_t d, std::span<const double> q) const {
    double r = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double p = label_dists[d][k];
      if (p == 0.0) continue;
      if (q[k] <= 0.0) return kInf;
      r -= p * std::log(q[k]);
    }
    return r;
  }

  double source_risk(std::span<const double> q) const { return risk(source_index, q); }

  double worst_risk(std::span<const double> q) const {
    double m = -kInf;
    for (std::size_t d = 0; d < label_dists.size(); ++d) m = std::max(m, risk(d, q));
    return m;
  }
};

namespace detail {

struct Min1d {
  double x;
  double f;
};

/// Golden-section search for a convex (hence unimodal) f on [lo, hi].
/// Endpoints are included as candidates so boundary optima are not lost.
inline Min1d golden_min(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12) {
  constexpr double kInvPhi = 0.6180339887498949;
  if (hi < lo) std::swap(lo, hi);
  double a = lo;
  double b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  Min1d best{c, fc};
  if (fd < best.f) best = {d, fd};
  for (double e : {lo, hi}) {
    const double fe = f(e);
    if (fe < best.f) best = {e, fe};
  }
  return best;
}

/// Grid scan on [lo, hi] then golden refinement in the bracket around the
/// best grid point. The scan protects against flat +inf stretches where
/// golden search alone cannot tell which way to go.
inline Min1d scan_then_golden(const std::function<double(double)>& f, double lo, double hi, int cells = 64,
                              double tol = 1e-12) {
  if (hi <= lo) return {lo, f(lo)};
  const double h = (hi - lo) / cells;
  int best = 0;
  double fbest = kInf;
  for (int i = 0; i <= cells; ++i) {
    const double v = f(lo + h * i);
    if (v < fbest) {
      fbest = v;
      best = i;
    }
  }
  const double a = lo + h * std::max(best - 1, 0);
  const double b = lo + h * std::min(best + 1, cells);
  Min1d m = golden_min(f, a, b, tol);
  if (fbest < m.f) m = {lo + h * best, fbest};
  return m;
}

/// Bisection for the level crossing of g between `inside` (g <= level) and
/// `outside` (g > level). Returns the last point known to be inside.
inline double crossing(const std::function<double(double)>& g, double level, double inside, double outside) {
  for (int it = 0; it < 200 && std::abs(outside - inside) > 1e-15; ++it) {
    const double mid = 0.5 * (inside + outside);
    if (g(mid) <= level) {
      inside = mid;
    } else {
      outside = mid;
    }
  }
  return inside;
}

/// Largest interval around `center` (where g <= level) on which g <= level.
inline std::pair<double, double> sublevel_interval(const std::function<double(double)>& g, double level, double center,
                                                   double lo, double hi) {
  const double a = g(lo) <= level ? lo : crossing(g, level, center, lo);
  const double b = g(hi) <= level ? hi : crossing(g, level, center, hi);
  return {a, b};
}

inline std::vector<double> point(std::size_t k, double u, double v) {
  if (k == 2) return {u, 1.0 - u};
  return {u, v, std::max(0.0, 1.0 - u - v)};
}

/// Convex objective over the simplex, minimized by (nested) refinement.
inline Min1d minimize_simplex(const DualityProblem& pb, const std::function<double(std::span<const double>)>& obj,
                              std::vector<double>& argmin) {
  const std::size_t k = pb.n_outcomes();
  if (k == 2) {
    auto f = [&](double u) {
      const auto q = point(2, u, 0.0);
      return obj(q);
    };
    const Min1d m = scan_then_golden(f, 0.0, 1.0);
    argmin = point(2, m.x, 0.0);
    return m;
  }
  double inner_v = 0.0;
  auto inner = [&](double u) {
    auto g = [&](double v) {
      const auto q = point(3, u, v);
      return obj(q);
    };
    const Min1d m = scan_then_golden(g, 0.0, 1.0 - u, 16, 1e-11);
    inner_v = m.x;
    return m.f;
  };
  const Min1d mu = scan_then_golden(inner, 0.0, 1.0, 32, 1e-11);
  inner(mu.x);
  argmin = point(3, mu.x, inner_v);
  return {mu.x, obj(argmin)};
}

}  // namespace detail

/// min_q max_d R_d(q): the smallest alpha for which the problem is feasible.
inline double min_worst_risk(const DualityProblem& pb, std::vector<double>* argmin = nullptr) {
  std::vector<double> q;
  const auto m = detail::minimize_simplex(pb, [&](std::span<const double> x) { return pb.worst_risk(x); }, q);
  if (argmin) *argmin = q;
  return m.f;
}

struct SlaterReport {
  double min_worst_risk = kInf;
  double margin = -kInf;  // alpha − min_worst_risk
  bool holds = false;
};

inline SlaterReport check_slater(const DualityProblem& pb) {
  pb.check();
  SlaterReport r;
  r.min_worst_risk = min_worst_risk(pb);
  r.margin = pb.alpha - r.min_worst_risk;
  r.holds = r.margin > 1e-9;
  return r;
}

enum class PrimalStatus { kOk, kAlphaTooSmall, kResolutionArtifact };

inline std::string_view to_string(PrimalStatus s) {
  switch (s) {
    case PrimalStatus::kOk: return "ok";
    case PrimalStatus::kAlphaTooSmall: return "alpha_too_small";
    case PrimalStatus::kResolutionArtifact: return "resolution_artifact";
  }
  return "?";
}

struct PrimalResult {
  PrimalStatus status = PrimalStatus::kOk;
  std::vector<double> grid_q;
  double grid_value = kInf;  // best feasible grid point, +inf if none
  std::vector<double> q;
  double value = kInf;  // refined optimum (a feasible point)
  std::size_t grid_points = 0;
};

/// Every point of the simplex grid with spacing `resolution`.
inline void for_each_grid_point(std::size_t k, double resolution, const std::function<void(std::span<const double>)>& fn) {
  if (!(resolution > 0.0 && resolution <= 0.5)) throw ConfigError("duality: grid_resolution must be in (0, 0.5]");
  const auto n = static_cast<long>(std::llround(1.0 / resolution));
  std::vector<double> q(k);
  if (k == 2) {
    for (long i = 0; i <= n; ++i) {
      q[0] = static_cast<double>(i) / static_cast<double>(n);
      q[1] = static_cast<double>(n - i) / static_cast<double>(n);
      fn(q);
    }
    return;
  }
  for (long i = 0; i <= n; ++i) {
    for (long j = 0; i + j <= n; ++j) {
      q[0] = static_cast<double>(i) / static_cast<double>(n);
      q[1] = static_cast<double>(j) / static_cast<double>(n);
      q[2] = static_cast<double>(n - i - j) / static_cast<double>(n);
      fn(q);
    }
  }
}

namespace detail {

/// Constrained refinement: min R_s over {max_d R_d <= alpha}. Returns an
/// empty q when the feasible set is empty.
inline Min1d refine_primal(const DualityProblem& pb, std::vector<double>& q_out) {
  const double alpha = pb.alpha;
  const std::size_t k = pb.n_outcomes();
  auto worst = [&](std::span<const double> q) { return pb.worst_risk(q); };
  auto src = [&](std::span<const double> q) { return pb.source_risk(q); };

  if (k == 2) {
    auto g = [&](double u) { return worst(point(2, u, 0.0)); };
    const Min1d gm = scan_then_golden(g, 0.0, 1.0);
    if (gm.f > alpha) {
      q_out.clear();
      return {0.0, kInf};
    }
    const auto [a, b] = sublevel_interval(g, alpha, gm.x, 0.0, 1.0);
    auto f = [&](double u) { return src(point(2, std::clamp(u, a, b), 0.0)); };
    const Min1d m = scan_then_golden(f, a, b);
    q_out = point(2, m.x, 0.0);
    return m;
  }

  // three outcomes: phi(u) = min_v worst(u, v) is convex in u.
  auto phi = [&](double u) {
    auto g = [&](double v) { return worst(point(3, u, v)); };
    return scan_then_golden(g, 0.0, 1.0 - u, 16, 1e-12);
  };
  const Min1d um = scan_then_golden([&](double u) { return phi(u).f; }, 0.0, 1.0, 32, 1e-12);
  if (um.f > alpha) {
    q_out.clear();
    return {0.0, kInf};
  }
  const auto [ua, ub] = sublevel_interval([&](double u) { return phi(u).f; }, alpha, um.x, 0.0, 1.0);
  double best_v = 0.0;
  auto h = [&](double u) {
    u = std::clamp(u, ua, ub);
    const Min1d vm = phi(u);
    if (vm.f > alpha) return kInf;
    auto g = [&](double v) { return worst(point(3, u, v)); };
    const auto [va, vb] = sublevel_interval(g, alpha, vm.x, 0.0, 1.0 - u);
    auto f = [&](double v) { return src(point(3, u, std::clamp(v, va, vb))); };
    const Min1d m = scan_then_golden(f, va, vb, 16, 1e-12);
    best_v = std::clamp(m.x, va, vb);
    return m.f;
  };
  const Min1d m = scan_then_golden(h, ua, ub, 32, 1e-12);
  h(m.x);
  q_out = point(3, std::clamp(m.x, ua, ub), best_v);
  return {m.x, src(q_out)};
}

}  // namespace detail

/// Exhaustive grid search, then constrained refinement. If no grid point is
/// feasible, the refinement decides whether alpha is genuinely too small or
/// the feasible set merely falls between grid points.
inline PrimalResult solve_primal(const DualityProblem& pb, double grid_resolution) {
  pb.check();
  PrimalResult r;
  for_each_grid_point(pb.n_outcomes(), grid_resolution, [&](std::span<const double> q) {
    ++r.grid_points;
    if (pb.worst_risk(q) > pb.alpha) return;
    const double v = pb.source_risk(q);
    if (v < r.grid_value) {
      r.grid_value = v;
      r.grid_q.assign(q.begin(), q.end());
    }
  });
  std::vector<double> q;
  const auto m = detail::refine_primal(pb, q);
  if (q.empty()) {
    r.status = PrimalStatus::kAlphaTooSmall;
    return r;
  }
  r.q = q;
  r.value = m.f;
  // Refinement can only improve on a feasible grid point; keep the better.
  if (r.grid_value < r.value) {
    r.q = r.grid_q;
    r.value = r.grid_value;
  }
  if (r.grid_q.empty()) r.status = PrimalStatus::kResolutionArtifact;
  return r;
}

struct DualResult {
  double lambda = 0.0;
  double value = -kInf;
  std::vector<double> q;  // inner minimizer at lambda
  std::vector<double> lambda_grid;
  std::vector<double> grid_values;
};

/// g(λ) = min_q R_s(q) + λ (max_d R_d(q) − α).
inline double dual_function(const DualityProblem& pb, double lambda, std::vector<double>* argmin = nullptr) {
  if (!(lambda >= 0.0)) throw DomainError("duality: lambda must be >= 0");
  std::vector<double> q;
  auto obj = [&](std::span<const double> x) {
    const double s = pb.source_risk(x);
    if (lambda == 0.0) return s;
    return s + lambda * (pb.worst_risk(x) - pb.alpha);
  };
  const auto m = detail::minimize_simplex(pb, obj, q);
  if (argmin) *argmin = q;
  return m.f;
}

inline std::vector<double> default_lambda_grid(double lambda_max = 50.0, double step = 0.25) {
  if (!(lambda_max > 0.0 && step > 0.0)) throw ConfigError("duality: lambda grid must be positive");
  std::vector<double> g;
  const auto n = static_cast<long>(std::ceil(lambda_max / step));
  for (long i = 0; i <= n; ++i) g.push_back(std::min(lambda_max, step * static_cast<double>(i)));
  return g;
}

/// Outer maximization over the λ grid, then golden refinement between the
/// neighbours of the best grid value (g is concave).
inline DualResult solve_dual(const DualityProblem& pb, const std::vector<double>& lambda_grid) {
  pb.check();
  if (lambda_grid.empty() || lambda_grid.front() != 0.0) throw ConfigError("duality: lambda grid must start at 0");
  if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end())) throw ConfigError("duality: lambda grid must be sorted");
  DualResult r;
  r.lambda_grid = lambda_grid;
  const bool unconstrained = std::isinf(pb.alpha) && pb.alpha > 0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    const double v = unconstrained && lambda_grid[i] > 0.0 ? -kInf : dual_function(pb, lambda_grid[i]);
    r.grid_values.push_back(v);
    if (v > r.grid_values[best]) best = i;
  }
  double lo = lambda_grid[best == 0 ? 0 : best - 1];
  double hi = lambda_grid[std::min(best + 1, lambda_grid.size() - 1)];
  detail::Min1d m{lambda_grid[best], -r.grid_values[best]};
  if (hi > lo && !unconstrained) {
    const auto ref = detail::golden_min([&](double l) { return -dual_function(pb, l); }, lo, hi, 1e-10);
    if (ref.f < m.f) m = ref;
  }
  r.lambda = m.x;
  r.value = dual_function(pb, r.lambda, &r.q);
  if (r.value < r.grid_values[best]) {
    r.lambda = lambda_grid[best];
    r.value = dual_function(pb, r.lambda, &r.q);
  }
  return r;
}

/// Largest violation of concavity along the grid: positive entries mean a
/// later difference exceeded an earlier one.
inline double concavity_violation(const std::vector<double>& grid, const std::vector<double>& values) {
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
    const double s0 = (values[i] - values[i - 1]) / (grid[i] - grid[i - 1]);
    const double s1 = (values[i + 1] - values[i]) / (grid[i + 1] - grid[i]);
    worst = std::max(worst, s1 - s0);
  }
  return worst;
}

struct GapReport {
  DualityProblem problem;
  SlaterReport slater;
  PrimalResult primal;
  DualResult dual;
  double gap = kInf;  // primal − dual
  double concavity = 0.0;
  bool weak_duality_ok = false;
  bool strong_duality_ok = false;
};

inline constexpr double kGapTolerance = 1e-3;
inline constexpr double kWeakDualitySlack = 1e-9;

/// Runs both solvers. When Slater fails the report is returned unsolved.
inline GapReport duality_gap(const DualityProblem& pb, double grid_resolution,
                             const std::vector<double>& lambda_grid = default_lambda_grid()) {
  GapReport g;
  g.problem = pb;
  g.slater = check_slater(pb);
  if (!g.slater.holds) return g;
  g.primal = solve_primal(pb, grid_resolution);
  // λ* scales like 1/margin; widen the grid if the optimum sits on its edge.
  std::vector<double> grid = lambda_grid;
  g.dual = solve_dual(pb, grid);
  for (int widen = 0; widen < 8 && g.dual.lambda >= grid.back() - 1e-12; ++widen) {
    const double top = grid.back();
    const double step = top / static_cast<double>(grid.size() - 1);
    for (std::size_t i = 1; i < grid.size(); ++i) grid.push_back(top + step * static_cast<double>(i));
    g.dual = solve_dual(pb, grid);
  }
  g.gap = g.primal.value - g.dual.value;
  g.concavity = concavity_violation(g.dual.lambda_grid, g.dual.grid_values);
  g.weak_duality_ok = g.dual.value <= g.primal.value + kWeakDualitySlack;
  g.strong_duality_ok = g.weak_duality_ok && std::abs(g.gap) <= kGapTolerance;
  return g;
}

/// Random instance with Dirichlet(1) label distributions and alpha placed
/// halfway between the WRM floor and the worst risk at the ERM solution, so
/// the constraint is active and Slater holds.
inline DualityProblem random_problem(std::size_t n_domains, std::size_t n_outcomes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g1(1.0, 1.0);
  DualityProblem pb;
  for (std::size_t d = 0; d < n_domains; ++d) {
    std::vector<double> p(n_outcomes);
    double s = 0.0;
    for (double& v : p) s += (v = g1(rng) + 1e-3);
    for (double& v : p) v /= s;
    pb.label_dists.push_back(p);
  }
  pb.source_index = 0;
  pb.alpha = kInf;
  const double floor = min_worst_risk(pb);
  const double at_erm = pb.worst_risk(pb.label_dists[0]);  // argmin R_s is p_s
  pb.alpha = at_erm > floor + 1e-6 ? floor + 0.5 * (at_erm - floor) : floor + 0.1;
  return pb;
}

// ---- I/O ----------------------------------------------------------------

struct ProblemFile {
  DualityProblem problem;
  double grid_resolution = 1e-4;
  double lambda_max = 50.0;
  double lambda_step = 0.25;
};

inline ProblemFile problem_from_json(const nlohmann::json& j) {
  config::FieldReader r(j, "$");
  config::check_schema_version(r);
  ProblemFile f;
  const auto* dists = r.raw("label_distributions");
  if (!dists) throw ConfigError("$.label_distributions: required field missing");
  if (!dists->is_array()) throw ConfigError("$.label_distributions: expected an array");
  for (std::size_t i = 0; i < dists->size(); ++i) {
    f.problem.label_dists.push_back(
        config::read_list<double>((*dists)[i], "$.label_distributions[" + std::to_string(i) + "]"));
  }
  f.problem.source_index = r.get<std::size_t>("source_index", 0);
  const auto* a = r.raw("alpha");
  if (!a) throw ConfigError("$.alpha: required field missing");
  if (a->is_string() && a->get<std::string>() == "inf") {
    f.problem.alpha = kInf;
  } else {
    f.problem.alpha = config::FieldReader::convert<double>(*a, "$.alpha");
  }
  f.grid_resolution = r.get<double>("grid_resolution", f.grid_resolution);
  f.lambda_max = r.get<double>("lambda_max", f.lambda_max);
  f.lambda_step = r.get<double>("lambda_step", f.lambda_step);
  r.finish();
  f.problem.check();
  return f;
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const GapReport& g) {
  nlohmann::json j;
  j["label_distributions"] = g.problem.label_dists;
  j["source_index"] = g.problem.source_index;
  j["alpha"] = finite_or_null(g.problem.alpha);
  j["slater"] = {{"min_worst_risk", finite_or_null(g.slater.min_worst_risk)},
                 {"margin", finite_or_null(g.slater.margin)},
                 {"holds", g.slater.holds}};
  if (!g.slater.holds) {
    j["status"] = "slater_violated";
    return j;
  }
  j["status"] = g.strong_duality_ok ? "ok" : "gap_exceeds_tolerance";
  j["primal"] = {{"status", std::string(to_string(g.primal.status))},
                 {"q", g.primal.q},
                 {"value", finite_or_null(g.primal.value)},
                 {"grid_q", g.primal.grid_q},
                 {"grid_value", finite_or_null(g.primal.grid_value)},
                 {"grid_points", g.primal.grid_points}};
  j["dual"] = {{"lambda", g.dual.lambda}, {"value", finite_or_null(g.dual.value)}, {"q", g.dual.q}};
  j["gap"] = finite_or_null(g.gap);
  j["concavity_violation"] = g.concavity;
  j["weak_duality_ok"] = g.weak_duality_ok;
  j["strong_duality_ok"] = g.strong_duality_ok;
  return j;
}

/// λ grid against dual value, one row per grid point.
inline std::string dual_curve_csv(const GapReport& g) {
  std::ostringstream os;
  os.precision(17);
  os << "lambda,dual_value\n";
  for (std::size_t i = 0; i < g.dual.lambda_grid.size(); ++i) {
    os << g.dual.lambda_grid[i] << ',' << g.dual.grid_values[i] << '\n';
  }
  return os.str();
}

}  // namespace drm::duality
