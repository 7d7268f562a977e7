#pragma once

// Self-paced curriculum over the adversary's temperature (or force budget).
//
// The sampling distribution p_w is a gamma distribution. Each update moves it
// toward a fixed target while the importance-sampled performance estimate
// stays above the threshold xi and the step stays inside a KL trust region
// of radius epsilon:
//
//   min_w  KL(p_w || target)
//   s.t.   (1/M) sum_i p_w(x_i) / p_w'(x_i) V_i >= xi
//          KL(p_w || p_w') <= epsilon
//
// solved by primal-dual iteration on the Lagrangian with multipliers
// (lambda, eta) >= 0 in log-parameter space. A coarse ray scan from the old
// parameters and a pattern search then refine the result without leaving the
// feasible set.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/gamma.hpp"

namespace qarl {

enum class CurriculumMode { temperature, force };
enum class CurriculumVariant { full, point, linear, reduced };

inline const char* to_string(CurriculumMode m) { return m == CurriculumMode::temperature ? "temperature" : "force"; }

inline const char* to_string(CurriculumVariant v) {
  switch (v) {
    case CurriculumVariant::full: return "full";
    case CurriculumVariant::point: return "point";
    case CurriculumVariant::linear: return "linear";
    case CurriculumVariant::reduced: return "reduced";
  }
  return "full";
}

enum class UpdateStatus { none, advanced, fallback, skipped };

inline const char* to_string(UpdateStatus s) {
  switch (s) {
    case UpdateStatus::none: return "none";
    case UpdateStatus::advanced: return "advanced";
    case UpdateStatus::fallback: return "fallback";
    case UpdateStatus::skipped: return "skipped";
  }
  return "none";
}

struct CurriculumOptions {
  double dual_step = 0.05;
  std::size_t primal_steps = 50;
  std::size_t dual_rounds = 200;
  double initial_primal_step = 0.5;
  std::size_t min_samples = 30;
  bool fix_rate = false;
  // Multiplicative step cap (in log space) for the point variant; <= 0 means sqrt(2 epsilon).
  double point_step = 0.0;
  // Upper bound on the gamma shape. Maximizing an importance-sampled estimate
  // rewards collapsing onto the best sample, and repeated fallbacks drove the
  // shape past 1e18 until densities underflowed.
  double max_shape = 1e4;
};

struct CurriculumState {
  GammaParams current;
  GammaParams target;
  double xi = 0.0;
  double epsilon = 0.5;
  double lambda = 0.0;
  double eta = 0.0;
  CurriculumMode mode = CurriculumMode::temperature;
  CurriculumVariant variant = CurriculumVariant::full;
  CurriculumOptions options;
  // Diagnostics of the most recent update.
  double estimate = 0.0;
  // The scalar of the point variant, kept exactly (current.mean() would round).
  double point_value = 0.0;
  UpdateStatus status = UpdateStatus::none;
  std::size_t skipped_updates = 0;
};

struct PerformanceSample {
  double value = 0.0;             // sampled temperature or force budget
  double estimated_return = 0.0;  // Monte-Carlo return of a rollout conditioned on `value`
  std::size_t initial_state = 0;
};

using PerformanceSamples = std::vector<PerformanceSample>;

// Importance-sampled mean of the returns under `candidate`, for samples
// drawn from `behavior`.
inline double is_performance_estimate(std::span<const PerformanceSample> samples, const GammaParams& candidate,
                                      const GammaParams& behavior) {
  if (samples.empty()) throw DomainError("is_performance_estimate: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    const double lb = gamma_log_pdf(behavior, s.value);
    if (!std::isfinite(lb) || std::exp(lb) == 0.0)
      throw DomainError("is_performance_estimate: behavior density is zero at a sampled point");
    total += std::exp(gamma_log_pdf(candidate, s.value) - lb) * s.estimated_return;
  }
  return total / double(samples.size());
}

// Fraction of the way through a linear schedule that is flat at 0 before
// start_frac * total and flat at 1 after end_frac * total.
inline double linear_schedule(std::size_t iter, std::size_t total, double start_frac = 0.2, double end_frac = 0.8) {
  if (iter > total) throw DomainError("linear_schedule: iter exceeds total");
  const double t = double(iter), start = start_frac * double(total), end = end_frac * double(total);
  if (t <= start) return 0.0;
  if (t >= end) return 1.0;
  return (t - start) / (end - start);
}

inline std::vector<double> clip_force(std::span<const double> action, double budget) {
  if (!(budget >= 0.0)) throw DomainError("clip_force: budget must be non-negative");
  std::vector<double> out(action.begin(), action.end());
  for (double& a : out) a = std::clamp(a, -budget, budget);
  return out;
}

namespace detail {

using Vec2 = std::array<double, 2>;

inline GammaParams from_log(const Vec2& u) { return {std::exp(u[0]), std::exp(u[1])}; }
inline Vec2 to_log(const GammaParams& p) { return {std::log(p.shape), std::log(p.rate)}; }

// A scalar function of the log-parameters with its gradient.
struct Term {
  std::function<double(const Vec2&)> value;
  std::function<Vec2(const Vec2&)> grad;
};

struct ConstrainedResult {
  Vec2 u{};
  bool feasible = false;
  double objective = 0.0;
  std::vector<double> multipliers;
};

// Pattern search that stays feasible: an infeasible probe is pulled back
// toward the incumbent by bisection, so probes slide along an active boundary
// instead of stalling against it. The incumbent is feasible, which keeps this
// valid when the feasible set has several pieces.
template <class Feasible>
void polish_feasible(const Term& f, const Feasible& is_feasible, bool fixed_rate, ConstrainedResult& out) {
  auto pull_back = [&](const Vec2& c) {
    if (is_feasible(c)) return c;
    const Vec2 a = out.u;
    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 60; ++k) {
      const double mid = 0.5 * (lo + hi);
      (is_feasible(Vec2{a[0] + mid * (c[0] - a[0]), a[1] + mid * (c[1] - a[1])}) ? lo : hi) = mid;
    }
    return Vec2{a[0] + lo * (c[0] - a[0]), a[1] + lo * (c[1] - a[1])};
  };
  const int n_dirs = fixed_rate ? 2 : 16;
  double step = 0.25;
  for (int it = 0; it < 2000 && step > 1e-9; ++it) {
    Vec2 best_c = out.u;
    double best_f = out.objective;
    for (int d = 0; d < n_dirs; ++d) {
      const double th = fixed_rate ? (d == 0 ? 0.0 : std::numbers::pi) : 2.0 * std::numbers::pi * d / n_dirs;
      const Vec2 c = pull_back({out.u[0] + step * std::cos(th), out.u[1] + (fixed_rate ? 0.0 : step * std::sin(th))});
      const double fc = f.value(c);
      if (std::isfinite(fc) && fc < best_f - 1e-14 * (1.0 + std::abs(best_f)) && is_feasible(c)) {
        best_f = fc;
        best_c = c;
      }
    }
    if (best_f < out.objective) {
      out.u = best_c;
      out.objective = best_f;
    } else {
      step *= 0.5;
    }
  }
}

// Coarse global pass for the nonconvex objective. Along 128 rays from u0 it
// finds where each ray first leaves the feasible set (doubling, then
// bisection) and evaluates f at eight evenly spaced points inside. Probes at
// geometrically spaced distances beyond that point are kept when they are
// feasible on their own, since the performance constraint can admit a second
// region further out. The best point replaces `out` when it improves on it.
template <class Feasible>
void scan_rays(const Term& f, const Feasible& is_feasible, const Vec2& u0, bool fixed_rate, ConstrainedResult& out) {
  constexpr double kMaxReach = 16.0;
  const int n_rays = fixed_rate ? 2 : 128;
  auto consider = [&](const Vec2& c) {
    const double fc = f.value(c);
    if (std::isfinite(fc) && (!out.feasible || fc < out.objective) && is_feasible(c)) {
      out.u = c;
      out.objective = fc;
      out.feasible = true;
    }
  };
  for (int d = 0; d < n_rays; ++d) {
    const double th = fixed_rate ? (d == 0 ? 0.0 : std::numbers::pi) : 2.0 * std::numbers::pi * d / n_rays;
    const Vec2 dir{std::cos(th), fixed_rate ? 0.0 : std::sin(th)};
    auto at = [&](double t) { return Vec2{u0[0] + t * dir[0], u0[1] + t * dir[1]}; };
    double lo = 0.0, hi = 0.5;
    while (hi < kMaxReach && is_feasible(at(hi))) lo = hi, hi *= 2.0;
    if (is_feasible(at(hi))) {
      lo = hi;
    } else {
      for (int k = 0; k < 40; ++k) {
        const double mid = 0.5 * (lo + hi);
        (is_feasible(at(mid)) ? lo : hi) = mid;
      }
    }
    for (int k = 1; k <= 8; ++k) consider(at(lo * k / 8.0));
    for (double t = std::max(lo, 1e-3) * 1.1; t <= kMaxReach; t *= 1.1) consider(at(t));
  }
}

// Primal-dual method for min f(u) s.t. g_j(u) <= 0: gradient steps with
// Armijo backtracking on the Lagrangian for fixed multipliers, then projected
// multiplier ascent. The best feasible iterate seen is kept; `fixed_rate`
// freezes the second coordinate.
inline ConstrainedResult primal_dual(const Term& f, const std::vector<Term>& g, Vec2 u0, const CurriculumOptions& opt,
                                     bool fixed_rate, std::vector<double> lambda) {
  lambda.resize(g.size(), 0.0);
  auto is_feasible = [&](const Vec2& u) {
    for (const auto& gj : g)
      if (!(gj.value(u) <= 0.0)) return false;
    return true;
  };
  auto lagrangian = [&](const Vec2& u) {
    double l = f.value(u);
    for (std::size_t j = 0; j < g.size(); ++j) l += lambda[j] * g[j].value(u);
    return l;
  };
  auto lagrangian_grad = [&](const Vec2& u) {
    Vec2 d = f.grad(u);
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (lambda[j] == 0.0) continue;
      const Vec2 dj = g[j].grad(u);
      d[0] += lambda[j] * dj[0];
      d[1] += lambda[j] * dj[1];
    }
    if (fixed_rate) d[1] = 0.0;
    return d;
  };

  ConstrainedResult best;
  if (is_feasible(u0)) {
    best.u = u0;
    best.feasible = true;
    best.objective = f.value(u0);
  }
  Vec2 u = u0;
  double step = opt.initial_primal_step;
  double last_best = best.feasible ? best.objective : std::numeric_limits<double>::infinity();
  std::size_t quiet_rounds = 0;
  for (std::size_t round = 0; round < opt.dual_rounds; ++round) {
    for (std::size_t k = 0; k < opt.primal_steps; ++k) {
      const Vec2 d = lagrangian_grad(u);
      const double gnorm2 = d[0] * d[0] + d[1] * d[1];
      if (!(gnorm2 > 1e-24)) break;
      const double l0 = lagrangian(u);
      // Steps are capped in parameter space so that a single step cannot
      // leave the region where the closed forms are well conditioned.
      const double scale = std::min(1.0, 1.0 / std::sqrt(gnorm2));
      bool moved = false;
      for (int ls = 0; ls < 50; ++ls) {
        const Vec2 cand{u[0] - step * scale * d[0], u[1] - step * scale * d[1]};
        const double lc = lagrangian(cand);
        if (std::isfinite(lc) && lc <= l0 - 1e-4 * step * scale * gnorm2) {
          u = cand;
          moved = true;
          step = std::min(step * 2.0, 4.0);
          break;
        }
        step *= 0.5;
      }
      if (!moved) {
        step = opt.initial_primal_step;
        break;
      }
      const bool stalled = l0 - lagrangian(u) <= 1e-13 * (1.0 + std::abs(l0));
      if (is_feasible(u)) {
        const double fu = f.value(u);
        if (!best.feasible || fu < best.objective) {
          best.u = u;
          best.feasible = true;
          best.objective = fu;
        }
      }
      if (stalled) break;
    }
    // Stop once the best feasible objective has not moved for a while.
    if (best.feasible) {
      if (best.objective < last_best - 1e-10 * (1.0 + std::abs(last_best))) {
        last_best = best.objective;
        quiet_rounds = 0;
      } else if (++quiet_rounds >= 25) {
        break;
      }
    }
    bool kkt = true;
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double gj = g[j].value(u);
      const double next = std::max(0.0, lambda[j] + opt.dual_step * gj);
      if (std::abs(next - lambda[j]) > 1e-9) kkt = false;
      lambda[j] = next;
    }
    if (kkt && is_feasible(u)) break;
  }

  ConstrainedResult out = best;
  out.multipliers = lambda;
  if (!best.feasible) out.u = u;
  // Last iterate may sit just outside the feasible set; pull it back along the
  // segment from the start point and keep it if it beats the best seen.
  if (!is_feasible(u) && is_feasible(u0)) {
    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 100; ++k) {
      const double mid = 0.5 * (lo + hi);
      const Vec2 c{u0[0] + mid * (u[0] - u0[0]), u0[1] + mid * (u[1] - u0[1])};
      (is_feasible(c) ? lo : hi) = mid;
    }
    const Vec2 c{u0[0] + lo * (u[0] - u0[0]), u0[1] + lo * (u[1] - u0[1])};
    if (is_feasible(c) && (!out.feasible || f.value(c) < out.objective)) {
      out.u = c;
      out.feasible = true;
      out.objective = f.value(c);
    }
  } else if (is_feasible(u) && (!out.feasible || f.value(u) < out.objective)) {
    out.u = u;
    out.feasible = true;
    out.objective = f.value(u);
  }
  if (is_feasible(u0)) {
    scan_rays(f, is_feasible, u0, fixed_rate, out);
    polish_feasible(f, is_feasible, fixed_rate, out);
  }
  return out;
}

inline bool degenerate(std::span<const PerformanceSample> samples) {
  for (const auto& s : samples)
    if (s.value != samples.front().value) return false;
  return true;
}

}  // namespace detail

// Samples must have been drawn from `state.current`.
inline CurriculumState curriculum_update(CurriculumState state, std::span<const PerformanceSample> samples) {
  using detail::Term;
  using detail::Vec2;
  if (samples.size() < state.options.min_samples)
    throw DomainError("curriculum_update: need at least " + std::to_string(state.options.min_samples) + " samples");
  if (!(state.epsilon > 0.0)) throw DomainError("curriculum_update: epsilon must be positive");
  if (!(state.current.shape <= state.options.max_shape * (1.0 + 1e-9)))
    throw DomainError("curriculum_update: current shape exceeds options.max_shape");
  if (detail::degenerate(samples)) {
    state.status = UpdateStatus::skipped;
    ++state.skipped_updates;
    return state;
  }
  const GammaParams old = state.current;
  const GammaParams target = state.target;
  const double xi = state.xi, eps = state.epsilon;
  std::vector<double> log_old(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) log_old[i] = gamma_log_pdf(old, samples[i].value);

  const Term to_target{[&](const Vec2& u) { return gamma_kl(detail::from_log(u), target); },
                       [&](const Vec2& u) {
                         const auto gr = gamma_kl_gradient(detail::from_log(u), target);
                         return Vec2{gr.d_log_shape, gr.d_log_rate};
                       }};
  // ln p(x_i) = k ln r + (k - 1) ln x_i - r x_i - lnGamma(k), with the
  // sample-independent parts hoisted out of the loop.
  std::vector<double> log_x(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) log_x[i] = std::log(samples[i].value);
  const double inv_m = 1.0 / double(samples.size());
  const Term performance{[&](const Vec2& u) {
                           const double k = std::exp(u[0]), r = std::exp(u[1]);
                           const double base = k * u[1] - std::lgamma(k);
                           double total = 0.0;
                           for (std::size_t i = 0; i < samples.size(); ++i)
                             total += std::exp(base + (k - 1.0) * log_x[i] - r * samples[i].value - log_old[i]) *
                                      samples[i].estimated_return;
                           return total * inv_m;
                         },
                         [&](const Vec2& u) {
                           const double k = std::exp(u[0]), r = std::exp(u[1]);
                           const double base = k * u[1] - std::lgamma(k);
                           const double psi = boost::math::digamma(k);
                           Vec2 d{0.0, 0.0};
                           for (std::size_t i = 0; i < samples.size(); ++i) {
                             const double x = samples[i].value;
                             const double w = std::exp(base + (k - 1.0) * log_x[i] - r * x - log_old[i]) *
                                              samples[i].estimated_return;
                             d[0] += w * k * (u[1] + log_x[i] - psi);
                             d[1] += w * (k - r * x);
                           }
                           return Vec2{d[0] * inv_m, d[1] * inv_m};
                         }};
  const Term trust{[&](const Vec2& u) { return gamma_kl(detail::from_log(u), old) - eps; },
                   [&](const Vec2& u) {
                     const auto gr = gamma_kl_gradient(detail::from_log(u), old);
                     return Vec2{gr.d_log_shape, gr.d_log_rate};
                   }};
  const Term perf_constraint{[&](const Vec2& u) { return xi - performance.value(u); },
                             [&](const Vec2& u) {
                               const Vec2 d = performance.grad(u);
                               return Vec2{-d[0], -d[1]};
                             }};

  const double log_max_shape = std::log(state.options.max_shape);
  const Term shape_cap{[&](const Vec2& u) { return u[0] - log_max_shape; },
                       [&](const Vec2&) { return Vec2{1.0, 0.0}; }};

  const Vec2 u0 = detail::to_log(old);
  const bool fixed_rate = state.options.fix_rate;
  auto primary =
      detail::primal_dual(to_target, {perf_constraint, trust, shape_cap}, u0, state.options, fixed_rate, {});
  if (primary.feasible) {
    state.current = detail::from_log(primary.u);
    state.lambda = primary.multipliers[0];
    state.eta = primary.multipliers[1];
    state.status = UpdateStatus::advanced;
  } else {
    // Nothing in the trust region meets xi: maximize the estimate instead,
    // without moving the mean toward the target.
    const double log_mean_old = std::log(old.mean());
    const double toward = target.mean() < old.mean() ? -1.0 : 1.0;
    // The small slack keeps the mean-preserving line itself feasible under rounding.
    const Term hold_mean{[&](const Vec2& u) { return toward * ((u[0] - u[1]) - log_mean_old) - 1e-12; },
                         [&](const Vec2&) { return Vec2{toward, -toward}; }};
    const Term neg_perf{[&](const Vec2& u) { return -performance.value(u); },
                        [&](const Vec2& u) {
                          const Vec2 d = performance.grad(u);
                          return Vec2{-d[0], -d[1]};
                        }};
    auto fb = detail::primal_dual(neg_perf, {trust, hold_mean, shape_cap}, u0, state.options, fixed_rate, {});
    state.current = fb.feasible ? detail::from_log(fb.u) : old;
    state.lambda = 0.0;
    state.eta = fb.multipliers.empty() ? 0.0 : fb.multipliers[0];
    state.status = UpdateStatus::fallback;
  }
  state.estimate = is_performance_estimate(samples, state.current, old);
  return state;
}

// Point variant: the curriculum variable is a scalar (a collapsed gamma with a
// very large shape at fixed mean). A feasible update moves it one capped step
// toward the target mean; an infeasible one backs off by half a step, never
// past the starting value.
struct PointCurriculum {
  static constexpr double kShape = 1e6;

  static GammaParams collapsed(double value) { return {kShape, kShape / value}; }
};

inline CurriculumState point_update(CurriculumState state, std::span<const PerformanceSample> samples,
                                    double initial_value) {
  if (state.variant != CurriculumVariant::point) throw DomainError("point_update: state is not a point curriculum");
  if (samples.empty()) throw DomainError("point_update: no samples");
  double mean_return = 0.0;
  for (const auto& s : samples) mean_return += s.estimated_return;
  mean_return /= double(samples.size());
  const double step = state.options.point_step > 0.0 ? state.options.point_step : std::sqrt(2.0 * state.epsilon);
  const double value = state.point_value > 0.0 ? state.point_value : state.current.mean();
  const double goal = state.target.mean();
  const bool descending = goal < value || (goal == value && goal < initial_value);
  double next = value;
  if (mean_return >= state.xi) {
    next = descending ? std::max(value * std::exp(-step), goal) : std::min(value * std::exp(step), goal);
    state.status = UpdateStatus::advanced;
  } else {
    next = descending ? std::min(value * std::exp(0.5 * step), std::max(initial_value, value))
                      : std::max(value * std::exp(-0.5 * step), std::min(initial_value, value));
    state.status = UpdateStatus::fallback;
  }
  state.current = PointCurriculum::collapsed(next);
  state.point_value = next;
  state.estimate = mean_return;
  return state;
}

inline nlohmann::json to_json(const CurriculumState& s) {
  return {{"current", to_json(s.current)}, {"target", to_json(s.target)}, {"xi", s.xi},
          {"epsilon", s.epsilon},          {"lambda", s.lambda},          {"eta", s.eta},
          {"mode", to_string(s.mode)},     {"variant", to_string(s.variant)}, {"estimate", s.estimate},
          {"status", to_string(s.status)}};
}

}  // namespace qarl
