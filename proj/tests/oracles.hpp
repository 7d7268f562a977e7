#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the solvers under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "qarl/envs.hpp"
#include "qarl/game.hpp"
#include "qarl/gamma.hpp"
#include "qarl/qre.hpp"

namespace oracle {

using qarl::MarkovGame;
using qarl::MatrixGame;
using qarl::Rng;

inline MatrixGame random_matrix(std::size_t m, std::size_t n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<std::vector<double>> rows(m, std::vector<double>(n));
  for (auto& r : rows)
    for (double& x : r) x = u(rng);
  return MatrixGame::from_rows(rows);
}

// Brown-Robinson fictitious play with simultaneous best responses. Returns
// the bracket [lower, upper] on the game value given by the empirical mixes.
struct FictitiousPlay {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> row_mix;
  std::vector<double> col_mix;
  double value() const { return 0.5 * (lower + upper); }
};

inline FictitiousPlay fictitious_play(const MatrixGame& x, std::size_t iterations) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> row_gain(m, 0.0), col_loss(n, 0.0);  // cumulative payoffs against the opponent's history
  std::vector<double> row_count(m, 0.0), col_count(n, 0.0);
  std::size_t i = 0, j = 0;
  for (std::size_t t = 0; t < iterations; ++t) {
    row_count[i] += 1.0;
    col_count[j] += 1.0;
    for (std::size_t a = 0; a < m; ++a) row_gain[a] += x(a, j);
    for (std::size_t b = 0; b < n; ++b) col_loss[b] += x(i, b);
    i = std::size_t(std::max_element(row_gain.begin(), row_gain.end()) - row_gain.begin());
    j = std::size_t(std::min_element(col_loss.begin(), col_loss.end()) - col_loss.begin());
  }
  FictitiousPlay out;
  const double T = double(iterations);
  out.upper = *std::max_element(row_gain.begin(), row_gain.end()) / T;
  out.lower = *std::min_element(col_loss.begin(), col_loss.end()) / T;
  for (double& c : row_count) c /= T;
  for (double& c : col_count) c /= T;
  out.row_mix = row_count;
  out.col_mix = col_count;
  return out;
}

// Residual written directly from the fixed-point definition.
inline double qre_fixed_point_residual(const qarl::MatrixGame& x, const qarl::QreSolution& s) {
  std::vector<double> ur(x.rows(), 0.0), uc(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      ur[i] += x(i, j) * s.sigma_col[j] / s.tau_row;
      uc[j] -= x(i, j) * s.sigma_row[i] / s.tau_col;
    }
  auto sm = [](std::vector<double> u) {
    const double mx = *std::max_element(u.begin(), u.end());
    double z = 0.0;
    for (double& v : u) z += (v = std::exp(v - mx));
    for (double& v : u) v /= z;
    return u;
  };
  const auto br = sm(ur), bc = sm(uc);
  double r = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) r = std::max(r, std::abs(br[i] - s.sigma_row[i]));
  for (std::size_t j = 0; j < x.cols(); ++j) r = std::max(r, std::abs(bc[j] - s.sigma_col[j]));
  return r;
}

// Worst-case payoff of a row strategy.
inline double security_level(const MatrixGame& x, const std::vector<double>& row) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) v += row[i] * x(i, j);
    worst = std::min(worst, v);
  }
  return worst;
}

// Expected one-step return of protagonist action a1 at s when the adversary
// plays `nu_row`, bootstrapped from v.
inline double backed_up(const MarkovGame& g, std::size_t s, std::size_t a1, const std::vector<double>& nu_row,
                        const std::vector<double>& v) {
  double q = 0.0;
  for (std::size_t a2 = 0; a2 < g.actions2(); ++a2) {
    if (nu_row[a2] == 0.0) continue;
    for (const auto& o : g.outcomes(s, a1, a2)) q += nu_row[a2] * o.prob * (o.reward + g.gamma() * v[o.next]);
  }
  return q;
}

// Single-agent soft value iteration for the protagonist against a fixed
// adversary policy nu (rows indexed by state). beta = 0 gives the hard max.
struct SingleAgentSolution {
  std::vector<double> v;
  std::vector<std::vector<double>> q;       // [s][a1]
  std::vector<std::vector<double>> policy;  // [s][a1]
};

inline SingleAgentSolution soft_vi_protagonist(const MarkovGame& g, const std::vector<std::vector<double>>& nu,
                                               double beta, double tol = 1e-12, std::size_t max_iter = 1000000) {
  const std::size_t n = g.n_states(), a1n = g.actions1();
  SingleAgentSolution sol;
  sol.v.assign(n, 0.0);
  sol.q.assign(n, std::vector<double>(a1n, 0.0));
  for (std::size_t it = 0; it < max_iter; ++it) {
    double change = 0.0;
    std::vector<double> nv(n);
    for (std::size_t s = 0; s < n; ++s) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < a1n; ++a) {
        sol.q[s][a] = backed_up(g, s, a, nu[s], sol.v);
        mx = std::max(mx, sol.q[s][a]);
      }
      if (beta > 0.0) {
        double z = 0.0;
        for (double x : sol.q[s]) z += std::exp((x - mx) / beta);
        nv[s] = mx + beta * std::log(z);
      } else {
        nv[s] = mx;
      }
      change = std::max(change, std::abs(nv[s] - sol.v[s]));
    }
    sol.v = nv;
    if (change <= tol) break;
  }
  sol.policy.assign(n, std::vector<double>(a1n, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < a1n; ++a) sol.q[s][a] = backed_up(g, s, a, nu[s], sol.v);
    if (beta > 0.0) {
      const double mx = *std::max_element(sol.q[s].begin(), sol.q[s].end());
      double z = 0.0;
      for (std::size_t a = 0; a < a1n; ++a) z += (sol.policy[s][a] = std::exp((sol.q[s][a] - mx) / beta));
      for (double& p : sol.policy[s]) p /= z;
    } else {
      sol.policy[s][std::size_t(std::max_element(sol.q[s].begin(), sol.q[s].end()) - sol.q[s].begin())] = 1.0;
    }
  }
  return sol;
}

// Hard best-response value iteration for one player against the other's
// frozen policy. `maximize` = protagonist responding to nu; otherwise the
// adversary minimizes against mu. Returns iota . v.
inline double best_response_value(const MarkovGame& g, const qarl::TabularPolicy& frozen, bool maximize,
                                  double tol = 1e-12) {
  const std::size_t n = g.n_states();
  std::vector<double> v(n, 0.0);
  for (std::size_t it = 0; it < 10000000; ++it) {
    double change = 0.0;
    std::vector<double> nv(n);
    for (std::size_t s = 0; s < n; ++s) {
      double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      const std::size_t mine = maximize ? g.actions1() : g.actions2();
      const std::size_t theirs = maximize ? g.actions2() : g.actions1();
      for (std::size_t a = 0; a < mine; ++a) {
        double q = 0.0;
        for (std::size_t b = 0; b < theirs; ++b) {
          const double w = frozen.prob(s, b);
          if (w == 0.0) continue;
          const std::size_t a1 = maximize ? a : b, a2 = maximize ? b : a;
          for (const auto& o : g.outcomes(s, a1, a2)) q += w * o.prob * (o.reward + g.gamma() * v[o.next]);
        }
        best = maximize ? std::max(best, q) : std::min(best, q);
      }
      nv[s] = best;
      change = std::max(change, std::abs(nv[s] - v[s]));
    }
    v = nv;
    if (change <= tol) break;
  }
  double j = 0.0;
  for (std::size_t s = 0; s < n; ++s) j += g.initial()[s] * v[s];
  return j;
}

// Breadth-first distance on the grid ignoring stochasticity; pits, the goal
// and walls are not passable, the goal is the target.
inline int grid_distance(const qarl::WindyGridSpec& spec) {
  auto blocked = [&](const qarl::Cell& c) {
    for (const auto& w : spec.walls)
      if (w == c) return true;
    for (const auto& p : spec.pits)
      if (p == c) return true;
    return false;
  };
  std::vector<int> dist(std::size_t(spec.width * spec.height), -1);
  auto idx = [&](const qarl::Cell& c) { return std::size_t(c.y * spec.width + c.x); };
  std::deque<qarl::Cell> queue{spec.start};
  dist[idx(spec.start)] = 0;
  const int dx[4] = {0, 1, 0, -1}, dy[4] = {1, 0, -1, 0};
  while (!queue.empty()) {
    const qarl::Cell c = queue.front();
    queue.pop_front();
    if (c == spec.goal) return dist[idx(c)];
    for (int d = 0; d < 4; ++d) {
      const qarl::Cell n{c.x + dx[d], c.y + dy[d]};
      if (!spec.inside(n) || blocked(n) || dist[idx(n)] >= 0) continue;
      dist[idx(n)] = dist[idx(c)] + 1;
      queue.push_back(n);
    }
  }
  return -1;
}

// Numerical integrals over (0, inf) for the gamma family. The integrands are
// split at the mode so both halves are smooth for the quadrature rules.
inline double integrate_positive(const std::function<double(double)>& f, double split) {
  boost::math::quadrature::tanh_sinh<double> ts;
  boost::math::quadrature::exp_sinh<double> es;
  const double left = ts.integrate(f, 0.0, split);
  const double right = es.integrate([&](double t) { return f(split + t); }, 0.0, std::numeric_limits<double>::infinity());
  return left + right;
}

inline double gamma_density(double shape, double rate, double x) {
  if (x <= 0.0) return 0.0;
  return std::exp(shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x - std::lgamma(shape));
}

inline double pdf_integral(double shape, double rate) {
  const double mode = shape > 1.0 ? (shape - 1.0) / rate : 1.0 / rate;
  return integrate_positive([&](double x) { return gamma_density(shape, rate, x); }, mode);
}

inline double kl_quadrature(double kp, double rp, double kq, double rq) {
  const double mode = kp > 1.0 ? (kp - 1.0) / rp : 1.0 / rp;
  auto integrand = [&](double x) {
    if (x <= 0.0) return 0.0;
    const double lp = kp * std::log(rp) + (kp - 1.0) * std::log(x) - rp * x - std::lgamma(kp);
    const double lq = kq * std::log(rq) + (kq - 1.0) * std::log(x) - rq * x - std::lgamma(kq);
    const double p = std::exp(lp);
    return p == 0.0 ? 0.0 : p * (lp - lq);
  };
  return integrate_positive(integrand, mode);
}

// Pearson chi-square goodness of fit; returns the p-value.
inline double chi_square_pvalue(const std::vector<double>& counts, const std::vector<double>& probs) {
  double n = 0.0;
  for (double c : counts) n += c;
  double stat = 0.0;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    const double e = n * probs[i];
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++cells;
  }
  boost::math::chi_squared dist(double(cells - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// One-sample Kolmogorov-Smirnov test against a continuous CDF; returns the
// asymptotic p-value.
inline double ks_pvalue(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = double(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - double(i) / n, double(i + 1) / n - f});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 200; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

// Curriculum oracle: dense grid over (ln k, ln rate) in a box around `old`.
// Candidates are kept when they lie inside the trust region; `objective` is
// minimized among those passing `feasible`.
struct GridSearchResult {
  bool found = false;
  qarl::GammaParams best;
  double objective = std::numeric_limits<double>::infinity();
};

inline GridSearchResult grid_search(const qarl::GammaParams& old, double epsilon, std::size_t resolution,
                                    const std::function<bool(const qarl::GammaParams&)>& feasible,
                                    const std::function<double(const qarl::GammaParams&)>& objective,
                                    double half_width = 3.0, bool fix_rate = false) {
  GridSearchResult out;
  const double lk = std::log(old.shape), lr = std::log(old.rate);
  for (std::size_t i = 0; i < resolution; ++i) {
    const double a = lk - half_width + 2.0 * half_width * double(i) / double(resolution - 1);
    for (std::size_t j = 0; j < (fix_rate ? 1 : resolution); ++j) {
      const double b = fix_rate ? lr : lr - half_width + 2.0 * half_width * double(j) / double(resolution - 1);
      const qarl::GammaParams c(std::exp(a), std::exp(b));
      if (qarl::gamma_kl(c, old) > epsilon) continue;
      if (!feasible(c)) continue;
      const double f = objective(c);
      if (f < out.objective) {
        out.objective = f;
        out.best = c;
        out.found = true;
      }
    }
  }
  return out;
}

// Direct importance-sampled estimate, written out independently.
inline double is_estimate(const std::vector<double>& xs, const std::vector<double>& returns, const qarl::GammaParams& cand,
                          const qarl::GammaParams& behavior) {
  double t = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    t += gamma_density(cand.shape, cand.rate, xs[i]) / gamma_density(behavior.shape, behavior.rate, xs[i]) * returns[i];
  return t / double(xs.size());
}

}  // namespace oracle
