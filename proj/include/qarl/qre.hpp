#pragma once

// Logit quantal response equilibria of zero-sum matrix games. The row player
// maximizes x^T X y, the column player minimizes it; each plays a softmax
// response to the other at its own temperature.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/math.hpp"

namespace qarl {

class MatrixGame {
 public:
  MatrixGame() = default;

  MatrixGame(std::size_t rows, std::size_t cols, std::vector<double> payoff)
      : rows_(rows), cols_(cols), payoff_(std::move(payoff)) {
    if (rows_ == 0 || cols_ == 0) throw InvariantError("MatrixGame: empty payoff");
    if (payoff_.size() != rows_ * cols_) throw InvariantError("MatrixGame: payoff has wrong size");
    for (double x : payoff_)
      if (!std::isfinite(x)) throw InvariantError("MatrixGame: non-finite payoff entry");
  }

  static MatrixGame from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw InvariantError("MatrixGame: empty payoff");
    std::vector<double> flat;
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw InvariantError("MatrixGame: ragged payoff rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return {rows.size(), rows.front().size(), std::move(flat)};
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return payoff_[i * cols_ + j]; }
  const std::vector<double>& payoff() const { return payoff_; }

  double max_abs() const {
    double m = 0.0;
    for (double x : payoff_) m = std::max(m, std::abs(x));
    return m;
  }

  MatrixGame shifted(double c) const {
    auto p = payoff_;
    for (double& x : p) x += c;
    return {rows_, cols_, std::move(p)};
  }

  // X sigma_col
  std::vector<double> row_payoffs(std::span<const double> sigma_col) const {
    std::vector<double> u(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) u[i] += payoff_[i * cols_ + j] * sigma_col[j];
    return u;
  }

  // X^T sigma_row
  std::vector<double> col_payoffs(std::span<const double> sigma_row) const {
    std::vector<double> u(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) u[j] += payoff_[i * cols_ + j] * sigma_row[i];
    return u;
  }

  double bilinear(std::span<const double> sigma_row, std::span<const double> sigma_col) const {
    double v = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) v += sigma_row[i] * payoff_[i * cols_ + j] * sigma_col[j];
    return v;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> payoff_;
};

struct QreSolution {
  std::vector<double> sigma_row;
  std::vector<double> sigma_col;
  double value = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
  double tau_row = 1.0;
  double tau_col = 1.0;
};

struct QreOptions {
  double tol = 1e-10;
  std::size_t max_iter = 100000;
  double initial_damping = 0.5;
  // Damped iterations spent before switching to Newton polishing.
  std::size_t damped_budget = 2000;
  double min_damping = 1e-6;
};

inline double regularized_game_value(const MatrixGame& game, std::span<const double> sigma_row,
                                     std::span<const double> sigma_col, double beta, double alpha) {
  return game.bilinear(sigma_row, sigma_col) + beta * entropy(sigma_row) - alpha * entropy(sigma_col);
}

namespace detail {

struct Responses {
  std::vector<double> row;
  std::vector<double> col;
};

inline Responses logit_responses(const MatrixGame& game, std::span<const double> sigma_row,
                                 std::span<const double> sigma_col, double tau_row, double tau_col) {
  Responses r{game.row_payoffs(sigma_col), game.col_payoffs(sigma_row)};
  for (double& u : r.col) u = -u;
  softmax_into(r.row, tau_row, r.row);
  softmax_into(r.col, tau_col, r.col);
  return r;
}

inline double qre_residual(const MatrixGame& game, std::span<const double> sigma_row,
                           std::span<const double> sigma_col, double tau_row, double tau_col) {
  const auto br = logit_responses(game, sigma_row, sigma_col, tau_row, tau_col);
  return std::max(max_abs_diff(sigma_row, br.row), max_abs_diff(sigma_col, br.col));
}

inline void renormalize(std::vector<double>& p) {
  double total = 0.0;
  for (double& x : p) {
    x = std::max(x, 0.0);
    total += x;
  }
  for (double& x : p) x /= total;
}

// Newton's method on F(s) = s - BR(s); one call performs at most `steps` steps.
inline bool newton_polish(const MatrixGame& game, std::vector<double>& sr, std::vector<double>& sc,
                          double tau_row, double tau_col, double tol, std::size_t steps, std::size_t& iterations) {
  const std::size_t m = game.rows(), n = game.cols();
  Eigen::MatrixXd x(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) x(Eigen::Index(i), Eigen::Index(j)) = game(i, j);

  auto merit = [&](const std::vector<double>& a, const std::vector<double>& b, Eigen::VectorXd* f) {
    const auto br = logit_responses(game, a, b, tau_row, tau_col);
    Eigen::VectorXd out(Eigen::Index(m + n));
    for (std::size_t i = 0; i < m; ++i) out(Eigen::Index(i)) = a[i] - br.row[i];
    for (std::size_t j = 0; j < n; ++j) out(Eigen::Index(m + j)) = b[j] - br.col[j];
    if (f) *f = out;
    return out.norm();
  };

  for (std::size_t k = 0; k < steps; ++k) {
    Eigen::VectorXd f;
    const double norm0 = merit(sr, sc, &f);
    if (f.lpNorm<Eigen::Infinity>() <= tol) return true;
    const auto br = logit_responses(game, sr, sc, tau_row, tau_col);
    Eigen::Map<const Eigen::VectorXd> p(br.row.data(), Eigen::Index(m));
    Eigen::Map<const Eigen::VectorXd> q(br.col.data(), Eigen::Index(n));
    const Eigen::MatrixXd sp = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    const Eigen::MatrixXd sq = Eigen::MatrixXd(q.asDiagonal()) - q * q.transpose();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(Eigen::Index(m + n), Eigen::Index(m + n));
    jac.topRightCorner(Eigen::Index(m), Eigen::Index(n)) = -sp * x / tau_row;
    jac.bottomLeftCorner(Eigen::Index(n), Eigen::Index(m)) = sq * x.transpose() / tau_col;
    const Eigen::VectorXd delta = jac.partialPivLu().solve(-f);
    if (!delta.allFinite()) return false;

    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      std::vector<double> a(m), b(n);
      for (std::size_t i = 0; i < m; ++i) a[i] = sr[i] + t * delta(Eigen::Index(i));
      for (std::size_t j = 0; j < n; ++j) b[j] = sc[j] + t * delta(Eigen::Index(m + j));
      renormalize(a);
      renormalize(b);
      if (merit(a, b, nullptr) < (1.0 - 1e-4 * t) * norm0) {
        sr = std::move(a);
        sc = std::move(b);
        accepted = true;
        break;
      }
    }
    ++iterations;
    if (!accepted) return false;
  }
  return qre_residual(game, sr, sc, tau_row, tau_col) <= tol;
}

}  // namespace detail

// Damped simultaneous logit responses: sigma <- (1 - d) sigma + d BR(sigma),
// with d halved whenever the residual grows. When the damped phase stalls the
// iterate is polished with Newton steps on the same fixed-point equations.
inline QreSolution solve_logit_qre(const MatrixGame& game, double tau_row, double tau_col,
                                   const QreOptions& opt = {}, const QreSolution* warm_start = nullptr) {
  if (!(tau_row > 0.0) || !(tau_col > 0.0)) throw DomainError("solve_logit_qre: temperatures must be positive");
  const std::size_t m = game.rows(), n = game.cols();
  std::vector<double> sr(m, 1.0 / double(m)), sc(n, 1.0 / double(n));
  if (warm_start && warm_start->sigma_row.size() == m && warm_start->sigma_col.size() == n) {
    sr = warm_start->sigma_row;
    sc = warm_start->sigma_col;
  }

  std::size_t it = 0;
  double damping = opt.initial_damping;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::size_t phase_iters = 0;

  // A warm start on a homotopy path is usually inside Newton's basin, while
  // damped responses at small temperatures can drift away from it.
  if (warm_start && warm_start->sigma_row.size() == m && warm_start->sigma_col.size() == n) {
    std::vector<double> a = sr, b = sc;
    std::size_t used = 0;
    if (detail::newton_polish(game, a, b, tau_row, tau_col, opt.tol, 50, used)) {
      sr = std::move(a);
      sc = std::move(b);
      residual = detail::qre_residual(game, sr, sc, tau_row, tau_col);
      converged = true;
    }
    it += used;
  }

  while (!converged && it < opt.max_iter) {
    const auto br = detail::logit_responses(game, sr, sc, tau_row, tau_col);
    const double r = std::max(max_abs_diff(sr, br.row), max_abs_diff(sc, br.col));
    if (r <= opt.tol) {
      residual = r;
      converged = true;
      break;
    }
    if (r > residual) damping *= 0.5;
    residual = r;
    if (phase_iters >= opt.damped_budget || damping < opt.min_damping) {
      if (detail::newton_polish(game, sr, sc, tau_row, tau_col, opt.tol, 100, it)) {
        residual = detail::qre_residual(game, sr, sc, tau_row, tau_col);
        converged = true;
        break;
      }
      // Newton left us somewhere else; restart damping from there.
      damping = opt.initial_damping;
      residual = std::numeric_limits<double>::infinity();
      phase_iters = 0;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) sr[i] = (1.0 - damping) * sr[i] + damping * br.row[i];
    for (std::size_t j = 0; j < n; ++j) sc[j] = (1.0 - damping) * sc[j] + damping * br.col[j];
    ++it;
    ++phase_iters;
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "solve_logit_qre: no convergence after " << it << " iterations (residual " << residual << ")";
    throw ConvergenceError(msg.str(), residual);
  }
  QreSolution sol;
  sol.value = regularized_game_value(game, sr, sc, tau_row, tau_col);
  sol.sigma_row = std::move(sr);
  sol.sigma_col = std::move(sc);
  sol.residual = residual;
  sol.iterations = it;
  sol.tau_row = tau_row;
  sol.tau_col = tau_col;
  return sol;
}

// Test oracle for 2x2 games: exhaustive grid over (sigma_11, sigma_21), then
// bisection on the composed response h(p) = g(f(p)) - p, which is strictly
// decreasing in a zero-sum 2x2 game.
inline QreSolution brute_force_qre_2x2(const MatrixGame& game, double tau, std::size_t grid = 201) {
  if (game.rows() != 2 || game.cols() != 2) throw InvariantError("brute_force_qre_2x2: game must be 2x2");
  if (!(tau > 0.0)) throw DomainError("brute_force_qre_2x2: temperature must be positive");
  grid = std::max<std::size_t>(grid, 3);
  const double x11 = game(0, 0), x12 = game(0, 1), x21 = game(1, 0), x22 = game(1, 1);
  // Row player's probability of row 1 given the column player's probability of column 1.
  auto row_response = [&](double p) {
    const double u1 = x11 * p + x12 * (1.0 - p), u2 = x21 * p + x22 * (1.0 - p);
    return 1.0 / (1.0 + std::exp((u2 - u1) / tau));
  };
  auto col_response = [&](double q) {
    const double c1 = -(x11 * q + x21 * (1.0 - q)), c2 = -(x12 * q + x22 * (1.0 - q));
    return 1.0 / (1.0 + std::exp((c2 - c1) / tau));
  };
  auto residual = [&](double s11, double s21) {
    return std::max(std::abs(s11 - row_response(s21)), std::abs(s21 - col_response(s11)));
  };

  const double step = 1.0 / double(grid - 1);
  double best = std::numeric_limits<double>::infinity(), best_p = 0.5;
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double r = residual(double(i) * step, double(j) * step);
      if (r < best) {
        best = r;
        best_p = double(j) * step;
      }
    }
  }
  auto h = [&](double p) { return col_response(row_response(p)) - p; };
  double lo = std::max(0.0, best_p - step), hi = std::min(1.0, best_p + step);
  if (h(lo) < 0.0 || h(hi) > 0.0) {
    lo = 0.0;
    hi = 1.0;
  }
  for (int k = 0; k < 200 && hi - lo > 0.0; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (h(mid) > 0.0 ? lo : hi) = mid;
  }
  const double p = 0.5 * (lo + hi);
  const double s11 = row_response(p);
  QreSolution sol;
  sol.sigma_row = {s11, 1.0 - s11};
  sol.sigma_col = {p, 1.0 - p};
  sol.residual = residual(s11, p);
  sol.value = regularized_game_value(game, sol.sigma_row, sol.sigma_col, tau, tau);
  sol.iterations = grid * grid;
  sol.tau_row = sol.tau_col = tau;
  return sol;
}

// Geometric schedule tau_start * decay^k clipped to end exactly at tau_end.
inline std::vector<double> geometric_schedule(double tau_start, double tau_end, double decay) {
  if (!(tau_start > tau_end) || !(tau_end > 0.0))
    throw DomainError("annealing schedule requires tau_start > tau_end > 0");
  if (!(decay > 0.0 && decay < 1.0)) throw DomainError("annealing decay must lie in (0, 1)");
  std::vector<double> taus;
  for (double t = tau_start; t > tau_end; t *= decay) taus.push_back(t);
  taus.push_back(tau_end);
  return taus;
}

// Homotopy from a strongly regularized game toward its Nash equilibrium,
// warm-starting each solve from the previous temperature.
inline QreSolution solve_nash_by_annealing(const MatrixGame& game, double tau_start, double tau_end, double decay,
                                           double tol) {
  QreOptions opt;
  opt.tol = tol;
  std::optional<QreSolution> sol;
  for (double tau : geometric_schedule(tau_start, tau_end, decay)) {
    try {
      sol = solve_logit_qre(game, tau, tau, opt, sol ? &*sol : nullptr);
    } catch (const ConvergenceError& e) {
      std::ostringstream msg;
      msg << e.what() << " at temperature " << tau;
      throw ConvergenceError(msg.str(), e.residual());
    }
  }
  return *sol;
}

inline QreSolution solve_nash_by_annealing(const MatrixGame& game) {
  return solve_nash_by_annealing(game, std::max(1.0, game.max_abs()), 1e-4, 0.8, 1e-10);
}

inline MatrixGame matrix_game_from_json(const nlohmann::json& j) {
  try {
    const auto& rows = j.is_object() ? j.at("payoff") : j;
    return MatrixGame::from_rows(rows.get<std::vector<std::vector<double>>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("payoff JSON: ") + e.what());
  } catch (const InvariantError& e) {
    throw ConfigError(std::string("payoff JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const QreSolution& s) {
  return {{"sigma_row", s.sigma_row}, {"sigma_col", s.sigma_col}, {"value", s.value}, {"residual", s.residual},
          {"iterations", s.iterations}, {"tau_row", s.tau_row}, {"tau_col", s.tau_col}};
}

}  // namespace qarl
