#pragma once

// Exact planning for entropy-regularized zero-sum Markov games. Every Bellman
// backup solves the regularized stage game on q(s, ., .) at temperatures
// (beta for the protagonist, alpha for the adversary); the stage values form
// the soft state values and the stage strategies are the QRE policies.

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/game.hpp"
#include "qarl/math.hpp"
#include "qarl/qre.hpp"

namespace qarl {

struct JointSoftQ {
  std::size_t n_states = 0;
  std::size_t actions1 = 0;
  std::size_t actions2 = 0;
  std::vector<double> q;  // (s, a1, a2) row-major
  std::vector<double> v;  // s
  double alpha = 1.0;     // adversary temperature
  double beta = 1.0;      // protagonist temperature

  static JointSoftQ zeros(const MarkovGame& game, double alpha, double beta) {
    JointSoftQ j;
    j.n_states = game.n_states();
    j.actions1 = game.actions1();
    j.actions2 = game.actions2();
    j.q.assign(j.n_states * j.actions1 * j.actions2, 0.0);
    j.v.assign(j.n_states, 0.0);
    j.alpha = alpha;
    j.beta = beta;
    return j;
  }

  double at(std::size_t s, std::size_t a1, std::size_t a2) const { return q[(s * actions1 + a1) * actions2 + a2]; }

  MatrixGame stage_game(std::size_t s) const {
    const std::size_t k = actions1 * actions2;
    return {actions1, actions2, std::vector<double>(q.begin() + long(s * k), q.begin() + long((s + 1) * k))};
  }
};

struct SolverReport {
  std::size_t iterations = 0;
  std::vector<double> residuals;
  bool converged = false;
};

struct BackupResult {
  JointSoftQ q;  // q'
  std::vector<double> v;  // v', the stage values of the input q
  TabularPolicy mu;
  TabularPolicy nu;
  std::vector<QreSolution> stages;
};

namespace detail {

inline void check_temperatures(double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw DomainError("soft Markov solver: alpha and beta must be strictly positive (use anneal_to_nash for the limit)");
}

// Solves every stage game of `q`, returning per-state solutions.
inline std::vector<QreSolution> solve_stages(const JointSoftQ& q, double stage_tol,
                                             const std::vector<QreSolution>* warm) {
  QreOptions opt;
  opt.tol = stage_tol;
  std::vector<QreSolution> out(q.n_states);
  for (std::size_t s = 0; s < q.n_states; ++s) {
    try {
      const QreSolution* w = (warm && warm->size() == q.n_states) ? &(*warm)[s] : nullptr;
      out[s] = solve_logit_qre(q.stage_game(s), q.beta, q.alpha, opt, w);
    } catch (const ConvergenceError& e) {
      std::ostringstream msg;
      msg << e.what() << " in stage game of state " << s;
      throw ConvergenceError(msg.str(), e.residual());
    }
  }
  return out;
}

inline std::pair<TabularPolicy, TabularPolicy> stage_policies(const std::vector<QreSolution>& stages,
                                                              std::size_t a1, std::size_t a2) {
  std::vector<double> mu, nu;
  mu.reserve(stages.size() * a1);
  nu.reserve(stages.size() * a2);
  for (const auto& st : stages) {
    mu.insert(mu.end(), st.sigma_row.begin(), st.sigma_row.end());
    nu.insert(nu.end(), st.sigma_col.begin(), st.sigma_col.end());
  }
  // Stage strategies are normalized to within solver tolerance; renormalize so
  // the policy invariant holds at 1e-12.
  auto fix = [](std::vector<double>& t, std::size_t k) {
    for (std::size_t s = 0; s * k < t.size(); ++s) {
      double total = 0.0;
      for (std::size_t a = 0; a < k; ++a) total += t[s * k + a];
      for (std::size_t a = 0; a < k; ++a) t[s * k + a] /= total;
    }
  };
  fix(mu, a1);
  fix(nu, a2);
  return {TabularPolicy(stages.size(), a1, std::move(mu), Owner::protagonist),
          TabularPolicy(stages.size(), a2, std::move(nu), Owner::adversary)};
}

// q'(s,a1,a2) = sum_s' P(s'|s,a1,a2) (R(s,a1,a2,s') + gamma v(s'))
inline std::vector<double> bellman_q(const MarkovGame& game, const std::vector<double>& v) {
  std::vector<double> q(game.n_states() * game.actions1() * game.actions2(), 0.0);
  for (std::size_t s = 0; s < game.n_states(); ++s)
    for (std::size_t a1 = 0; a1 < game.actions1(); ++a1)
      for (std::size_t a2 = 0; a2 < game.actions2(); ++a2) {
        double acc = 0.0;
        for (const Outcome& o : game.outcomes(s, a1, a2)) acc += o.prob * (o.reward + game.gamma() * v[o.next]);
        q[game.joint_index(s, a1, a2)] = acc;
      }
  return q;
}

}  // namespace detail

inline BackupResult soft_bellman_backup(const MarkovGame& game, const JointSoftQ& q, double stage_tol = 1e-10,
                                        const std::vector<QreSolution>* warm = nullptr) {
  detail::check_temperatures(q.alpha, q.beta);
  if (q.n_states != game.n_states() || q.actions1 != game.actions1() || q.actions2 != game.actions2())
    throw InvariantError("soft_bellman_backup: value table does not match the game");
  BackupResult out;
  out.stages = detail::solve_stages(q, stage_tol, warm);
  out.v.resize(q.n_states);
  for (std::size_t s = 0; s < q.n_states; ++s) out.v[s] = out.stages[s].value;
  auto [mu, nu] = detail::stage_policies(out.stages, q.actions1, q.actions2);
  out.mu = std::move(mu);
  out.nu = std::move(nu);
  out.q = q;
  out.q.q = detail::bellman_q(game, out.v);
  out.q.v = out.v;
  return out;
}

struct SoftSolution {
  JointSoftQ q;
  TabularPolicy mu;
  TabularPolicy nu;
  SolverReport report;
  std::vector<QreSolution> stages;
};

// Marginal action values against the other player's policy, compared to the
// softmax form of the temperature-conditioned QRE policies.
inline double policy_consistency_residual(const MarkovGame& game, const JointSoftQ& q, const TabularPolicy& mu,
                                          const TabularPolicy& nu) {
  check_policies(game, mu, nu);
  double worst = 0.0;
  const std::size_t a1n = game.actions1(), a2n = game.actions2();
  std::vector<double> qnu(a1n), qmu(a2n);
  for (std::size_t s = 0; s < game.n_states(); ++s) {
    std::fill(qnu.begin(), qnu.end(), 0.0);
    std::fill(qmu.begin(), qmu.end(), 0.0);
    for (std::size_t a1 = 0; a1 < a1n; ++a1)
      for (std::size_t a2 = 0; a2 < a2n; ++a2) {
        qnu[a1] += nu.prob(s, a2) * q.at(s, a1, a2);
        qmu[a2] -= mu.prob(s, a1) * q.at(s, a1, a2);
      }
    worst = std::max(worst, max_abs_diff(mu.row(s), softmax(qnu, q.beta)));
    worst = std::max(worst, max_abs_diff(nu.row(s), softmax(qmu, q.alpha)));
  }
  return worst;
}

namespace detail {

inline SoftSolution soft_value_iteration(const MarkovGame& game, JointSoftQ q, double tol, std::size_t max_iter,
                                         std::vector<QreSolution> warm) {
  const double stage_tol = 0.1 * tol;
  SoftSolution sol;
  for (std::size_t it = 0; it < max_iter; ++it) {
    auto b = soft_bellman_backup(game, q, stage_tol, &warm);
    const double change = max_abs_diff(b.q.q, q.q);
    q = std::move(b.q);
    warm = std::move(b.stages);
    sol.report.residuals.push_back(change);
    sol.report.iterations = it + 1;
    if (change <= tol) {
      sol.report.converged = true;
      break;
    }
  }
  if (!sol.report.converged) {
    const double last = sol.report.residuals.empty() ? 0.0 : sol.report.residuals.back();
    std::ostringstream msg;
    msg << "solve_soft_markov_game: no convergence after " << max_iter << " iterations (residual " << last << ")";
    throw ConvergenceError(msg.str(), last);
  }
  // Policies and values consistent with the returned q.
  sol.stages = solve_stages(q, stage_tol, &warm);
  for (std::size_t s = 0; s < q.n_states; ++s) q.v[s] = sol.stages[s].value;
  auto [mu, nu] = stage_policies(sol.stages, q.actions1, q.actions2);
  sol.q = std::move(q);
  sol.mu = std::move(mu);
  sol.nu = std::move(nu);
  return sol;
}

}  // namespace detail

// Soft value iteration from q = 0 until the max-norm change is at most `tol`.
inline SoftSolution solve_soft_markov_game(const MarkovGame& game, double alpha, double beta, double tol = 1e-8,
                                           std::size_t max_iter = 100000) {
  detail::check_temperatures(alpha, beta);
  return detail::soft_value_iteration(game, JointSoftQ::zeros(game, alpha, beta), tol, max_iter, {});
}

// Solves along a decreasing temperature schedule (alpha = beta = tau), warm
// starting the value table and the stage strategies at every step.
inline SoftSolution anneal_to_nash(const MarkovGame& game, const std::vector<double>& schedule, double tol = 1e-8,
                                   std::size_t max_iter = 100000) {
  if (schedule.empty()) throw DomainError("anneal_to_nash: empty schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] >= 1e-5)) throw DomainError("anneal_to_nash: temperatures must be >= 1e-5");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw DomainError("anneal_to_nash: schedule must strictly decrease");
  }
  JointSoftQ q = JointSoftQ::zeros(game, schedule.front(), schedule.front());
  std::vector<QreSolution> warm;
  SoftSolution sol;
  for (double tau : schedule) {
    q.alpha = q.beta = tau;
    try {
      sol = detail::soft_value_iteration(game, q, tol, max_iter, warm);
    } catch (const ConvergenceError& e) {
      std::ostringstream msg;
      msg << e.what() << " at temperature " << tau;
      throw ConvergenceError(msg.str(), e.residual());
    }
    q = sol.q;
    warm = sol.stages;
  }
  return sol;
}

inline nlohmann::json to_json(const SoftSolution& s) {
  nlohmann::json q = nlohmann::json::array();
  for (std::size_t st = 0; st < s.q.n_states; ++st) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a1 = 0; a1 < s.q.actions1; ++a1) {
      std::vector<double> r(s.q.actions2);
      for (std::size_t a2 = 0; a2 < s.q.actions2; ++a2) r[a2] = s.q.at(st, a1, a2);
      rows.push_back(r);
    }
    q.push_back(std::move(rows));
  }
  return {{"alpha", s.q.alpha},
          {"beta", s.q.beta},
          {"q", std::move(q)},
          {"v", s.q.v},
          {"mu", policy_to_json(s.mu)["probs"]},
          {"nu", policy_to_json(s.nu)["probs"]},
          {"iterations", s.report.iterations},
          {"converged", s.report.converged},
          {"final_residual", s.report.residuals.empty() ? 0.0 : s.report.residuals.back()}};
}

}  // namespace qarl
