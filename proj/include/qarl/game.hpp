#pragma once

// Finite two-player zero-sum Markov games: the model, tabular policies,
// trajectories and their returns.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/math.hpp"

namespace qarl {

enum class Owner { protagonist, adversary };

inline const char* to_string(Owner o) { return o == Owner::protagonist ? "protagonist" : "adversary"; }

inline Owner owner_from_string(const std::string& s) {
  if (s == "protagonist") return Owner::protagonist;
  if (s == "adversary") return Owner::adversary;
  throw ConfigError("unknown policy owner '" + s + "'");
}

// One reachable successor of a joint action.
struct Outcome {
  std::size_t next = 0;
  double prob = 0.0;
  double reward = 0.0;
};

// Transitions are stored sparsely (CSR over the joint index (s, a1, a2)); the
// dense 4-index form P(s'|s,a1,a2), R(s,a1,a2,s') is what the accessors and
// the JSON format expose.
class MarkovGame {
 public:
  static constexpr double kProbTol = 1e-12;

  MarkovGame() = default;

  // `rows[(s * actions1 + a1) * actions2 + a2]` lists the successors of that
  // joint action. Repeated successors are merged, zero-probability ones dropped.
  MarkovGame(std::size_t n_states, std::size_t actions1, std::size_t actions2,
             const std::vector<std::vector<Outcome>>& rows, double gamma,
             std::vector<double> initial, std::size_t horizon)
      : n_states_(n_states),
        actions1_(actions1),
        actions2_(actions2),
        gamma_(gamma),
        initial_(std::move(initial)),
        horizon_(horizon) {
    if (n_states == 0 || actions1 == 0 || actions2 == 0)
      throw InvariantError("MarkovGame: states and action sets must be non-empty");
    if (rows.size() != n_states * actions1 * actions2)
      throw InvariantError("MarkovGame: expected one transition row per (s, a1, a2)");
    offsets_.reserve(rows.size() + 1);
    offsets_.push_back(0);
    for (const auto& row : rows) {
      std::map<std::size_t, std::pair<double, double>> merged;  // next -> (prob, prob*reward)
      for (const Outcome& o : row) {
        if (o.next >= n_states) throw InvariantError("MarkovGame: successor index out of range");
        if (!(o.prob >= 0.0)) throw InvariantError("MarkovGame: negative transition probability");
        if (!std::isfinite(o.reward)) throw InvariantError("MarkovGame: non-finite reward");
        auto& m = merged[o.next];
        m.first += o.prob;
        m.second += o.prob * o.reward;
      }
      double total = 0.0;
      for (const auto& [next, pr] : merged) {
        total += pr.first;
        if (pr.first > 0.0) outcomes_.push_back({next, pr.first, pr.second / pr.first});
      }
      if (std::abs(total - 1.0) > kProbTol)
        throw InvariantError("MarkovGame: transition vector does not sum to 1");
      offsets_.push_back(outcomes_.size());
    }
    validate_header();
    absorbing_.assign(n_states_, true);
    for (std::size_t s = 0; s < n_states_; ++s) {
      for (std::size_t a1 = 0; a1 < actions1_ && absorbing_[s]; ++a1) {
        for (std::size_t a2 = 0; a2 < actions2_; ++a2) {
          auto out = outcomes(s, a1, a2);
          if (out.size() != 1 || out[0].next != s || out[0].reward != 0.0) {
            absorbing_[s] = false;
            break;
          }
        }
      }
    }
  }

  // Dense tensors in row-major (s, a1, a2, s') order.
  static MarkovGame from_dense(std::size_t n_states, std::size_t actions1, std::size_t actions2,
                               std::span<const double> transition, std::span<const double> reward,
                               double gamma, std::vector<double> initial, std::size_t horizon) {
    const std::size_t n_rows = n_states * actions1 * actions2;
    if (transition.size() != n_rows * n_states || reward.size() != n_rows * n_states)
      throw InvariantError("MarkovGame: dense tensor has the wrong size");
    std::vector<std::vector<Outcome>> rows(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t s2 = 0; s2 < n_states; ++s2) {
        const double p = transition[r * n_states + s2];
        const double rew = reward[r * n_states + s2];
        if (!std::isfinite(rew)) throw InvariantError("MarkovGame: non-finite reward");
        if (p != 0.0) rows[r].push_back({s2, p, rew});
      }
    }
    return MarkovGame(n_states, actions1, actions2, rows, gamma, std::move(initial), horizon);
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t actions1() const { return actions1_; }
  std::size_t actions2() const { return actions2_; }
  double gamma() const { return gamma_; }
  std::size_t horizon() const { return horizon_; }
  const std::vector<double>& initial() const { return initial_; }

  std::size_t joint_index(std::size_t s, std::size_t a1, std::size_t a2) const {
    return (s * actions1_ + a1) * actions2_ + a2;
  }

  std::span<const Outcome> outcomes(std::size_t s, std::size_t a1, std::size_t a2) const {
    const std::size_t r = joint_index(s, a1, a2);
    return {outcomes_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }

  double transition(std::size_t s, std::size_t a1, std::size_t a2, std::size_t next) const {
    for (const Outcome& o : outcomes(s, a1, a2))
      if (o.next == next) return o.prob;
    return 0.0;
  }

  double reward(std::size_t s, std::size_t a1, std::size_t a2, std::size_t next) const {
    for (const Outcome& o : outcomes(s, a1, a2))
      if (o.next == next) return o.reward;
    return 0.0;
  }

  // Marginalized over the successor: sum_s' P(s'|s,a1,a2) R(s,a1,a2,s').
  double expected_reward(std::size_t s, std::size_t a1, std::size_t a2) const {
    double r = 0.0;
    for (const Outcome& o : outcomes(s, a1, a2)) r += o.prob * o.reward;
    return r;
  }

  // Self-loop with zero reward under every joint action.
  bool is_absorbing(std::size_t s) const { return absorbing_[s]; }

  double max_abs_reward() const {
    double m = 0.0;
    for (const Outcome& o : outcomes_) m = std::max(m, std::abs(o.reward));
    return m;
  }

  // Returns a copy with every reward multiplied by `c`.
  MarkovGame scaled_rewards(double c) const {
    MarkovGame g = *this;
    for (Outcome& o : g.outcomes_) o.reward *= c;
    return g;
  }

  void check_state(std::size_t s) const {
    if (s >= n_states_) throw IndexError("state index " + std::to_string(s) + " out of range");
  }

 private:
  void validate_header() const {
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw InvariantError("MarkovGame: gamma must lie in [0, 1)");
    if (initial_.size() != n_states_) throw InvariantError("MarkovGame: initial distribution has wrong size");
    double total = 0.0;
    for (double p : initial_) {
      if (!(p >= 0.0)) throw InvariantError("MarkovGame: negative initial probability");
      total += p;
    }
    if (std::abs(total - 1.0) > kProbTol) throw InvariantError("MarkovGame: initial distribution does not sum to 1");
  }

  std::size_t n_states_ = 0;
  std::size_t actions1_ = 0;
  std::size_t actions2_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<Outcome> outcomes_;
  double gamma_ = 0.0;
  std::vector<double> initial_;
  std::size_t horizon_ = 0;
  std::vector<bool> absorbing_;
};

// Row-stochastic table s -> distribution over the owner's actions.
class TabularPolicy {
 public:
  static constexpr double kRowTol = 1e-12;

  TabularPolicy() = default;

  TabularPolicy(std::size_t n_states, std::size_t n_actions, std::vector<double> probs, Owner owner)
      : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)), owner_(owner) {
    if (probs_.size() != n_states * n_actions) throw InvariantError("TabularPolicy: wrong table size");
    for (std::size_t s = 0; s < n_states_; ++s) {
      double total = 0.0;
      for (double p : row(s)) {
        if (!(p >= 0.0)) throw InvariantError("TabularPolicy: negative probability");
        total += p;
      }
      if (std::abs(total - 1.0) > kRowTol)
        throw InvariantError("TabularPolicy: row " + std::to_string(s) + " does not sum to 1");
    }
  }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions, Owner owner) {
    return {n_states, n_actions, std::vector<double>(n_states * n_actions, 1.0 / double(n_actions)), owner};
  }

  static TabularPolicy deterministic(std::span<const std::size_t> actions, std::size_t n_actions, Owner owner) {
    std::vector<double> probs(actions.size() * n_actions, 0.0);
    for (std::size_t s = 0; s < actions.size(); ++s) probs[s * n_actions + actions[s]] = 1.0;
    return {actions.size(), n_actions, std::move(probs), owner};
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  Owner owner() const { return owner_; }
  const std::vector<double>& table() const { return probs_; }

  std::span<const double> row(std::size_t s) const { return {probs_.data() + s * n_actions_, n_actions_}; }
  double prob(std::size_t s, std::size_t a) const { return probs_[s * n_actions_ + a]; }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> probs_;
  Owner owner_ = Owner::protagonist;
};

struct Step {
  std::size_t state = 0;
  std::size_t action1 = 0;
  std::size_t action2 = 0;
  double reward = 0.0;
  std::size_t next_state = 0;

  bool operator==(const Step&) const = default;
};

class Trajectory {
 public:
  explicit Trajectory(double conditioning_temperature = 0.0) : temperature_(conditioning_temperature) {}

  void push(const Step& step) {
    if (!steps_.empty() && steps_.back().next_state != step.state)
      throw InvariantError("Trajectory: step does not chain from previous next_state");
    steps_.push_back(step);
  }

  const std::vector<Step>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }
  double conditioning_temperature() const { return temperature_; }

  bool operator==(const Trajectory&) const = default;

 private:
  std::vector<Step> steps_;
  double temperature_;
};

inline double policy_entropy(const TabularPolicy& policy, std::size_t state) {
  if (state >= policy.n_states()) throw IndexError("policy_entropy: state " + std::to_string(state) + " out of range");
  return entropy(policy.row(state));
}

// sum_t gamma^t r_t over the recorded steps (the finite-horizon form).
inline double discounted_return(const Trajectory& traj, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (const Step& s : traj.steps()) {
    total += discount * s.reward;
    discount *= gamma;
  }
  return total;
}

inline void check_policies(const MarkovGame& game, const TabularPolicy& mu, const TabularPolicy& nu) {
  if (mu.n_states() != game.n_states() || nu.n_states() != game.n_states() ||
      mu.n_actions() != game.actions1() || nu.n_actions() != game.actions2())
    throw InvariantError("policy shapes do not match the game");
}

// Exact infinite-horizon state values: solves (I - gamma P_mu,nu) v = r_mu,nu.
inline std::vector<double> state_values(const MarkovGame& game, const TabularPolicy& mu, const TabularPolicy& nu) {
  check_policies(game, mu, nu);
  const std::size_t n = game.n_states();
  std::vector<double> r(n, 0.0);
  std::map<std::pair<std::size_t, std::size_t>, double> p;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a1 = 0; a1 < game.actions1(); ++a1) {
      const double w1 = mu.prob(s, a1);
      if (w1 == 0.0) continue;
      for (std::size_t a2 = 0; a2 < game.actions2(); ++a2) {
        const double w = w1 * nu.prob(s, a2);
        if (w == 0.0) continue;
        for (const Outcome& o : game.outcomes(s, a1, a2)) {
          r[s] += w * o.prob * o.reward;
          p[{s, o.next}] += w * o.prob;
        }
      }
    }
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(p.size() + n);
  for (std::size_t s = 0; s < n; ++s) triplets.emplace_back(int(s), int(s), 1.0);
  for (const auto& [key, val] : p) triplets.emplace_back(int(key.first), int(key.second), -game.gamma() * val);
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw NumericError("state_values: factorization failed");
  Eigen::Map<const Eigen::VectorXd> rhs(r.data(), Eigen::Index(n));
  Eigen::VectorXd v = lu.solve(rhs);
  const double residual = (a * v - rhs).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-8 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())))
    throw NumericError("state_values: linear solve residual " + std::to_string(residual));
  return {v.data(), v.data() + n};
}

// iota . v, the return from the initial distribution.
inline double expected_return(const MarkovGame& game, const TabularPolicy& mu, const TabularPolicy& nu) {
  const auto v = state_values(game, mu, nu);
  double j = 0.0;
  for (std::size_t s = 0; s < game.n_states(); ++s) j += game.initial()[s] * v[s];
  return j;
}

inline std::size_t sample_initial_state(const MarkovGame& game, Rng& rng) {
  return sample_categorical(game.initial(), rng);
}

// Samples one successor of (s, a1, a2).
inline const Outcome& sample_outcome(std::span<const Outcome> outs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (const Outcome& o : outs) {
    acc += o.prob;
    if (u < acc) return o;
  }
  return outs.back();
}

// Stops early once an absorbing state has been entered.
inline Trajectory rollout(const MarkovGame& game, const TabularPolicy& mu, const TabularPolicy& nu,
                          std::size_t steps, Rng& rng, double conditioning_temperature = 0.0) {
  check_policies(game, mu, nu);
  Trajectory traj(conditioning_temperature);
  std::size_t s = sample_initial_state(game, rng);
  for (std::size_t t = 0; t < steps; ++t) {
    if (game.is_absorbing(s)) break;
    const std::size_t a1 = sample_categorical(mu.row(s), rng);
    const std::size_t a2 = sample_categorical(nu.row(s), rng);
    const Outcome& o = sample_outcome(game.outcomes(s, a1, a2), rng);
    traj.push({s, a1, a2, o.reward, o.next});
    s = o.next;
  }
  return traj;
}

// JSON: {"n_states", "actions1", "actions2", "gamma", "horizon", "initial": [..],
//        "transition": [s][a1][a2][s'], "reward": [s][a1][a2][s']}
inline nlohmann::json game_to_json(const MarkovGame& g) {
  using nlohmann::json;
  json t = json::array(), r = json::array();
  for (std::size_t s = 0; s < g.n_states(); ++s) {
    json ts = json::array(), rs = json::array();
    for (std::size_t a1 = 0; a1 < g.actions1(); ++a1) {
      json ta = json::array(), ra = json::array();
      for (std::size_t a2 = 0; a2 < g.actions2(); ++a2) {
        std::vector<double> pv(g.n_states(), 0.0), rv(g.n_states(), 0.0);
        for (const Outcome& o : g.outcomes(s, a1, a2)) {
          pv[o.next] = o.prob;
          rv[o.next] = o.reward;
        }
        ta.push_back(pv);
        ra.push_back(rv);
      }
      ts.push_back(std::move(ta));
      rs.push_back(std::move(ra));
    }
    t.push_back(std::move(ts));
    r.push_back(std::move(rs));
  }
  return json{{"n_states", g.n_states()}, {"actions1", g.actions1()}, {"actions2", g.actions2()},
              {"gamma", g.gamma()},       {"horizon", g.horizon()},   {"initial", g.initial()},
              {"transition", std::move(t)}, {"reward", std::move(r)}};
}

inline MarkovGame game_from_json(const nlohmann::json& j) {
  try {
    const auto& t = j.at("transition");
    const auto& r = j.at("reward");
    const std::size_t n = t.size();
    if (n == 0) throw ConfigError("game JSON: empty transition tensor");
    const std::size_t a1n = t.at(0).size();
    const std::size_t a2n = t.at(0).at(0).size();
    std::vector<double> pt, rt;
    pt.reserve(n * a1n * a2n * n);
    rt.reserve(n * a1n * a2n * n);
    for (std::size_t s = 0; s < n; ++s) {
      if (t.at(s).size() != a1n || r.at(s).size() != a1n) throw ConfigError("game JSON: ragged action dimension");
      for (std::size_t a1 = 0; a1 < a1n; ++a1) {
        if (t.at(s).at(a1).size() != a2n || r.at(s).at(a1).size() != a2n)
          throw ConfigError("game JSON: ragged adversary action dimension");
        for (std::size_t a2 = 0; a2 < a2n; ++a2) {
          const auto pv = t.at(s).at(a1).at(a2).get<std::vector<double>>();
          const auto rv = r.at(s).at(a1).at(a2).get<std::vector<double>>();
          if (pv.size() != n || rv.size() != n) throw ConfigError("game JSON: successor vector has wrong length");
          pt.insert(pt.end(), pv.begin(), pv.end());
          rt.insert(rt.end(), rv.begin(), rv.end());
        }
      }
    }
    std::vector<double> initial;
    if (j.contains("initial")) {
      initial = j.at("initial").get<std::vector<double>>();
    } else {
      initial.assign(n, 0.0);
      initial[0] = 1.0;
    }
    return MarkovGame::from_dense(n, a1n, a2n, pt, rt, j.value("gamma", 0.9), std::move(initial),
                                  j.value("horizon", std::size_t{100}));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("game JSON: ") + e.what());
  }
}

inline nlohmann::json policy_to_json(const TabularPolicy& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t s = 0; s < p.n_states(); ++s) {
    auto row = p.row(s);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"owner", to_string(p.owner())}, {"probs", std::move(rows)}};
}

}  // namespace qarl
