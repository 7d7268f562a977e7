#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "qarl/envs.hpp"

using namespace qarl;

namespace {

bool same_outcomes(std::span<const Outcome> a, std::span<const Outcome> b, double tol = 0.0) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].next != b[i].next || std::abs(a[i].prob - b[i].prob) > tol || std::abs(a[i].reward - b[i].reward) > tol)
      return false;
  return true;
}

bool invariant_in_adversary(const MarkovGame& g) {
  for (std::size_t s = 0; s < g.n_states(); ++s)
    for (std::size_t a1 = 0; a1 < g.actions1(); ++a1)
      for (std::size_t a2 = 1; a2 < g.actions2(); ++a2)
        if (!same_outcomes(g.outcomes(s, a1, a2), g.outcomes(s, a1, 0), 1e-15)) return false;
  return true;
}

std::vector<std::vector<double>> null_adversary(const MarkovGame& g, std::size_t null_action) {
  std::vector<std::vector<double>> nu(g.n_states(), std::vector<double>(g.actions2(), 0.0));
  for (auto& row : nu) row[null_action] = 1.0;
  return nu;
}

std::size_t cell_index(const WindyGridSpec& s, int x, int y) { return std::size_t(y * s.width + x); }

}  // namespace

TEST(WindyGrid, NoWindMeansNoAdversaryEffect) {
  WindyGridSpec spec;
  spec.wind_strength = 0.0;
  EXPECT_TRUE(invariant_in_adversary(build_windy_grid(spec)));
  EXPECT_FALSE(invariant_in_adversary(build_windy_grid(WindyGridSpec{})));
  // A zero budget silences the adversary too.
  EXPECT_TRUE(invariant_in_adversary(WindyGridEnv(WindyGridSpec{}).game(0.0)));
}

TEST(WindyGrid, DeterministicShortestPathValue) {
  WindyGridSpec spec;
  spec.move_success = 1.0;
  spec.slip = 0.0;
  spec.wind_strength = 0.0;
  const auto g = build_windy_grid(spec);
  const int d = oracle::grid_distance(spec);
  ASSERT_EQ(d, 9);  // around the pit row: up, 7 right, down
  const auto sol = oracle::soft_vi_protagonist(g, null_adversary(g, 0), 0.0);
  const double gm = spec.gamma;
  const double expected = spec.step_reward * (1.0 - std::pow(gm, d)) / (1.0 - gm) + std::pow(gm, d - 1) * spec.goal_reward;
  EXPECT_NEAR(sol.v[cell_index(spec, 0, 0)], expected, 1e-9);
}

TEST(WindyGrid, OpposingPushCancelsTheMove) {
  WindyGridSpec spec;
  spec.move_success = 1.0;
  spec.slip = 0.0;
  spec.wind_strength = 1.0;
  const auto g = build_windy_grid(spec);
  const std::size_t s = cell_index(spec, 4, 3);
  // Protagonist moves right (1); adversary pushes left (4).
  const auto out = g.outcomes(s, 1, 4);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].next, s);
  EXPECT_DOUBLE_EQ(out[0].prob, 1.0);
  // Outside the wind zone the push has no effect.
  const std::size_t w = cell_index(spec, 1, 3);
  const auto free = g.outcomes(w, 1, 4);
  ASSERT_EQ(free.size(), 1u);
  EXPECT_EQ(free[0].next, cell_index(spec, 2, 3));
}

TEST(WindyGrid, TransitionProbabilitiesFollowTheSlipRule) {
  WindyGridSpec spec;
  spec.wind_strength = 0.0;
  const auto g = build_windy_grid(spec);
  // From (2, 4) moving up: up, left/right slips and staying.
  std::map<std::size_t, double> p;
  for (const auto& o : g.outcomes(cell_index(spec, 2, 4), 0, 0)) p[o.next] += o.prob;
  EXPECT_NEAR(p[cell_index(spec, 2, 5)], 0.95 * 0.9, 1e-15);
  EXPECT_NEAR(p[cell_index(spec, 3, 4)], 0.025, 1e-15);
  EXPECT_NEAR(p[cell_index(spec, 1, 4)], 0.025, 1e-15);
  EXPECT_NEAR(p[cell_index(spec, 2, 4)], 0.95 * 0.1, 1e-15);
}

TEST(WindyGrid, GoalAndPitsAreAbsorbing) {
  const WindyGridSpec spec;
  const auto g = build_windy_grid(spec);
  EXPECT_TRUE(g.is_absorbing(cell_index(spec, spec.goal.x, spec.goal.y)));
  for (const Cell& c : spec.pits) EXPECT_TRUE(g.is_absorbing(cell_index(spec, c.x, c.y)));
  EXPECT_FALSE(g.is_absorbing(cell_index(spec, 0, 0)));
  // Entering the goal pays step + goal reward.
  WindyGridSpec det = spec;
  det.move_success = 1.0;
  det.slip = 0.0;
  const auto d = build_windy_grid(det);
  const auto out = d.outcomes(cell_index(det, 7, 1), 2, 0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].next, cell_index(det, 7, 0));
  EXPECT_DOUBLE_EQ(out[0].reward, det.step_reward + det.goal_reward);
}

TEST(WindyGrid, WallsBlockMovement) {
  WindyGridSpec spec;
  spec.move_success = 1.0;
  spec.slip = 0.0;
  spec.walls = {{3, 3}};
  const auto g = build_windy_grid(spec);
  const auto out = g.outcomes(cell_index(spec, 2, 3), 1, 0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].next, cell_index(spec, 2, 3));
}

TEST(WindyGrid, SpecValidation) {
  WindyGridSpec s;
  s.slip = 1.5;
  EXPECT_THROW(build_windy_grid(s), ConfigError);
  s = WindyGridSpec{};
  s.goal = {9, 9};
  EXPECT_THROW(build_windy_grid(s), ConfigError);
  s = WindyGridSpec{};
  s.gamma = 1.0;
  EXPECT_THROW(build_windy_grid(s), ConfigError);
}

TEST(Pendulum, RestIsAnEquilibrium) {
  const PendulumSpec spec;
  const auto next = integrate_pendulum(spec, {0.0, 0.0}, 0.0);
  EXPECT_EQ(next.theta, 0.0);
  EXPECT_EQ(next.omega, 0.0);
  const PendulumGrid grid(spec);
  const auto c = grid.center(grid.rest_state());
  EXPECT_NEAR(c.theta, 0.0, 1e-12);
  EXPECT_NEAR(c.omega, 0.0, 1e-12);
  const auto g = build_pendulum(spec);
  double stay = 0.0;
  for (const auto& o : g.outcomes(grid.rest_state(), 1, 1))
    if (o.next == grid.rest_state()) stay += o.prob;
  EXPECT_NEAR(stay, 1.0, 1e-9);
}

TEST(Pendulum, UnforcedEnergyNeverIncreases) {
  const PendulumSpec spec;
  Rng rng(3);
  std::uniform_real_distribution<double> th(-std::numbers::pi, std::numbers::pi), om(-8.0, 8.0);
  for (int i = 0; i < 10000; ++i) {
    const PendulumState s{th(rng), om(rng)};
    const auto n = integrate_pendulum(spec, s, 0.0);
    EXPECT_LE(pendulum_energy(spec, n), pendulum_energy(spec, s) + 1e-12) << s.theta << " " << s.omega;
  }
  // Zero damping conserves energy up to the solver tolerance (away from the clamp).
  PendulumSpec lossless = spec;
  lossless.damping = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const PendulumState s{th(rng), 0.5 * om(rng)};
    const auto n = integrate_pendulum(lossless, s, 0.0);
    if (std::abs(n.omega) >= lossless.omega_max) continue;
    EXPECT_NEAR(pendulum_energy(lossless, n), pendulum_energy(lossless, s), 1e-9);
  }
}

TEST(Pendulum, EnergyBalanceWithTorque) {
  // Without the clamp: dE = dt * w_bar * (torque / I - (c / I) w_bar), w_bar the mean angular velocity.
  PendulumSpec spec;
  spec.mass = 1.3;
  Rng rng(4);
  std::uniform_real_distribution<double> th(-3.0, 3.0), om(-4.0, 4.0), tq(-2.0, 2.0);
  const double inertia = spec.mass * spec.length * spec.length;
  for (int i = 0; i < 1000; ++i) {
    const PendulumState s{th(rng), om(rng)};
    const double u = tq(rng);
    const auto n = integrate_pendulum(spec, s, u);
    if (std::abs(n.omega) >= spec.omega_max) continue;
    const double w_bar = 0.5 * (s.omega + n.omega);
    const double expected = spec.dt * w_bar * (u / inertia - spec.damping / inertia * w_bar);
    EXPECT_NEAR(pendulum_energy(spec, n) - pendulum_energy(spec, s), expected, 1e-9);
  }
}

TEST(Pendulum, ZeroAdversaryStrengthMeansNoEffect) {
  PendulumSpec spec;
  spec.theta_bins = 11;
  spec.omega_bins = 9;
  spec.f_max = 0.0;
  EXPECT_TRUE(invariant_in_adversary(build_pendulum(spec)));
  spec.f_max = 1.0;
  EXPECT_FALSE(invariant_in_adversary(build_pendulum(spec)));
  EXPECT_TRUE(invariant_in_adversary(build_pendulum(spec, 0.0)));
}

TEST(Pendulum, DoublingMassHalvesControlAndDamping) {
  PendulumSpec a;
  PendulumSpec b = a;
  b.mass = 2.0;
  for (double theta : {0.3, -1.2, 2.5})
    for (double omega : {-3.0, 0.7})
      for (double u : {-2.0, 1.0}) {
        const double da = angular_acceleration(a, theta, omega, u) - angular_acceleration(a, theta, 0.0, 0.0);
        const double db = angular_acceleration(b, theta, omega, u) - angular_acceleration(b, theta, 0.0, 0.0);
        EXPECT_NEAR(db, 0.5 * da, 1e-12);
        EXPECT_DOUBLE_EQ(angular_acceleration(a, theta, 0.0, 0.0), angular_acceleration(b, theta, 0.0, 0.0));
      }
}

TEST(Pendulum, SnappingPreservesTheMean) {
  const PendulumSpec spec;
  const PendulumGrid grid(spec);
  Rng rng(5);
  std::uniform_real_distribution<double> th(-2.9, 2.9), om(-7.5, 7.5);
  std::vector<std::pair<std::size_t, double>> parts;
  for (int i = 0; i < 2000; ++i) {
    const PendulumState x{th(rng), om(rng)};
    grid.snap(x, parts);
    double total = 0.0, mt = 0.0, mw = 0.0;
    for (const auto& [s, p] : parts) {
      const auto c = grid.center(s);
      EXPECT_LE(std::abs(wrap_angle(c.theta - x.theta)), grid.theta_step() + 1e-12);
      EXPECT_LE(std::abs(c.omega - x.omega), grid.omega_step() + 1e-12);
      total += p;
      mt += p * c.theta;
      mw += p * c.omega;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(mt, x.theta, 1e-9);
    EXPECT_NEAR(mw, x.omega, 1e-9);
  }
}

TEST(Pendulum, RewardPeaksUpright) {
  const PendulumSpec spec;
  const PendulumGrid grid(spec);
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t s = 0; s < grid.n_states(); ++s) {
    const double r = grid.reward(s);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    if (r > best) best = r, arg = s;
  }
  EXPECT_NEAR(std::abs(grid.center(arg).theta), std::numbers::pi, grid.theta_step());
  EXPECT_NEAR(grid.reward(grid.rest_state()), 0.0, 1e-15);
}

TEST(Pendulum, TorqueActions) {
  EXPECT_EQ(pendulum_torque(2.0, 0), -2.0);
  EXPECT_EQ(pendulum_torque(2.0, 1), 0.0);
  EXPECT_EQ(pendulum_torque(2.0, 2), 2.0);
}

TEST(Garnet, DeterministicInSeed) {
  const auto a = build_garnet({.seed = 3}), b = build_garnet({.seed = 3}), c = build_garnet({.seed = 4});
  EXPECT_EQ(game_to_json(a).dump(), game_to_json(b).dump());
  EXPECT_NE(game_to_json(a).dump(), game_to_json(c).dump());
}

TEST(Garnet, BranchingAndRowSums) {
  for (std::size_t br : {1u, 2u, 5u}) {
    const auto g = build_garnet({.n_states = 8, .branching = br, .seed = 1});
    for (std::size_t s = 0; s < 8; ++s)
      for (std::size_t a1 = 0; a1 < 3; ++a1)
        for (std::size_t a2 = 0; a2 < 3; ++a2) {
          const auto out = g.outcomes(s, a1, a2);
          EXPECT_EQ(out.size(), br);
          double t = 0.0;
          for (const auto& o : out) t += o.prob;
          EXPECT_NEAR(t, 1.0, 1e-12);
          for (const auto& o : out) EXPECT_LE(std::abs(o.reward), 1.0);
        }
  }
  EXPECT_THROW(build_garnet({.n_states = 3, .branching = 4}), ConfigError);
}

TEST(Perturb, IdentityAndErrors) {
  const WindyGridSpec grid;
  EXPECT_EQ(perturb(grid, {}), grid);
  EXPECT_EQ(perturb(grid, {{"slip", 1.0}, {"wind", 1.0}}), grid);
  EXPECT_DOUBLE_EQ(perturb(grid, {{"wind_strength", 0.5}}).wind_strength, 0.3);
  EXPECT_THROW(perturb(grid, {{"gravity", 1.0}}), ConfigError);
  EXPECT_THROW(perturb(grid, {{"slip", -1.0}}), ConfigError);
  EXPECT_THROW(perturb(grid, {{"move_success", 2.0}}), ConfigError);  // probability above one
  const PendulumSpec pend;
  EXPECT_EQ(perturb(pend, {{"mass", 1.0}}), pend);
  EXPECT_DOUBLE_EQ(perturb(pend, {{"mass", 2.0}, {"length", 0.5}}).length, 0.5);
  EXPECT_THROW(perturb(pend, {{"wind", 1.0}}), ConfigError);
  EXPECT_EQ(perturb(GarnetSpec{}, {}), GarnetSpec{});
  EXPECT_THROW(perturb(GarnetSpec{}, {{"mass", 1.0}}), ConfigError);
}

TEST(Environment, PerturbedEnvironmentMatchesPerturbedSpec) {
  const WindyGridEnv env{WindyGridSpec{}};
  const auto p = env.perturbed({{"wind", 0.0}});
  EXPECT_TRUE(invariant_in_adversary(p->game()));
  EXPECT_EQ(p->spec_json().at("wind_strength"), 0.0);
}

TEST(Environment, AllBuiltGamesPassValidation) {
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<WindyGridEnv>(WindyGridSpec{}));
  envs.push_back(std::make_unique<PendulumEnv>(PendulumSpec{}));
  envs.push_back(make_environment({{"type", "garnet"}}));
  for (const auto& e : envs)
    for (double b : {0.0, 0.3, 1.0}) {
      const auto g = e->game(b);  // the constructor validates every row
      EXPECT_EQ(g.n_states(), e->n_states());
      EXPECT_EQ(g.initial(), e->initial_distribution());
    }
}

TEST(Environment, NullActionHasNoEffect) {
  const PendulumEnv pend{PendulumSpec{}};
  EXPECT_EQ(pend.null_action(), 1u);
  const auto g1 = pend.game(1.0), g0 = pend.game(0.0);
  for (std::size_t s = 0; s < g1.n_states(); s += 37)
    for (std::size_t a1 = 0; a1 < 3; ++a1) EXPECT_TRUE(same_outcomes(g1.outcomes(s, a1, 1), g0.outcomes(s, a1, 1)));
  const WindyGridEnv grid{WindyGridSpec{}};
  EXPECT_EQ(grid.null_action(), 0u);
}

TEST(Environment, GameEnvBudgetMixesWithNullAction) {
  const auto garnet = build_garnet({.n_states = 5, .seed = 2});
  const GameEnv env(garnet);
  std::vector<Outcome> out;
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t a1 = 0; a1 < 3; ++a1)
      for (std::size_t a2 = 0; a2 < 3; ++a2) {
        env.outcomes(s, a1, a2, 1.0, out);
        EXPECT_TRUE(same_outcomes(out, garnet.outcomes(s, a1, a2)));
        env.outcomes(s, a1, a2, 0.0, out);
        EXPECT_NEAR(env.game(0.0).expected_reward(s, a1, a2), garnet.expected_reward(s, a1, 0), 1e-12);
        const double b = 0.3;
        const double mixed = b * garnet.expected_reward(s, a1, a2) + (1 - b) * garnet.expected_reward(s, a1, 0);
        EXPECT_NEAR(env.game(b).expected_reward(s, a1, a2), mixed, 1e-12);
      }
}

TEST(Environment, StepSamplesFromOutcomes) {
  const WindyGridEnv env{WindyGridSpec{}};
  Rng rng(1);
  const std::size_t s = 3 * 8 + 2;
  std::vector<double> counts(64, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[env.step(s, 0, 0, 1.0, rng).next] += 1.0;
  std::vector<double> probs(64, 0.0);
  std::vector<Outcome> out;
  env.outcomes(s, 0, 0, 1.0, out);
  for (const auto& o : out) probs[o.next] += o.prob;
  EXPECT_GT(oracle::chi_square_pvalue(counts, probs), 0.01);
}

TEST(EnvironmentJson, RoundTripAndStrictness) {
  for (const nlohmann::json& j : {to_json(WindyGridSpec{}), to_json(PendulumSpec{}), to_json(GarnetSpec{})}) {
    const auto env = make_environment(j);
    EXPECT_EQ(env->spec_json(), j);
    EXPECT_EQ(game_to_json(make_environment(env->spec_json())->game()).dump(), game_to_json(env->game()).dump());
  }
  EXPECT_THROW(make_environment({{"type", "windy_grid"}, {"colour", 1}}), ConfigError);
  EXPECT_THROW(make_environment({{"type", "maze"}}), ConfigError);
  EXPECT_THROW(make_environment(nlohmann::json::object()), ConfigError);
  EXPECT_THROW(make_environment({{"type", "pendulum"}, {"dt", "fast"}}), ConfigError);
  EXPECT_THROW(make_environment({{"type", "game"}}), ConfigError);
}

TEST(SweepJson, ParsesAndValidates) {
  const nlohmann::json j = {{"axis1", {{"name", "mass"}, {"multipliers", {0.5, 1.0}}}},
                            {"axis2", {{"name", "length"}, {"multipliers", {1.0}}}}};
  const auto p = sweep_from_json(j);
  EXPECT_EQ(p.axis1.multipliers.size(), 2u);
  EXPECT_EQ(to_json(p), j);
  auto bad = j;
  bad["axis2"]["multipliers"] = nlohmann::json::array();
  EXPECT_THROW(sweep_from_json(bad), ConfigError);
  bad = j;
  bad["axis1"]["multipliers"] = {0.0};
  EXPECT_THROW(sweep_from_json(bad), ConfigError);
  EXPECT_THROW(sweep_from_json(nlohmann::json::object()), ConfigError);
}
