#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qarl/qre.hpp"

using namespace qarl;

namespace {

const MatrixGame kPennies = MatrixGame::from_rows({{1, -1}, {-1, 1}});

double max_dev_uniform(const std::vector<double>& p) {
  double d = 0.0;
  for (double x : p) d = std::max(d, std::abs(x - 1.0 / double(p.size())));
  return d;
}

double sum(const std::vector<double>& v) {
  double t = 0.0;
  for (double x : v) t += x;
  return t;
}

}  // namespace

TEST(SolveLogitQre, MatchingPenniesIsUniformForAnyTemperature) {
  for (double tau : {0.01, 0.1, 1.0, 10.0, 1e3}) {
    const auto s = solve_logit_qre(kPennies, tau, tau);
    EXPECT_NEAR(s.sigma_row[0], 0.5, 1e-9);
    EXPECT_NEAR(s.sigma_col[0], 0.5, 1e-9);
    // value = tau ln2 - tau ln2 = 0 at the symmetric point
    EXPECT_NEAR(s.value, 0.0, 1e-9 * std::max(1.0, tau));
  }
}

TEST(SolveLogitQre, HugeTemperatureIsUniform) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto x = oracle::random_matrix(2 + std::size_t(t % 4), 2 + std::size_t((t / 4) % 4), rng, 5.0);
    const auto s = solve_logit_qre(x, 1e6, 1e6);
    EXPECT_LT(max_dev_uniform(s.sigma_row), 1e-4);
    EXPECT_LT(max_dev_uniform(s.sigma_col), 1e-4);
  }
}

TEST(SolveLogitQre, AgreesWithBruteForceOnExample) {
  const auto x = MatrixGame::from_rows({{2, 0}, {-1, 1}});
  const auto s = solve_logit_qre(x, 1.0, 1.0);
  const auto b = brute_force_qre_2x2(x, 1.0);
  EXPECT_NEAR(s.sigma_row[0], b.sigma_row[0], 1e-6);
  EXPECT_NEAR(s.sigma_col[0], b.sigma_col[0], 1e-6);
}

TEST(SolveLogitQre, FixedPointConsistencyOnRandomGames) {
  Rng rng(2);
  for (int t = 0; t < 60; ++t) {
    const auto x = oracle::random_matrix(1 + std::size_t(t % 5), 1 + std::size_t((t / 5) % 5), rng, 3.0);
    for (double tau : {0.1, 1.0, 10.0}) {
      QreOptions opt;
      opt.tol = 1e-10;
      const auto s = solve_logit_qre(x, tau, tau, opt);
      EXPECT_LE(s.residual, opt.tol);
      EXPECT_LE(oracle::qre_fixed_point_residual(x, s), 1e-9);
      EXPECT_NEAR(sum(s.sigma_row), 1.0, 1e-10);
      EXPECT_NEAR(sum(s.sigma_col), 1.0, 1e-10);
      const double value = x.bilinear(s.sigma_row, s.sigma_col) + tau * entropy(s.sigma_row) - tau * entropy(s.sigma_col);
      EXPECT_NEAR(s.value, value, 1e-12);
    }
  }
}

TEST(SolveLogitQre, HeterogeneousTemperatures) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto x = oracle::random_matrix(3, 4, rng);
    const auto s = solve_logit_qre(x, 0.2, 5.0);
    EXPECT_EQ(s.tau_row, 0.2);
    EXPECT_EQ(s.tau_col, 5.0);
    EXPECT_LE(oracle::qre_fixed_point_residual(x, s), 1e-9);
    // The nearly irrational column player stays close to uniform.
    EXPECT_GT(max_dev_uniform(s.sigma_row), max_dev_uniform(s.sigma_col));
  }
}

TEST(SolveLogitQre, NonConvergenceCarriesResidual) {
  QreOptions opt;
  opt.max_iter = 1;
  opt.tol = 1e-15;
  const auto x = MatrixGame::from_rows({{2, 0}, {-1, 1}});
  try {
    solve_logit_qre(x, 0.05, 0.05, opt);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
  EXPECT_THROW(solve_logit_qre(x, 0.0, 1.0), DomainError);
}

TEST(SolveLogitQre, IrrationalityLimitIsMonotone) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto x = oracle::random_matrix(3, 3, rng, 2.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double tau = 10.0 * x.max_abs(); tau < 1e7; tau *= 2.0) {
      const auto s = solve_logit_qre(x, tau, tau);
      const double d = std::max(max_dev_uniform(s.sigma_row), max_dev_uniform(s.sigma_col));
      EXPECT_LE(d, prev + 1e-12);
      prev = d;
    }
    EXPECT_LT(prev, 1e-5);
  }
}

TEST(SolveLogitQre, PayoffShiftInvariance) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto x = oracle::random_matrix(3, 2, rng);
    const double c = 4.0 * uniform01(rng) - 2.0;
    const auto a = solve_logit_qre(x, 0.5, 0.7);
    const auto b = solve_logit_qre(x.shifted(c), 0.5, 0.7);
    EXPECT_NEAR(b.value - a.value, c, 1e-9);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.sigma_row[i], b.sigma_row[i], 1e-9);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a.sigma_col[j], b.sigma_col[j], 1e-9);
  }
}

TEST(BruteForceQre, Examples) {
  const auto mp = brute_force_qre_2x2(kPennies, 1.0);
  EXPECT_NEAR(mp.sigma_row[0], 0.5, 1e-9);
  EXPECT_NEAR(mp.sigma_col[0], 0.5, 1e-9);
  const auto irr = brute_force_qre_2x2(MatrixGame::from_rows({{2, 0}, {-1, 1}}), 1e6);
  EXPECT_NEAR(irr.sigma_row[0], 0.5, 1.0 / 200.0);
  EXPECT_NEAR(irr.sigma_col[0], 0.5, 1.0 / 200.0);
  EXPECT_THROW(brute_force_qre_2x2(MatrixGame::from_rows({{1, 2, 3}, {4, 5, 6}}), 1.0), InvariantError);
}

TEST(BruteForceQre, BeatsRandomProbes) {
  const auto x = MatrixGame::from_rows({{2, 0}, {-1, 1}});
  const auto b = brute_force_qre_2x2(x, 1.0);
  const double rb = oracle::qre_fixed_point_residual(x, b);
  Rng rng(6);
  for (int t = 0; t < 10000; ++t) {
    QreSolution probe = b;
    const double p = uniform01(rng), q = uniform01(rng);
    probe.sigma_row = {p, 1.0 - p};
    probe.sigma_col = {q, 1.0 - q};
    ASSERT_LT(rb, oracle::qre_fixed_point_residual(x, probe));
  }
}

TEST(Annealing, MatchingPenniesValueNearZero) {
  const auto s = solve_nash_by_annealing(kPennies, 1.0, 1e-4, 0.8, 1e-10);
  EXPECT_LT(std::abs(s.value), 1e-3);
}

TEST(Annealing, PureSaddlePoint) {
  const auto x = MatrixGame::from_rows({{3, 1}, {2, 2}});
  const auto s = solve_nash_by_annealing(x);
  EXPECT_NEAR(s.value, 2.0, 1e-3);
  EXPECT_EQ(s.tau_row, 1e-4);
  // Row 2 against column 2 is a saddle: neither player gains by deviating.
  EXPECT_TRUE(x(1, 1) >= x(0, 1) && x(1, 1) <= x(1, 0));
  // Every column strategy with P(column 1) <= 1/2 is minimax here; the logit
  // path converges to the boundary of that set, so assert optimality rather
  // than purity.
  EXPECT_LE(std::max(x(0, 0) * s.sigma_col[0] + x(0, 1) * s.sigma_col[1],
                     x(1, 0) * s.sigma_col[0] + x(1, 1) * s.sigma_col[1]),
            2.0 + 1e-3);
  EXPECT_GT(s.sigma_row[1], 1.0 - 1e-3);
}

TEST(Annealing, MatchesFictitiousPlayOnRandom3x3) {
  Rng rng(7);
  for (int t = 0; t < 5; ++t) {
    const auto x = oracle::random_matrix(3, 3, rng);
    const auto s = solve_nash_by_annealing(x);
    const auto fp = oracle::fictitious_play(x, 1000000);
    EXPECT_NEAR(s.value, fp.value(), 1e-2);
    // epsilon-maximin: the annealed row strategy secures the value.
    EXPECT_NEAR(oracle::security_level(x, s.sigma_row), fp.value(), 1e-2);
  }
}

TEST(Annealing, SmallTemperatureStepsStayOnThePath) {
  // Damped responses alone lose this game near tau = 1e-4.
  const auto x = MatrixGame::from_rows(
      {{0.558106, -0.0907656, 0.0209271}, {-0.97651, 0.193639, 0.726645}, {0.508065, -0.26473, -0.678707}});
  const auto s = solve_nash_by_annealing(x);
  const auto fp = oracle::fictitious_play(x, 1000000);
  EXPECT_NEAR(s.value, fp.value(), 1e-2);
  EXPECT_LE(oracle::qre_fixed_point_residual(x, s), 1e-9);
}

TEST(Annealing, ScheduleValidation) {
  EXPECT_THROW(geometric_schedule(1e-4, 1.0, 0.8), DomainError);
  EXPECT_THROW(geometric_schedule(1.0, 1e-4, 1.2), DomainError);
  const auto s = geometric_schedule(1.0, 1e-4, 0.8);
  EXPECT_EQ(s.front(), 1.0);
  EXPECT_EQ(s.back(), 1e-4);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i], s[i - 1]);
}

TEST(RegularizedGameValue, Examples) {
  const auto x = MatrixGame::from_rows({{1, 2}, {3, 4}});
  const std::vector<double> r{0.3, 0.7}, c{0.6, 0.4};
  EXPECT_DOUBLE_EQ(regularized_game_value(x, r, c, 0, 0), x.bilinear(r, c));
  const auto z = MatrixGame::from_rows({{0, 0}, {0, 0}});
  const std::vector<double> u{0.5, 0.5};
  EXPECT_NEAR(regularized_game_value(z, u, u, 1, 1), 0.0, 1e-15);
  EXPECT_NEAR(regularized_game_value(z, u, u, 2, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(regularized_game_value(z, u, u, 2, 1), 0.6931, 1e-4);
}

TEST(QreJson, PayoffParsing) {
  EXPECT_EQ(matrix_game_from_json(nlohmann::json::parse("[[1,-1],[-1,1]]")).rows(), 2u);
  EXPECT_EQ(matrix_game_from_json(nlohmann::json::parse(R"({"payoff": [[1,2,3]]})")).cols(), 3u);
  EXPECT_THROW(matrix_game_from_json(nlohmann::json::parse(R"([[1,2],[3]])")), ConfigError);
  EXPECT_THROW(matrix_game_from_json(nlohmann::json::parse(R"("x")")), ConfigError);
  const auto j = to_json(solve_logit_qre(kPennies, 1.0, 1.0));
  EXPECT_TRUE(j.contains("sigma_row") && j.contains("residual") && j.contains("tau_col"));
}
