#pragma once

// Adversarial test environments. Each environment exposes the successor
// distribution of a joint action under a given adversary force budget; the
// same function drives both sampled episodes and the exact MarkovGame tensor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qarl/curriculum.hpp"
#include "qarl/errors.hpp"
#include "qarl/game.hpp"
#include "qarl/math.hpp"

namespace qarl {

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

// Inclusive cell rectangle.
struct CellRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool contains(const Cell& c) const { return c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1; }
  bool operator==(const CellRect&) const = default;
};

// y = 0 is the bottom row. Protagonist actions: up, right, down, left.
// Adversary actions: none, then pushes up, right, down, left.
struct WindyGridSpec {
  int width = 8;
  int height = 8;
  Cell start{0, 0};
  Cell goal{7, 0};
  CellRect wind_zone{4, 0, 7, 7};
  double wind_strength = 0.6;
  double move_success = 0.9;
  double slip = 0.05;
  double step_reward = -0.01;
  double goal_reward = 1.0;
  std::vector<Cell> pits{{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}};
  double pit_reward = -1.0;
  std::vector<Cell> walls;
  double gamma = 0.99;
  std::size_t horizon = 100;

  bool operator==(const WindyGridSpec&) const = default;

  static constexpr std::size_t kProtagonistActions = 4;
  static constexpr std::size_t kAdversaryActions = 5;

  bool inside(const Cell& c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("WindyGridSpec.") + name + " must lie in [0, 1]");
    };
    if (width < 1 || height < 1) throw ConfigError("WindyGridSpec.width/height must be positive");
    prob(wind_strength, "wind_strength");
    prob(move_success, "move_success");
    prob(slip, "slip");
    if (!inside(goal)) throw ConfigError("WindyGridSpec.goal must lie inside the grid");
    if (!inside(start)) throw ConfigError("WindyGridSpec.start must lie inside the grid");
    if (wind_zone.x1 >= wind_zone.x0 &&
        (!inside({wind_zone.x0, wind_zone.y0}) || !inside({wind_zone.x1, wind_zone.y1})))
      throw ConfigError("WindyGridSpec.wind_zone must lie inside the grid");
    for (const Cell& c : pits)
      if (!inside(c) || c == goal || c == start) throw ConfigError("WindyGridSpec.pits must be free interior cells");
    for (const Cell& c : walls)
      if (!inside(c) || c == goal || c == start) throw ConfigError("WindyGridSpec.walls must be free interior cells");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("WindyGridSpec.gamma must lie in [0, 1)");
    if (horizon == 0) throw ConfigError("WindyGridSpec.horizon must be positive");
    for (double r : {step_reward, goal_reward, pit_reward})
      if (!std::isfinite(r)) throw ConfigError("WindyGridSpec rewards must be finite");
  }
};

// theta = 0 hangs down, theta = pi is upright.
struct PendulumSpec {
  std::size_t theta_bins = 31;
  std::size_t omega_bins = 31;
  double omega_max = 8.0;
  double torque = 2.0;  // protagonist torques {-u, 0, +u}
  double f_max = 1.0;   // adversary torques {-f_max, 0, +f_max}
  double mass = 1.0;
  double length = 1.0;
  double damping = 0.1;
  double gravity = 9.81;
  double dt = 0.05;
  double gamma = 0.99;
  std::size_t horizon = 200;

  bool operator==(const PendulumSpec&) const = default;

  static constexpr std::size_t kProtagonistActions = 3;
  static constexpr std::size_t kAdversaryActions = 3;

  void validate() const {
    if (theta_bins < 3) throw ConfigError("PendulumSpec.theta_bins must be at least 3");
    if (omega_bins < 3) throw ConfigError("PendulumSpec.omega_bins must be at least 3");
    if (!(dt > 0.0)) throw ConfigError("PendulumSpec.dt must be positive");
    if (!(f_max >= 0.0)) throw ConfigError("PendulumSpec.f_max must be non-negative");
    if (!(torque >= 0.0)) throw ConfigError("PendulumSpec.torque must be non-negative");
    if (!(mass > 0.0)) throw ConfigError("PendulumSpec.mass must be positive");
    if (!(length > 0.0)) throw ConfigError("PendulumSpec.length must be positive");
    if (!(damping >= 0.0)) throw ConfigError("PendulumSpec.damping must be non-negative");
    if (!(gravity >= 0.0)) throw ConfigError("PendulumSpec.gravity must be non-negative");
    if (!(omega_max > 0.0)) throw ConfigError("PendulumSpec.omega_max must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("PendulumSpec.gamma must lie in [0, 1)");
    if (horizon == 0) throw ConfigError("PendulumSpec.horizon must be positive");
  }
};

struct GarnetSpec {
  std::size_t n_states = 10;
  std::size_t n_actions1 = 3;
  std::size_t n_actions2 = 3;
  std::size_t branching = 3;
  std::uint64_t seed = 0;
  double gamma = 0.9;
  std::size_t horizon = 100;

  bool operator==(const GarnetSpec&) const = default;

  void validate() const {
    if (n_states == 0 || n_actions1 == 0 || n_actions2 == 0) throw ConfigError("GarnetSpec: counts must be positive");
    if (branching == 0 || branching > n_states) throw ConfigError("GarnetSpec.branching must lie in [1, n_states]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("GarnetSpec.gamma must lie in [0, 1)");
    if (horizon == 0) throw ConfigError("GarnetSpec.horizon must be positive");
  }
};

struct SweepAxis {
  std::string name;
  std::vector<double> multipliers;
  bool operator==(const SweepAxis&) const = default;
};

struct ParamSweep {
  SweepAxis axis1;
  SweepAxis axis2;

  void validate() const {
    for (const SweepAxis* a : {&axis1, &axis2}) {
      if (a->name.empty()) throw ConfigError("ParamSweep: axis name missing");
      if (a->multipliers.empty()) throw ConfigError("ParamSweep: axis '" + a->name + "' has no multipliers");
      for (double m : a->multipliers)
        if (!(m > 0.0) || !std::isfinite(m))
          throw ConfigError("ParamSweep: multipliers of '" + a->name + "' must be positive");
    }
  }
  bool operator==(const ParamSweep&) const = default;
};

using Multipliers = std::map<std::string, double>;

// ---------------------------------------------------------------------------
// Windy grid

namespace detail {

inline constexpr std::array<Cell, 4> kDirections{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};

class GridGeometry {
 public:
  explicit GridGeometry(const WindyGridSpec& spec) : spec_(spec) {
    const std::size_t n = std::size_t(spec.width) * std::size_t(spec.height);
    kind_.assign(n, Kind::free);
    for (const Cell& c : spec.pits) kind_[index(c)] = Kind::pit;
    for (const Cell& c : spec.walls) kind_[index(c)] = Kind::wall;
    kind_[index(spec.goal)] = Kind::goal;
  }

  enum class Kind { free, wall, pit, goal };

  std::size_t index(const Cell& c) const { return std::size_t(c.y) * std::size_t(spec_.width) + std::size_t(c.x); }
  Cell cell(std::size_t s) const { return {int(s % std::size_t(spec_.width)), int(s / std::size_t(spec_.width))}; }
  Kind kind(const Cell& c) const { return kind_[index(c)]; }
  bool terminal(const Cell& c) const { return kind(c) == Kind::pit || kind(c) == Kind::goal; }

  // One cell in direction d; the boundary and walls block.
  Cell shift(const Cell& c, std::size_t d) const {
    const Cell n{c.x + kDirections[d].x, c.y + kDirections[d].y};
    if (!spec_.inside(n) || kind(n) == Kind::wall) return c;
    return n;
  }

  double entry_reward(const Cell& c) const {
    switch (kind(c)) {
      case Kind::goal: return spec_.step_reward + spec_.goal_reward;
      case Kind::pit: return spec_.step_reward + spec_.pit_reward;
      default: return spec_.step_reward;
    }
  }

 private:
  WindyGridSpec spec_;
  std::vector<Kind> kind_;
};

}  // namespace detail

// Successors of (s, a1, a2); `push_scale` in [0, 1] multiplies the chance that
// the adversary's push takes effect.
inline void windy_grid_outcomes(const WindyGridSpec& spec, const detail::GridGeometry& geo, std::size_t s,
                                std::size_t a1, std::size_t a2, double push_scale, std::vector<Outcome>& out) {
  out.clear();
  const Cell c = geo.cell(s);
  if (geo.terminal(c) || geo.kind(c) == detail::GridGeometry::Kind::wall) {
    out.push_back({s, 1.0, 0.0});
    return;
  }
  // Lateral slip takes `slip`; the intended move succeeds with move_success of
  // the rest, otherwise the agent stays.
  const std::array<std::pair<Cell, double>, 4> moves{{
      {geo.shift(c, a1), (1.0 - spec.slip) * spec.move_success},
      {geo.shift(c, (a1 + 1) % 4), 0.5 * spec.slip},
      {geo.shift(c, (a1 + 3) % 4), 0.5 * spec.slip},
      {c, (1.0 - spec.slip) * (1.0 - spec.move_success)},
  }};
  const double push = a2 == 0 ? 0.0 : spec.wind_strength * push_scale;
  auto emit = [&](const Cell& n, double p) {
    if (p <= 0.0) return;
    out.push_back({geo.index(n), p, geo.entry_reward(n)});
  };
  for (const auto& [cell, p] : moves) {
    if (p <= 0.0) continue;
    if (!geo.terminal(cell) && push > 0.0 && spec.wind_zone.contains(cell)) {
      emit(geo.shift(cell, a2 - 1), p * push);
      emit(cell, p * (1.0 - push));
    } else {
      emit(cell, p);
    }
  }
}

inline MarkovGame build_windy_grid(const WindyGridSpec& spec, double push_scale = 1.0) {
  spec.validate();
  const detail::GridGeometry geo(spec);
  const std::size_t n = std::size_t(spec.width) * std::size_t(spec.height);
  std::vector<std::vector<Outcome>> rows(n * WindyGridSpec::kProtagonistActions * WindyGridSpec::kAdversaryActions);
  std::size_t r = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a1 = 0; a1 < WindyGridSpec::kProtagonistActions; ++a1)
      for (std::size_t a2 = 0; a2 < WindyGridSpec::kAdversaryActions; ++a2)
        windy_grid_outcomes(spec, geo, s, a1, a2, push_scale, rows[r++]);
  std::vector<double> initial(n, 0.0);
  initial[geo.index(spec.start)] = 1.0;
  return MarkovGame(n, WindyGridSpec::kProtagonistActions, WindyGridSpec::kAdversaryActions, rows, spec.gamma,
                    std::move(initial), spec.horizon);
}

// ---------------------------------------------------------------------------
// Pendulum

struct PendulumState {
  double theta = 0.0;
  double omega = 0.0;
};

inline double wrap_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta + std::numbers::pi, two_pi);
  if (t < 0.0) t += two_pi;
  return t - std::numbers::pi;
}

// theta'' of the continuous dynamics.
inline double angular_acceleration(const PendulumSpec& p, double theta, double omega, double applied_torque) {
  const double inertia = p.mass * p.length * p.length;
  return -(p.gravity / p.length) * std::sin(theta) - (p.damping / inertia) * omega + applied_torque / inertia;
}

// Energy per unit inertia, E = omega^2 / 2 + (g / l)(1 - cos theta).
inline double pendulum_energy(const PendulumSpec& p, const PendulumState& s) {
  return 0.5 * s.omega * s.omega + (p.gravity / p.length) * (1.0 - std::cos(s.theta));
}

// One step of the discrete-gradient (average vector field) form of the Euler
// update: theta' = theta + dt * w_bar, omega' = omega + dt * a(theta, theta', w_bar)
// with the gravity term replaced by its secant. With zero applied torque the
// energy change is exactly -damping/I * dt * w_bar^2, so the scheme never
// gains energy. Solved by Newton on the angle increment.
inline PendulumState integrate_pendulum(const PendulumSpec& p, const PendulumState& s, double applied_torque) {
  const double inertia = p.mass * p.length * p.length;
  const double k = p.gravity / p.length;
  const double c = p.damping / inertia;
  const double tau = applied_torque / inertia;
  const double dt = p.dt;
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  // secant of sin: D(d) = (cos t - cos(t + d)) / d
  auto secant = [&](double d, double& deriv) {
    if (std::abs(d) < 1e-5) {
      deriv = 0.5 * ct - d * st / 3.0;
      return st + 0.5 * d * ct - d * d * st / 6.0;
    }
    const double cn = std::cos(s.theta + d), sn = std::sin(s.theta + d);
    const double val = (ct - cn) / d;
    deriv = (sn * d - (ct - cn)) / (d * d);
    return val;
  };
  // F(d) = 2d/dt - 2 omega + dt k D(d) + c d - dt tau, where omega' = 2d/dt - omega
  double d = dt * (s.omega + dt * angular_acceleration(p, s.theta, s.omega, applied_torque));
  for (int it = 0; it < 50; ++it) {
    double dd = 0.0;
    const double D = secant(d, dd);
    const double F = 2.0 * d / dt - 2.0 * s.omega + dt * k * D + c * d - dt * tau;
    const double J = 2.0 / dt + dt * k * dd + c;
    const double step = F / J;
    d -= step;
    if (std::abs(step) <= 1e-14 * std::max(1.0, std::abs(d))) break;
  }
  PendulumState next;
  next.omega = std::clamp(2.0 * d / dt - s.omega, -p.omega_max, p.omega_max);
  next.theta = wrap_angle(s.theta + d);
  return next;
}

class PendulumGrid {
 public:
  explicit PendulumGrid(const PendulumSpec& spec) : spec_(spec) {}

  std::size_t n_states() const { return spec_.theta_bins * spec_.omega_bins; }
  std::size_t index(std::size_t ti, std::size_t wi) const { return ti * spec_.omega_bins + wi; }
  double theta_step() const { return 2.0 * std::numbers::pi / double(spec_.theta_bins); }
  double omega_step() const { return 2.0 * spec_.omega_max / double(spec_.omega_bins - 1); }
  double theta_center(std::size_t ti) const { return wrap_angle(theta_step() * double(ti)); }
  double omega_center(std::size_t wi) const { return -spec_.omega_max + omega_step() * double(wi); }

  PendulumState center(std::size_t s) const {
    return {theta_center(s / spec_.omega_bins), omega_center(s % spec_.omega_bins)};
  }

  std::size_t rest_state() const { return index(0, spec_.omega_bins / 2); }

  // Stochastic linear interpolation onto the four surrounding bin centers.
  void snap(const PendulumState& x, std::vector<std::pair<std::size_t, double>>& out) const {
    out.clear();
    double tpos = x.theta / theta_step();
    if (tpos < 0.0) tpos += double(spec_.theta_bins);
    const double tfloor = std::floor(tpos);
    const double tw = tpos - tfloor;
    const std::size_t t0 = std::size_t(tfloor) % spec_.theta_bins;
    const std::size_t t1 = (t0 + 1) % spec_.theta_bins;
    const double wpos = std::clamp((x.omega + spec_.omega_max) / omega_step(), 0.0, double(spec_.omega_bins - 1));
    const std::size_t w0 = std::min(std::size_t(std::floor(wpos)), spec_.omega_bins - 2);
    const double ww = wpos - double(w0);
    const std::array<std::pair<std::size_t, double>, 4> parts{{{index(t0, w0), (1.0 - tw) * (1.0 - ww)},
                                                              {index(t0, w0 + 1), (1.0 - tw) * ww},
                                                              {index(t1, w0), tw * (1.0 - ww)},
                                                              {index(t1, w0 + 1), tw * ww}}};
    for (const auto& pr : parts)
      if (pr.second > 0.0) out.push_back(pr);
  }

  double reward(std::size_t s) const { return 0.5 * (1.0 + std::cos(center(s).theta - std::numbers::pi)); }

 private:
  PendulumSpec spec_;
};

inline double pendulum_torque(double magnitude, std::size_t action) {
  return action == 0 ? -magnitude : (action == 1 ? 0.0 : magnitude);
}

// `budget` clips the adversary torque to [-budget, budget].
inline void pendulum_outcomes(const PendulumSpec& spec, const PendulumGrid& grid, std::size_t s, std::size_t a1,
                              std::size_t a2, double budget, std::vector<Outcome>& out) {
  out.clear();
  const double nominal = pendulum_torque(spec.f_max, a2);
  const double adv = clip_force(std::span<const double>(&nominal, 1), budget)[0];
  const PendulumState next = integrate_pendulum(spec, grid.center(s), pendulum_torque(spec.torque, a1) + adv);
  thread_local std::vector<std::pair<std::size_t, double>> parts;
  grid.snap(next, parts);
  for (const auto& [idx, p] : parts) out.push_back({idx, p, grid.reward(idx)});
}

inline MarkovGame build_pendulum(const PendulumSpec& spec, double budget) {
  spec.validate();
  const PendulumGrid grid(spec);
  const std::size_t n = grid.n_states();
  std::vector<std::vector<Outcome>> rows(n * PendulumSpec::kProtagonistActions * PendulumSpec::kAdversaryActions);
  std::size_t r = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a1 = 0; a1 < PendulumSpec::kProtagonistActions; ++a1)
      for (std::size_t a2 = 0; a2 < PendulumSpec::kAdversaryActions; ++a2)
        pendulum_outcomes(spec, grid, s, a1, a2, budget, rows[r++]);
  std::vector<double> initial(n, 0.0);
  initial[grid.rest_state()] = 1.0;
  return MarkovGame(n, PendulumSpec::kProtagonistActions, PendulumSpec::kAdversaryActions, rows, spec.gamma,
                    std::move(initial), spec.horizon);
}

inline MarkovGame build_pendulum(const PendulumSpec& spec) { return build_pendulum(spec, spec.f_max); }

// ---------------------------------------------------------------------------
// Garnet

inline MarkovGame build_garnet(const GarnetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t rows_n = spec.n_states * spec.n_actions1 * spec.n_actions2;
  std::vector<std::vector<Outcome>> rows(rows_n);
  std::vector<std::size_t> states(spec.n_states);
  std::iota(states.begin(), states.end(), std::size_t{0});
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> reward(-1.0, 1.0);
  for (auto& row : rows) {
    // Partial Fisher-Yates for `branching` distinct successors.
    for (std::size_t i = 0; i < spec.branching; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, spec.n_states - 1);
      std::swap(states[i], states[pick(rng)]);
    }
    // Dirichlet(1, ..., 1) as normalized exponentials.
    std::vector<double> w(spec.branching);
    double total = 0.0;
    for (double& x : w) total += (x = expo(rng));
    for (std::size_t i = 0; i < spec.branching; ++i) row.push_back({states[i], w[i] / total, reward(rng)});
    // Normalize the stored probabilities to sum to 1 to the last bit that matters.
    double sum = 0.0;
    for (const Outcome& o : row) sum += o.prob;
    for (Outcome& o : row) o.prob /= sum;
  }
  std::vector<double> initial(spec.n_states, 1.0 / double(spec.n_states));
  return MarkovGame(spec.n_states, spec.n_actions1, spec.n_actions2, rows, spec.gamma, std::move(initial),
                    spec.horizon);
}

// ---------------------------------------------------------------------------
// perturb

namespace detail {

inline void check_multiplier(const std::string& name, double m) {
  if (!(m >= 0.0) || !std::isfinite(m)) throw ConfigError("perturb: multiplier for '" + name + "' must be non-negative");
}

}  // namespace detail

inline WindyGridSpec perturb(WindyGridSpec spec, const Multipliers& m) {
  for (const auto& [name, factor] : m) {
    detail::check_multiplier(name, factor);
    if (name == "move_success") spec.move_success *= factor;
    else if (name == "slip") spec.slip *= factor;
    else if (name == "wind_strength" || name == "wind") spec.wind_strength *= factor;
    else throw ConfigError("perturb: windy grid has no parameter '" + name + "'");
  }
  spec.validate();
  return spec;
}

inline PendulumSpec perturb(PendulumSpec spec, const Multipliers& m) {
  for (const auto& [name, factor] : m) {
    detail::check_multiplier(name, factor);
    if (name == "mass") spec.mass *= factor;
    else if (name == "length") spec.length *= factor;
    else if (name == "damping") spec.damping *= factor;
    else if (name == "gravity") spec.gravity *= factor;
    else if (name == "torque") spec.torque *= factor;
    else if (name == "f_max") spec.f_max *= factor;
    else throw ConfigError("perturb: pendulum has no parameter '" + name + "'");
  }
  spec.validate();
  return spec;
}

inline GarnetSpec perturb(GarnetSpec spec, const Multipliers& m) {
  if (!m.empty()) throw ConfigError("perturb: garnet game has no parameter '" + m.begin()->first + "'");
  return spec;
}

// ---------------------------------------------------------------------------
// Environments as simulators

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t n_states() const = 0;
  virtual std::size_t actions1() const = 0;
  virtual std::size_t actions2() const = 0;
  virtual double gamma() const = 0;
  virtual std::size_t horizon() const = 0;
  // Adversary action that exerts no force.
  virtual std::size_t null_action() const = 0;
  // Nominal adversary strength; force budgets are expressed in its units.
  virtual double f_max() const = 0;
  virtual std::size_t initial_state(Rng& rng) const = 0;
  virtual bool terminal(std::size_t s) const = 0;
  virtual void outcomes(std::size_t s, std::size_t a1, std::size_t a2, double budget,
                        std::vector<Outcome>& out) const = 0;
  virtual std::unique_ptr<Environment> perturbed(const Multipliers& m) const = 0;
  virtual nlohmann::json spec_json() const = 0;

  // Exact game at a fixed budget.
  MarkovGame game(double budget) const {
    std::vector<std::vector<Outcome>> rows(n_states() * actions1() * actions2());
    std::size_t r = 0;
    for (std::size_t s = 0; s < n_states(); ++s)
      for (std::size_t a1 = 0; a1 < actions1(); ++a1)
        for (std::size_t a2 = 0; a2 < actions2(); ++a2) outcomes(s, a1, a2, budget, rows[r++]);
    return MarkovGame(n_states(), actions1(), actions2(), rows, gamma(), initial_distribution(), horizon());
  }
  MarkovGame game() const { return game(f_max()); }

  virtual std::vector<double> initial_distribution() const = 0;

  struct Transition {
    std::size_t next;
    double reward;
  };

  Transition step(std::size_t s, std::size_t a1, std::size_t a2, double budget, Rng& rng) const {
    outcomes(s, a1, a2, budget, scratch_);
    const Outcome& o = sample_outcome(scratch_, rng);
    return {o.next, o.reward};
  }

 private:
  mutable std::vector<Outcome> scratch_;
};

class WindyGridEnv final : public Environment {
 public:
  explicit WindyGridEnv(WindyGridSpec spec) : spec_((spec.validate(), std::move(spec))), geo_(spec_) {}

  const WindyGridSpec& spec() const { return spec_; }
  std::string kind() const override { return "windy_grid"; }
  std::size_t n_states() const override { return std::size_t(spec_.width) * std::size_t(spec_.height); }
  std::size_t actions1() const override { return WindyGridSpec::kProtagonistActions; }
  std::size_t actions2() const override { return WindyGridSpec::kAdversaryActions; }
  double gamma() const override { return spec_.gamma; }
  std::size_t horizon() const override { return spec_.horizon; }
  std::size_t null_action() const override { return 0; }
  double f_max() const override { return 1.0; }
  std::size_t initial_state(Rng&) const override { return geo_.index(spec_.start); }
  std::vector<double> initial_distribution() const override {
    std::vector<double> v(n_states(), 0.0);
    v[geo_.index(spec_.start)] = 1.0;
    return v;
  }
  bool terminal(std::size_t s) const override { return geo_.terminal(geo_.cell(s)); }
  void outcomes(std::size_t s, std::size_t a1, std::size_t a2, double budget,
                std::vector<Outcome>& out) const override {
    const double unit = 1.0;
    const double scale = clip_force(std::span<const double>(&unit, 1), budget)[0];
    windy_grid_outcomes(spec_, geo_, s, a1, a2, scale, out);
  }
  std::unique_ptr<Environment> perturbed(const Multipliers& m) const override {
    return std::make_unique<WindyGridEnv>(perturb(spec_, m));
  }
  nlohmann::json spec_json() const override;

 private:
  WindyGridSpec spec_;
  detail::GridGeometry geo_;
};

class PendulumEnv final : public Environment {
 public:
  explicit PendulumEnv(PendulumSpec spec) : spec_((spec.validate(), std::move(spec))), grid_(spec_) {}

  const PendulumSpec& spec() const { return spec_; }
  const PendulumGrid& grid() const { return grid_; }
  std::string kind() const override { return "pendulum"; }
  std::size_t n_states() const override { return grid_.n_states(); }
  std::size_t actions1() const override { return PendulumSpec::kProtagonistActions; }
  std::size_t actions2() const override { return PendulumSpec::kAdversaryActions; }
  double gamma() const override { return spec_.gamma; }
  std::size_t horizon() const override { return spec_.horizon; }
  std::size_t null_action() const override { return 1; }
  double f_max() const override { return spec_.f_max; }
  std::size_t initial_state(Rng&) const override { return grid_.rest_state(); }
  std::vector<double> initial_distribution() const override {
    std::vector<double> v(n_states(), 0.0);
    v[grid_.rest_state()] = 1.0;
    return v;
  }
  bool terminal(std::size_t) const override { return false; }
  void outcomes(std::size_t s, std::size_t a1, std::size_t a2, double budget,
                std::vector<Outcome>& out) const override {
    pendulum_outcomes(spec_, grid_, s, a1, a2, budget, out);
  }
  std::unique_ptr<Environment> perturbed(const Multipliers& m) const override {
    return std::make_unique<PendulumEnv>(perturb(spec_, m));
  }
  nlohmann::json spec_json() const override;

 private:
  PendulumSpec spec_;
  PendulumGrid grid_;
};

// A fixed MarkovGame. Adversary action 0 is the null action; with budget b in
// [0, 1] the chosen adversary action takes effect with probability b and is
// replaced by the null action otherwise.
class GameEnv final : public Environment {
 public:
  explicit GameEnv(MarkovGame game, nlohmann::json spec = nlohmann::json::object())
      : game_(std::move(game)), spec_(std::move(spec)) {
    absorbing_.resize(game_.n_states());
    for (std::size_t s = 0; s < game_.n_states(); ++s) absorbing_[s] = game_.is_absorbing(s);
  }

  const MarkovGame& markov_game() const { return game_; }
  std::string kind() const override { return spec_.value("type", std::string("game")); }
  std::size_t n_states() const override { return game_.n_states(); }
  std::size_t actions1() const override { return game_.actions1(); }
  std::size_t actions2() const override { return game_.actions2(); }
  double gamma() const override { return game_.gamma(); }
  std::size_t horizon() const override { return game_.horizon(); }
  std::size_t null_action() const override { return 0; }
  double f_max() const override { return 1.0; }
  std::size_t initial_state(Rng& rng) const override { return sample_initial_state(game_, rng); }
  std::vector<double> initial_distribution() const override { return game_.initial(); }
  bool terminal(std::size_t s) const override { return absorbing_[s]; }
  void outcomes(std::size_t s, std::size_t a1, std::size_t a2, double budget,
                std::vector<Outcome>& out) const override {
    out.clear();
    const double b = std::clamp(budget, 0.0, 1.0);
    const auto chosen = game_.outcomes(s, a1, a2);
    if (a2 == 0 || b >= 1.0) {
      out.assign(chosen.begin(), chosen.end());
      return;
    }
    for (const Outcome& o : chosen)
      if (b > 0.0) out.push_back({o.next, o.prob * b, o.reward});
    for (const Outcome& o : game_.outcomes(s, a1, 0)) {
      // Merge with an existing successor when rewards agree.
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const Outcome& x) { return x.next == o.next && x.reward == o.reward; });
      if (it != out.end()) it->prob += o.prob * (1.0 - b);
      else out.push_back({o.next, o.prob * (1.0 - b), o.reward});
    }
  }
  std::unique_ptr<Environment> perturbed(const Multipliers& m) const override {
    if (!m.empty()) throw ConfigError("perturb: fixed game has no parameter '" + m.begin()->first + "'");
    return std::make_unique<GameEnv>(game_, spec_);
  }
  nlohmann::json spec_json() const override { return spec_; }

 private:
  MarkovGame game_;
  nlohmann::json spec_;
  std::vector<bool> absorbing_;
};

// ---------------------------------------------------------------------------
// JSON specs: {"type": "windy_grid" | "pendulum" | "garnet" | "game", ...fields}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(what + ": unknown field '" + it.key() + "'");
}

inline Cell cell_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("cell must be [x, y]");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline nlohmann::json cell_to_json(const Cell& c) { return nlohmann::json::array({c.x, c.y}); }

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const WindyGridSpec& s) {
  nlohmann::json pits = nlohmann::json::array(), walls = nlohmann::json::array();
  for (const Cell& c : s.pits) pits.push_back(detail::cell_to_json(c));
  for (const Cell& c : s.walls) walls.push_back(detail::cell_to_json(c));
  return {{"type", "windy_grid"},
          {"width", s.width},
          {"height", s.height},
          {"start", detail::cell_to_json(s.start)},
          {"goal", detail::cell_to_json(s.goal)},
          {"wind_zone", {s.wind_zone.x0, s.wind_zone.y0, s.wind_zone.x1, s.wind_zone.y1}},
          {"wind_strength", s.wind_strength},
          {"move_success", s.move_success},
          {"slip", s.slip},
          {"step_reward", s.step_reward},
          {"goal_reward", s.goal_reward},
          {"pits", pits},
          {"pit_reward", s.pit_reward},
          {"walls", walls},
          {"gamma", s.gamma},
          {"horizon", s.horizon}};
}

inline nlohmann::json to_json(const PendulumSpec& s) {
  return {{"type", "pendulum"},     {"theta_bins", s.theta_bins}, {"omega_bins", s.omega_bins},
          {"omega_max", s.omega_max}, {"torque", s.torque},       {"f_max", s.f_max},
          {"mass", s.mass},           {"length", s.length},       {"damping", s.damping},
          {"gravity", s.gravity},     {"dt", s.dt},               {"gamma", s.gamma},
          {"horizon", s.horizon}};
}

inline nlohmann::json to_json(const GarnetSpec& s) {
  return {{"type", "garnet"},           {"n_states", s.n_states}, {"n_actions1", s.n_actions1},
          {"n_actions2", s.n_actions2}, {"branching", s.branching}, {"seed", s.seed},
          {"gamma", s.gamma},           {"horizon", s.horizon}};
}

inline nlohmann::json WindyGridEnv::spec_json() const { return to_json(spec_); }
inline nlohmann::json PendulumEnv::spec_json() const { return to_json(spec_); }

inline WindyGridSpec windy_grid_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"type", "width", "height", "start", "goal", "wind_zone", "wind_strength", "move_success",
                          "slip", "step_reward", "goal_reward", "pits", "pit_reward", "walls", "gamma", "horizon"},
                         "windy_grid spec");
  WindyGridSpec s;
  try {
    detail::read_field(j, "width", s.width);
    detail::read_field(j, "height", s.height);
    if (j.contains("start")) s.start = detail::cell_from_json(j["start"]);
    if (j.contains("goal")) s.goal = detail::cell_from_json(j["goal"]);
    if (j.contains("wind_zone")) {
      const auto& z = j["wind_zone"];
      if (!z.is_array() || z.size() != 4) throw ConfigError("windy_grid spec: wind_zone must be [x0, y0, x1, y1]");
      s.wind_zone = {z[0].get<int>(), z[1].get<int>(), z[2].get<int>(), z[3].get<int>()};
    }
    detail::read_field(j, "wind_strength", s.wind_strength);
    detail::read_field(j, "move_success", s.move_success);
    detail::read_field(j, "slip", s.slip);
    detail::read_field(j, "step_reward", s.step_reward);
    detail::read_field(j, "goal_reward", s.goal_reward);
    detail::read_field(j, "pit_reward", s.pit_reward);
    if (j.contains("pits")) {
      s.pits.clear();
      for (const auto& c : j["pits"]) s.pits.push_back(detail::cell_from_json(c));
    }
    if (j.contains("walls")) {
      s.walls.clear();
      for (const auto& c : j["walls"]) s.walls.push_back(detail::cell_from_json(c));
    }
    detail::read_field(j, "gamma", s.gamma);
    detail::read_field(j, "horizon", s.horizon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("windy_grid spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline PendulumSpec pendulum_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"type", "theta_bins", "omega_bins", "omega_max", "torque", "f_max", "mass", "length",
                          "damping", "gravity", "dt", "gamma", "horizon"},
                         "pendulum spec");
  PendulumSpec s;
  try {
    detail::read_field(j, "theta_bins", s.theta_bins);
    detail::read_field(j, "omega_bins", s.omega_bins);
    detail::read_field(j, "omega_max", s.omega_max);
    detail::read_field(j, "torque", s.torque);
    detail::read_field(j, "f_max", s.f_max);
    detail::read_field(j, "mass", s.mass);
    detail::read_field(j, "length", s.length);
    detail::read_field(j, "damping", s.damping);
    detail::read_field(j, "gravity", s.gravity);
    detail::read_field(j, "dt", s.dt);
    detail::read_field(j, "gamma", s.gamma);
    detail::read_field(j, "horizon", s.horizon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pendulum spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline GarnetSpec garnet_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"type", "n_states", "n_actions1", "n_actions2", "branching", "seed", "gamma", "horizon"},
                         "garnet spec");
  GarnetSpec s;
  try {
    detail::read_field(j, "n_states", s.n_states);
    detail::read_field(j, "n_actions1", s.n_actions1);
    detail::read_field(j, "n_actions2", s.n_actions2);
    detail::read_field(j, "branching", s.branching);
    detail::read_field(j, "seed", s.seed);
    detail::read_field(j, "gamma", s.gamma);
    detail::read_field(j, "horizon", s.horizon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("garnet spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline std::unique_ptr<Environment> make_environment(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type")) throw ConfigError("environment spec needs a \"type\" field");
  const std::string type = j.at("type").get<std::string>();
  if (type == "windy_grid") return std::make_unique<WindyGridEnv>(windy_grid_from_json(j));
  if (type == "pendulum") return std::make_unique<PendulumEnv>(pendulum_from_json(j));
  if (type == "garnet") {
    const GarnetSpec s = garnet_from_json(j);
    return std::make_unique<GameEnv>(build_garnet(s), to_json(s));
  }
  if (type == "game") {
    if (!j.contains("game")) throw ConfigError("game environment needs a \"game\" field");
    return std::make_unique<GameEnv>(game_from_json(j.at("game")), nlohmann::json{{"type", "game"}});
  }
  throw ConfigError("unknown environment type '" + type + "'");
}

inline nlohmann::json to_json(const ParamSweep& p) {
  return {{"axis1", {{"name", p.axis1.name}, {"multipliers", p.axis1.multipliers}}},
          {"axis2", {{"name", p.axis2.name}, {"multipliers", p.axis2.multipliers}}}};
}

inline ParamSweep sweep_from_json(const nlohmann::json& j) {
  ParamSweep p;
  try {
    p.axis1 = {j.at("axis1").at("name").get<std::string>(), j.at("axis1").at("multipliers").get<std::vector<double>>()};
    p.axis2 = {j.at("axis2").at("name").get<std::string>(), j.at("axis2").at("multipliers").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace qarl
