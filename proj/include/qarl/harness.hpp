#pragma once

// Training and evaluation orchestration: QARL and its ablations,
// Force-Curriculum, RARL, CAT with a linear budget, and single-agent SAC,
// plus the two evaluation protocols (trained adversary, robustness grid).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/agents.hpp"
#include "qarl/curriculum.hpp"
#include "qarl/envs.hpp"
#include "qarl/errors.hpp"
#include "qarl/game.hpp"
#include "qarl/gamma.hpp"
#include "qarl/math.hpp"

namespace qarl {

enum class Algorithm { qarl, force_curriculum, rarl, sac, cat_linear, qarl_point, qarl_linear, qarl_reduced };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::qarl: return "qarl";
    case Algorithm::force_curriculum: return "force_curriculum";
    case Algorithm::rarl: return "rarl";
    case Algorithm::sac: return "sac";
    case Algorithm::cat_linear: return "cat_linear";
    case Algorithm::qarl_point: return "qarl_point";
    case Algorithm::qarl_linear: return "qarl_linear";
    case Algorithm::qarl_reduced: return "qarl_reduced";
  }
  return "qarl";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  for (Algorithm a : {Algorithm::qarl, Algorithm::force_curriculum, Algorithm::rarl, Algorithm::sac,
                      Algorithm::cat_linear, Algorithm::qarl_point, Algorithm::qarl_linear, Algorithm::qarl_reduced})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown algorithm '" + s + "'");
}

// Algorithms whose adversary temperature follows the rationality curriculum.
inline bool temperature_curriculum(Algorithm a) {
  return a == Algorithm::qarl || a == Algorithm::qarl_point || a == Algorithm::qarl_linear ||
         a == Algorithm::qarl_reduced;
}

struct AgentConfig {
  double learn_rate = 0.1;
  double min_learn_rate = 0.0;
  std::size_t batch_size = 32;
  std::size_t warmup = 5000;
  std::size_t replay_capacity = 1000000;
  std::size_t update_interval = 1;
  std::size_t bins = 8;
  double bin_sharing = 0.5;  // shared fraction of each update across bins
  double initial_beta = 5e-3;
  double beta_learn_rate = 3e-4;
  double max_beta = 1.0;  // also caps the auto-tuned adversary temperature
  std::optional<double> target_entropy;  // protagonist; default 0.5 ln|A1|
  double initial_alpha = 5e-3;           // adversary, when auto-tuned
  double alpha_learn_rate = 3e-4;
  std::optional<double> adversary_target_entropy;  // default 0.5 ln|A2|
  double rational_temperature = 1e-4;
  bool greedy_adversary = false;
};

// Units of every reported return and of the curriculum's performance
// estimate: the plain sum of rewards over the episode, or the discounted sum.
enum class ReturnMetric { episode, discounted };

inline const char* to_string(ReturnMetric m) { return m == ReturnMetric::episode ? "episode" : "discounted"; }

inline ReturnMetric return_metric_from_string(const std::string& s) {
  if (s == "episode") return ReturnMetric::episode;
  if (s == "discounted") return ReturnMetric::discounted;
  throw ConfigError("unknown return_metric '" + s + "' (expected episode or discounted)");
}

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::qarl;
  nlohmann::json env = {{"type", "windy_grid"}};
  std::size_t iterations = 200;
  std::size_t episodes = 5;       // per agent per iteration
  std::size_t eval_rollouts = 10;  // per iteration and for final evaluation
  std::optional<std::size_t> samples;  // N; defaults to `episodes` (1 for qarl_reduced)
  std::size_t mc_rollouts = 30;        // M
  std::optional<double> xi;            // default per environment
  double epsilon = 0.5;
  std::optional<GammaParams> initial;  // default per mode
  std::optional<GammaParams> target;
  CurriculumOptions curriculum;
  std::vector<std::uint64_t> seeds{0};
  AgentConfig agent;
  std::optional<std::size_t> eval_adversary_iterations;  // default iterations / 2
  std::optional<ParamSweep> sweep;
  ReturnMetric return_metric = ReturnMetric::episode;

  std::size_t n_samples() const {
    if (samples) return *samples;
    return algorithm == Algorithm::qarl_reduced ? 1 : episodes;
  }

  std::size_t adversary_iterations() const {
    return eval_adversary_iterations ? *eval_adversary_iterations : std::max<std::size_t>(1, iterations / 2);
  }

  void validate() const {
    if (iterations < 1) throw ConfigError("config.iterations must be at least 1");
    if (episodes < 1) throw ConfigError("config.episodes must be at least 1");
    if (eval_rollouts < 1) throw ConfigError("config.eval_rollouts must be at least 1");
    if (n_samples() < 1) throw ConfigError("config.samples must be at least 1");
    if (seeds.empty()) throw ConfigError("config.seeds must not be empty");
    if (!(epsilon > 0.0)) throw ConfigError("config.epsilon must be positive");
    if (agent.batch_size < 1) throw ConfigError("config.agent.batch_size must be at least 1");
    if (agent.update_interval < 1) throw ConfigError("config.agent.update_interval must be at least 1");
    if (agent.bins < 1) throw ConfigError("config.agent.bins must be at least 1");
    if (!(agent.bin_sharing >= 0.0 && agent.bin_sharing <= 1.0))
      throw ConfigError("config.agent.bin_sharing must lie in [0, 1]");
    if (!(agent.learn_rate > 0.0 && agent.learn_rate <= 1.0)) throw ConfigError("config.agent.learn_rate must lie in (0, 1]");
    if (!(agent.rational_temperature > 0.0)) throw ConfigError("config.agent.rational_temperature must be positive");
    if (!(agent.initial_beta > 0.0) || !(agent.initial_alpha > 0.0))
      throw ConfigError("config.agent initial temperatures must be positive");
    if (!(agent.max_beta >= agent.initial_beta) || !(agent.max_beta >= agent.initial_alpha))
      throw ConfigError("config.agent.max_beta must be at least the initial temperatures");
    const bool distributional = algorithm == Algorithm::qarl || algorithm == Algorithm::qarl_reduced ||
                                algorithm == Algorithm::force_curriculum;
    if (distributional && mc_rollouts < curriculum.min_samples)
      throw ConfigError("config.mc_rollouts must be at least config.curriculum.min_samples");
    if (!(curriculum.max_shape > 0.0)) throw ConfigError("config.curriculum.max_shape must be positive");
    for (const auto& g : {initial, target})
      if (g && !(g->shape <= curriculum.max_shape))
        throw ConfigError("config.curriculum.max_shape must be at least the initial and target shapes");
    if (sweep) sweep->validate();
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

inline GammaParams gamma_field(const nlohmann::json& j) { return gamma_from_json(j); }

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"algorithm", "env", "iterations", "episodes", "eval_rollouts", "samples", "mc_rollouts", "xi",
                          "epsilon", "initial", "target", "curriculum", "seeds", "agent", "eval_adversary_iterations",
                          "sweep", "return_metric"},
                         "config");
  ExperimentConfig c;
  try {
    if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
    if (j.contains("env")) c.env = j["env"];
    detail::read_field(j, "iterations", c.iterations);
    detail::read_field(j, "episodes", c.episodes);
    detail::read_field(j, "eval_rollouts", c.eval_rollouts);
    if (j.contains("samples")) c.samples = j["samples"].get<std::size_t>();
    detail::read_field(j, "mc_rollouts", c.mc_rollouts);
    if (j.contains("xi")) c.xi = j["xi"].get<double>();
    detail::read_field(j, "epsilon", c.epsilon);
    if (j.contains("initial")) c.initial = detail::gamma_field(j["initial"]);
    if (j.contains("target")) c.target = detail::gamma_field(j["target"]);
    if (j.contains("curriculum")) {
      const auto& cj = j["curriculum"];
      detail::reject_unknown(cj,
                             {"dual_step", "primal_steps", "dual_rounds", "initial_primal_step", "min_samples",
                              "fix_rate", "point_step", "max_shape"},
                             "config.curriculum");
      detail::read_field(cj, "dual_step", c.curriculum.dual_step);
      detail::read_field(cj, "primal_steps", c.curriculum.primal_steps);
      detail::read_field(cj, "dual_rounds", c.curriculum.dual_rounds);
      detail::read_field(cj, "initial_primal_step", c.curriculum.initial_primal_step);
      detail::read_field(cj, "min_samples", c.curriculum.min_samples);
      detail::read_field(cj, "fix_rate", c.curriculum.fix_rate);
      detail::read_field(cj, "point_step", c.curriculum.point_step);
      detail::read_field(cj, "max_shape", c.curriculum.max_shape);
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("agent")) {
      const auto& a = j["agent"];
      detail::reject_unknown(a,
                             {"learn_rate", "min_learn_rate", "batch_size", "warmup", "replay_capacity",
                              "update_interval", "bins", "bin_sharing", "initial_beta", "beta_learn_rate", "max_beta", "target_entropy",
                              "initial_alpha", "alpha_learn_rate", "adversary_target_entropy",
                              "rational_temperature", "greedy_adversary"},
                             "config.agent");
      detail::read_field(a, "learn_rate", c.agent.learn_rate);
      detail::read_field(a, "min_learn_rate", c.agent.min_learn_rate);
      detail::read_field(a, "batch_size", c.agent.batch_size);
      detail::read_field(a, "warmup", c.agent.warmup);
      detail::read_field(a, "replay_capacity", c.agent.replay_capacity);
      detail::read_field(a, "update_interval", c.agent.update_interval);
      detail::read_field(a, "bins", c.agent.bins);
      detail::read_field(a, "bin_sharing", c.agent.bin_sharing);
      detail::read_field(a, "initial_beta", c.agent.initial_beta);
      detail::read_field(a, "beta_learn_rate", c.agent.beta_learn_rate);
      detail::read_field(a, "max_beta", c.agent.max_beta);
      if (a.contains("target_entropy")) c.agent.target_entropy = a["target_entropy"].get<double>();
      detail::read_field(a, "initial_alpha", c.agent.initial_alpha);
      detail::read_field(a, "alpha_learn_rate", c.agent.alpha_learn_rate);
      if (a.contains("adversary_target_entropy"))
        c.agent.adversary_target_entropy = a["adversary_target_entropy"].get<double>();
      detail::read_field(a, "rational_temperature", c.agent.rational_temperature);
      detail::read_field(a, "greedy_adversary", c.agent.greedy_adversary);
    }
    if (j.contains("eval_adversary_iterations"))
      c.eval_adversary_iterations = j["eval_adversary_iterations"].get<std::size_t>();
    if (j.contains("sweep")) c.sweep = sweep_from_json(j["sweep"]);
    if (j.contains("return_metric")) c.return_metric = return_metric_from_string(j["return_metric"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json agent = {{"learn_rate", c.agent.learn_rate},
                          {"min_learn_rate", c.agent.min_learn_rate},
                          {"batch_size", c.agent.batch_size},
                          {"warmup", c.agent.warmup},
                          {"replay_capacity", c.agent.replay_capacity},
                          {"update_interval", c.agent.update_interval},
                          {"bins", c.agent.bins},
                          {"bin_sharing", c.agent.bin_sharing},
                          {"initial_beta", c.agent.initial_beta},
                          {"beta_learn_rate", c.agent.beta_learn_rate},
                          {"max_beta", c.agent.max_beta},
                          {"initial_alpha", c.agent.initial_alpha},
                          {"alpha_learn_rate", c.agent.alpha_learn_rate},
                          {"rational_temperature", c.agent.rational_temperature},
                          {"greedy_adversary", c.agent.greedy_adversary}};
  if (c.agent.target_entropy) agent["target_entropy"] = *c.agent.target_entropy;
  if (c.agent.adversary_target_entropy) agent["adversary_target_entropy"] = *c.agent.adversary_target_entropy;
  nlohmann::json j = {{"algorithm", to_string(c.algorithm)},
                      {"env", c.env},
                      {"iterations", c.iterations},
                      {"episodes", c.episodes},
                      {"eval_rollouts", c.eval_rollouts},
                      {"samples", c.n_samples()},
                      {"mc_rollouts", c.mc_rollouts},
                      {"epsilon", c.epsilon},
                      {"curriculum",
                       {{"dual_step", c.curriculum.dual_step},
                        {"primal_steps", c.curriculum.primal_steps},
                        {"dual_rounds", c.curriculum.dual_rounds},
                        {"initial_primal_step", c.curriculum.initial_primal_step},
                        {"min_samples", c.curriculum.min_samples},
                        {"fix_rate", c.curriculum.fix_rate},
                        {"point_step", c.curriculum.point_step},
                        {"max_shape", c.curriculum.max_shape}}},
                      {"seeds", c.seeds},
                      {"agent", agent},
                      {"eval_adversary_iterations", c.adversary_iterations()},
                      {"return_metric", to_string(c.return_metric)}};
  if (c.xi) j["xi"] = *c.xi;
  if (c.initial) j["initial"] = to_json(*c.initial);
  if (c.target) j["target"] = to_json(*c.target);
  if (c.sweep) j["sweep"] = to_json(*c.sweep);
  return j;
}

// Per-environment performance threshold, in the units of the return metric.
inline double default_xi(const Environment& env) {
  if (env.kind() == "windy_grid") return 0.3;
  if (env.kind() == "pendulum") return 40.0;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Records

struct IterationRecord {
  std::size_t iteration = 0;
  double mean_return = 0.0;
  std::vector<double> sampled;  // adversary temperatures or force budgets
  double curriculum_shape = 0.0;
  double curriculum_rate = 0.0;
  double curriculum_mean = 0.0;
  double lambda = 0.0;
  double eta = 0.0;
  double estimate = 0.0;
  std::string status = "none";
  double beta = 0.0;
  double adversary_temperature = 0.0;  // mean over the adversary phase
  double adversary_entropy = 0.0;      // mean policy entropy over adversary-phase steps
  double budget = 0.0;                 // mean force budget over the iteration

  bool operator==(const IterationRecord&) const = default;
};

struct Checkpoint {
  std::string algorithm;
  SoftQTable table;
  double temperature = 1.0;   // beta of the protagonist at the end of training
  double conditioning = 1.0;  // conditioning value used at evaluation time
  nlohmann::json env;
};

struct RunRecord {
  std::string algorithm;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<IterationRecord> iterations;
  Checkpoint protagonist;
  Checkpoint adversary;
  std::size_t clamped_lookups = 0;
  std::vector<std::string> warnings;
  nlohmann::json final_curriculum;
};

inline nlohmann::json to_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"mean_return", r.mean_return},
          {"sampled", r.sampled},
          {"curriculum_shape", r.curriculum_shape},
          {"curriculum_rate", r.curriculum_rate},
          {"curriculum_mean", r.curriculum_mean},
          {"lambda", r.lambda},
          {"eta", r.eta},
          {"estimate", r.estimate},
          {"status", r.status},
          {"beta", r.beta},
          {"adversary_temperature", r.adversary_temperature},
          {"adversary_entropy", r.adversary_entropy},
          {"budget", r.budget}};
}

inline nlohmann::json to_json(const Checkpoint& c) {
  return {{"algorithm", c.algorithm},
          {"temperature", c.temperature},
          {"conditioning", c.conditioning},
          {"env", c.env},
          {"table", c.table.to_json()}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    Checkpoint c;
    c.algorithm = j.at("algorithm").get<std::string>();
    c.temperature = j.at("temperature").get<double>();
    c.conditioning = j.at("conditioning").get<double>();
    c.env = j.at("env");
    c.table = SoftQTable::from_json(j.at("table"));
    if (!(c.temperature > 0.0) || !(c.conditioning > 0.0)) throw ConfigError("checkpoint: temperatures must be positive");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

inline nlohmann::json to_json(const RunRecord& r, bool with_checkpoints = true) {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& it : r.iterations) its.push_back(to_json(it));
  nlohmann::json j = {{"algorithm", r.algorithm},       {"seed", r.seed},
                      {"config", r.config},             {"iterations", its},
                      {"clamped_lookups", r.clamped_lookups}, {"warnings", r.warnings},
                      {"final_curriculum", r.final_curriculum}};
  if (with_checkpoints) {
    j["protagonist"] = to_json(r.protagonist);
    j["adversary"] = to_json(r.adversary);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Episodes

struct Actor {
  SoftQTable* table = nullptr;  // null: always plays `fixed_action`
  double temperature = 1.0;
  bool greedy = false;
  std::size_t fixed_action = 0;
};

struct EpisodeSetting {
  double conditioning = 1.0;
  double budget = 0.0;
  std::optional<std::size_t> start;  // initial state; sampled from the environment when absent
};

struct EpisodeStats {
  double episode_return = 0.0;
  double discounted_return = 0.0;
  std::size_t steps = 0;
  double adversary_entropy = 0.0;  // summed over steps

  double score(ReturnMetric m) const { return m == ReturnMetric::episode ? episode_return : discounted_return; }
};

namespace detail {

// Picks an action and, when requested, reports the entropy of the policy used.
inline std::size_t act(Actor& actor, std::size_t s, double conditioning, Rng& rng, double* entropy_out) {
  if (!actor.table) {
    if (entropy_out) *entropy_out = 0.0;
    return actor.fixed_action;
  }
  const std::size_t bin = actor.table->lookup(conditioning);
  const auto row = actor.table->row(bin, s);
  if (actor.greedy) {
    if (entropy_out) *entropy_out = 0.0;
    return argmax(row);
  }
  double buf[16];
  std::vector<double> heap;
  std::span<double> probs;
  if (row.size() <= 16) {
    probs = std::span<double>(buf, row.size());
  } else {
    heap.resize(row.size());
    probs = heap;
  }
  softmax_into(row, actor.temperature, probs);
  if (entropy_out) *entropy_out = entropy(probs);
  return sample_categorical(probs, rng);
}

}  // namespace detail

// Runs one episode up to the horizon or an absorbing state. `on_step` is
// called with each Step and whether its successor is terminal.
template <class OnStep>
EpisodeStats run_episode(const Environment& env, Actor& protagonist, Actor& adversary, const EpisodeSetting& setting,
                         Rng& rng, OnStep&& on_step) {
  EpisodeStats st;
  std::size_t s = setting.start ? *setting.start : env.initial_state(rng);
  double discount = 1.0;
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    if (env.terminal(s)) break;
    const std::size_t a1 = detail::act(protagonist, s, setting.conditioning, rng, nullptr);
    double h = 0.0;
    const std::size_t a2 = detail::act(adversary, s, setting.conditioning, rng, &h);
    const auto tr = env.step(s, a1, a2, setting.budget, rng);
    const bool done = env.terminal(tr.next);
    on_step(Step{s, a1, a2, tr.reward, tr.next}, done);
    st.episode_return += tr.reward;
    st.discounted_return += discount * tr.reward;
    st.adversary_entropy += h;
    discount *= env.gamma();
    ++st.steps;
    s = tr.next;
  }
  return st;
}

inline EpisodeStats run_episode(const Environment& env, Actor& protagonist, Actor& adversary,
                                const EpisodeSetting& setting, Rng& rng) {
  return run_episode(env, protagonist, adversary, setting, rng, [](const Step&, bool) {});
}

// ---------------------------------------------------------------------------
// Trainer

struct Learner {
  SoftQTable table;
  ReplayBuffer buffer;
  EntropyTuner tuner;
  bool tune = false;
  std::size_t steps_since_update = 0;
};

class Trainer {
 public:
  Trainer(ExperimentConfig config, std::shared_ptr<const Environment> env, std::uint64_t seed)
      : config_(std::move(config)), env_(std::move(env)), seed_(seed), rng_(seed) {
    config_.validate();
    const Algorithm alg = config_.algorithm;
    const AgentConfig& ag = config_.agent;
    const double f_max = env_->f_max();
    xi_ = config_.xi ? *config_.xi : default_xi(*env_);

    TemperatureBins bins = TemperatureBins::single(1.0);
    if (temperature_curriculum(alg) || alg == Algorithm::force_curriculum) {
      CurriculumState cs;
      if (alg == Algorithm::force_curriculum) {
        if (!(f_max > 0.0)) throw ConfigError("force_curriculum needs an environment with a positive f_max");
        cs.mode = CurriculumMode::force;
        cs.current = config_.initial ? *config_.initial : GammaParams(50.0, 1000.0 / f_max);
        cs.target = config_.target ? *config_.target : GammaParams(100.0, 100.0 / f_max);
        if (ag.bins > 1 && !(2.0 * cs.target.mean() > 0.1 * cs.current.mean()))
          throw ConfigError("force_curriculum: target mean must exceed the initial mean");
        bins = ag.bins == 1 ? TemperatureBins::single(cs.current.mean())
                            : TemperatureBins::log_spaced(0.1 * cs.current.mean(), 2.0 * cs.target.mean(), ag.bins);
      } else {
        cs.mode = CurriculumMode::temperature;
        cs.current = config_.initial ? *config_.initial : GammaParams(50.0, 1000.0);
        cs.target = config_.target ? *config_.target : GammaParams(1.0, 1000.0);
        const double m0 = cs.current.mean();
        bins = ag.bins == 1 ? TemperatureBins::single(m0) : TemperatureBins::log_spaced(1e-4 * m0, m0, ag.bins);
      }
      cs.xi = xi_;
      cs.epsilon = config_.epsilon;
      cs.options = config_.curriculum;
      if (alg == Algorithm::qarl_point) {
        cs.variant = CurriculumVariant::point;
        cs.point_value = cs.current.mean();
        point_initial_ = cs.point_value;
        cs.current = PointCurriculum::collapsed(cs.point_value);
      } else if (alg == Algorithm::qarl_linear) {
        cs.variant = CurriculumVariant::linear;
      } else if (alg == Algorithm::qarl_reduced) {
        cs.variant = CurriculumVariant::reduced;
      }
      initial_ = cs.current;
      curriculum_ = cs;
    }

    prot_.table = SoftQTable(bins, env_->n_states(), env_->actions1(), Owner::protagonist, ag.learn_rate,
                             ag.min_learn_rate, ag.bin_sharing);
    adv_.table = SoftQTable(bins, env_->n_states(), env_->actions2(), Owner::adversary, ag.learn_rate,
                            ag.min_learn_rate, ag.bin_sharing);
    prot_.buffer = ReplayBuffer(ag.replay_capacity);
    adv_.buffer = ReplayBuffer(ag.replay_capacity);
    prot_.tuner = EntropyTuner(ag.initial_beta,
                               ag.target_entropy.value_or(0.5 * std::log(double(env_->actions1()))),
                               ag.beta_learn_rate, ag.max_beta);
    prot_.tune = true;
    if (alg == Algorithm::force_curriculum) {
      adv_.tuner = EntropyTuner(ag.initial_alpha,
                                ag.adversary_target_entropy.value_or(0.5 * std::log(double(env_->actions2()))),
                                ag.alpha_learn_rate, ag.max_beta);
      adv_.tune = true;
    }
    record_.algorithm = to_string(alg);
    record_.seed = seed;
    record_.config = to_json(config_);
  }

  const ExperimentConfig& config() const { return config_; }
  const Environment& env() const { return *env_; }
  const SoftQTable& protagonist() const { return prot_.table; }
  const SoftQTable& adversary() const { return adv_.table; }
  const ReplayBuffer& protagonist_buffer() const { return prot_.buffer; }
  const ReplayBuffer& adversary_buffer() const { return adv_.buffer; }
  double beta() const { return prot_.tuner.beta(); }
  double xi() const { return xi_; }
  std::size_t iteration() const { return iter_; }
  const std::optional<CurriculumState>& curriculum() const { return curriculum_; }
  const RunRecord& record() const { return record_; }

  // Curriculum values (temperatures or budgets) for the next iteration.
  std::vector<double> sample_values() {
    const Algorithm alg = config_.algorithm;
    const std::size_t n = config_.n_samples();
    std::vector<double> v(n, 1.0);
    if (alg == Algorithm::qarl || alg == Algorithm::qarl_reduced || alg == Algorithm::force_curriculum) {
      for (double& x : v) x = gamma_sample(curriculum_->current, rng_);
    } else if (alg == Algorithm::qarl_point) {
      std::fill(v.begin(), v.end(), curriculum_->point_value);
    } else if (alg == Algorithm::qarl_linear) {
      const double f = linear_schedule(iter_, config_.iterations);
      std::fill(v.begin(), v.end(), (1.0 - f) * initial_.mean() + f * curriculum_->target.mean());
    } else if (alg == Algorithm::cat_linear) {
      std::fill(v.begin(), v.end(), linear_schedule(iter_, config_.iterations) * env_->f_max());
    }
    return v;
  }

  EpisodeSetting setting(double value) const {
    switch (config_.algorithm) {
      case Algorithm::force_curriculum: return {value, value, std::nullopt};
      case Algorithm::cat_linear: return {1.0, value, std::nullopt};
      case Algorithm::rarl: return {1.0, env_->f_max(), std::nullopt};
      case Algorithm::sac: return {1.0, 0.0, std::nullopt};
      default: return {value, env_->f_max(), std::nullopt};
    }
  }

  // Adversary acting temperature for an episode at curriculum value `value`.
  double adversary_temperature(double value) const {
    if (temperature_curriculum(config_.algorithm)) return value;
    if (config_.algorithm == Algorithm::force_curriculum) return adv_.tuner.beta();
    return config_.agent.rational_temperature;
  }

  Actor protagonist_actor() { return {&prot_.table, prot_.tuner.beta(), false, 0}; }

  Actor adversary_actor(double value) {
    if (config_.algorithm == Algorithm::sac) return {nullptr, 1.0, false, env_->null_action()};
    const bool greedy = config_.agent.greedy_adversary &&
                        (config_.algorithm == Algorithm::rarl || config_.algorithm == Algorithm::cat_linear);
    return {&adv_.table, adversary_temperature(value), greedy, 0};
  }

  struct PhaseStats {
    double adversary_entropy = 0.0;
    double adversary_temperature = 0.0;
    std::size_t steps = 0;
  };

  // Collection and updates for the adversary; the protagonist is frozen.
  PhaseStats adversary_phase(const std::vector<double>& values) {
    PhaseStats ps;
    if (config_.algorithm == Algorithm::sac) return ps;
    for (std::size_t e = 0; e < config_.episodes; ++e) {
      const double value = values[e % values.size()];
      const EpisodeSetting set = setting(value);
      Actor p = protagonist_actor();
      Actor a = adversary_actor(value);
      ps.adversary_temperature += a.temperature;
      const auto st = run_episode(*env_, p, a, set, rng_, [&](const Step& step, bool done) {
        adv_.buffer.push(split_transition(step, set.conditioning, done).second);
        maybe_update(adv_, entropy_temperature_for_adversary());
      });
      ps.adversary_entropy += st.adversary_entropy;
      ps.steps += st.steps;
    }
    ps.adversary_temperature /= double(config_.episodes);
    return ps;
  }

  // Collection and updates for the protagonist; the adversary is frozen.
  void protagonist_phase(const std::vector<double>& values) {
    for (std::size_t e = 0; e < config_.episodes; ++e) {
      const double value = values[e % values.size()];
      const EpisodeSetting set = setting(value);
      Actor p = protagonist_actor();
      Actor a = adversary_actor(value);
      run_episode(*env_, p, a, set, rng_, [&](const Step& step, bool done) {
        prot_.buffer.push(split_transition(step, set.conditioning, done).first);
        maybe_update(prot_, std::nullopt);
        p.temperature = prot_.tuner.beta();
      });
    }
  }

  // Returns of `count` episodes with the current agents.
  std::vector<double> evaluate(const std::vector<double>& values, std::size_t count) {
    std::vector<double> returns;
    for (std::size_t e = 0; e < count; ++e) {
      const double value = values[e % values.size()];
      Actor p = protagonist_actor();
      Actor a = adversary_actor(value);
      returns.push_back(run_episode(*env_, p, a, setting(value), rng_).score(config_.return_metric));
    }
    return returns;
  }

  IterationRecord iterate() {
    IterationRecord rec;
    rec.iteration = iter_;
    const std::vector<double> values = sample_values();
    rec.sampled = values;
    const PhaseStats ps = adversary_phase(values);
    protagonist_phase(values);
    const auto returns = evaluate(values, config_.eval_rollouts);
    for (double r : returns) rec.mean_return += r;
    rec.mean_return /= double(returns.size());
    update_curriculum(rec);
    rec.beta = prot_.tuner.beta();
    rec.adversary_temperature = ps.adversary_temperature;
    rec.adversary_entropy = ps.steps ? ps.adversary_entropy / double(ps.steps) : 0.0;
    for (double v : values) rec.budget += setting(v).budget;
    rec.budget /= double(values.size());
    if (curriculum_) {
      rec.curriculum_shape = curriculum_->current.shape;
      rec.curriculum_rate = curriculum_->current.rate;
      rec.curriculum_mean = config_.algorithm == Algorithm::qarl_point ? curriculum_->point_value
                                                                        : curriculum_->current.mean();
      if (config_.algorithm == Algorithm::qarl_linear) rec.curriculum_mean = values.front();
      rec.lambda = curriculum_->lambda;
      rec.eta = curriculum_->eta;
    }
    ++iter_;
    record_.iterations.push_back(rec);
    return rec;
  }

  RunRecord run() {
    while (iter_ < config_.iterations) iterate();
    return finish();
  }

  // Conditioning value for the frozen protagonist after training.
  double eval_conditioning() const {
    switch (config_.algorithm) {
      case Algorithm::qarl:
      case Algorithm::qarl_reduced: return curriculum_->current.mean();
      case Algorithm::qarl_point: return curriculum_->point_value;
      case Algorithm::qarl_linear: {
        const double f = linear_schedule(std::min(iter_, config_.iterations), config_.iterations);
        return (1.0 - f) * initial_.mean() + f * curriculum_->target.mean();
      }
      // The budget reached by the curriculum; bins above it were never trained.
      case Algorithm::force_curriculum: return std::min(curriculum_->current.mean(), env_->f_max());
      default: return 1.0;
    }
  }

  RunRecord finish() {
    record_.protagonist = {record_.algorithm, prot_.table, prot_.tuner.beta(), eval_conditioning(), env_->spec_json()};
    record_.adversary = {record_.algorithm, adv_.table, adversary_temperature(eval_conditioning()),
                         eval_conditioning(), env_->spec_json()};
    record_.clamped_lookups = prot_.table.clamp_count() + adv_.table.clamp_count();
    if (curriculum_) record_.final_curriculum = to_json(*curriculum_);
    return record_;
  }

 private:
  std::optional<double> entropy_temperature_for_adversary() const {
    if (temperature_curriculum(config_.algorithm)) return std::nullopt;  // each entry's own temperature
    if (config_.algorithm == Algorithm::force_curriculum) return adv_.tuner.beta();
    return config_.agent.rational_temperature;
  }

  void maybe_update(Learner& l, std::optional<double> entropy_temperature) {
    if (l.buffer.total_inserted() < config_.agent.warmup) return;
    if (++l.steps_since_update < config_.agent.update_interval) return;
    l.steps_since_update = 0;
    const auto batch = l.buffer.sample(config_.agent.batch_size, rng_);
    const double tau = entropy_temperature.value_or(l.tune ? l.tuner.beta() : 0.0);
    if (l.tune || entropy_temperature) {
      soft_q_update(l.table, batch, env_->gamma(), tau);
    } else {
      soft_q_update(l.table, batch, env_->gamma());
    }
    if (l.tune) {
      double h = 0.0;
      for (const ReplayEntry& e : batch)
        h += entropy(softmax(l.table.row(l.table.lookup(e.temperature), e.state), l.tuner.beta()));
      l.tuner.update(h / double(batch.size()));
    }
  }

  void update_curriculum(IterationRecord& rec) {
    if (!curriculum_) return;
    const Algorithm alg = config_.algorithm;
    if (alg == Algorithm::qarl_linear) {
      curriculum_->status = UpdateStatus::none;
      rec.status = "schedule";
      return;
    }
    // Monte-Carlo returns at values drawn from the current distribution.
    PerformanceSamples samples;
    const std::size_t m = config_.mc_rollouts;
    const std::vector<double> drawn = alg == Algorithm::qarl_point ? std::vector<double>(m, curriculum_->point_value)
                                                                    : draw_for_estimate(m, rec.sampled);
    for (double value : drawn) {
      Actor p = protagonist_actor();
      Actor a = adversary_actor(value);
      EpisodeSetting set = setting(value);
      const std::size_t s0 = env_->initial_state(rng_);
      set.start = s0;
      const auto st = run_episode(*env_, p, a, set, rng_);
      samples.push_back({value, st.score(config_.return_metric), s0});
    }
    try {
      if (alg == Algorithm::qarl_point) {
        curriculum_ = point_update(*curriculum_, samples, point_initial_);
      } else {
        curriculum_ = curriculum_update(*curriculum_, samples);
      }
      rec.status = to_string(curriculum_->status);
    } catch (const std::exception& e) {
      record_.warnings.push_back("iteration " + std::to_string(iter_) + ": curriculum update failed: " + e.what());
      rec.status = "error";
    }
    rec.estimate = curriculum_->estimate;
  }

  // Draws for the importance-sampled estimate: the training values are reused
  // when there are at least M of them; otherwise M fresh ones are drawn.
  std::vector<double> draw_for_estimate(std::size_t m, const std::vector<double>& training) {
    if (training.size() >= m) return std::vector<double>(training.begin(), training.begin() + std::ptrdiff_t(m));
    std::vector<double> v(m);
    for (double& x : v) x = gamma_sample(curriculum_->current, rng_);
    return v;
  }

  ExperimentConfig config_;
  std::shared_ptr<const Environment> env_;
  std::uint64_t seed_;
  Rng rng_;
  double xi_ = 0.0;
  std::optional<CurriculumState> curriculum_;
  GammaParams initial_;
  double point_initial_ = 0.0;
  Learner prot_;
  Learner adv_;
  std::size_t iter_ = 0;
  RunRecord record_;
};

inline std::shared_ptr<const Environment> environment_for(const ExperimentConfig& c) {
  return std::shared_ptr<const Environment>(make_environment(c.env));
}

inline RunRecord train(const ExperimentConfig& config, std::uint64_t seed) {
  Trainer t(config, environment_for(config), seed);
  return t.run();
}

inline RunRecord train_qarl(ExperimentConfig config, std::uint64_t seed) {
  if (config.algorithm != Algorithm::qarl && config.algorithm != Algorithm::qarl_point &&
      config.algorithm != Algorithm::qarl_linear && config.algorithm != Algorithm::qarl_reduced)
    throw ConfigError("train_qarl: algorithm must be a QARL variant");
  return train(config, seed);
}

inline RunRecord train_force_curriculum(ExperimentConfig config, std::uint64_t seed) {
  config.algorithm = Algorithm::force_curriculum;
  return train(config, seed);
}

inline RunRecord train_rarl(ExperimentConfig config, std::uint64_t seed) {
  config.algorithm = Algorithm::rarl;
  return train(config, seed);
}

inline RunRecord train_sac(ExperimentConfig config, std::uint64_t seed) {
  config.algorithm = Algorithm::sac;
  return train(config, seed);
}

inline RunRecord train_cat_linear(ExperimentConfig config, std::uint64_t seed) {
  config.algorithm = Algorithm::cat_linear;
  return train(config, seed);
}

// ---------------------------------------------------------------------------
// Evaluation

inline void check_checkpoint(const Checkpoint& ckpt, const Environment& env) {
  if (ckpt.table.n_states() != env.n_states() || ckpt.table.n_actions() != env.actions1())
    throw ConfigError("checkpoint does not match the environment (table shape)");
  if (!ckpt.env.is_null() && !ckpt.env.empty() && ckpt.env != env.spec_json())
    throw ConfigError("checkpoint was trained on a different environment spec");
}

struct AdversaryEval {
  double mean_return = 0.0;
  std::vector<double> returns;
  std::size_t adversary_iterations = 0;
};

// Freezes the protagonist and trains a fresh, fully rational adversary against
// it for `config.adversary_iterations()` iterations, then reports the mean
// protagonist return over `eval_rollouts` episodes against that adversary.
inline AdversaryEval eval_vs_trained_adversary(const Checkpoint& ckpt, const ExperimentConfig& config,
                                               const Environment& env, std::uint64_t seed) {
  check_checkpoint(ckpt, env);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  SoftQTable frozen = ckpt.table;
  const AgentConfig& ag = config.agent;
  SoftQTable adv(TemperatureBins::single(1.0), env.n_states(), env.actions2(), Owner::adversary, ag.learn_rate,
                 ag.min_learn_rate);
  ReplayBuffer buffer(ag.replay_capacity);
  Actor p{&frozen, ckpt.temperature, false, 0};
  Actor a{&adv, ag.rational_temperature, ag.greedy_adversary, 0};
  // The protagonist reads its table at ckpt.conditioning; the adversary has a
  // single bin, so the same value serves both lookups.
  const EpisodeSetting set{ckpt.conditioning, env.f_max(), std::nullopt};
  std::size_t since = 0;
  AdversaryEval out;
  out.adversary_iterations = config.adversary_iterations();
  for (std::size_t it = 0; it < out.adversary_iterations; ++it) {
    for (std::size_t e = 0; e < config.episodes; ++e) {
      run_episode(env, p, a, set, rng, [&](const Step& step, bool done) {
        buffer.push(split_transition(step, 1.0, done).second);
        if (buffer.total_inserted() < ag.warmup || ++since < ag.update_interval) return;
        since = 0;
        const auto batch = buffer.sample(ag.batch_size, rng);
        soft_q_update(adv, batch, env.gamma(), ag.rational_temperature);
      });
    }
  }
  for (std::size_t e = 0; e < config.eval_rollouts; ++e) {
    out.returns.push_back(run_episode(env, p, a, set, rng).score(config.return_metric));
    out.mean_return += out.returns.back();
  }
  out.mean_return /= double(config.eval_rollouts);
  return out;
}

// Mean return of the frozen protagonist against the null adversary.
inline double eval_no_adversary(const Checkpoint& ckpt, const Environment& env, std::size_t rollouts, Rng& rng,
                                ReturnMetric metric = ReturnMetric::episode) {
  check_checkpoint(ckpt, env);
  SoftQTable frozen = ckpt.table;
  Actor p{&frozen, ckpt.temperature, false, 0};
  Actor a{nullptr, 1.0, false, env.null_action()};
  double total = 0.0;
  for (std::size_t e = 0; e < rollouts; ++e)
    total += run_episode(env, p, a, {ckpt.conditioning, 0.0, std::nullopt}, rng).score(metric);
  return total / double(rollouts);
}

struct RobustnessGrid {
  ParamSweep sweep;
  std::vector<std::vector<double>> values;  // [axis1][axis2]

  double mean() const {
    double t = 0.0;
    std::size_t n = 0;
    for (const auto& row : values)
      for (double v : row) t += v, ++n;
    return n ? t / double(n) : 0.0;
  }
};

inline RobustnessGrid robustness_sweep(const Checkpoint& ckpt, const ParamSweep& sweep, const ExperimentConfig& config,
                                       const Environment& env, std::uint64_t seed) {
  sweep.validate();
  RobustnessGrid grid{sweep, {}};
  Rng rng(seed ^ 0xc2b2ae3d27d4eb4full);
  // Fail on unknown axes before doing any work.
  env.perturbed({{sweep.axis1.name, 1.0}});
  env.perturbed({{sweep.axis2.name, 1.0}});
  for (double m1 : sweep.axis1.multipliers) {
    std::vector<double> row;
    for (double m2 : sweep.axis2.multipliers) {
      Multipliers m{{sweep.axis1.name, m1}};
      if (sweep.axis2.name == sweep.axis1.name) m[sweep.axis1.name] *= m2;
      else m[sweep.axis2.name] = m2;
      const auto cell_env = env.perturbed(m);
      Checkpoint c = ckpt;
      c.env = nlohmann::json();  // the spec differs by design
      row.push_back(eval_no_adversary(c, *cell_env, config.eval_rollouts, rng, config.return_metric));
    }
    grid.values.push_back(std::move(row));
  }
  return grid;
}

struct EvalReport {
  std::string algorithm;
  std::vector<std::uint64_t> seeds;
  std::vector<double> return_vs_trained_adversary;  // per seed
  std::vector<RobustnessGrid> robustness;           // per seed, when a sweep is configured
  std::size_t adversary_iterations = 0;

  static double mean(const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return v.empty() ? 0.0 : t / double(v.size());
  }
  static double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double t = 0.0;
    for (double x : v) t += (x - m) * (x - m);
    return std::sqrt(t / double(v.size() - 1));
  }
  std::vector<double> robustness_means() const {
    std::vector<double> out;
    for (const auto& g : robustness) out.push_back(g.mean());
    return out;
  }
};

inline nlohmann::json to_json(const RobustnessGrid& g) { return {{"sweep", to_json(g.sweep)}, {"values", g.values}}; }

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json grids = nlohmann::json::array();
  for (const auto& g : r.robustness) grids.push_back(to_json(g));
  const auto rm = r.robustness_means();
  return {{"algorithm", r.algorithm},
          {"seeds", r.seeds},
          {"adversary_iterations", r.adversary_iterations},
          {"adversary_training_budget", "iterations / 2 unless eval_adversary_iterations is set"},
          {"return_vs_trained_adversary", r.return_vs_trained_adversary},
          {"return_vs_trained_adversary_mean", EvalReport::mean(r.return_vs_trained_adversary)},
          {"return_vs_trained_adversary_std", EvalReport::stddev(r.return_vs_trained_adversary)},
          {"robustness_grid", grids},
          {"robustness_mean", EvalReport::mean(rm)},
          {"robustness_std", EvalReport::stddev(rm)}};
}

// Both protocols for every run, seeded by each run's own seed.
inline EvalReport evaluate_runs(const std::vector<RunRecord>& runs, const ExperimentConfig& config) {
  EvalReport rep;
  rep.algorithm = to_string(config.algorithm);
  rep.adversary_iterations = config.adversary_iterations();
  const auto env = environment_for(config);
  for (const RunRecord& r : runs) {
    rep.seeds.push_back(r.seed);
    rep.return_vs_trained_adversary.push_back(eval_vs_trained_adversary(r.protagonist, config, *env, r.seed).mean_return);
    if (config.sweep) rep.robustness.push_back(robustness_sweep(r.protagonist, *config.sweep, config, *env, r.seed));
  }
  return rep;
}

struct ExperimentResult {
  std::vector<RunRecord> runs;
  EvalReport report;
};

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult out;
  const auto env = environment_for(config);
  for (std::uint64_t seed : config.seeds) {
    Trainer t(config, env, seed);
    out.runs.push_back(t.run());
  }
  out.report = evaluate_runs(out.runs, config);
  return out;
}

// ---------------------------------------------------------------------------
// Files

// Write-then-rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline const char* kTraceHeader =
    "seed,iteration,algorithm,mean_return,sampled_mean,curriculum_shape,curriculum_rate,curriculum_mean,lambda,eta,"
    "estimate,status,beta,adversary_temperature,adversary_entropy,budget";

inline std::string trace_csv_rows(const RunRecord& r) {
  std::ostringstream os;
  for (const auto& it : r.iterations) {
    double sm = 0.0;
    for (double v : it.sampled) sm += v;
    if (!it.sampled.empty()) sm /= double(it.sampled.size());
    os << r.seed << ',' << it.iteration << ',' << r.algorithm << ',' << format_double(it.mean_return) << ','
       << format_double(sm) << ',' << format_double(it.curriculum_shape) << ',' << format_double(it.curriculum_rate)
       << ',' << format_double(it.curriculum_mean) << ',' << format_double(it.lambda) << ','
       << format_double(it.eta) << ',' << format_double(it.estimate) << ',' << it.status << ','
       << format_double(it.beta) << ',' << format_double(it.adversary_temperature) << ','
       << format_double(it.adversary_entropy) << ',' << format_double(it.budget) << '\n';
  }
  return os.str();
}

inline std::string grid_csv(const RobustnessGrid& g) {
  std::ostringstream os;
  os << "axis1_name,axis1_mult,axis2_name,axis2_mult,mean_return\n";
  for (std::size_t i = 0; i < g.values.size(); ++i)
    for (std::size_t j = 0; j < g.values[i].size(); ++j)
      os << g.sweep.axis1.name << ',' << format_double(g.sweep.axis1.multipliers[i]) << ',' << g.sweep.axis2.name
         << ',' << format_double(g.sweep.axis2.multipliers[j]) << ',' << format_double(g.values[i][j]) << '\n';
  return os.str();
}

}  // namespace qarl
