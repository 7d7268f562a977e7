#pragma once

// Tabular soft-Q learners conditioned on a temperature (or force budget).
// Conditioning is discretized into log-spaced bins. An update can optionally
// leak a fraction of its step into the other bins, so experience at one
// temperature also informs its neighbours.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/game.hpp"
#include "qarl/math.hpp"

namespace qarl {

class TemperatureBins {
 public:
  TemperatureBins() = default;

  explicit TemperatureBins(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) throw InvariantError("TemperatureBins: need at least two edges");
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      if (!(edges_[i] > 0.0) || !std::isfinite(edges_[i])) throw InvariantError("TemperatureBins: edges must be positive");
      if (i > 0 && !(edges_[i] > edges_[i - 1])) throw InvariantError("TemperatureBins: edges must strictly increase");
    }
  }

  static TemperatureBins log_spaced(double lo, double hi, std::size_t n_bins) {
    if (!(lo > 0.0) || !(hi > lo) || n_bins == 0) throw InvariantError("TemperatureBins: invalid range");
    std::vector<double> e(n_bins + 1);
    const double a = std::log(lo), b = std::log(hi);
    for (std::size_t i = 0; i <= n_bins; ++i) e[i] = std::exp(a + (b - a) * double(i) / double(n_bins));
    e.front() = lo;
    e.back() = hi;
    return TemperatureBins(std::move(e));
  }

  // A single bin, for agents that ignore the conditioning variable.
  static TemperatureBins single(double center) { return TemperatureBins({center / 2.0, center * 2.0}); }

  std::size_t size() const { return edges_.size() - 1; }
  const std::vector<double>& edges() const { return edges_; }
  double lo() const { return edges_.front(); }
  double hi() const { return edges_.back(); }
  double center(std::size_t i) const { return std::sqrt(edges_[i] * edges_[i + 1]); }

 private:
  std::vector<double> edges_;
};

struct BinLookup {
  std::size_t index = 0;
  bool clamped = false;
};

// Nearest geometric bin center in log space; values outside the covered range
// clamp to the first or last bin.
inline BinLookup temperature_bin(double tau, const TemperatureBins& bins) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw RangeError("temperature_bin: temperature must be positive and finite");
  BinLookup out;
  out.clamped = tau < bins.lo() || tau > bins.hi();
  const double lt = std::log(tau);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double d = std::abs(lt - std::log(bins.center(i)));
    if (d < best) {
      best = d;
      out.index = i;
    }
  }
  return out;
}

struct ReplayEntry {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;  // in the owner's frame: the adversary stores -r
  std::size_t next_state = 0;
  double temperature = 0.0;  // conditioning value active during collection
  bool done = false;

  bool operator==(const ReplayEntry&) const = default;
};

// Zero-sum bookkeeping for one environment step.
inline std::pair<ReplayEntry, ReplayEntry> split_transition(const Step& step, double conditioning, bool done) {
  return {ReplayEntry{step.state, step.action1, step.reward, step.next_state, conditioning, done},
          ReplayEntry{step.state, step.action2, -step.reward, step.next_state, conditioning, done}};
}

// Fixed-capacity ring; oldest entries are evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000000) : capacity_(capacity) {
    if (capacity_ == 0) throw InvariantError("ReplayBuffer: capacity must be positive");
  }

  void push(const ReplayEntry& e) {
    if (entries_.size() < capacity_) {
      entries_.push_back(e);
    } else {
      entries_[head_] = e;
      head_ = (head_ + 1) % capacity_;
    }
    ++total_;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_inserted() const { return total_; }
  bool empty() const { return entries_.empty(); }

  // i = 0 is the oldest retained entry.
  const ReplayEntry& at(std::size_t i) const { return entries_[(head_ + i) % entries_.size()]; }

  std::vector<ReplayEntry> sample(std::size_t batch, Rng& rng) const {
    std::vector<ReplayEntry> out;
    if (entries_.empty()) return out;
    out.reserve(batch);
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(entries_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<ReplayEntry> entries_;
  std::size_t head_ = 0;
  std::size_t total_ = 0;
};

class SoftQTable {
 public:
  SoftQTable() = default;

  // `shared_weight` is the fraction of each update applied to the shared
  // part; 0 gives fully independent bins.
  SoftQTable(TemperatureBins bins, std::size_t n_states, std::size_t n_actions, Owner owner, double learn_rate = 0.1,
             double min_learn_rate = 0.0, double shared_weight = 0.0)
      : bins_(std::move(bins)),
        n_states_(n_states),
        n_actions_(n_actions),
        owner_(owner),
        learn_rate_(learn_rate),
        min_learn_rate_(min_learn_rate),
        shared_weight_(shared_weight),
        q_(bins_.size() * n_states * n_actions, 0.0),
        visits_(q_.size(), 0) {
    if (!(learn_rate > 0.0 && learn_rate <= 1.0)) throw InvariantError("SoftQTable: learn_rate must lie in (0, 1]");
    if (!(shared_weight >= 0.0 && shared_weight <= 1.0))
      throw InvariantError("SoftQTable: shared_weight must lie in [0, 1]");
    if (n_states == 0 || n_actions == 0) throw InvariantError("SoftQTable: empty table");
  }

  const TemperatureBins& bins() const { return bins_; }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  Owner owner() const { return owner_; }
  double learn_rate() const { return learn_rate_; }
  double shared_weight() const { return shared_weight_; }
  std::size_t clamp_count() const { return clamp_count_; }
  const std::vector<double>& values() const { return q_; }

  std::size_t lookup(double tau) {
    const auto b = temperature_bin(tau, bins_);
    if (b.clamped) ++clamp_count_;
    return b.index;
  }

  std::size_t lookup(double tau) const { return temperature_bin(tau, bins_).index; }

  std::span<const double> row(std::size_t bin, std::size_t s) const {
    return {q_.data() + (bin * n_states_ + s) * n_actions_, n_actions_};
  }

  double at(std::size_t bin, std::size_t s, std::size_t a) const { return q_[index(bin, s, a)]; }

  // Sets one bin's entry only.
  void set(std::size_t bin, std::size_t s, std::size_t a, double value) { q_[index(bin, s, a)] = value; }

  // One stochastic-approximation step toward `target` with a 1/sqrt(visits)
  // rate. The entry in `bin` moves by exactly lr * error; the shared fraction
  // of that step is also applied to the same (s, a) in every other bin.
  void move_toward(std::size_t bin, std::size_t s, std::size_t a, double target) {
    const std::size_t i = index(bin, s, a);
    const std::uint32_t n = ++visits_[i];
    const double lr = std::max(min_learn_rate_, learn_rate_ / std::sqrt(double(n)));
    const double step = lr * (target - q_[i]);
    const double shared = shared_weight_ * step;
    if (shared != 0.0)
      for (std::size_t b = 0; b < bins_.size(); ++b)
        if (b != bin) q_[index(b, s, a)] += shared;
    q_[i] += step;
  }

  std::size_t visits(std::size_t bin, std::size_t s, std::size_t a) const { return visits_[index(bin, s, a)]; }

  std::uint64_t fingerprint() const {
    // FNV-1a over the raw table bytes.
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
    };
    mix(q_.data(), q_.size() * sizeof(double));
    mix(visits_.data(), visits_.size() * sizeof(std::uint32_t));
    return h;
  }

  nlohmann::json to_json() const {
    return {{"owner", to_string(owner_)}, {"n_states", n_states_}, {"n_actions", n_actions_},
            {"learn_rate", learn_rate_},  {"min_learn_rate", min_learn_rate_}, {"shared_weight", shared_weight_},
            {"bins", bins_.edges()},      {"q", q_},                    {"visits", visits_}};
  }

  static SoftQTable from_json(const nlohmann::json& j) {
    try {
      SoftQTable t(TemperatureBins(j.at("bins").get<std::vector<double>>()), j.at("n_states").get<std::size_t>(),
                   j.at("n_actions").get<std::size_t>(), owner_from_string(j.at("owner").get<std::string>()),
                   j.at("learn_rate").get<double>(), j.value("min_learn_rate", 0.0), j.value("shared_weight", 0.0));
      auto q = j.at("q").get<std::vector<double>>();
      auto v = j.at("visits").get<std::vector<std::uint32_t>>();
      if (q.size() != t.q_.size() || v.size() != t.visits_.size())
        throw ConfigError("checkpoint: table sizes do not match header");
      for (double x : q)
        if (!std::isfinite(x)) throw ConfigError("checkpoint: non-finite q entry");
      t.q_ = std::move(q);
      t.visits_ = std::move(v);
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("checkpoint: ") + e.what());
    } catch (const InvariantError& e) {
      throw ConfigError(std::string("checkpoint: ") + e.what());
    }
  }

 private:
  std::size_t index(std::size_t bin, std::size_t s, std::size_t a) const { return (bin * n_states_ + s) * n_actions_ + a; }

  TemperatureBins bins_;
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  Owner owner_ = Owner::protagonist;
  double learn_rate_ = 0.1;
  double min_learn_rate_ = 0.0;
  double shared_weight_ = 0.0;
  std::vector<double> q_;
  std::vector<std::uint32_t> visits_;
  std::size_t clamp_count_ = 0;
};

// Boltzmann policy over the table row selected by `conditioning`, at the
// agent's own `temperature`. Both tables are kept in their owner's reward
// frame, so the adversary's softmax(q / alpha) is the exp(-Q / alpha) form of
// the protagonist-frame values.
inline std::vector<double> action_probabilities(const SoftQTable& table, std::size_t s, double conditioning,
                                                double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw RangeError("sample_action: temperature must be positive and finite");
  return softmax(table.row(table.lookup(conditioning), s), temperature);
}

inline std::size_t sample_action(SoftQTable& table, std::size_t s, double conditioning, double temperature, Rng& rng) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw RangeError("sample_action: temperature must be positive and finite");
  const std::size_t bin = table.lookup(conditioning);
  const auto row = table.row(bin, s);
  double probs[64];
  std::vector<double> heap;
  std::span<double> out;
  if (row.size() <= 64) {
    out = std::span<double>(probs, row.size());
  } else {
    heap.resize(row.size());
    out = heap;
  }
  softmax_into(row, temperature, out);
  return sample_categorical(out, rng);
}

inline std::size_t sample_action(SoftQTable& table, std::size_t s, double temperature, Rng& rng) {
  return sample_action(table, s, temperature, temperature, rng);
}

inline std::size_t greedy_action(const SoftQTable& table, std::size_t s, double conditioning) {
  return argmax(table.row(table.lookup(conditioning), s));
}

// Soft Q-learning on a replay batch. The bootstrap uses the same conditioning
// bin at the successor, with entropy temperature `entropy_temperature` or, when
// absent, the entry's own conditioning value.
inline void soft_q_update(SoftQTable& table, std::span<const ReplayEntry> batch, double gamma,
                          std::optional<double> entropy_temperature = std::nullopt) {
  if (batch.empty()) throw DomainError("soft_q_update: empty batch");
  for (const ReplayEntry& e : batch) {
    const std::size_t bin = table.lookup(e.temperature);
    const double tau = entropy_temperature.value_or(e.temperature);
    if (!(tau > 0.0)) throw RangeError("soft_q_update: entropy temperature must be positive");
    double target = e.reward;
    if (!e.done) target += gamma * soft_maximum(table.row(bin, e.next_state), tau);
    table.move_toward(bin, e.state, e.action, target);
  }
}

// Automatic entropy tuning in log space.
class EntropyTuner {
 public:
  EntropyTuner() = default;
  // `max_beta` caps the temperature. Tabular critics carry noise that grows
  // with beta itself, so without a cap a low-entropy reading can feed back
  // into an ever larger beta.
  EntropyTuner(double beta, double target_entropy, double learn_rate,
               double max_beta = std::numeric_limits<double>::infinity())
      : log_beta_(std::log(beta)), target_(target_entropy), learn_rate_(learn_rate), log_max_(std::log(max_beta)) {
    if (!(beta > 0.0)) throw InvariantError("EntropyTuner: beta must be positive");
    if (!(learn_rate > 0.0)) throw InvariantError("EntropyTuner: learn_rate must be positive");
    if (!(max_beta >= beta)) throw InvariantError("EntropyTuner: max_beta must be at least the initial beta");
  }

  double beta() const { return std::exp(log_beta_); }
  double log_beta() const { return log_beta_; }
  double target_entropy() const { return target_; }
  double learn_rate() const { return learn_rate_; }

  void update(double observed_entropy) {
    if (!(observed_entropy >= 0.0)) throw DomainError("tune_temperature: observed entropy must be non-negative");
    log_beta_ = std::min(log_max_, log_beta_ + learn_rate_ * (target_ - observed_entropy));
  }

 private:
  double log_beta_ = std::log(5e-3);
  double target_ = 0.0;
  double learn_rate_ = 3e-4;
  double log_max_ = std::numeric_limits<double>::infinity();
};

inline EntropyTuner tune_temperature(EntropyTuner tuner, double observed_entropy) {
  tuner.update(observed_entropy);
  return tuner;
}

}  // namespace qarl
