#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "birdhunt/nn.hpp"
#include "birdhunt/policy.hpp"
#include "birdhunt/rollout.hpp"

namespace birdhunt {

// Rewrites the environment rewards of a training batch into the rewards the
// optimizer consumes (GAIL mixing installs one of these).
using RewardFn = std::function<void(std::span<const Transition* const> batch, std::span<double> rewards)>;

// Observes every reward vector handed to an optimizer; used for wiring checks.
using RewardProbe = std::function<void(std::span<const Transition* const> batch, std::span<const double> rewards)>;

/// A trainer driven by the experiment loop: it is handed fixed-size chunks of
/// fresh experience and updates its policy from them.
class Learner {
 public:
  virtual ~Learner() = default;

  virtual PolicySnapshot policy() const = 0;
  virtual const nn::Net& policy_net() const = 0;
  virtual std::span<float> policy_params() = 0;
  virtual std::int64_t chunk_size() const = 0;
  virtual void learn(const Trajectory& chunk) = 0;
  virtual std::vector<std::string> stat_names() const = 0;
  // Mean of each stat since the previous call; NaN when nothing was recorded.
  virtual std::vector<double> take_stats() = 0;

  virtual void set_reward_fn(RewardFn) {}
  virtual void set_reward_probe(RewardProbe) {}
};

class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::size_t n) : sums_(n, 0.0), counts_(n, 0) {}

  void add(std::size_t i, double v) {
    sums_[i] += v;
    ++counts_[i];
  }

  std::vector<double> take() {
    std::vector<double> out(sums_.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = counts_[i] ? sums_[i] / static_cast<double>(counts_[i]) : std::nan("");
    std::fill(sums_.begin(), sums_.end(), 0.0);
    std::fill(counts_.begin(), counts_.end(), 0);
    return out;
  }

 private:
  std::vector<double> sums_;
  std::vector<std::int64_t> counts_;
};

// Flattens observations of a set of transitions into one input batch.
inline std::vector<float> stack_observations(std::span<const Transition* const> batch, bool next = false) {
  std::vector<float> out;
  if (batch.empty()) return out;
  out.reserve(batch.size() * batch[0]->obs.size());
  for (const Transition* t : batch) {
    const auto& o = next ? t->next_obs : t->obs;
    out.insert(out.end(), o.begin(), o.end());
  }
  return out;
}

inline std::vector<double> env_rewards(std::span<const Transition* const> batch) {
  std::vector<double> r(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) r[i] = batch[i]->reward;
  return r;
}

}  // namespace birdhunt
