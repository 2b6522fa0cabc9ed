#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "birdhunt/env.hpp"
#include "birdhunt/policy.hpp"

namespace birdhunt {

struct Transition {
  Observation obs;
  ActionPair action;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
  Observation next_obs;  // observation after the step, before any auto-reset
  double log_prob = 0.0;
  double entropy = 0.0;
  int env_index = 0;
  std::int64_t step = 0;  // 1-based pool step count after this transition
};

struct EpisodeRecord {
  double episode_return = 0.0;
  int length = 0;
  std::int64_t end_step = 0;
  int env_index = 0;
};

struct Trajectory {
  std::vector<Transition> transitions;
  std::vector<EpisodeRecord> episodes;
};

/// Environments stepped round-robin by one owner. Each env has its own seed
/// derived from the pool seed.
class EnvPool {
 public:
  EnvPool(const EnvConfig& config, std::uint64_t seed, int n_envs = 1) {
    if (n_envs < 1) fail(ErrorKind::InvalidArgument, "env pool needs at least one env");
    for (int i = 0; i < n_envs; ++i) {
      envs_.emplace_back(config, n_envs == 1 ? seed : derive_seed(seed, static_cast<std::uint64_t>(i)));
      obs_.push_back(envs_.back().observe());
    }
    returns_.assign(envs_.size(), 0.0);
    lengths_.assign(envs_.size(), 0);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  std::int64_t total_steps() const { return steps_; }
  const BirdHunterEnv& env(int i) const { return envs_[static_cast<std::size_t>(i)]; }
  const Observation& current_observation(int i) const { return obs_[static_cast<std::size_t>(i)]; }

  // Steps the next env in turn, auto-resetting it when the episode ends.
  template <class ActFn>
  Transition step(ActFn&& act_fn, std::vector<EpisodeRecord>* episodes) {
    const auto i = static_cast<std::size_t>(next_);
    next_ = (next_ + 1) % size();
    Transition tr;
    tr.env_index = static_cast<int>(i);
    tr.obs = obs_[i];
    const PolicySample s = act_fn(std::span<const float>(tr.obs));
    tr.action = s.action;
    tr.log_prob = s.log_prob;
    tr.entropy = s.entropy;
    StepResult r = envs_[i].step(s.action);
    ++steps_;
    tr.step = steps_;
    tr.reward = r.reward;
    tr.done = r.done;
    tr.truncated = r.info.truncated;
    returns_[i] += r.reward;
    ++lengths_[i];
    if (r.done) {
      if (episodes) episodes->push_back({returns_[i], lengths_[i], steps_, static_cast<int>(i)});
      returns_[i] = 0.0;
      lengths_[i] = 0;
      tr.next_obs = std::move(r.observation);
      obs_[i] = envs_[i].reset();
    } else {
      obs_[i] = r.observation;
      tr.next_obs = std::move(r.observation);
    }
    return tr;
  }

 private:
  std::vector<BirdHunterEnv> envs_;
  std::vector<Observation> obs_;
  std::vector<double> returns_;
  std::vector<int> lengths_;
  int next_ = 0;
  std::int64_t steps_ = 0;
};

/// Collects n_steps transitions across the pool with a fixed policy snapshot.
inline Trajectory run_rollouts(EnvPool& pool, const PolicySnapshot& policy, std::int64_t n_steps, Rng& rng) {
  Trajectory traj;
  if (n_steps <= 0) return traj;
  traj.transitions.reserve(static_cast<std::size_t>(n_steps));
  auto act_fn = [&](std::span<const float> obs) { return act(policy, obs, rng); };
  for (std::int64_t k = 0; k < n_steps; ++k) traj.transitions.push_back(pool.step(act_fn, &traj.episodes));
  return traj;
}

}  // namespace birdhunt
