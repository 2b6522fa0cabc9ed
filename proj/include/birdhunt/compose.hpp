#pragma once

#include <memory>
#include <string>
#include <vector>

#include "birdhunt/bc.hpp"
#include "birdhunt/gail.hpp"
#include "birdhunt/ppo.hpp"
#include "birdhunt/sac.hpp"

namespace birdhunt {

enum class TrainerMode { RlOnly, BcOnly, GailOnly, BcAndGail };
enum class BaseAlgo { Ppo, Sac };

inline const char* to_string(TrainerMode m) {
  switch (m) {
    case TrainerMode::RlOnly: return "RL_ONLY";
    case TrainerMode::BcOnly: return "BC_ONLY";
    case TrainerMode::GailOnly: return "GAIL_ONLY";
    case TrainerMode::BcAndGail: return "BC_AND_GAIL";
  }
  return "?";
}

inline const char* to_string(BaseAlgo a) { return a == BaseAlgo::Ppo ? "PPO" : "SAC"; }

inline TrainerMode parse_trainer_mode(const std::string& s) {
  if (s == "RL_ONLY") return TrainerMode::RlOnly;
  if (s == "BC_ONLY") return TrainerMode::BcOnly;
  if (s == "GAIL_ONLY") return TrainerMode::GailOnly;
  if (s == "BC_AND_GAIL") return TrainerMode::BcAndGail;
  fail(ErrorKind::InvalidConfig, "unknown trainer mode '" + s + "'");
}

inline BaseAlgo parse_base_algo(const std::string& s) {
  if (s == "PPO") return BaseAlgo::Ppo;
  if (s == "SAC") return BaseAlgo::Sac;
  fail(ErrorKind::InvalidConfig, "unknown base optimizer '" + s + "'");
}

inline bool needs_demos(TrainerMode m) { return m != TrainerMode::RlOnly; }

inline std::unique_ptr<Learner> make_base_learner(BaseAlgo algo, const EnvConfig& env, std::vector<nn::LayerSpec> trunk,
                                                  const PPOConfig& ppo, const SACConfig& sac, std::uint64_t seed,
                                                  int n_envs = 1) {
  if (algo == BaseAlgo::Ppo) return std::make_unique<PPOLearner>(env, std::move(trunk), ppo, seed, n_envs);
  return std::make_unique<SACLearner>(env, std::move(trunk), sac, seed);
}

/// Wraps an RL learner with a GAIL discriminator reward and, optionally, a
/// decaying behavioral-cloning auxiliary loss on the same policy parameters.
class ImitationLearner : public Learner {
 public:
  ImitationLearner(std::unique_ptr<Learner> base, const EnvConfig& env, GAILConfig gail,
                   std::optional<BCConfig> bc_aux, std::shared_ptr<const DemoDataset> demos, std::uint64_t seed)
      : base_(std::move(base)),
        env_(env),
        gail_(gail),
        bc_(bc_aux),
        demos_(std::move(demos)),
        disc_(env, gail, derive_seed(seed, 51)),
        rng_(derive_seed(seed, 52)),
        bc_opt_(base_->policy_params().size()) {
    if (!demos_ || demos_->size() == 0) fail(ErrorKind::InvalidArgument, "GAIL needs demonstrations");
    if (demos_->obs_size != env.observation_size()) fail(ErrorKind::Incompatible, "demo observations do not match env");
    if (bc_) bc_->validate();
    agent_obs_.resize(static_cast<std::size_t>(gail_.agent_buffer) * env.observation_size());
    agent_actions_.resize(static_cast<std::size_t>(gail_.agent_buffer));
    base_->set_reward_fn([this](std::span<const Transition* const> batch, std::span<double> rewards) {
      const auto intrinsic = disc_.rewards(batch);
      for (std::size_t i = 0; i < rewards.size(); ++i) {
        rewards[i] = combined_reward(rewards[i], intrinsic[i], gail_);
        intrinsic_sum_ += intrinsic[i];
        ++intrinsic_count_;
      }
    });
  }

  PolicySnapshot policy() const override { return base_->policy(); }
  const nn::Net& policy_net() const override { return base_->policy_net(); }
  std::span<float> policy_params() override { return base_->policy_params(); }
  std::int64_t chunk_size() const override { return base_->chunk_size(); }
  Learner& base() { return *base_; }
  Discriminator& discriminator() { return disc_; }
  double current_bc_strength() const { return bc_ ? bc_strength(*bc_, steps_) : 0.0; }

  std::vector<std::string> stat_names() const override {
    auto names = base_->stat_names();
    names.insert(names.end(), {"disc_loss", "disc_accuracy", "intrinsic_reward"});
    if (bc_) names.insert(names.end(), {"bc_loss", "bc_strength"});
    return names;
  }

  std::vector<double> take_stats() override {
    auto out = base_->take_stats();
    const auto mine = stats_.take();
    out.insert(out.end(), mine.begin(), mine.begin() + 2);
    out.push_back(intrinsic_count_ ? intrinsic_sum_ / static_cast<double>(intrinsic_count_) : std::nan(""));
    intrinsic_sum_ = 0.0;
    intrinsic_count_ = 0;
    if (bc_) out.insert(out.end(), mine.begin() + 2, mine.end());
    return out;
  }

  void set_reward_probe(RewardProbe fn) override { base_->set_reward_probe(std::move(fn)); }

  void learn(const Trajectory& chunk) override {
    for (const auto& t : chunk.transitions) {
      const std::size_t slot = agent_next_ % agent_actions_.size();
      std::copy(t.obs.begin(), t.obs.end(), agent_obs_.begin() + static_cast<std::ptrdiff_t>(slot * t.obs.size()));
      agent_actions_[slot] = t.action;
      ++agent_next_;
    }
    const std::int64_t before = steps_;
    steps_ += static_cast<std::int64_t>(chunk.transitions.size());
    const auto triggers = [&](int every) { return steps_ / every - before / every; };
    for (std::int64_t k = triggers(gail_.update_every); k > 0; --k)
      for (int u = 0; u < gail_.updates; ++u) update_discriminator();
    base_->learn(chunk);
    if (bc_)
      for (std::int64_t k = triggers(bc_->update_every); k > 0; --k)
        for (int u = 0; u < bc_->updates; ++u) update_bc();
  }

 private:
  void update_discriminator() {
    const std::size_t filled = std::min<std::size_t>(agent_next_, agent_actions_.size());
    if (filled == 0) return;
    const std::size_t n = static_cast<std::size_t>(gail_.demo_batch_size);
    const std::size_t obs_size = env_.observation_size();
    std::vector<float> a_obs;
    std::vector<ActionPair> a_act;
    a_obs.reserve(n * obs_size);
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(uniform_index(rng_, static_cast<std::int64_t>(filled)));
      a_obs.insert(a_obs.end(), agent_obs_.begin() + static_cast<std::ptrdiff_t>(i * obs_size),
                   agent_obs_.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_size));
      a_act.push_back(agent_actions_[i]);
    }
    sample_demo_batch(*demos_, n, rng_, demo_obs_, demo_actions_);
    const auto st = disc_.update(a_obs, a_act, demo_obs_, demo_actions_);
    stats_.add(0, st.loss);
    stats_.add(1, st.accuracy);
  }

  void update_bc() {
    const double strength = bc_strength(*bc_, steps_);
    sample_demo_batch(*demos_, static_cast<std::size_t>(bc_->batch_size), rng_, demo_obs_, demo_actions_);
    const auto st = bc_update(base_->policy_net(), base_->policy_params(), bc_opt_, demo_obs_, demo_actions_, *bc_, strength);
    stats_.add(2, st.loss);
    stats_.add(3, strength);
  }

  std::unique_ptr<Learner> base_;
  EnvConfig env_;
  GAILConfig gail_;
  std::optional<BCConfig> bc_;
  std::shared_ptr<const DemoDataset> demos_;
  Discriminator disc_;
  Rng rng_;
  nn::AdamState bc_opt_;
  StatsAccumulator stats_{4};
  std::vector<float> agent_obs_;
  std::vector<ActionPair> agent_actions_;
  std::size_t agent_next_ = 0;
  std::int64_t steps_ = 0;
  double intrinsic_sum_ = 0.0;
  std::int64_t intrinsic_count_ = 0;
  std::vector<float> demo_obs_;
  std::vector<ActionPair> demo_actions_;
};

struct TrainerConfigs {
  BaseAlgo base = BaseAlgo::Sac;
  PPOConfig ppo;
  SACConfig sac;
  BCConfig bc;
  GAILConfig gail;
  int n_envs = 1;  // envs stepped round-robin by the rollout pool
};

/// Builds the learner for a mode. RL_ONLY hands back the base learner itself,
/// so it is indistinguishable from training that learner directly.
inline std::unique_ptr<Learner> compose_trainer(TrainerMode mode, std::unique_ptr<Learner> base, const EnvConfig& env,
                                                const std::vector<nn::LayerSpec>& trunk, const TrainerConfigs& cfg,
                                                std::shared_ptr<const DemoDataset> demos, std::uint64_t seed) {
  if (needs_demos(mode) && (!demos || demos->size() == 0))
    fail(ErrorKind::InvalidArgument, std::string(to_string(mode)) + " requires demonstrations");
  switch (mode) {
    case TrainerMode::RlOnly:
      if (!base) fail(ErrorKind::InvalidArgument, "RL_ONLY needs a base learner");
      return base;
    case TrainerMode::BcOnly: return std::make_unique<BCLearner>(env, trunk, cfg.bc, std::move(demos), seed);
    case TrainerMode::GailOnly:
      if (!base) fail(ErrorKind::InvalidArgument, "GAIL_ONLY needs a base learner");
      return std::make_unique<ImitationLearner>(std::move(base), env, cfg.gail, std::nullopt, std::move(demos), seed);
    case TrainerMode::BcAndGail:
      if (!base) fail(ErrorKind::InvalidArgument, "BC_AND_GAIL needs a base learner");
      return std::make_unique<ImitationLearner>(std::move(base), env, cfg.gail, cfg.bc, std::move(demos), seed);
  }
  fail(ErrorKind::InvalidConfig, "unknown trainer mode");
}

inline std::unique_ptr<Learner> make_trainer(TrainerMode mode, const EnvConfig& env, const std::vector<nn::LayerSpec>& trunk,
                                             const TrainerConfigs& cfg, std::shared_ptr<const DemoDataset> demos,
                                             std::uint64_t seed) {
  std::unique_ptr<Learner> base;
  if (mode != TrainerMode::BcOnly) base = make_base_learner(cfg.base, env, trunk, cfg.ppo, cfg.sac, seed, cfg.n_envs);
  return compose_trainer(mode, std::move(base), env, trunk, cfg, std::move(demos), seed);
}

}  // namespace birdhunt
