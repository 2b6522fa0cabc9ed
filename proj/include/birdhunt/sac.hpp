#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "birdhunt/learner.hpp"
#include "json.hpp"

namespace birdhunt {

struct SACConfig {
  double gamma = 0.99;
  int replay_capacity = 20000;
  int batch_size = 64;
  double tau = 0.005;
  bool auto_alpha = true;
  double alpha = 0.01;  // fixed value, or the starting value when auto-tuned
  double target_entropy_scale = 0.3;  // fraction of the maximum policy entropy
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  int train_every = 4;
  int updates_per_train = 1;
  int learning_starts = 1000;

  void validate() const {
    if (replay_capacity < batch_size || batch_size < 1)
      fail(ErrorKind::InvalidConfig, "sac replay_capacity must be >= batch_size >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorKind::InvalidConfig, "sac tau must lie in (0,1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::InvalidConfig, "sac gamma must lie in [0,1]");
    if (!(alpha >= 0.0)) fail(ErrorKind::InvalidConfig, "sac alpha must be >= 0");
    if (auto_alpha && !(alpha > 0.0)) fail(ErrorKind::InvalidConfig, "auto-tuned alpha needs a positive start");
    if (train_every < 1 || updates_per_train < 0 || learning_starts < 0)
      fail(ErrorKind::InvalidConfig, "sac train_every must be >= 1, updates_per_train and learning_starts >= 0");
  }
};

inline nlohmann::json to_json(const SACConfig& c) {
  return {{"gamma", c.gamma},         {"replay_capacity", c.replay_capacity},
          {"batch_size", c.batch_size}, {"tau", c.tau},
          {"auto_alpha", c.auto_alpha}, {"alpha", c.alpha},
          {"target_entropy_scale", c.target_entropy_scale},
          {"actor_lr", c.actor_lr},   {"critic_lr", c.critic_lr},
          {"alpha_lr", c.alpha_lr},   {"train_every", c.train_every},
          {"updates_per_train", c.updates_per_train}, {"learning_starts", c.learning_starts}};
}

inline SACConfig sac_config_from_json(const nlohmann::json& j) {
  SACConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.tau = j.value("tau", c.tau);
  c.auto_alpha = j.value("auto_alpha", c.auto_alpha);
  c.alpha = j.value("alpha", c.alpha);
  c.target_entropy_scale = j.value("target_entropy_scale", c.target_entropy_scale);
  c.actor_lr = j.value("actor_lr", c.actor_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.alpha_lr = j.value("alpha_lr", c.alpha_lr);
  c.train_every = j.value("train_every", c.train_every);
  c.updates_per_train = j.value("updates_per_train", c.updates_per_train);
  c.learning_starts = j.value("learning_starts", c.learning_starts);
  c.validate();
  return c;
}

/// Fixed-capacity FIFO of transitions with uniform sampling. Every insert gets
/// a sequence number so eviction order is observable.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) fail(ErrorKind::InvalidArgument, "replay capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void add(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
      seqs_.push_back(next_seq_++);
    } else {
      items_[head_] = std::move(t);
      seqs_[head_] = next_seq_++;
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) fail(ErrorKind::InvalidArgument, "cannot sample an empty replay buffer");
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(items_.size())))];
    return out;
  }

  std::vector<std::uint64_t> sequence_numbers() const { return seqs_; }
  std::uint64_t sequence_of(const Transition* t) const {
    return seqs_[static_cast<std::size_t>(t - items_.data())];
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::vector<std::uint64_t> seqs_;
  std::size_t head_ = 0;
  std::uint64_t next_seq_ = 0;
};

/// Policy, twin critics, their targets and the entropy temperature.
struct SACNets {
  nn::Net policy_net;
  std::vector<float> policy;
  nn::AdamState policy_opt;
  nn::Net q_net;
  std::vector<float> q1, q2, q1_target, q2_target;
  nn::AdamState q1_opt, q2_opt;
  double log_alpha = 0.0;
  nn::AdamState alpha_opt{1};

  SACNets(const nn::NetSpec& pi_spec, const nn::NetSpec& qspec, std::uint64_t seed, double alpha)
      : policy_net(pi_spec),
        policy(policy_net.init<float>(derive_seed(seed, 21))),
        policy_opt(policy.size()),
        q_net(qspec),
        q1(q_net.init<float>(derive_seed(seed, 22), nn::HeadInit::Random)),
        q2(q_net.init<float>(derive_seed(seed, 23), nn::HeadInit::Random)),
        q1_target(q1),
        q2_target(q2),
        q1_opt(q1.size()),
        q2_opt(q2.size()),
        log_alpha(std::log(std::max(alpha, 1e-12))) {
    const auto& h = qspec.heads;
    if (h.size() != 3 || h[0] != nn::HeadSpec::linear(pi_spec.heads[0].size) ||
        h[1] != nn::HeadSpec::linear(pi_spec.heads[1].size) || h[2] != nn::HeadSpec::linear(1))
      fail(ErrorKind::InvalidConfig, "Q network heads must be (branch x values, branch y values, baseline)");
  }

  double alpha() const { return std::exp(log_alpha); }
};

// Joint Q over the factorized action space: Q(x, y) = Qx[x] + Qy[y] - baseline.
struct FactoredQ {
  std::span<const float> qx;
  std::span<const float> qy;
  double baseline = 0.0;
  double operator()(int x, int y) const {
    return static_cast<double>(qx[static_cast<std::size_t>(x)]) + qy[static_cast<std::size_t>(y)] - baseline;
  }
};

inline FactoredQ factored_q(const nn::Net& net, const std::vector<float>& outputs, int row) {
  const std::size_t out = net.output_size();
  const float* r = outputs.data() + static_cast<std::size_t>(row) * out;
  return {{r + net.head_offset(0), static_cast<std::size_t>(net.spec().heads[0].size)},
          {r + net.head_offset(1), static_cast<std::size_t>(net.spec().heads[1].size)},
          static_cast<double>(r[net.head_offset(2)])};
}

/// Soft state value under the exact categorical expectation:
/// sum_{x,y} pi(x) pi(y) min(Q1, Q2)(x, y) + alpha * H(pi).
inline double soft_value(std::span<const float> px, std::span<const float> py, const FactoredQ& q1,
                         const FactoredQ& q2, double alpha) {
  double v = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0f) continue;
    double row = 0.0;
    for (std::size_t y = 0; y < py.size(); ++y)
      row += py[y] * std::min(q1(static_cast<int>(x), static_cast<int>(y)), q2(static_cast<int>(x), static_cast<int>(y)));
    v += px[x] * row;
  }
  return v + alpha * (branch_entropy(px) + branch_entropy(py));
}

/// Per-state policy objective E_pi[alpha log pi - min(Q1, Q2)], in closed form.
inline double sac_policy_objective(std::span<const float> px, std::span<const float> py, const FactoredQ& q1,
                                   const FactoredQ& q2, double alpha) {
  return -soft_value(px, py, q1, q2, alpha);
}

struct SACStats {
  double q_loss = 0.0;
  double policy_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

namespace detail {

inline void polyak(std::vector<float>& target, const std::vector<float>& online, double tau) {
  if (tau == 1.0) {
    target = online;
    return;
  }
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = static_cast<float>(tau * online[i] + (1.0 - tau) * target[i]);
}

}  // namespace detail

/// Critic targets r + gamma (1 - done) V_soft(s') using the target critics.
inline std::vector<double> sac_critic_targets(const SACNets& nets, std::span<const Transition* const> batch,
                                              std::span<const double> rewards, const SACConfig& cfg) {
  const int b = static_cast<int>(batch.size());
  const auto next_obs = stack_observations(batch, true);
  const auto pfw = nets.policy_net.forward<float>(nets.policy, next_obs, b);
  const auto t1 = nets.q_net.forward<float>(nets.q1_target, next_obs, b);
  const auto t2 = nets.q_net.forward<float>(nets.q2_target, next_obs, b);
  const auto& pn = nets.policy_net;
  const std::size_t wx = static_cast<std::size_t>(pn.spec().heads[0].size);
  const std::size_t wy = static_cast<std::size_t>(pn.spec().heads[1].size);
  const double alpha = cfg.auto_alpha ? nets.alpha() : cfg.alpha;
  std::vector<double> y(batch.size());
  for (int i = 0; i < b; ++i) {
    const float* row = pfw.heads.data() + static_cast<std::size_t>(i) * pn.output_size();
    std::span<const float> px(row + pn.head_offset(0), wx), py(row + pn.head_offset(1), wy);
    const double v = soft_value(px, py, factored_q(nets.q_net, t1.outputs(), i), factored_q(nets.q_net, t2.outputs(), i), alpha);
    const auto k = static_cast<std::size_t>(i);
    y[k] = rewards[k] + cfg.gamma * (batch[k]->done ? 0.0 : 1.0) * v;
  }
  return y;
}

/// Regresses both critics onto fixed targets; returns the mean squared error.
inline double sac_critic_step(SACNets& nets, std::span<const Transition* const> batch, std::span<const double> targets,
                              const SACConfig& cfg) {
  const int b = static_cast<int>(batch.size());
  const auto obs = stack_observations(batch);
  const auto& qn = nets.q_net;
  double loss = 0.0;
  for (int which = 0; which < 2; ++which) {
    auto& params = which == 0 ? nets.q1 : nets.q2;
    auto& opt = which == 0 ? nets.q1_opt : nets.q2_opt;
    const auto fw = qn.forward<float>(params, obs, b);
    std::vector<float> d_out(fw.outputs().size(), 0.0f);
    for (int i = 0; i < b; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const ActionPair a = batch[k]->action;
      const double delta = factored_q(qn, fw.outputs(), i)(a.x, a.y) - targets[k];
      loss += 0.5 * delta * delta / b;
      float* d = d_out.data() + k * qn.output_size();
      d[qn.head_offset(0) + static_cast<std::size_t>(a.x)] += static_cast<float>(delta / b);
      d[qn.head_offset(1) + static_cast<std::size_t>(a.y)] += static_cast<float>(delta / b);
      d[qn.head_offset(2)] -= static_cast<float>(delta / b);
    }
    const auto g = qn.backward<float>(params, fw, d_out);
    nn::adam_step<float>(params, g, opt, {cfg.critic_lr});
  }
  if (!std::isfinite(loss)) fail(ErrorKind::NonFinite, "sac_update: non-finite critic loss");
  return loss / 2.0;
}

struct PolicyStepResult {
  double loss = 0.0;
  double entropy = 0.0;  // mean summed branch entropy before the step
};

/// One actor step on E_s E_pi[alpha log pi - min(Q1, Q2)] with the exact
/// categorical expectation. Critics are read, never written.
inline PolicyStepResult sac_policy_step(SACNets& nets, std::span<const float> obs, int b, double alpha,
                                        const SACConfig& cfg) {
  const auto& pn = nets.policy_net;
  const auto& qn = nets.q_net;
  const auto pfw = pn.forward<float>(nets.policy, obs, b);
  const auto f1 = qn.forward<float>(nets.q1, obs, b);
  const auto f2 = qn.forward<float>(nets.q2, obs, b);
  const std::size_t wx = static_cast<std::size_t>(pn.spec().heads[0].size);
  const std::size_t wy = static_cast<std::size_t>(pn.spec().heads[1].size);
  std::vector<float> d_logits(pfw.heads.size(), 0.0f);
  std::vector<double> gx(wx), gy(wy), m(wx * wy);
  PolicyStepResult res;
  for (int i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const float* row = pfw.heads.data() + k * pn.output_size();
    std::span<const float> px(row + pn.head_offset(0), wx), py(row + pn.head_offset(1), wy);
    const auto q1 = factored_q(qn, f1.outputs(), i), q2 = factored_q(qn, f2.outputs(), i);
    for (std::size_t x = 0; x < wx; ++x)
      for (std::size_t y = 0; y < wy; ++y)
        m[x * wy + y] = std::min(q1(static_cast<int>(x), static_cast<int>(y)), q2(static_cast<int>(x), static_cast<int>(y)));
    std::fill(gx.begin(), gx.end(), 0.0);
    std::fill(gy.begin(), gy.end(), 0.0);
    double expected_q = 0.0;
    for (std::size_t x = 0; x < wx; ++x)
      for (std::size_t y = 0; y < wy; ++y) {
        const double q = m[x * wy + y];
        gx[x] -= py[y] * q;
        gy[y] -= px[x] * q;
        expected_q += px[x] * py[y] * q;
      }
    for (std::size_t x = 0; x < wx; ++x) gx[x] = (gx[x] + alpha * (safe_log(px[x]) + 1.0)) / b;
    for (std::size_t y = 0; y < wy; ++y) gy[y] = (gy[y] + alpha * (safe_log(py[y]) + 1.0)) / b;
    const double h = branch_entropy(px) + branch_entropy(py);
    res.loss += (-alpha * h - expected_q) / b;
    res.entropy += h / b;
    float* dl = d_logits.data() + k * pn.output_size();
    softmax_backward<float>(px, gx, std::span<float>(dl + pn.head_offset(0), wx));
    softmax_backward<float>(py, gy, std::span<float>(dl + pn.head_offset(1), wy));
  }
  if (!std::isfinite(res.loss)) fail(ErrorKind::NonFinite, "sac_update: non-finite policy loss");
  const auto g = pn.backward<float>(nets.policy, pfw, d_logits);
  nn::adam_step<float>(nets.policy, g, nets.policy_opt, {cfg.actor_lr});
  return res;
}

/// Full discrete SAC update: critics, actor, temperature, then Polyak targets.
inline SACStats sac_update(SACNets& nets, std::span<const Transition* const> batch, std::span<const double> rewards,
                           const SACConfig& cfg, double target_entropy) {
  if (batch.empty()) fail(ErrorKind::InvalidArgument, "sac_update: empty batch");
  SACStats st;
  const auto targets = sac_critic_targets(nets, batch, rewards, cfg);
  st.q_loss = sac_critic_step(nets, batch, targets, cfg);
  const double alpha = cfg.auto_alpha ? nets.alpha() : cfg.alpha;
  const auto obs = stack_observations(batch);
  const auto pol = sac_policy_step(nets, obs, static_cast<int>(batch.size()), alpha, cfg);
  st.policy_loss = pol.loss;
  st.entropy = pol.entropy;
  if (cfg.auto_alpha) {
    // d/dlog_alpha of log_alpha * (H - target): alpha rises when entropy is low.
    std::array<double, 1> la{nets.log_alpha};
    const std::array<double, 1> g{pol.entropy - target_entropy};
    nn::adam_step<double>(la, g, nets.alpha_opt, {cfg.alpha_lr});
    nets.log_alpha = la[0];
  }
  st.alpha = cfg.auto_alpha ? nets.alpha() : cfg.alpha;
  detail::polyak(nets.q1_target, nets.q1, cfg.tau);
  detail::polyak(nets.q2_target, nets.q2, cfg.tau);
  return st;
}

class SACLearner : public Learner {
 public:
  SACLearner(const EnvConfig& env, std::vector<nn::LayerSpec> trunk, SACConfig cfg, std::uint64_t seed)
      : cfg_(cfg),
        nets_(policy_spec(env, trunk), q_spec(env, trunk), seed, cfg.alpha),
        replay_(static_cast<std::size_t>(cfg.replay_capacity)),
        rng_(derive_seed(seed, 24)),
        target_entropy_(cfg.target_entropy_scale * (std::log(env.width) + std::log(env.height))),
        stats_(4) {
    cfg_.validate();
  }

  PolicySnapshot policy() const override { return {&nets_.policy_net, nets_.policy}; }
  const nn::Net& policy_net() const override { return nets_.policy_net; }
  std::span<float> policy_params() override { return nets_.policy; }
  std::int64_t chunk_size() const override { return cfg_.train_every; }
  SACNets& nets() { return nets_; }
  const ReplayBuffer& replay() const { return replay_; }
  double target_entropy() const { return target_entropy_; }

  std::vector<std::string> stat_names() const override { return {"q_loss", "policy_loss", "alpha", "update_entropy"}; }
  std::vector<double> take_stats() override { return stats_.take(); }
  void set_reward_fn(RewardFn fn) override { reward_fn_ = std::move(fn); }
  void set_reward_probe(RewardProbe fn) override { probe_ = std::move(fn); }

  void learn(const Trajectory& chunk) override {
    for (const auto& t : chunk.transitions) {
      replay_.add(t);
      ++seen_;
      if (++since_train_ < cfg_.train_every) continue;
      since_train_ = 0;
      if (seen_ < cfg_.learning_starts || replay_.size() < static_cast<std::size_t>(cfg_.batch_size)) continue;
      for (int u = 0; u < cfg_.updates_per_train; ++u) update_once();
    }
  }

 private:
  void update_once() {
    const auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
    auto rewards = env_rewards(batch);
    if (reward_fn_) reward_fn_(batch, rewards);
    if (probe_) probe_(batch, rewards);
    const auto st = sac_update(nets_, batch, rewards, cfg_, target_entropy_);
    stats_.add(0, st.q_loss);
    stats_.add(1, st.policy_loss);
    stats_.add(2, st.alpha);
    stats_.add(3, st.entropy);
  }

  SACConfig cfg_;
  SACNets nets_;
  ReplayBuffer replay_;
  Rng rng_;
  double target_entropy_;
  StatsAccumulator stats_;
  std::int64_t seen_ = 0;
  int since_train_ = 0;
  RewardFn reward_fn_;
  RewardProbe probe_;
};

}  // namespace birdhunt
