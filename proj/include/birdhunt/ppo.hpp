#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "birdhunt/learner.hpp"
#include "json.hpp"

namespace birdhunt {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 3;
  int minibatch_size = 64;
  int horizon = 512;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 3e-4;
  double max_grad_norm = 0.5;

  void validate() const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail(ErrorKind::InvalidConfig, "ppo clip_epsilon must lie in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorKind::InvalidConfig, "ppo gamma must lie in (0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail(ErrorKind::InvalidConfig, "ppo gae_lambda must lie in [0,1]");
    if (epochs < 1 || minibatch_size < 1 || horizon < 1) fail(ErrorKind::InvalidConfig, "ppo epochs, minibatch_size and horizon must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidConfig, "ppo learning_rate must be > 0");
  }
};

inline nlohmann::json to_json(const PPOConfig& c) {
  return {{"clip_epsilon", c.clip_epsilon}, {"gamma", c.gamma},           {"gae_lambda", c.gae_lambda},
          {"epochs", c.epochs},             {"minibatch_size", c.minibatch_size}, {"horizon", c.horizon},
          {"value_coef", c.value_coef},     {"entropy_coef", c.entropy_coef}, {"learning_rate", c.learning_rate},
          {"max_grad_norm", c.max_grad_norm}};
}

inline PPOConfig ppo_config_from_json(const nlohmann::json& j) {
  PPOConfig c;
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.gamma = j.value("gamma", c.gamma);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
  c.horizon = j.value("horizon", c.horizon);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.validate();
  return c;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimates for one contiguous segment. values holds
/// V(s_0..s_T), the last entry being the bootstrap value after the segment.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "compute_gae: empty input");
  if (values.size() != n + 1 || dones.size() != n)
    fail(ErrorKind::InvalidArgument, "compute_gae: rewards, values and dones are misaligned");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    running = delta + gamma * lambda * live * running;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
  }
  return out;
}

inline void normalize_in_place(std::span<double> v) {
  if (v.size() < 2) return;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = (x - mean) / (sd + 1e-8);
}

struct SurrogateTerm {
  double objective = 0.0;
  // d objective / d log pi(a|s); zero when the clipped branch is active.
  double d_log_prob = 0.0;
  bool clipped = false;
};

/// min(rho A, clip(rho, 1 - eps, 1 + eps) A) for one sample.
inline SurrogateTerm clipped_surrogate(double ratio, double advantage, double eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  SurrogateTerm s;
  if (unclipped <= clipped) {
    s.objective = unclipped;
    s.d_log_prob = ratio * advantage;
  } else {
    s.objective = clipped;
    s.clipped = true;
  }
  return s;
}

struct PPOBatch {
  std::vector<float> obs;  // row-major, one observation per row
  std::vector<ActionPair> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;  // already normalized
  std::vector<double> returns;
  std::size_t size() const { return actions.size(); }
};

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Policy and value networks with their optimizer state.
struct ActorCritic {
  nn::Net policy_net;
  std::vector<float> policy;
  nn::AdamState policy_opt;
  nn::Net value_net;
  std::vector<float> value;
  nn::AdamState value_opt;

  ActorCritic(const nn::NetSpec& pi_spec, const nn::NetSpec& v_spec, std::uint64_t seed)
      : policy_net(pi_spec),
        policy(policy_net.init<float>(derive_seed(seed, 11))),
        policy_opt(policy.size()),
        value_net(v_spec),
        value(value_net.init<float>(derive_seed(seed, 12))),
        value_opt(value.size()) {}
};

/// One gradient step of the clipped-surrogate objective on a minibatch.
/// The ratio is the product of the per-branch probability ratios.
inline PPOStats ppo_minibatch_step(ActorCritic& ac, const PPOBatch& batch, std::span<const std::size_t> rows,
                                   const PPOConfig& cfg) {
  const auto& net = ac.policy_net;
  const std::size_t obs_size = net.input_size();
  const int b = static_cast<int>(rows.size());
  std::vector<float> obs(rows.size() * obs_size);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(batch.obs.begin() + static_cast<std::ptrdiff_t>(rows[i] * obs_size), obs_size,
                obs.begin() + static_cast<std::ptrdiff_t>(i * obs_size));

  const auto fw = net.forward<float>(ac.policy, obs, b);
  const auto vfw = ac.value_net.forward<float>(ac.value, obs, b);
  const std::size_t out = net.output_size();
  const std::size_t wx = static_cast<std::size_t>(net.spec().heads[0].size);
  const std::size_t wy = static_cast<std::size_t>(net.spec().heads[1].size);
  std::vector<float> d_logits(static_cast<std::size_t>(b) * out, 0.0f);
  std::vector<float> d_value(static_cast<std::size_t>(b), 0.0f);

  PPOStats st;
  const double inv_b = 1.0 / b;
  int n_clipped = 0;
  for (int i = 0; i < b; ++i) {
    const std::size_t r = rows[static_cast<std::size_t>(i)];
    const float* row = fw.heads.data() + static_cast<std::size_t>(i) * out;
    std::span<const float> px(row + net.head_offset(0), wx), py(row + net.head_offset(1), wy);
    const ActionPair a = batch.actions[r];
    const double logp = safe_log(px[static_cast<std::size_t>(a.x)]) + safe_log(py[static_cast<std::size_t>(a.y)]);
    const double ratio = std::exp(logp - batch.old_log_probs[r]);
    const auto term = clipped_surrogate(ratio, batch.advantages[r], cfg.clip_epsilon);
    if (std::abs(ratio - 1.0) > cfg.clip_epsilon) ++n_clipped;
    st.policy_loss -= term.objective * inv_b;

    float* dl = d_logits.data() + static_cast<std::size_t>(i) * out;
    std::span<float> dx(dl + net.head_offset(0), wx), dy(dl + net.head_offset(1), wy);
    const double coef = -term.d_log_prob * inv_b;
    log_prob_backward(px, a.x, coef, dx);
    log_prob_backward(py, a.y, coef, dy);
    st.entropy += (entropy_backward(px, -cfg.entropy_coef * inv_b, dx) +
                   entropy_backward(py, -cfg.entropy_coef * inv_b, dy)) * inv_b;

    const double v = vfw.outputs()[static_cast<std::size_t>(i)];
    const double err = v - batch.returns[r];
    st.value_loss += err * err * inv_b;
    d_value[static_cast<std::size_t>(i)] = static_cast<float>(2.0 * cfg.value_coef * err * inv_b);
  }
  st.clip_fraction = static_cast<double>(n_clipped) * inv_b;
  if (!std::isfinite(st.policy_loss) || !std::isfinite(st.value_loss))
    fail(ErrorKind::NonFinite, "ppo_update: non-finite loss");

  auto g_pi = net.backward<float>(ac.policy, fw, d_logits);
  nn::clip_grad_norm<float>(g_pi, cfg.max_grad_norm);
  nn::adam_step<float>(ac.policy, g_pi, ac.policy_opt, {cfg.learning_rate});
  auto g_v = ac.value_net.backward<float>(ac.value, vfw, d_value);
  nn::clip_grad_norm<float>(g_v, cfg.max_grad_norm);
  nn::adam_step<float>(ac.value, g_v, ac.value_opt, {cfg.learning_rate});
  return st;
}

/// Epochs of shuffled minibatch steps over one batch; returns mean stats.
inline PPOStats ppo_update(ActorCritic& ac, const PPOBatch& batch, const PPOConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  PPOStats mean;
  int steps = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(i)))]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
      const auto st = ppo_minibatch_step(ac, batch, std::span<const std::size_t>(order).subspan(start, end - start), cfg);
      mean.policy_loss += st.policy_loss;
      mean.value_loss += st.value_loss;
      mean.entropy += st.entropy;
      mean.clip_fraction += st.clip_fraction;
      ++steps;
    }
  }
  if (steps > 0) {
    mean.policy_loss /= steps;
    mean.value_loss /= steps;
    mean.entropy /= steps;
    mean.clip_fraction /= steps;
  }
  return mean;
}

class PPOLearner : public Learner {
 public:
  PPOLearner(const EnvConfig& env, std::vector<nn::LayerSpec> trunk, PPOConfig cfg, std::uint64_t seed, int n_envs = 1)
      : cfg_(cfg), ac_(policy_spec(env, trunk), value_spec(env, trunk), seed), rng_(derive_seed(seed, 13)),
        n_envs_(n_envs), stats_(4) {
    cfg_.validate();
  }

  PolicySnapshot policy() const override { return {&ac_.policy_net, ac_.policy}; }
  const nn::Net& policy_net() const override { return ac_.policy_net; }
  std::span<float> policy_params() override { return ac_.policy; }
  std::int64_t chunk_size() const override { return static_cast<std::int64_t>(cfg_.horizon) * n_envs_; }
  ActorCritic& actor_critic() { return ac_; }

  std::vector<std::string> stat_names() const override {
    return {"policy_loss", "value_loss", "clip_fraction", "update_entropy"};
  }
  std::vector<double> take_stats() override { return stats_.take(); }
  void set_reward_fn(RewardFn fn) override { reward_fn_ = std::move(fn); }
  void set_reward_probe(RewardProbe fn) override { probe_ = std::move(fn); }

  // Builds the update batch from a chunk: training rewards, GAE per env
  // stream, batch-normalized advantages.
  PPOBatch make_batch(const Trajectory& chunk) const {
    std::vector<const Transition*> all;
    all.reserve(chunk.transitions.size());
    for (const auto& t : chunk.transitions) all.push_back(&t);
    std::vector<double> rewards = env_rewards(all);
    if (reward_fn_) reward_fn_(all, rewards);
    if (probe_) probe_(all, rewards);

    std::map<int, std::vector<std::size_t>> streams;
    for (std::size_t i = 0; i < all.size(); ++i) streams[all[i]->env_index].push_back(i);

    PPOBatch batch;
    batch.obs = stack_observations(all);
    batch.actions.resize(all.size());
    batch.old_log_probs.resize(all.size());
    batch.advantages.resize(all.size());
    batch.returns.resize(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      batch.actions[i] = all[i]->action;
      batch.old_log_probs[i] = all[i]->log_prob;
    }
    const auto values = ac_.value_net.forward<float>(ac_.value, batch.obs, static_cast<int>(all.size()));
    for (const auto& [env, idx] : streams) {
      const auto& last = *all[idx.back()];
      const auto boot = ac_.value_net.forward<float>(ac_.value, last.next_obs, 1);
      std::vector<double> r(idx.size()), v(idx.size() + 1);
      std::vector<std::uint8_t> d(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        r[k] = rewards[idx[k]];
        v[k] = values.outputs()[idx[k]];
        d[k] = all[idx[k]]->done ? 1 : 0;
      }
      v.back() = boot.outputs()[0];
      const auto gae = compute_gae(r, v, d, cfg_.gamma, cfg_.gae_lambda);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        batch.advantages[idx[k]] = gae.advantages[k];
        batch.returns[idx[k]] = gae.returns[k];
      }
    }
    normalize_in_place(batch.advantages);
    return batch;
  }

  void learn(const Trajectory& chunk) override {
    if (chunk.transitions.empty()) return;
    const auto batch = make_batch(chunk);
    const auto st = ppo_update(ac_, batch, cfg_, rng_);
    stats_.add(0, st.policy_loss);
    stats_.add(1, st.value_loss);
    stats_.add(2, st.clip_fraction);
    stats_.add(3, st.entropy);
  }

 private:
  PPOConfig cfg_;
  ActorCritic ac_;
  Rng rng_;
  int n_envs_;
  StatsAccumulator stats_;
  RewardFn reward_fn_;
  RewardProbe probe_;
};

}  // namespace birdhunt
