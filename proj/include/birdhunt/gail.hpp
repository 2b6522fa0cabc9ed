#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "birdhunt/learner.hpp"
#include "json.hpp"

namespace birdhunt {

struct GAILConfig {
  int hidden = 64;                   // discriminator trunk width
  std::optional<nn::NetSpec> network;  // overrides the default discriminator
  double learning_rate = 3e-4;
  double lambda_int = 1.0;
  double lambda_ext = 0.0;
  double gradient_penalty = 1.0;
  int demo_batch_size = 64;
  int update_every = 256;  // env steps between discriminator updates
  int updates = 4;         // discriminator steps per trigger
  int agent_buffer = 2048;  // recent agent samples the discriminator draws from

  void validate() const {
    if (!(lambda_int >= 0.0 && lambda_ext >= 0.0)) fail(ErrorKind::InvalidConfig, "gail reward strengths must be >= 0");
    if (lambda_int == 0.0 && lambda_ext == 0.0) fail(ErrorKind::InvalidConfig, "gail reward strengths cannot both be 0");
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidConfig, "gail learning_rate must be > 0");
    if (!(gradient_penalty >= 0.0)) fail(ErrorKind::InvalidConfig, "gail gradient_penalty must be >= 0");
    if (hidden < 1 || demo_batch_size < 1 || update_every < 1 || updates < 0 || agent_buffer < 1)
      fail(ErrorKind::InvalidConfig, "gail sizes must be positive");
  }
};

inline nlohmann::json to_json(const GAILConfig& c) {
  nlohmann::json j = {{"hidden", c.hidden},
                      {"learning_rate", c.learning_rate},
                      {"lambda_int", c.lambda_int},
                      {"lambda_ext", c.lambda_ext},
                      {"gradient_penalty", c.gradient_penalty},
                      {"demo_batch_size", c.demo_batch_size},
                      {"update_every", c.update_every},
                      {"updates", c.updates},
                      {"agent_buffer", c.agent_buffer}};
  if (c.network) j["network"] = to_json(*c.network);
  return j;
}

inline GAILConfig gail_config_from_json(const nlohmann::json& j) {
  GAILConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lambda_int = j.value("lambda_int", c.lambda_int);
  c.lambda_ext = j.value("lambda_ext", c.lambda_ext);
  c.gradient_penalty = j.value("gradient_penalty", c.gradient_penalty);
  c.demo_batch_size = j.value("demo_batch_size", c.demo_batch_size);
  c.update_every = j.value("update_every", c.update_every);
  c.updates = j.value("updates", c.updates);
  c.agent_buffer = j.value("agent_buffer", c.agent_buffer);
  if (j.contains("network")) c.network = nn::net_spec_from_json(j.at("network"));
  c.validate();
  return c;
}

/// Reward weights for the two replication regimes: demonstrations only
/// (low/medium) and demonstrations plus environment reward (high).
inline GAILConfig gail_defaults_for(Tier tier) {
  GAILConfig c;
  if (tier == Tier::High) {
    c.lambda_ext = 1.0;
    c.lambda_int = 0.5;
  }
  return c;
}

inline std::size_t discriminator_input_size(const EnvConfig& env) {
  return env.observation_size() + static_cast<std::size_t>(env.width + env.height);
}

// Input is the flattened observation followed by one-hot x and one-hot y.
inline nn::NetSpec discriminator_spec(const EnvConfig& env, int hidden) {
  const nn::Shape in{static_cast<int>(discriminator_input_size(env)), 1, 1};
  return {in,
          {nn::LayerSpec::flatten(), nn::LayerSpec::dense(hidden), nn::LayerSpec::relu(), nn::LayerSpec::dense(hidden),
           nn::LayerSpec::relu()},
          {nn::HeadSpec::linear(1)}};
}

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline constexpr double kMaxIntrinsic = 10.0;

/// -ln(1 - D) with D = sigmoid(logit), clamped to [0, 10].
inline double intrinsic_reward(double logit) { return std::clamp(softplus(logit), 0.0, kMaxIntrinsic); }

inline double combined_reward(double env_reward, double intrinsic, const GAILConfig& cfg) {
  return cfg.lambda_ext * env_reward + cfg.lambda_int * intrinsic;
}

struct PenaltyResult {
  double value = 0.0;  // mean over rows of (|d logit / d input| - 1)^2
  double mean_norm = 0.0;
};

/// Input-gradient penalty of a scalar-output dense/ReLU network and its exact
/// parameter gradient. With ReLU masks held fixed the input gradient is
/// g = W1 D1 W2 ... WL, so d(v.g)/dWk = outer(h_{k-1}, delta_k) where h is v
/// pushed forward through the bias-free masked network and delta the usual
/// backward deltas. Accumulates coef * d(value)/dparams into grad.
template <class T>
PenaltyResult input_gradient_penalty(const nn::Net& net, std::span<const T> params, std::span<const T> inputs, int batch,
                                     double coef, std::span<T> grad) {
  const auto& plan = net.plan();
  if (net.output_size() != 1) fail(ErrorKind::Incompatible, "gradient penalty needs a single-output network");
  for (const auto& p : plan)
    if (p.kind == nn::LayerKind::Conv) fail(ErrorKind::Incompatible, "gradient penalty supports dense networks only");
  const auto fw = net.forward<T>(params, inputs, batch);
  PenaltyResult res;
  std::vector<std::vector<double>> delta(plan.size());  // delta at each plan step's output
  for (int n = 0; n < batch; ++n) {
    const auto row = [&](std::size_t step, std::size_t size) { return fw.acts[step].data() + static_cast<std::size_t>(n) * size; };
    // Backward deltas for d logit / d input.
    std::vector<double> d{1.0};
    for (std::size_t i = plan.size(); i-- > 0;) {
      const auto& p = plan[i];
      delta[i] = d;
      if (p.kind == nn::LayerKind::Dense) {
        const std::size_t in = p.in.size(), out = p.out.size();
        std::vector<double> din(in, 0.0);
        for (std::size_t a = 0; a < in; ++a) {
          const T* w = params.data() + p.weight_offset + a * out;
          double s = 0.0;
          for (std::size_t b = 0; b < out; ++b) s += static_cast<double>(w[b]) * d[b];
          din[a] = s;
        }
        d = std::move(din);
      } else if (p.kind == nn::LayerKind::Relu) {
        const T* o = row(i + 1, p.out.size());
        for (std::size_t k = 0; k < d.size(); ++k)
          if (!(o[k] > T(0))) d[k] = 0.0;
      }
    }
    double norm = 0.0;
    for (double g : d) norm += g * g;
    norm = std::sqrt(norm);
    res.value += (norm - 1.0) * (norm - 1.0) / batch;
    res.mean_norm += norm / batch;
    if (grad.empty() || coef == 0.0 || norm == 0.0) continue;
    // v = dP/dg for this row, then push it forward.
    const double scale = coef * 2.0 * (norm - 1.0) / norm / batch;
    std::vector<double> h(d.size());
    for (std::size_t k = 0; k < d.size(); ++k) h[k] = scale * d[k];
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto& p = plan[i];
      if (p.kind == nn::LayerKind::Dense) {
        const std::size_t in = p.in.size(), out = p.out.size();
        std::vector<double> hout(out, 0.0);
        const auto& dl = delta[i];
        for (std::size_t a = 0; a < in; ++a) {
          if (h[a] == 0.0) continue;
          const T* w = params.data() + p.weight_offset + a * out;
          T* gw = grad.data() + p.weight_offset + a * out;
          for (std::size_t b = 0; b < out; ++b) {
            hout[b] += h[a] * static_cast<double>(w[b]);
            gw[b] += static_cast<T>(h[a] * dl[b]);
          }
        }
        h = std::move(hout);
      } else if (p.kind == nn::LayerKind::Relu) {
        const T* o = row(i + 1, p.out.size());
        for (std::size_t k = 0; k < h.size(); ++k)
          if (!(o[k] > T(0))) h[k] = 0.0;
      }
    }
  }
  return res;
}

struct DiscriminatorStats {
  double loss = 0.0;       // binary cross-entropy, demos labeled 1
  double penalty = 0.0;
  double accuracy = 0.0;   // fraction classified on the correct side of 0.5
  double demo_output = 0.0;
  double agent_output = 0.0;
};

/// Binary cross-entropy of logits against labels (mean over rows); writes
/// d(loss)/d(logit) * scale into d_logits when provided.
inline double bce_with_logits(std::span<const float> logits, std::span<const float> labels, std::span<float> d_logits = {},
                              double scale = 1.0) {
  double loss = 0.0;
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = labels[i];
    loss += (y * softplus(-z) + (1.0 - y) * softplus(z)) / n;
    if (!d_logits.empty()) d_logits[i] += static_cast<float>(scale * (sigmoid(z) - y) / n);
  }
  return loss;
}

class Discriminator {
 public:
  Discriminator(const EnvConfig& env, GAILConfig cfg, std::uint64_t seed)
      : env_(env),
        cfg_(std::move(cfg)),
        net_(cfg_.network ? *cfg_.network : discriminator_spec(env, cfg_.hidden)),
        params_(net_.init<float>(derive_seed(seed, 41))),
        opt_(params_.size()),
        rng_(derive_seed(seed, 42)) {
    cfg_.validate();
    if (net_.input_size() != discriminator_input_size(env) || net_.output_size() != 1 ||
        net_.spec().heads[0].kind != nn::HeadKind::Linear)
      fail(ErrorKind::InvalidConfig, "discriminator must map observation + one-hot actions to one logit");
  }

  const nn::Net& net() const { return net_; }
  std::vector<float>& params() { return params_; }
  const GAILConfig& config() const { return cfg_; }

  void encode(std::span<const float> obs, ActionPair a, std::vector<float>& out) const {
    if (obs.size() != env_.observation_size()) fail(ErrorKind::Incompatible, "discriminator observation size mismatch");
    if (a.x < 0 || a.x >= env_.width || a.y < 0 || a.y >= env_.height)
      fail(ErrorKind::InvalidArgument, "discriminator action out of range");
    const std::size_t base = out.size();
    out.insert(out.end(), obs.begin(), obs.end());
    out.resize(base + discriminator_input_size(env_), 0.0f);
    out[base + obs.size() + static_cast<std::size_t>(a.x)] = 1.0f;
    out[base + obs.size() + static_cast<std::size_t>(env_.width + a.y)] = 1.0f;
  }

  std::vector<float> logits(std::span<const float> obs, std::span<const ActionPair> actions) const {
    std::vector<float> in;
    in.reserve(actions.size() * net_.input_size());
    for (std::size_t i = 0; i < actions.size(); ++i)
      encode(obs.subspan(i * env_.observation_size(), env_.observation_size()), actions[i], in);
    return net_.forward<float>(params_, in, static_cast<int>(actions.size())).outputs();
  }

  std::vector<double> outputs(std::span<const float> obs, std::span<const ActionPair> actions) const {
    const auto z = logits(obs, actions);
    std::vector<double> d(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) d[i] = sigmoid(z[i]);
    return d;
  }

  /// Intrinsic rewards for a batch of transitions.
  std::vector<double> rewards(std::span<const Transition* const> batch) const {
    std::vector<float> obs;
    std::vector<ActionPair> actions;
    obs.reserve(batch.size() * env_.observation_size());
    for (const Transition* t : batch) {
      obs.insert(obs.end(), t->obs.begin(), t->obs.end());
      actions.push_back(t->action);
    }
    const auto z = logits(obs, actions);
    std::vector<double> r(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) r[i] = intrinsic_reward(z[i]);
    return r;
  }

  /// One discriminator step: BCE (demos 1, agent 0) plus the gradient penalty
  /// at random interpolations between paired demo and agent inputs.
  DiscriminatorStats update(std::span<const float> agent_obs, std::span<const ActionPair> agent_actions,
                            std::span<const float> demo_obs, std::span<const ActionPair> demo_actions) {
    if (agent_actions.empty() || demo_actions.empty())
      fail(ErrorKind::InvalidArgument, "discriminator update needs agent and demo samples");
    if (agent_obs.size() != agent_actions.size() * env_.observation_size() ||
        demo_obs.size() != demo_actions.size() * env_.observation_size())
      fail(ErrorKind::Incompatible, "discriminator batch shape mismatch");
    std::vector<float> in, labels;
    const std::size_t nd = demo_actions.size(), na = agent_actions.size();
    for (std::size_t i = 0; i < nd; ++i) {
      encode(demo_obs.subspan(i * env_.observation_size(), env_.observation_size()), demo_actions[i], in);
      labels.push_back(1.0f);
    }
    for (std::size_t i = 0; i < na; ++i) {
      encode(agent_obs.subspan(i * env_.observation_size(), env_.observation_size()), agent_actions[i], in);
      labels.push_back(0.0f);
    }
    const int rows = static_cast<int>(nd + na);
    const auto fw = net_.forward<float>(params_, in, rows);
    const auto& z = fw.outputs();
    std::vector<float> d_logits(z.size(), 0.0f);
    DiscriminatorStats st;
    st.loss = bce_with_logits(z, labels, d_logits);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = sigmoid(z[i]);
      if ((d > 0.5) == (labels[i] > 0.5f)) st.accuracy += 1.0 / rows;
      (labels[i] > 0.5f ? st.demo_output : st.agent_output) += d / (labels[i] > 0.5f ? nd : na);
    }
    std::vector<float> grad = net_.backward<float>(params_, fw, d_logits);
    if (cfg_.gradient_penalty > 0.0) {
      const std::size_t m = std::min(nd, na), width = net_.input_size();
      std::vector<float> mix(m * width);
      for (std::size_t i = 0; i < m; ++i) {
        const float u = static_cast<float>(uniform01(rng_));
        const float* a = in.data() + i * width;
        const float* b = in.data() + (nd + i) * width;
        for (std::size_t k = 0; k < width; ++k) mix[i * width + k] = u * a[k] + (1.0f - u) * b[k];
      }
      st.penalty = input_gradient_penalty<float>(net_, params_, mix, static_cast<int>(m), cfg_.gradient_penalty, grad).value;
    }
    if (!std::isfinite(st.loss) || !std::isfinite(st.penalty))
      fail(ErrorKind::NonFinite, "discriminator update: non-finite loss");
    nn::adam_step<float>(params_, grad, opt_, {cfg_.learning_rate});
    return st;
  }

 private:
  EnvConfig env_;
  GAILConfig cfg_;
  nn::Net net_;
  std::vector<float> params_;
  nn::AdamState opt_;
  Rng rng_;
};

}  // namespace birdhunt
