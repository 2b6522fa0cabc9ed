#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "birdhunt/common.hpp"
#include "birdhunt/env.hpp"
#include "birdhunt/nn.hpp"

namespace birdhunt {

// Network shapes shared by the trainers. A policy has one categorical branch
// per screen axis; Q-networks emit one value per branch action plus a shared
// baseline.
inline nn::Shape observation_shape(const EnvConfig& env) {
  return {env.width, env.height, env.channels};
}

inline std::vector<nn::LayerSpec> trunk_for(const EnvConfig& env, int hidden = 128) {
  return nn::default_trunk(observation_shape(env), hidden);
}

inline nn::NetSpec policy_spec(const EnvConfig& env, std::vector<nn::LayerSpec> trunk) {
  return {observation_shape(env), std::move(trunk),
          {nn::HeadSpec::categorical(env.width), nn::HeadSpec::categorical(env.height)}};
}

inline nn::NetSpec value_spec(const EnvConfig& env, std::vector<nn::LayerSpec> trunk) {
  return {observation_shape(env), std::move(trunk), {nn::HeadSpec::linear(1)}};
}

inline nn::NetSpec q_spec(const EnvConfig& env, std::vector<nn::LayerSpec> trunk) {
  return {observation_shape(env), std::move(trunk),
          {nn::HeadSpec::linear(env.width), nn::HeadSpec::linear(env.height), nn::HeadSpec::linear(1)}};
}

/// Checks that a network is a two-branch policy for this environment.
inline void require_policy_for(const nn::NetSpec& spec, const EnvConfig& env) {
  const bool ok = spec.input == observation_shape(env) && spec.heads.size() == 2 &&
                  spec.heads[0] == nn::HeadSpec::categorical(env.width) &&
                  spec.heads[1] == nn::HeadSpec::categorical(env.height);
  if (!ok) fail(ErrorKind::Incompatible, "policy network does not match the environment's observation and action shapes");
}

inline int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cdf = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cdf += probs[i];
    last_positive = static_cast<int>(i);
    if (u < cdf) return static_cast<int>(i);
  }
  return last_positive;
}

/// Argmax with exact ties broken uniformly at random.
template <class T>
int greedy_index(std::span<const T> values, Rng& rng) {
  T best = values[0];
  int count = 0;
  int choice = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > best) {
      best = values[i];
      count = 0;
    }
    if (values[i] == best && uniform_index(rng, ++count) == 0) choice = static_cast<int>(i);
  }
  return choice;
}

template <class T>
std::vector<double> softmax_with_temperature(std::span<const T> logits, double temperature) {
  std::vector<double> p(logits.size());
  double mx = -INFINITY;
  for (T z : logits) mx = std::max(mx, static_cast<double>(z) / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(static_cast<double>(logits[i]) / temperature - mx);
  for (double& x : p) x /= sum;
  return p;
}

// Reverse-mode helpers for a categorical head. Given dL/dp for the softmax
// probabilities, writes dL/dlogits: p_i (g_i - sum_j p_j g_j).
template <class T>
void softmax_backward(std::span<const T> probs, std::span<const double> d_probs, std::span<T> d_logits) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * d_probs[i];
  for (std::size_t i = 0; i < probs.size(); ++i)
    d_logits[i] += static_cast<T>(probs[i] * (d_probs[i] - dot));
}

// d(log p_a)/dlogits = onehot(a) - p, scaled by coef and accumulated.
template <class T>
void log_prob_backward(std::span<const T> probs, int a, double coef, std::span<T> d_logits) {
  for (std::size_t i = 0; i < probs.size(); ++i)
    d_logits[i] += static_cast<T>(coef * ((static_cast<int>(i) == a ? 1.0 : 0.0) - probs[i]));
}

// dH/dlogits = -p_i (ln p_i + H), scaled by coef and accumulated.
template <class T>
double entropy_backward(std::span<const T> probs, double coef, std::span<T> d_logits) {
  double h = 0.0;
  for (T p : probs)
    if (p > T(0)) h -= p * std::log(static_cast<double>(p));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double lp = probs[i] > T(0) ? std::log(static_cast<double>(probs[i])) : 0.0;
    d_logits[i] += static_cast<T>(coef * (-static_cast<double>(probs[i]) * (lp + h)));
  }
  return h;
}

template <class T>
double branch_entropy(std::span<const T> probs) {
  double h = 0.0;
  for (T p : probs)
    if (p > T(0)) h -= p * std::log(static_cast<double>(p));
  return h;
}

inline double safe_log(double p) { return std::log(std::max(p, 1e-30)); }

struct PolicySample {
  ActionPair action;
  double log_prob = 0.0;
  double entropy = 0.0;
};

/// Read-only view of a two-branch policy used by rollout workers.
struct PolicySnapshot {
  const nn::Net* net = nullptr;
  std::span<const float> params;
  double temperature = 1.0;
  bool greedy = false;
};

// Draws an action for one observation. The reported log-probability and
// entropy are those of the untempered policy.
inline PolicySample act(const PolicySnapshot& policy, std::span<const float> obs, Rng& rng) {
  const auto& net = *policy.net;
  const auto fw = net.forward<float>(policy.params, obs, 1);
  const std::size_t wx = static_cast<std::size_t>(net.spec().heads[0].size);
  const std::size_t wy = static_cast<std::size_t>(net.spec().heads[1].size);
  std::span<const float> px(fw.heads.data() + net.head_offset(0), wx);
  std::span<const float> py(fw.heads.data() + net.head_offset(1), wy);
  std::span<const float> zx(fw.outputs().data() + net.head_offset(0), wx);
  std::span<const float> zy(fw.outputs().data() + net.head_offset(1), wy);

  PolicySample s;
  if (policy.greedy) {
    s.action = {greedy_index(px, rng), greedy_index(py, rng)};
  } else if (policy.temperature == 1.0) {
    const std::vector<double> dx(px.begin(), px.end()), dy(py.begin(), py.end());
    s.action = {sample_categorical(dx, rng), sample_categorical(dy, rng)};
  } else {
    s.action = {sample_categorical(softmax_with_temperature(zx, policy.temperature), rng),
                sample_categorical(softmax_with_temperature(zy, policy.temperature), rng)};
  }
  s.log_prob = safe_log(px[static_cast<std::size_t>(s.action.x)]) + safe_log(py[static_cast<std::size_t>(s.action.y)]);
  s.entropy = branch_entropy(px) + branch_entropy(py);
  return s;
}

}  // namespace birdhunt
