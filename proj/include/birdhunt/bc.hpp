#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "birdhunt/demo.hpp"
#include "birdhunt/learner.hpp"
#include "json.hpp"

namespace birdhunt {

struct BCConfig {
  double learning_rate = 3e-4;
  int batch_size = 64;
  int epochs = 10;            // passes over the dataset for offline fitting
  int update_every = 4;       // env steps between supervised updates (SAC trains every 4)
  int updates = 1;            // minibatch steps per trigger
  double initial_strength = 0.5;  // auxiliary-loss weight before any decay
  std::int64_t decay_steps = 50000;  // strength halves every decay_steps env steps

  void validate() const {
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidConfig, "bc learning_rate must be > 0");
    if (batch_size < 1 || epochs < 1 || update_every < 1 || updates < 0)
      fail(ErrorKind::InvalidConfig, "bc batch_size, epochs, update_every must be >= 1 and updates >= 0");
    if (!(initial_strength >= 0.0 && initial_strength <= 1.0))
      fail(ErrorKind::InvalidConfig, "bc strength must lie in [0,1]");
    if (decay_steps < 1) fail(ErrorKind::InvalidConfig, "bc decay_steps must be >= 1");
  }
};

inline nlohmann::json to_json(const BCConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"update_every", c.update_every},
          {"updates", c.updates},             {"initial_strength", c.initial_strength},
          {"decay_steps", c.decay_steps}};
}

inline BCConfig bc_config_from_json(const nlohmann::json& j) {
  BCConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.update_every = j.value("update_every", c.update_every);
  c.updates = j.value("updates", c.updates);
  c.initial_strength = j.value("initial_strength", c.initial_strength);
  c.decay_steps = j.value("decay_steps", c.decay_steps);
  c.validate();
  return c;
}

/// Auxiliary-loss weight after `step` env steps: halves every decay_steps.
inline double bc_strength(const BCConfig& cfg, std::int64_t step) {
  return cfg.initial_strength * std::pow(0.5, static_cast<double>(step / cfg.decay_steps));
}

struct BCStats {
  double loss = 0.0;      // mean over the batch of the summed per-branch cross-entropy
  double accuracy = 0.0;  // fraction where both branch argmaxes match the demo
};

namespace detail {

template <class T>
int first_argmax(std::span<const T> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace detail

/// Cross-entropy of a policy against demonstrated actions. When `grad` is
/// non-empty, accumulates scale * d(mean loss)/dparams into it.
template <class T>
BCStats bc_loss(const nn::Net& net, std::span<const T> params, std::span<const T> obs,
                std::span<const ActionPair> actions, std::span<T> grad = {}, double scale = 1.0) {
  if (actions.empty()) fail(ErrorKind::InvalidArgument, "bc: empty demo batch");
  const int b = static_cast<int>(actions.size());
  const std::size_t wx = static_cast<std::size_t>(net.spec().heads[0].size);
  const std::size_t wy = static_cast<std::size_t>(net.spec().heads[1].size);
  for (const auto& a : actions)
    if (a.x < 0 || static_cast<std::size_t>(a.x) >= wx || a.y < 0 || static_cast<std::size_t>(a.y) >= wy)
      fail(ErrorKind::InvalidArgument, "bc: demo action (" + std::to_string(a.x) + "," + std::to_string(a.y) +
                                           ") out of range");
  const auto fw = net.forward<T>(params, obs, b);
  std::vector<T> d_out(grad.empty() ? 0 : fw.heads.size(), T(0));
  BCStats st;
  for (int i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const T* row = fw.heads.data() + k * net.output_size();
    std::span<const T> px(row + net.head_offset(0), wx), py(row + net.head_offset(1), wy);
    const auto a = actions[k];
    st.loss += -(safe_log(px[static_cast<std::size_t>(a.x)]) + safe_log(py[static_cast<std::size_t>(a.y)])) / b;
    if (detail::first_argmax(px) == a.x && detail::first_argmax(py) == a.y) st.accuracy += 1.0 / b;
    if (!grad.empty()) {
      T* d = d_out.data() + k * net.output_size();
      log_prob_backward<T>(px, a.x, -scale / b, std::span<T>(d + net.head_offset(0), wx));
      log_prob_backward<T>(py, a.y, -scale / b, std::span<T>(d + net.head_offset(1), wy));
    }
  }
  if (!std::isfinite(st.loss)) fail(ErrorKind::NonFinite, "bc: non-finite loss");
  if (!grad.empty()) net.backward_into<T>(params, fw, d_out, grad);
  return st;
}

/// One supervised step on a batch. `strength` scales the loss (auxiliary use).
inline BCStats bc_update(const nn::Net& net, std::span<float> params, nn::AdamState& opt, std::span<const float> obs,
                         std::span<const ActionPair> actions, const BCConfig& cfg, double strength = 1.0) {
  std::vector<float> grad(params.size(), 0.0f);
  const auto st = bc_loss<float>(net, params, obs, actions, grad, strength);
  nn::adam_step<float>(params, grad, opt, {cfg.learning_rate});
  return st;
}

/// Draws a uniform minibatch (with replacement) from a demo dataset.
inline void sample_demo_batch(const DemoDataset& ds, std::size_t n, Rng& rng, std::vector<float>& obs,
                              std::vector<ActionPair>& actions) {
  if (ds.size() == 0) fail(ErrorKind::InvalidArgument, "demo dataset is empty");
  obs.clear();
  actions.clear();
  obs.reserve(n * ds.obs_size);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(ds.size())));
    const auto o = ds.observation(i);
    obs.insert(obs.end(), o.begin(), o.end());
    actions.push_back(ds.actions[i]);
  }
}

/// Offline behavioral cloning: cfg.epochs shuffled passes over the dataset.
inline BCStats fit_bc(const nn::Net& net, std::vector<float>& params, const DemoDataset& ds, const BCConfig& cfg,
                      std::uint64_t seed) {
  cfg.validate();
  if (ds.size() == 0) fail(ErrorKind::InvalidArgument, "demo dataset is empty");
  nn::AdamState opt(params.size());
  Rng rng(seed);
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  BCStats last;
  std::vector<float> obs;
  std::vector<ActionPair> actions;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(i)))]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      obs.clear();
      actions.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto o = ds.observation(order[k]);
        obs.insert(obs.end(), o.begin(), o.end());
        actions.push_back(ds.actions[order[k]]);
      }
      last = bc_update(net, params, opt, obs, actions, cfg);
    }
  }
  return last;
}

/// Pure supervised learner: experience is collected only for metrics, and
/// every cfg.update_every env steps it takes cfg.updates demo minibatch steps.
class BCLearner : public Learner {
 public:
  BCLearner(const EnvConfig& env, std::vector<nn::LayerSpec> trunk, BCConfig cfg, std::shared_ptr<const DemoDataset> demos,
            std::uint64_t seed)
      : cfg_(cfg),
        net_(policy_spec(env, std::move(trunk))),
        params_(net_.init<float>(derive_seed(seed, 31))),
        opt_(params_.size()),
        demos_(std::move(demos)),
        rng_(derive_seed(seed, 32)),
        stats_(2) {
    cfg_.validate();
    if (!demos_ || demos_->size() == 0) fail(ErrorKind::InvalidArgument, "BC needs demonstrations");
    if (demos_->obs_size != net_.input_size()) fail(ErrorKind::Incompatible, "demo observations do not match env");
  }

  PolicySnapshot policy() const override { return {&net_, params_}; }
  const nn::Net& policy_net() const override { return net_; }
  std::span<float> policy_params() override { return params_; }
  std::int64_t chunk_size() const override { return cfg_.update_every; }
  std::vector<std::string> stat_names() const override { return {"bc_loss", "bc_accuracy"}; }
  std::vector<double> take_stats() override { return stats_.take(); }

  void learn(const Trajectory&) override {
    for (int u = 0; u < cfg_.updates; ++u) {
      sample_demo_batch(*demos_, static_cast<std::size_t>(cfg_.batch_size), rng_, obs_, actions_);
      const auto st = bc_update(net_, params_, opt_, obs_, actions_, cfg_);
      stats_.add(0, st.loss);
      stats_.add(1, st.accuracy);
    }
  }

 private:
  BCConfig cfg_;
  nn::Net net_;
  std::vector<float> params_;
  nn::AdamState opt_;
  std::shared_ptr<const DemoDataset> demos_;
  Rng rng_;
  StatsAccumulator stats_;
  std::vector<float> obs_;
  std::vector<ActionPair> actions_;
};

}  // namespace birdhunt
