#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "birdhunt/ppo.hpp"

using namespace birdhunt;

namespace {

// Advantage as the explicit discounted sum of TD errors up to the first done.
std::vector<double> gae_by_sum(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<std::uint8_t>& d, double g, double l) {
  const std::size_t n = r.size();
  std::vector<double> a(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      const double delta = r[k] + (d[k] ? 0.0 : g * v[k + 1]) - v[k];
      a[t] += w * delta;
      if (d[k]) break;
      w *= g * l;
    }
  }
  return a;
}

double log_prob_of(const nn::Net& net, std::span<const float> params, std::span<const float> obs, ActionPair a) {
  const auto fw = net.forward<float>(params, obs, 1);
  const float* h = fw.heads.data();
  return std::log(h[net.head_offset(0) + static_cast<std::size_t>(a.x)]) +
         std::log(h[net.head_offset(1) + static_cast<std::size_t>(a.y)]);
}

}  // namespace

TEST(Gae, HandComputedThreeSteps) {
  // gamma 0.5, lambda 0.5, no terminals. deltas: 1+0.5*2-1=1, 0+0.5*3-2=-0.5, 2+0.5*4-3=1.
  const std::vector<double> r{1, 0, 2}, v{1, 2, 3, 4};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const auto g = compute_gae(r, v, d, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(g.advantages[2], 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], -0.5 + 0.25 * 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.25 * -0.25);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(g.returns[t], g.advantages[t] + v[t]);
}

TEST(Gae, MatchesExplicitSumWithTerminals) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform_index(rng, 40));
    std::vector<double> r(n), v(n + 1);
    std::vector<std::uint8_t> d(n);
    for (auto& x : r) x = standard_normal(rng);
    for (auto& x : v) x = standard_normal(rng);
    for (auto& x : d) x = uniform01(rng) < 0.2 ? 1 : 0;
    const double g = 0.8 + 0.2 * uniform01(rng), l = uniform01(rng);
    const auto got = compute_gae(r, v, d, g, l);
    const auto want = gae_by_sum(r, v, d, g, l);
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(got.advantages[t], want[t], 1e-10);
  }
}

TEST(Gae, LambdaOneIsMonteCarloMinusBaseline) {
  const std::vector<double> r{1, 2, 3}, v{0.5, 0.25, 0.125, 7.0};
  const std::vector<std::uint8_t> d{0, 0, 1};
  const auto g = compute_gae(r, v, d, 0.9, 1.0);
  EXPECT_NEAR(g.returns[0], 1 + 0.9 * 2 + 0.81 * 3, 1e-12);
  EXPECT_NEAR(g.returns[2], 3.0, 1e-12);
}

TEST(Gae, RejectsMisalignedInput) {
  const std::vector<double> r{1, 2}, v{0, 0};
  const std::vector<std::uint8_t> d{0, 0};
  EXPECT_THROW(compute_gae(r, v, d, 0.9, 0.9), Error);
}

TEST(Surrogate, ClipsOnlyOnTheGainingSide) {
  const double eps = 0.2;
  auto s = clipped_surrogate(1.5, 2.0, eps);
  EXPECT_TRUE(s.clipped);
  EXPECT_DOUBLE_EQ(s.objective, 1.2 * 2.0);
  EXPECT_EQ(s.d_log_prob, 0.0);

  s = clipped_surrogate(0.5, -1.0, eps);
  EXPECT_TRUE(s.clipped);
  EXPECT_DOUBLE_EQ(s.objective, -0.8);
  EXPECT_EQ(s.d_log_prob, 0.0);

  // Moving the wrong way is never clipped: the pessimistic branch wins.
  s = clipped_surrogate(0.5, 2.0, eps);
  EXPECT_FALSE(s.clipped);
  EXPECT_DOUBLE_EQ(s.objective, 1.0);
  EXPECT_DOUBLE_EQ(s.d_log_prob, 1.0);

  s = clipped_surrogate(1.5, -1.0, eps);
  EXPECT_FALSE(s.clipped);
  EXPECT_DOUBLE_EQ(s.objective, -1.5);
}

TEST(Surrogate, GradientMatchesFiniteDifferenceInLogRatio) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double lr = 0.6 * (uniform01(rng) - 0.5);
    const double adv = standard_normal(rng);
    const double h = 1e-7;
    const double num = (clipped_surrogate(std::exp(lr + h), adv, 0.2).objective -
                        clipped_surrogate(std::exp(lr - h), adv, 0.2).objective) / (2 * h);
    // Skip samples straddling the clip boundary.
    if (std::abs(std::abs(lr) - std::log(1.2)) < 1e-4 || std::abs(lr + std::log(0.8)) < 1e-4) continue;
    EXPECT_NEAR(clipped_surrogate(std::exp(lr), adv, 0.2).d_log_prob, num, 1e-5);
  }
}

TEST(Update, FreshBatchHasNoClipping) {
  const auto env = desk_env_config(Tier::Low);
  const auto trunk = trunk_for(env, 16);
  ActorCritic ac(policy_spec(env, trunk), value_spec(env, trunk), 1);
  BirdHunterEnv e(env, 2);
  Rng rng(3);
  PPOBatch batch;
  for (int i = 0; i < 32; ++i) {
    const auto obs = e.observe();
    const auto s = act({&ac.policy_net, ac.policy}, obs, rng);
    batch.obs.insert(batch.obs.end(), obs.begin(), obs.end());
    batch.actions.push_back(s.action);
    batch.old_log_probs.push_back(s.log_prob);
    batch.advantages.push_back(standard_normal(rng));
    batch.returns.push_back(0.0);
    e.step(s.action);
  }
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  PPOConfig cfg;
  const auto st = ppo_minibatch_step(ac, batch, rows, cfg);
  EXPECT_EQ(st.clip_fraction, 0.0);
  EXPECT_NEAR(st.entropy, 2.0 * std::log(20.0), 1e-4);
}

TEST(Update, RaisesProbabilityOfAdvantagedAction) {
  const auto env = desk_env_config(Tier::Low);
  const auto trunk = trunk_for(env, 16);
  ActorCritic ac(policy_spec(env, trunk), value_spec(env, trunk), 2);
  BirdHunterEnv e(env, 4);
  const auto obs = e.observe();
  const ActionPair good{3, 5}, bad{10, 11};
  PPOBatch batch;
  for (int i = 0; i < 16; ++i) {
    batch.obs.insert(batch.obs.end(), obs.begin(), obs.end());
    const bool g = i % 2 == 0;
    batch.actions.push_back(g ? good : bad);
    batch.old_log_probs.push_back(log_prob_of(ac.policy_net, ac.policy, obs, g ? good : bad));
    batch.advantages.push_back(g ? 1.0 : -1.0);
    batch.returns.push_back(g ? 1.0 : 0.0);
  }
  const double before = log_prob_of(ac.policy_net, ac.policy, obs, good);
  PPOConfig cfg;
  cfg.minibatch_size = 16;
  cfg.learning_rate = 1e-3;
  Rng rng(1);
  ppo_update(ac, batch, cfg, rng);
  EXPECT_GT(log_prob_of(ac.policy_net, ac.policy, obs, good), before);
  EXPECT_LT(log_prob_of(ac.policy_net, ac.policy, obs, bad), log_prob_of(ac.policy_net, ac.policy, obs, good));
}

TEST(Learner, BatchAdvantagesAreNormalizedAndRewardsProbed) {
  const auto env = desk_env_config(Tier::Low);
  PPOConfig cfg;
  cfg.horizon = 64;
  PPOLearner learner(env, trunk_for(env, 16), cfg, 5, 2);
  EXPECT_EQ(learner.chunk_size(), 128);
  EnvPool pool(env, 9, 2);
  Rng rng(2);
  const auto traj = run_rollouts(pool, learner.policy(), learner.chunk_size(), rng);
  std::size_t probed = 0;
  learner.set_reward_probe([&](std::span<const Transition* const> b, std::span<const double> r) {
    probed = b.size();
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(r[i], b[i]->reward);
  });
  const auto batch = learner.make_batch(traj);
  EXPECT_EQ(probed, 128u);
  const double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) / 128.0;
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean) / 128.0;
  EXPECT_NEAR(mean, 0.0, 1e-9);
  EXPECT_NEAR(var, 1.0, 1e-6);
  learner.learn(traj);
  const auto stats = learner.take_stats();
  ASSERT_EQ(stats.size(), learner.stat_names().size());
  for (double s : stats) EXPECT_TRUE(std::isfinite(s));
}

TEST(Config, ValidationAndJson) {
  PPOConfig c;
  c.clip_epsilon = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = PPOConfig{};
  c.horizon = 0;
  EXPECT_THROW(c.validate(), Error);
  PPOConfig d;
  d.clip_epsilon = 0.1;
  d.horizon = 77;
  const auto back = ppo_config_from_json(to_json(d));
  EXPECT_EQ(back.clip_epsilon, 0.1);
  EXPECT_EQ(back.horizon, 77);
  try {
    ppo_config_from_json({{"gamma", 1.5}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
}
