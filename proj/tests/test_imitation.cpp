#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "birdhunt/compose.hpp"

using namespace birdhunt;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const DemoDataset> oracle_dataset(const EnvConfig& env, double eps, int episodes, std::uint64_t seed) {
  const auto dir = fs::temp_directory_path() / "birdhunt_imitation";
  fs::create_directories(dir);
  const auto path = dir / ("oracle_" + std::to_string(seed) + ".demo.jsonl");
  record_oracle(path, env, eps, episodes, seed, false);
  return std::make_shared<const DemoDataset>(make_dataset({load_demo(path)}, env));
}

nn::NetSpec tiny_policy() {
  return {{3, 3, 1}, {nn::LayerSpec::flatten(), nn::LayerSpec::dense(6), nn::LayerSpec::relu()},
          {nn::HeadSpec::categorical(5), nn::HeadSpec::categorical(4)}};
}

nn::NetSpec tiny_critic() {
  return {{6, 1, 1},
          {nn::LayerSpec::flatten(), nn::LayerSpec::dense(5), nn::LayerSpec::relu(), nn::LayerSpec::dense(4),
           nn::LayerSpec::relu()},
          {nn::HeadSpec::linear(1)}};
}

template <class F>
void expect_gradient(std::vector<double> params, const std::vector<double>& analytic, F f, double tol) {
  const double h = 1e-6;
  double num2 = 0.0, diff2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double p0 = params[i];
    params[i] = p0 + h;
    const double up = f(params);
    params[i] = p0 - h;
    const double dn = f(params);
    params[i] = p0;
    const double num = (up - dn) / (2 * h);
    num2 += num * num;
    diff2 += (num - analytic[i]) * (num - analytic[i]);
  }
  ASSERT_GT(num2, 0.0);
  EXPECT_LE(std::sqrt(diff2 / num2), tol);
}

TrainerConfigs quick_configs() {
  TrainerConfigs c;
  c.sac.learning_starts = 64;
  c.sac.batch_size = 16;
  c.gail.update_every = 32;
  c.gail.updates = 1;
  c.gail.demo_batch_size = 16;
  c.gail.hidden = 16;
  c.bc.batch_size = 16;
  return c;
}

}  // namespace

TEST(BehavioralCloning, UniformPolicyLossIsLogOfScreen) {
  for (int size : {20, 50}) {
    const auto env = make_env_config(Tier::Low, size);
    const nn::Net net(policy_spec(env, trunk_for(env, 8)));
    const auto params = net.init<float>(1);
    BirdHunterEnv e(env, 2);
    const auto obs = e.observe();
    const std::vector<ActionPair> a{{0, size - 1}};
    const auto st = bc_loss<float>(net, params, obs, a);
    EXPECT_NEAR(st.loss, 2.0 * std::log(static_cast<double>(size)), 1e-5);
  }
}

TEST(BehavioralCloning, GradientMatchesFiniteDifferences) {
  const nn::Net net(tiny_policy());
  Rng rng(3);
  auto params = net.init<double>(4, nn::HeadInit::Random);
  for (auto& p : params) p += 0.05 * standard_normal(rng);
  std::vector<double> obs(4 * 9);
  for (auto& v : obs) v = uniform01(rng);
  const std::vector<ActionPair> acts{{0, 1}, {4, 3}, {2, 0}, {1, 2}};
  std::vector<double> grad(params.size(), 0.0);
  bc_loss<double>(net, params, obs, acts, grad, 0.7);
  expect_gradient(params, grad, [&](const std::vector<double>& p) {
    return 0.7 * bc_loss<double>(net, p, obs, acts).loss;
  }, 1e-5);
}

TEST(BehavioralCloning, OverfitsASmallDemoSet) {
  const auto env = desk_env_config(Tier::Low);
  const auto full = oracle_dataset(env, 0.0, 80, 5);
  // The oracle may aim at different pixels of the same bird from identical
  // observations; keep one label per distinct observation.
  DemoDataset ds;
  ds.obs_size = full->obs_size;
  for (std::size_t i = 0; i < full->size() && ds.size() < 32; ++i) {
    const auto o = full->observation(i);
    bool seen = false;
    for (std::size_t j = 0; j < ds.size() && !seen; ++j) seen = std::equal(o.begin(), o.end(), ds.observation(j).begin());
    if (seen) continue;
    ds.obs.insert(ds.obs.end(), o.begin(), o.end());
    ds.actions.push_back(full->actions[i]);
  }
  ASSERT_EQ(ds.size(), 32u);
  const nn::Net net(policy_spec(env, trunk_for(env, 64)));
  auto params = net.init<float>(6);
  BCConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 32;
  cfg.epochs = 400;
  fit_bc(net, params, ds, cfg, 7);
  const auto st = bc_loss<float>(net, params, ds.obs, ds.actions);
  EXPECT_GT(st.accuracy, 0.99);
  EXPECT_LT(st.loss, 0.1);
}

TEST(BehavioralCloning, SmallStepsNeverIncreaseFullBatchLoss) {
  const auto env = desk_env_config(Tier::Low);
  const auto ds = oracle_dataset(env, 0.0, 30, 8);
  const nn::Net net(policy_spec(env, trunk_for(env, 32)));
  auto params = net.init<float>(9);
  nn::AdamState opt(params.size());
  BCConfig cfg;
  cfg.learning_rate = 1e-4;
  double prev = bc_loss<float>(net, params, ds->obs, ds->actions).loss;
  for (int i = 0; i < 50; ++i) {
    bc_update(net, params, opt, ds->obs, ds->actions, cfg);
    const double now = bc_loss<float>(net, params, ds->obs, ds->actions).loss;
    EXPECT_LE(now, prev + 1e-6) << "step " << i;
    prev = now;
  }
  EXPECT_LT(prev, 2.0 * std::log(20.0));
}

TEST(BehavioralCloning, StrengthHalvesEachDecayPeriod) {
  BCConfig c;
  c.initial_strength = 0.5;
  c.decay_steps = 1000;
  EXPECT_EQ(bc_strength(c, 0), 0.5);
  EXPECT_EQ(bc_strength(c, 999), 0.5);
  EXPECT_EQ(bc_strength(c, 1000), 0.25);
  EXPECT_EQ(bc_strength(c, 2500), 0.125);
  c.initial_strength = 1.5;
  EXPECT_THROW(c.validate(), Error);
}

TEST(BehavioralCloning, RejectsOutOfRangeDemoAction) {
  const nn::Net net(tiny_policy());
  const auto params = net.init<float>(1);
  const std::vector<float> obs(9, 0.0f);
  const std::vector<ActionPair> bad{{5, 0}};
  EXPECT_THROW(bc_loss<float>(net, params, obs, bad), Error);
}

TEST(Discriminator, FreshNetworkIsUndecided) {
  const auto env = desk_env_config(Tier::Low);
  Discriminator d(env, GAILConfig{}, 1);
  BirdHunterEnv e(env, 2);
  const auto obs = e.observe();
  const std::vector<ActionPair> a{{3, 4}};
  EXPECT_EQ(d.outputs(obs, a)[0], 0.5);
  Transition t;
  t.obs = obs;
  t.action = {3, 4};
  const Transition* batch[] = {&t};
  EXPECT_NEAR(d.rewards(batch)[0], std::log(2.0), 1e-12);
}

TEST(Discriminator, IntrinsicRewardIsClampedNegLogOfOneMinusD) {
  for (double z : {-3.0, -0.5, 0.0, 0.7, 4.0}) EXPECT_NEAR(intrinsic_reward(z), -std::log(1.0 - sigmoid(z)), 1e-12);
  EXPECT_EQ(intrinsic_reward(50.0), kMaxIntrinsic);
  EXPECT_GE(intrinsic_reward(-50.0), 0.0);
  EXPECT_LT(intrinsic_reward(-50.0), 1e-20);
}

TEST(Discriminator, MixesRewardsLinearly) {
  GAILConfig c;
  c.lambda_ext = 0.5;
  c.lambda_int = 0.25;
  EXPECT_DOUBLE_EQ(combined_reward(2.0, 3.0, c), 1.75);
  c.lambda_ext = 0.0;
  c.lambda_int = 0.0;
  EXPECT_THROW(c.validate(), Error);
  const auto high = gail_defaults_for(Tier::High);
  EXPECT_EQ(high.lambda_ext, 1.0);
  EXPECT_EQ(high.lambda_int, 0.5);
  const auto low = gail_defaults_for(Tier::Low);
  EXPECT_EQ(low.lambda_ext, 0.0);
}

TEST(Discriminator, CrossEntropyGradientMatchesFiniteDifferences) {
  const std::vector<float> labels{1, 0, 1, 0};
  std::vector<float> z{0.3f, -1.2f, 2.0f, 0.5f}, g(4, 0.0f);
  bce_with_logits(z, labels, g);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto up = z, dn = z;
    up[i] += 1e-3f;
    dn[i] -= 1e-3f;
    EXPECT_NEAR((bce_with_logits(up, labels) - bce_with_logits(dn, labels)) / 2e-3, g[i], 1e-4);
  }
}

TEST(Discriminator, PenaltyGradientMatchesFiniteDifferences) {
  const nn::Net net(tiny_critic());
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto params = net.init<double>(derive_seed(12, static_cast<std::uint64_t>(trial)), nn::HeadInit::Random);
    for (auto& p : params) p += 0.3 * standard_normal(rng);
    std::vector<double> x(3 * 6);
    for (auto& v : x) v = standard_normal(rng);
    std::vector<double> grad(params.size(), 0.0);
    const auto pr = input_gradient_penalty<double>(net, params, x, 3, 1.0, grad);
    EXPECT_GT(pr.mean_norm, 0.0);
    expect_gradient(params, grad, [&](const std::vector<double>& p) {
      return input_gradient_penalty<double>(net, p, x, 3, 0.0, {}).value;
    }, 1e-5);
  }
}

TEST(Discriminator, PenaltyNormIsTheInputGradientNorm) {
  const nn::Net net(tiny_critic());
  Rng rng(13);
  auto params = net.init<double>(14, nn::HeadInit::Random);
  std::vector<double> x(6);
  for (auto& v : x) v = standard_normal(rng);
  double norm2 = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto up = x, dn = x;
    up[k] += 1e-6;
    dn[k] -= 1e-6;
    const double g = (net.forward<double>(params, up, 1).outputs()[0] - net.forward<double>(params, dn, 1).outputs()[0]) / 2e-6;
    norm2 += g * g;
  }
  const auto pr = input_gradient_penalty<double>(net, params, x, 1, 0.0, {});
  EXPECT_NEAR(pr.mean_norm, std::sqrt(norm2), 1e-6);
  EXPECT_NEAR(pr.value, (pr.mean_norm - 1.0) * (pr.mean_norm - 1.0), 1e-12);
}

TEST(Discriminator, SeparatesExpertFromRandomActions) {
  const auto env = desk_env_config(Tier::Low);
  const auto ds = oracle_dataset(env, 0.0, 60, 15);
  GAILConfig cfg;
  cfg.hidden = 32;
  cfg.learning_rate = 1e-3;
  Discriminator d(env, cfg, 16);
  Rng rng(17);
  std::vector<float> dobs, aobs;
  std::vector<ActionPair> dact, aact;
  DiscriminatorStats st;
  for (int i = 0; i < 300; ++i) {
    sample_demo_batch(*ds, 32, rng, dobs, dact);
    sample_demo_batch(*ds, 32, rng, aobs, aact);
    for (auto& a : aact) a = {static_cast<int>(uniform_index(rng, 20)), static_cast<int>(uniform_index(rng, 20))};
    st = d.update(aobs, aact, dobs, dact);
  }
  EXPECT_GT(st.accuracy, 0.9);
  EXPECT_GT(st.demo_output, st.agent_output);
}

TEST(Discriminator, IdenticalBatchesStayNearChance) {
  const auto env = desk_env_config(Tier::Low);
  const auto ds = oracle_dataset(env, 0.3, 60, 18);
  Discriminator d(env, GAILConfig{}, 19);
  Rng rng(20);
  std::vector<float> obs;
  std::vector<ActionPair> act;
  DiscriminatorStats st;
  for (int i = 0; i < 100; ++i) {
    sample_demo_batch(*ds, 32, rng, obs, act);
    st = d.update(obs, act, obs, act);
  }
  EXPECT_GE(st.accuracy, 0.45);
  EXPECT_LE(st.accuracy, 0.55);
  EXPECT_NEAR(st.demo_output, 0.5, 0.05);
}

TEST(Compose, RlOnlyIsTheBaseLearnerItself) {
  const auto env = desk_env_config(Tier::Low);
  const auto trunk = trunk_for(env, 16);
  const auto cfg = quick_configs();
  auto run = [&](bool composed) {
    std::unique_ptr<Learner> l = composed ? make_trainer(TrainerMode::RlOnly, env, trunk, cfg, nullptr, 3)
                                          : std::make_unique<SACLearner>(env, trunk, cfg.sac, 3);
    EnvPool pool(env, 4);
    Rng rng(5);
    for (int k = 0; k < 100; ++k) l->learn(run_rollouts(pool, l->policy(), l->chunk_size(), rng));
    const auto p = l->policy_params();
    return std::make_pair(std::vector<float>(p.begin(), p.end()), l->take_stats());
  };
  const auto a = run(true), b = run(false);
  EXPECT_EQ(a.first, b.first);
  ASSERT_EQ(a.second.size(), b.second.size());
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_EQ(a.second[i], b.second[i]);
}

TEST(Compose, GailOnlyTrainsOnIntrinsicRewardAlone) {
  const auto env = desk_env_config(Tier::Low);
  const auto ds = oracle_dataset(env, 0.0, 20, 21);
  const auto cfg = quick_configs();
  auto learner = make_trainer(TrainerMode::GailOnly, env, trunk_for(env, 16), cfg, ds, 6);
  auto* il = dynamic_cast<ImitationLearner*>(learner.get());
  ASSERT_NE(il, nullptr);
  int checked = 0;
  learner->set_reward_probe([&](std::span<const Transition* const> batch, std::span<const double> r) {
    const auto intr = il->discriminator().rewards(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_NEAR(r[i], intr[i], 1e-12);
    ++checked;
  });
  EnvPool pool(env, 7);
  Rng rng(8);
  for (int k = 0; k < 60; ++k) learner->learn(run_rollouts(pool, learner->policy(), learner->chunk_size(), rng));
  EXPECT_GT(checked, 0);
  const auto names = learner->stat_names();
  EXPECT_EQ(std::count(names.begin(), names.end(), "bc_loss"), 0);
}

TEST(Compose, HighTierMixesEnvironmentReward) {
  const auto env = desk_env_config(Tier::High);
  const auto ds = oracle_dataset(env, 0.0, 10, 22);
  auto cfg = quick_configs();
  const auto hidden = cfg.gail.hidden;
  cfg.gail = gail_defaults_for(Tier::High);
  cfg.gail.hidden = hidden;
  auto learner = make_trainer(TrainerMode::BcAndGail, env, trunk_for(env, 16), cfg, ds, 9);
  auto* il = dynamic_cast<ImitationLearner*>(learner.get());
  ASSERT_NE(il, nullptr);
  int checked = 0;
  learner->set_reward_probe([&](std::span<const Transition* const> batch, std::span<const double> r) {
    const auto intr = il->discriminator().rewards(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_NEAR(r[i], batch[i]->reward + 0.5 * intr[i], 1e-12);
    ++checked;
  });
  EnvPool pool(env, 10);
  Rng rng(11);
  for (int k = 0; k < 40; ++k) learner->learn(run_rollouts(pool, learner->policy(), learner->chunk_size(), rng));
  EXPECT_GT(checked, 0);
  const auto names = learner->stat_names();
  const auto stats = learner->take_stats();
  ASSERT_EQ(names.size(), stats.size());
  const auto at = std::find(names.begin(), names.end(), "bc_strength") - names.begin();
  EXPECT_EQ(stats[static_cast<std::size_t>(at)], 0.5);
}

TEST(Compose, ImitationModesRequireDemonstrations) {
  const auto env = desk_env_config(Tier::Low);
  const auto trunk = trunk_for(env, 8);
  const auto cfg = quick_configs();
  for (auto mode : {TrainerMode::BcOnly, TrainerMode::GailOnly, TrainerMode::BcAndGail}) {
    try {
      make_trainer(mode, env, trunk, cfg, nullptr, 1);
      FAIL() << to_string(mode);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    }
    EXPECT_THROW(make_trainer(mode, env, trunk, cfg, std::make_shared<const DemoDataset>(), 1), Error);
  }
  EXPECT_NO_THROW(make_trainer(TrainerMode::RlOnly, env, trunk, cfg, nullptr, 1));
  EXPECT_EQ(parse_trainer_mode("BC_AND_GAIL"), TrainerMode::BcAndGail);
  EXPECT_THROW(parse_trainer_mode("DAGGER"), Error);
}

TEST(Compose, BcOnlyLearnsFromDemosNotRewards) {
  const auto env = desk_env_config(Tier::Low);
  const auto ds = oracle_dataset(env, 0.0, 40, 23);
  auto cfg = quick_configs();
  cfg.bc.learning_rate = 1e-3;
  auto learner = make_trainer(TrainerMode::BcOnly, env, trunk_for(env, 32), cfg, ds, 12);
  EXPECT_EQ(learner->chunk_size(), cfg.bc.update_every);
  EnvPool pool(env, 13);
  Rng rng(14);
  const double before = bc_loss<float>(learner->policy_net(), learner->policy_params(), ds->obs, ds->actions).loss;
  for (int k = 0; k < 200; ++k) learner->learn(run_rollouts(pool, learner->policy(), learner->chunk_size(), rng));
  const double after = bc_loss<float>(learner->policy_net(), learner->policy_params(), ds->obs, ds->actions).loss;
  EXPECT_LT(after, before - 0.5);
}
