#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "birdhunt/policy.hpp"

using namespace birdhunt;

namespace {

std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (double& v : p) v /= s;
  return p;
}

double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

// Central difference of f(softmax(z)) with respect to every logit.
template <class F>
std::vector<double> numeric_grad(std::vector<double> z, F f) {
  const double h = 1e-6;
  std::vector<double> g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double z0 = z[i];
    z[i] = z0 + h;
    const double up = f(softmax(z));
    z[i] = z0 - h;
    const double dn = f(softmax(z));
    z[i] = z0;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

std::vector<double> random_logits(Rng& rng, int n) {
  std::vector<double> z(static_cast<std::size_t>(n));
  for (double& v : z) v = 2.0 * standard_normal(rng);
  return z;
}

}  // namespace

TEST(Greedy, PicksTheUniqueMaximum) {
  Rng rng(1);
  const std::vector<double> v{0.1, 0.7, 0.2};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(greedy_index<double>(v, rng), 1);
}

TEST(Greedy, BreaksExactTiesUniformly) {
  Rng rng(2);
  const std::vector<double> v{0.4, 0.1, 0.4, 0.4};
  std::map<int, int> counts;
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[greedy_index<double>(v, rng)];
  EXPECT_EQ(counts.count(1), 0u);
  for (int k : {0, 2, 3}) EXPECT_NEAR(counts[k] / double(n), 1.0 / 3.0, 0.015) << k;
}

TEST(Sampling, FrequenciesMatchProbabilities) {
  Rng rng(3);
  const std::vector<double> p{0.5, 0.0, 0.3, 0.2};
  std::vector<int> counts(p.size(), 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_categorical(p, rng))];
  EXPECT_EQ(counts[1], 0);
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(counts[k] / double(n), p[k], 0.006) << k;
}

TEST(Sampling, TemperatureSharpensAndFlattens) {
  const std::vector<double> z{1.0, 2.0, 0.0};
  const auto cold = softmax_with_temperature<double>(z, 0.1);
  const auto hot = softmax_with_temperature<double>(z, 100.0);
  EXPECT_GT(cold[1], 0.99);
  for (double v : hot) EXPECT_NEAR(v, 1.0 / 3.0, 0.01);
}

TEST(Backward, LogProbMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = random_logits(rng, 7);
    const int a = static_cast<int>(uniform_index(rng, 7));
    const double coef = 0.5 + uniform01(rng);
    const auto p = softmax(z);
    std::vector<double> g(z.size(), 0.0);
    log_prob_backward<double>(p, a, coef, g);
    const auto num = numeric_grad(z, [&](const std::vector<double>& q) { return coef * std::log(q[static_cast<std::size_t>(a)]); });
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(g[i], num[i], 1e-6);
  }
}

TEST(Backward, EntropyMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = random_logits(rng, 6);
    const auto p = softmax(z);
    std::vector<double> g(z.size(), 0.0);
    const double h = entropy_backward<double>(p, 1.0, g);
    EXPECT_NEAR(h, entropy_of(p), 1e-12);
    const auto num = numeric_grad(z, entropy_of);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(g[i], num[i], 1e-6);
  }
}

TEST(Backward, SoftmaxChainRuleMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = random_logits(rng, 5);
    std::vector<double> c(z.size());
    for (double& v : c) v = standard_normal(rng);
    const auto p = softmax(z);
    std::vector<double> g(z.size(), 0.0);
    softmax_backward<double>(p, c, g);
    const auto num = numeric_grad(z, [&](const std::vector<double>& q) {
      double s = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) s += c[i] * q[i];
      return s;
    });
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(g[i], num[i], 1e-6);
  }
}

TEST(Act, FreshPolicyIsUniformOverTheScreen) {
  const auto env = desk_env_config(Tier::Low);
  const nn::Net net(policy_spec(env, trunk_for(env, 16)));
  const auto params = net.init<float>(9);
  BirdHunterEnv e(env, 1);
  const auto obs = e.observe();
  Rng rng(10);
  const auto s = act({&net, params}, obs, rng);
  EXPECT_NEAR(s.log_prob, -2.0 * std::log(20.0), 1e-5);
  EXPECT_NEAR(s.entropy, 2.0 * std::log(20.0), 1e-5);
  EXPECT_GE(s.action.x, 0);
  EXPECT_LT(s.action.x, 20);
  EXPECT_GE(s.action.y, 0);
  EXPECT_LT(s.action.y, 20);
}

TEST(Act, GreedyFollowsTheLargestLogit) {
  const auto env = desk_env_config(Tier::Low);
  const nn::Net net(policy_spec(env, trunk_for(env, 8)));
  auto params = net.init<float>(11);
  // Last parameters are the head biases: x logits then y logits.
  const std::size_t bias = params.size() - net.output_size();
  params[bias + 13] = 5.0f;
  params[bias + 20 + 4] = 5.0f;
  BirdHunterEnv e(env, 1);
  Rng rng(12);
  const auto s = act({&net, params, 1.0, true}, e.observe(), rng);
  EXPECT_EQ(s.action, (ActionPair{13, 4}));
}

TEST(Act, RejectsMismatchedPolicy) {
  const auto small = desk_env_config(Tier::Low);
  const auto big = make_env_config(Tier::Low, 50);
  EXPECT_NO_THROW(require_policy_for(policy_spec(small, trunk_for(small, 8)), small));
  try {
    require_policy_for(policy_spec(small, trunk_for(small, 8)), big);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Incompatible);
  }
}
