#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "birdhunt/nn.hpp"

using namespace birdhunt;
using namespace birdhunt::nn;

namespace {

// Random small architecture: optional conv stack, then dense layers, then a
// categorical and a linear head. Rejects anything above max_params.
NetSpec random_spec(Rng& rng, std::size_t max_params) {
  for (;;) {
    NetSpec s;
    const bool conv = uniform01(rng) < 0.5;
    s.input = {static_cast<int>(3 + uniform_index(rng, 5)), static_cast<int>(3 + uniform_index(rng, 5)),
               static_cast<int>(1 + uniform_index(rng, 3))};
    if (conv) {
      const int k = static_cast<int>(2 + uniform_index(rng, 2));
      s.layers.push_back(LayerSpec::conv(static_cast<int>(1 + uniform_index(rng, 4)), k, static_cast<int>(1 + uniform_index(rng, 2))));
      s.layers.push_back(LayerSpec::relu());
    }
    s.layers.push_back(LayerSpec::flatten());
    const int depth = static_cast<int>(1 + uniform_index(rng, 2));
    for (int d = 0; d < depth; ++d) {
      s.layers.push_back(LayerSpec::dense(static_cast<int>(2 + uniform_index(rng, 12))));
      s.layers.push_back(LayerSpec::relu());
    }
    s.heads = {HeadSpec::categorical(static_cast<int>(2 + uniform_index(rng, 5))),
               HeadSpec::linear(static_cast<int>(1 + uniform_index(rng, 3)))};
    try {
      const Net net(s);
      if (net.param_count() <= max_params) return s;
    } catch (const Error&) {
    }
  }
}

// Loss = sum_i c_i * raw_output_i + sum over the categorical head of
// -log softmax at a target index, so both head kinds carry gradient.
struct Probe {
  std::vector<double> coef;
  std::vector<int> target;
};

double probe_loss(const Net& net, std::span<const double> params, std::span<const double> x, int batch,
                  const Probe& pr, std::vector<double>* d_out) {
  const auto fw = net.forward<double>(params, x, batch);
  const auto& raw = fw.outputs();
  double loss = 0.0;
  if (d_out) d_out->assign(raw.size(), 0.0);
  const std::size_t ncat = static_cast<std::size_t>(net.spec().heads[0].size);
  for (int n = 0; n < batch; ++n) {
    const std::size_t row = static_cast<std::size_t>(n) * net.output_size();
    for (std::size_t i = 0; i < net.output_size(); ++i) {
      loss += pr.coef[row + i] * raw[row + i];
      if (d_out) (*d_out)[row + i] += pr.coef[row + i];
    }
    const double* p = fw.heads.data() + row + net.head_offset(0);
    const auto t = static_cast<std::size_t>(pr.target[static_cast<std::size_t>(n)]);
    loss -= std::log(p[t]);
    if (d_out)
      for (std::size_t j = 0; j < ncat; ++j) (*d_out)[row + net.head_offset(0) + j] += p[j] - (j == t ? 1.0 : 0.0);
  }
  return loss;
}

}  // namespace

TEST(Gradient, MatchesCentralDifferencesOnRandomNets) {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const Net net(random_spec(rng, 5000));
    auto params = net.init<double>(derive_seed(7, static_cast<std::uint64_t>(trial)), HeadInit::Random);
    // Random perturbation so nothing sits exactly at a ReLU kink.
    for (auto& p : params) p += 0.05 * standard_normal(rng);
    const int batch = 3;
    std::vector<double> x(net.input_size() * batch);
    for (auto& v : x) v = uniform01(rng);
    Probe pr;
    pr.coef.resize(net.output_size() * batch);
    for (auto& c : pr.coef) c = standard_normal(rng);
    for (int n = 0; n < batch; ++n)
      pr.target.push_back(static_cast<int>(uniform_index(rng, net.spec().heads[0].size)));

    std::vector<double> d_out;
    probe_loss(net, params, x, batch, pr, &d_out);
    const auto fw = net.forward<double>(params, x, batch);
    const auto analytic = net.backward<double>(params, fw, d_out);

    const double h = 1e-4;
    double diff2 = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = probe_loss(net, params, x, batch, pr, nullptr);
      params[i] = keep - h;
      const double down = probe_loss(net, params, x, batch, pr, nullptr);
      params[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      sum2 += (std::abs(numeric) + std::abs(analytic[i])) * (std::abs(numeric) + std::abs(analytic[i]));
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(sum2), 1e-12);
    EXPECT_LE(rel, 1e-4) << "trial " << trial << " params " << net.param_count();
  }
}

TEST(Forward, ConvMatchesDirectSum) {
  NetSpec s;
  s.input = {5, 4, 2};
  s.layers = {LayerSpec::conv(3, 2, 1)};
  s.heads = {HeadSpec::linear(1)};
  const Net net(s);
  Rng rng(1);
  std::vector<double> params(net.param_count());
  for (auto& p : params) p = standard_normal(rng);
  std::vector<double> x(net.input_size());
  for (auto& v : x) v = standard_normal(rng);
  const auto fw = net.forward<double>(params, x, 1);
  const auto& conv_out = fw.acts[1];
  const auto& p = net.plan()[0];
  ASSERT_EQ(p.out.w, 4);
  ASSERT_EQ(p.out.h, 3);
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 4; ++ox)
      for (int o = 0; o < 3; ++o) {
        double want = params[p.bias_offset + static_cast<std::size_t>(o)];
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx)
            for (int c = 0; c < 2; ++c)
              want += params[p.weight_offset + static_cast<std::size_t>(((o * 2 + ky) * 2 + kx) * 2 + c)] *
                      x[static_cast<std::size_t>(((oy + ky) * 5 + (ox + kx)) * 2 + c)];
        EXPECT_NEAR(conv_out[static_cast<std::size_t>((oy * 4 + ox) * 3 + o)], want, 1e-12);
      }
}

TEST(Forward, DenseIsInputMajor) {
  NetSpec s;
  s.input = {3, 1, 1};
  s.heads = {HeadSpec::linear(2)};
  const Net net(s);
  // W[in][out] then bias.
  const std::vector<double> params{1, 2, 3, 4, 5, 6, 0.5, -0.5};
  const std::vector<double> x{1, 10, 100};
  const auto out = net.forward<double>(params, x, 1).outputs();
  EXPECT_DOUBLE_EQ(out[0], 1 * 1 + 10 * 3 + 100 * 5 + 0.5);
  EXPECT_DOUBLE_EQ(out[1], 1 * 2 + 10 * 4 + 100 * 6 - 0.5);
}

TEST(Forward, ZeroHeadGivesUniformPolicy) {
  NetSpec s;
  s.input = {20, 20, 1};
  s.layers = default_trunk(s.input, 32);
  s.heads = {HeadSpec::categorical(20), HeadSpec::categorical(20)};
  const Net net(s);
  const auto params = net.init<float>(3);
  std::vector<float> x(net.input_size(), 0.3f);
  const auto fw = net.forward<float>(params, x, 1);
  for (float p : fw.heads) EXPECT_FLOAT_EQ(p, 0.05f);
}

TEST(Forward, RejectsShapeMismatch) {
  NetSpec s;
  s.input = {4, 4, 1};
  s.heads = {HeadSpec::linear(1)};
  const Net net(s);
  const auto params = net.init<float>(0);
  std::vector<float> x(15);
  EXPECT_THROW(net.forward<float>(params, x, 1), Error);
  std::vector<float> short_params(params.size() - 1);
  std::vector<float> ok(16);
  EXPECT_THROW(net.forward<float>(short_params, ok, 1), Error);
}

TEST(Spec, InvalidArchitecturesRejected) {
  NetSpec s;
  s.input = {4, 4, 1};
  s.layers = {LayerSpec::conv(2, 5, 1)};
  s.heads = {HeadSpec::linear(1)};
  EXPECT_THROW(Net{s}, Error);
  s.layers = {LayerSpec::flatten(), LayerSpec::conv(2, 2, 1)};
  EXPECT_THROW(Net{s}, Error);
  s.layers = {};
  s.heads = {};
  EXPECT_THROW(Net{s}, Error);
}

TEST(Spec, JsonRoundTrip) {
  NetSpec s;
  s.input = {50, 50, 3};
  s.layers = default_trunk(s.input, 64);
  s.heads = {HeadSpec::categorical(50), HeadSpec::categorical(50), HeadSpec::linear(1)};
  EXPECT_EQ(net_spec_from_json(to_json(s)), s);
}

TEST(Entropy, ClosedForms) {
  BranchDistribution uniform(2, std::vector<double>(50, 1.0 / 50.0));
  EXPECT_NEAR(entropy(uniform), 7.8240, 1e-4);
  EXPECT_NEAR(entropy(uniform), 2.0 * std::log(50.0), 1e-12);
  BranchDistribution det(2, std::vector<double>(50, 0.0));
  det[0][7] = 1.0;
  det[1][0] = 1.0;
  EXPECT_EQ(entropy(det), 0.0);
  BranchDistribution bad{{0.5, 0.6}};
  EXPECT_THROW(entropy(bad), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // After bias correction the first step is lr * g / (|g| + eps).
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  AdamState st(3);
  adam_step<double>(p, g, st, {0.1});
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.3 / (0.3 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  std::vector<double> p{0.7};
  AdamState st(1);
  double m = 0, v = 0, q = 0.7;
  Rng rng(4);
  for (int t = 1; t <= 20; ++t) {
    const double g = standard_normal(rng);
    std::vector<double> gv{g};
    adam_step<double>(p, gv, st, {0.01, 0.8, 0.95, 1e-6});
    m = 0.8 * m + 0.2 * g;
    v = 0.95 * v + 0.05 * g * g;
    q -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.95, t))) + 1e-6);
    ASSERT_NEAR(p[0], q, 1e-12);
  }
}

TEST(Adam, RejectsNonFiniteGradientWithoutSideEffects) {
  std::vector<float> p{1.0f, 2.0f};
  const std::vector<float> g{0.1f, std::nanf("")};
  AdamState st(2);
  try {
    adam_step<float>(p, g, st, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(st.step, 0);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-12);
  EXPECT_NEAR(g[1], 0.8, 1e-12);
}

TEST(Checkpoint, RoundTripAndIntegrity) {
  NetSpec s;
  s.input = {20, 20, 3};
  s.layers = default_trunk(s.input, 16);
  s.heads = {HeadSpec::categorical(20), HeadSpec::categorical(20)};
  const Net net(s);
  Checkpoint ck{s, net.init<float>(5, HeadInit::Random), {{"note", "unit"}}};
  const auto path = std::filesystem::temp_directory_path() / "birdhunt_test_ck.bin";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.spec, ck.spec);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.meta, ck.meta);

  auto bytes = serialize_checkpoint(ck);
  bytes[bytes.size() / 2] ^= 0x01;
  try {
    parse_checkpoint(bytes);
    FAIL() << "flipped bit not detected";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Corrupt);
  }
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 10)), Error);
  std::filesystem::remove(path);
}
