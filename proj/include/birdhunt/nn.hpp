#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "birdhunt/common.hpp"
#include "birdhunt/crypto.hpp"
#include "json.hpp"

namespace birdhunt::nn {

enum class LayerKind { Conv, Dense, Relu, Flatten };
enum class HeadKind { Categorical, Linear };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int units = 0;         // DENSE
  int out_channels = 0;  // CONV
  int kernel = 0;
  int stride = 1;

  static LayerSpec conv(int out_channels, int kernel, int stride) {
    return {LayerKind::Conv, 0, out_channels, kernel, stride};
  }
  static LayerSpec dense(int units) { return {LayerKind::Dense, units, 0, 0, 1}; }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }

  bool operator==(const LayerSpec&) const = default;
};

struct HeadSpec {
  HeadKind kind = HeadKind::Linear;
  int size = 1;

  static HeadSpec categorical(int n) { return {HeadKind::Categorical, n}; }
  static HeadSpec linear(int n) { return {HeadKind::Linear, n}; }

  bool operator==(const HeadSpec&) const = default;
};

// Tensor shape in width x height x channels; flat vectors are (n, 1, 1).
struct Shape {
  int w = 1;
  int h = 1;
  int c = 1;
  std::size_t size() const { return static_cast<std::size_t>(w) * h * c; }
  bool operator==(const Shape&) const = default;
};

struct NetSpec {
  Shape input;
  std::vector<LayerSpec> layers;
  std::vector<HeadSpec> heads;

  bool operator==(const NetSpec&) const = default;
};

/// Default trunk for a given input: conv stack at full 50x50 resolution, two dense
/// layers at desk scale (<= 24 pixels per side).
inline std::vector<LayerSpec> default_trunk(Shape input, int hidden = 128) {
  if (input.w <= 24 && input.h <= 24) {
    return {LayerSpec::flatten(), LayerSpec::dense(hidden), LayerSpec::relu(),
            LayerSpec::dense(hidden), LayerSpec::relu()};
  }
  return {LayerSpec::conv(16, 8, 4), LayerSpec::relu(), LayerSpec::conv(32, 4, 2),
          LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(hidden), LayerSpec::relu()};
}

inline nlohmann::json to_json(const NetSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        layers.push_back({{"type", "CONV"}, {"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
        break;
      case LayerKind::Dense: layers.push_back({{"type", "DENSE"}, {"units", l.units}}); break;
      case LayerKind::Relu: layers.push_back({{"type", "RELU"}}); break;
      case LayerKind::Flatten: layers.push_back({{"type", "FLATTEN"}}); break;
    }
  }
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : spec.heads)
    heads.push_back({{"type", h.kind == HeadKind::Categorical ? "CATEGORICAL" : "LINEAR"}, {"size", h.size}});
  return {{"input_shape", {spec.input.w, spec.input.h, spec.input.c}}, {"layers", layers}, {"heads", heads}};
}

inline NetSpec net_spec_from_json(const nlohmann::json& j) {
  NetSpec spec;
  try {
    const auto shape = j.at("input_shape").get<std::array<int, 3>>();
    spec.input = {shape[0], shape[1], shape[2]};
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "CONV")
        spec.layers.push_back(LayerSpec::conv(l.at("out_channels"), l.at("kernel"), l.at("stride")));
      else if (type == "DENSE")
        spec.layers.push_back(LayerSpec::dense(l.at("units")));
      else if (type == "RELU")
        spec.layers.push_back(LayerSpec::relu());
      else if (type == "FLATTEN")
        spec.layers.push_back(LayerSpec::flatten());
      else
        fail(ErrorKind::InvalidConfig, "unknown layer type " + type);
    }
    for (const auto& h : j.at("heads")) {
      const auto type = h.at("type").get<std::string>();
      if (type != "CATEGORICAL" && type != "LINEAR") fail(ErrorKind::InvalidConfig, "unknown head type " + type);
      spec.heads.push_back({type == "CATEGORICAL" ? HeadKind::Categorical : HeadKind::Linear, h.at("size").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("malformed network spec: ") + e.what());
  }
  return spec;
}

struct LayerPlan {
  LayerKind kind = LayerKind::Relu;
  Shape in;
  Shape out;
  int kernel = 0;
  int stride = 1;
  std::size_t weight_offset = 0;
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;
  std::size_t bias_count = 0;
};

enum class HeadInit { Zero, Random };

template <class T>
struct ForwardPass {
  int batch = 0;
  // acts[0] is the input batch, acts[i + 1] the output of plan step i.
  std::vector<std::vector<T>> acts;
  // Raw outputs with categorical segments replaced by their softmax.
  std::vector<T> heads;

  const std::vector<T>& outputs() const { return acts.back(); }
};

/// Validated layer plan for a NetSpec. The final plan step is the dense layer
/// producing every head's outputs side by side.
class Net {
 public:
  explicit Net(NetSpec spec) : spec_(std::move(spec)) { compile(); }

  const NetSpec& spec() const { return spec_; }
  const std::vector<LayerPlan>& plan() const { return plan_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t input_size() const { return spec_.input.size(); }
  std::size_t output_size() const { return output_size_; }
  std::size_t head_offset(std::size_t head) const { return head_offsets_[head]; }

  template <class T>
  std::vector<T> init(std::uint64_t seed, HeadInit head_init = HeadInit::Zero) const {
    std::vector<T> params(param_count_, T(0));
    Rng rng(seed);
    for (std::size_t i = 0; i < plan_.size(); ++i) {
      const auto& p = plan_[i];
      if (p.weight_count == 0) continue;
      const bool head = i + 1 == plan_.size();
      if (head && head_init == HeadInit::Zero) continue;
      const std::size_t fan_in = p.weight_count / static_cast<std::size_t>(weight_rows(p));
      const double gain = head ? 1.0 : std::sqrt(2.0);
      auto m = orthogonal(weight_rows(p), fan_in, rng);
      for (std::size_t r = 0; r < static_cast<std::size_t>(weight_rows(p)); ++r)
        for (std::size_t c = 0; c < fan_in; ++c) {
          // Dense weights are stored input-major, conv weights output-major.
          const std::size_t idx = p.kind == LayerKind::Dense ? c * weight_rows(p) + r : r * fan_in + c;
          params[p.weight_offset + idx] = static_cast<T>(gain * m[r * fan_in + c]);
        }
      if (head && head_init == HeadInit::Random)
        for (std::size_t b = 0; b < p.bias_count; ++b)
          params[p.bias_offset + b] = static_cast<T>(0.1 * standard_normal(rng));
    }
    return params;
  }

  template <class T>
  ForwardPass<T> forward(std::span<const T> params, std::span<const T> inputs, int batch) const {
    if (params.size() != param_count_) fail(ErrorKind::Incompatible, "parameter vector does not match network spec");
    if (batch < 0 || inputs.size() != static_cast<std::size_t>(batch) * input_size())
      fail(ErrorKind::Incompatible, "input batch does not match network input shape");
    ForwardPass<T> fw;
    fw.batch = batch;
    fw.acts.reserve(plan_.size() + 1);
    fw.acts.emplace_back(inputs.begin(), inputs.end());
    for (const auto& p : plan_) {
      const auto& in = fw.acts.back();
      std::vector<T> out(static_cast<std::size_t>(batch) * p.out.size(), T(0));
      switch (p.kind) {
        case LayerKind::Dense: dense_forward(p, params, in, out, batch); break;
        case LayerKind::Conv: conv_forward(p, params, in, out, batch); break;
        case LayerKind::Relu:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
          break;
        case LayerKind::Flatten: out = in; break;
      }
      fw.acts.push_back(std::move(out));
    }
    fw.heads = fw.acts.back();
    for (int n = 0; n < batch; ++n)
      for (std::size_t h = 0; h < spec_.heads.size(); ++h) {
        if (spec_.heads[h].kind != HeadKind::Categorical) continue;
        T* row = fw.heads.data() + static_cast<std::size_t>(n) * output_size_ + head_offsets_[h];
        softmax_inplace(std::span<T>(row, static_cast<std::size_t>(spec_.heads[h].size)));
      }
    return fw;
  }

  /// Accumulates dLoss/dparams into grad given dLoss/d(raw outputs).
  template <class T>
  void backward_into(std::span<const T> params, const ForwardPass<T>& fw, std::span<const T> d_outputs,
                     std::span<T> grad) const {
    if (grad.size() != param_count_ || params.size() != param_count_)
      fail(ErrorKind::Incompatible, "gradient buffer does not match network spec");
    if (d_outputs.size() != static_cast<std::size_t>(fw.batch) * output_size_)
      fail(ErrorKind::Incompatible, "output gradient does not match batch");
    std::vector<T> d_out(d_outputs.begin(), d_outputs.end());
    for (std::size_t i = plan_.size(); i-- > 0;) {
      const auto& p = plan_[i];
      const auto& in = fw.acts[i];
      const auto& out = fw.acts[i + 1];
      const bool need_input_grad = i > 0;
      std::vector<T> d_in(need_input_grad ? in.size() : 0, T(0));
      switch (p.kind) {
        case LayerKind::Dense: dense_backward(p, params, in, d_out, d_in, grad, fw.batch); break;
        case LayerKind::Conv: conv_backward(p, params, in, d_out, d_in, grad, fw.batch); break;
        case LayerKind::Relu:
          if (need_input_grad)
            for (std::size_t k = 0; k < d_in.size(); ++k) d_in[k] = out[k] > T(0) ? d_out[k] : T(0);
          break;
        case LayerKind::Flatten:
          if (need_input_grad) d_in = d_out;
          break;
      }
      if (!need_input_grad) break;
      d_out = std::move(d_in);
    }
  }

  template <class T>
  std::vector<T> backward(std::span<const T> params, const ForwardPass<T>& fw, std::span<const T> d_outputs) const {
    std::vector<T> grad(param_count_, T(0));
    backward_into(params, fw, d_outputs, std::span<T>(grad));
    return grad;
  }

  template <class T>
  static void softmax_inplace(std::span<T> v) {
    double mx = -INFINITY;
    for (T x : v) mx = std::max(mx, static_cast<double>(x));
    double sum = 0.0;
    std::vector<double> e(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sum += e[i] = std::exp(static_cast<double>(v[i]) - mx);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(e[i] / sum);
  }

 private:
  static int weight_rows(const LayerPlan& p) {
    return p.kind == LayerKind::Conv ? p.out.c : static_cast<int>(p.out.size());
  }

  // Rows are orthonormal when rows <= cols, columns otherwise.
  static std::vector<double> orthogonal(int rows, std::size_t cols, Rng& rng) {
    const bool transpose = static_cast<std::size_t>(rows) > cols;
    const std::size_t r = transpose ? cols : static_cast<std::size_t>(rows);
    const std::size_t c = transpose ? static_cast<std::size_t>(rows) : cols;
    std::vector<double> a(r * c);
    for (double& x : a) x = standard_normal(rng);
    for (std::size_t i = 0; i < r; ++i) {
      double* ri = &a[i * c];
      for (std::size_t j = 0; j < i; ++j) {
        const double* rj = &a[j * c];
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += ri[k] * rj[k];
        for (std::size_t k = 0; k < c; ++k) ri[k] -= dot * rj[k];
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < c; ++k) norm += ri[k] * ri[k];
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < c; ++k) ri[k] /= norm;
    }
    if (!transpose) return a;
    std::vector<double> t(a.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < c; ++k) t[k * r + i] = a[i * c + k];
    return t;
  }

  void compile() {
    if (spec_.heads.empty()) fail(ErrorKind::InvalidConfig, "network needs at least one head");
    if (spec_.input.w < 1 || spec_.input.h < 1 || spec_.input.c < 1)
      fail(ErrorKind::InvalidConfig, "input shape must be positive");
    Shape cur = spec_.input;
    bool flat = false;
    std::size_t offset = 0;
    auto add_params = [&](LayerPlan& p, std::size_t weights, std::size_t biases) {
      p.weight_offset = offset;
      p.weight_count = weights;
      offset += weights;
      p.bias_offset = offset;
      p.bias_count = biases;
      offset += biases;
    };
    for (const auto& l : spec_.layers) {
      LayerPlan p;
      p.kind = l.kind;
      p.in = cur;
      switch (l.kind) {
        case LayerKind::Conv: {
          if (flat) fail(ErrorKind::InvalidConfig, "CONV cannot follow FLATTEN or DENSE");
          if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1)
            fail(ErrorKind::InvalidConfig, "CONV needs positive channels, kernel and stride");
          if (l.kernel > cur.w || l.kernel > cur.h) fail(ErrorKind::InvalidConfig, "CONV kernel larger than its input");
          p.kernel = l.kernel;
          p.stride = l.stride;
          p.out = {(cur.w - l.kernel) / l.stride + 1, (cur.h - l.kernel) / l.stride + 1, l.out_channels};
          add_params(p, static_cast<std::size_t>(l.out_channels) * l.kernel * l.kernel * cur.c,
                     static_cast<std::size_t>(l.out_channels));
          break;
        }
        case LayerKind::Dense:
          if (l.units < 1) fail(ErrorKind::InvalidConfig, "DENSE needs positive units");
          p.out = {l.units, 1, 1};
          add_params(p, cur.size() * l.units, static_cast<std::size_t>(l.units));
          flat = true;
          break;
        case LayerKind::Relu: p.out = cur; break;
        case LayerKind::Flatten:
          p.out = {static_cast<int>(cur.size()), 1, 1};
          flat = true;
          break;
      }
      cur = p.out;
      plan_.push_back(p);
    }
    output_size_ = 0;
    for (const auto& h : spec_.heads) {
      if (h.size < 1) fail(ErrorKind::InvalidConfig, "head sizes must be positive");
      head_offsets_.push_back(output_size_);
      output_size_ += static_cast<std::size_t>(h.size);
    }
    LayerPlan head;
    head.kind = LayerKind::Dense;
    head.in = cur;
    head.out = {static_cast<int>(output_size_), 1, 1};
    add_params(head, cur.size() * output_size_, output_size_);
    plan_.push_back(head);
    param_count_ = offset;
  }

  template <class T>
  static void dense_forward(const LayerPlan& p, std::span<const T> params, const std::vector<T>& in,
                            std::vector<T>& out, int batch) {
    const std::size_t d_in = p.in.size(), d_out = p.out.size();
    const T* w = params.data() + p.weight_offset;
    const T* b = params.data() + p.bias_offset;
    for (int n = 0; n < batch; ++n) {
      const T* x = in.data() + n * d_in;
      T* y = out.data() + n * d_out;
      std::copy(b, b + d_out, y);
      for (std::size_t d = 0; d < d_in; ++d) {
        const T xv = x[d];
        if (xv == T(0)) continue;
        const T* wr = w + d * d_out;
        for (std::size_t u = 0; u < d_out; ++u) y[u] += xv * wr[u];
      }
    }
  }

  template <class T>
  static void dense_backward(const LayerPlan& p, std::span<const T> params, const std::vector<T>& in,
                             const std::vector<T>& d_out, std::vector<T>& d_in, std::span<T> grad, int batch) {
    const std::size_t n_in = p.in.size(), n_out = p.out.size();
    const T* w = params.data() + p.weight_offset;
    T* gw = grad.data() + p.weight_offset;
    T* gb = grad.data() + p.bias_offset;
    for (int n = 0; n < batch; ++n) {
      const T* x = in.data() + n * n_in;
      const T* dy = d_out.data() + n * n_out;
      for (std::size_t u = 0; u < n_out; ++u) gb[u] += dy[u];
      for (std::size_t d = 0; d < n_in; ++d) {
        const T xv = x[d];
        if (xv == T(0)) continue;
        T* g = gw + d * n_out;
        for (std::size_t u = 0; u < n_out; ++u) g[u] += xv * dy[u];
      }
      if (!d_in.empty()) {
        T* dx = d_in.data() + n * n_in;
        for (std::size_t d = 0; d < n_in; ++d) {
          const T* wr = w + d * n_out;
          T acc = T(0);
          for (std::size_t u = 0; u < n_out; ++u) acc += wr[u] * dy[u];
          dx[d] = acc;
        }
      }
    }
  }

  template <class T>
  static void conv_forward(const LayerPlan& p, std::span<const T> params, const std::vector<T>& in,
                           std::vector<T>& out, int batch) {
    const int k = p.kernel, s = p.stride, ic = p.in.c, oc = p.out.c;
    const T* w = params.data() + p.weight_offset;
    const T* b = params.data() + p.bias_offset;
    for (int n = 0; n < batch; ++n) {
      const T* x = in.data() + static_cast<std::size_t>(n) * p.in.size();
      T* y = out.data() + static_cast<std::size_t>(n) * p.out.size();
      for (int oy = 0; oy < p.out.h; ++oy)
        for (int ox = 0; ox < p.out.w; ++ox) {
          T* yo = y + (static_cast<std::size_t>(oy) * p.out.w + ox) * oc;
          for (int o = 0; o < oc; ++o) yo[o] = b[o];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const T* xi = x + (static_cast<std::size_t>(oy * s + ky) * p.in.w + (ox * s + kx)) * ic;
              for (int o = 0; o < oc; ++o) {
                const T* wk = w + ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
                T acc = T(0);
                for (int c = 0; c < ic; ++c) acc += wk[c] * xi[c];
                yo[o] += acc;
              }
            }
        }
    }
  }

  template <class T>
  static void conv_backward(const LayerPlan& p, std::span<const T> params, const std::vector<T>& in,
                            const std::vector<T>& d_out, std::vector<T>& d_in, std::span<T> grad, int batch) {
    const int k = p.kernel, s = p.stride, ic = p.in.c, oc = p.out.c;
    const T* w = params.data() + p.weight_offset;
    T* gw = grad.data() + p.weight_offset;
    T* gb = grad.data() + p.bias_offset;
    for (int n = 0; n < batch; ++n) {
      const T* x = in.data() + static_cast<std::size_t>(n) * p.in.size();
      const T* dy = d_out.data() + static_cast<std::size_t>(n) * p.out.size();
      T* dx = d_in.empty() ? nullptr : d_in.data() + static_cast<std::size_t>(n) * p.in.size();
      for (int oy = 0; oy < p.out.h; ++oy)
        for (int ox = 0; ox < p.out.w; ++ox) {
          const T* dyo = dy + (static_cast<std::size_t>(oy) * p.out.w + ox) * oc;
          for (int o = 0; o < oc; ++o) gb[o] += dyo[o];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const std::size_t in_off = (static_cast<std::size_t>(oy * s + ky) * p.in.w + (ox * s + kx)) * ic;
              for (int o = 0; o < oc; ++o) {
                const T g = dyo[o];
                if (g == T(0)) continue;
                const std::size_t w_off = ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
                for (int c = 0; c < ic; ++c) gw[w_off + c] += g * x[in_off + c];
                if (dx)
                  for (int c = 0; c < ic; ++c) dx[in_off + c] += g * w[w_off + c];
              }
            }
        }
    }
  }

  NetSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<std::size_t> head_offsets_;
  std::size_t param_count_ = 0;
  std::size_t output_size_ = 0;
};

// ---------------------------------------------------------------------------
// Categorical heads

/// Per-branch probability vectors.
using BranchDistribution = std::vector<std::vector<double>>;

/// Sum over branches of -sum p ln p, with 0 ln 0 = 0.
inline double entropy(const BranchDistribution& dist) {
  double h = 0.0;
  for (const auto& branch : dist) {
    double sum = 0.0;
    for (double p : branch) {
      if (!(p >= 0.0)) fail(ErrorKind::InvalidArgument, "negative probability in distribution");
      sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-6) fail(ErrorKind::InvalidArgument, "branch probabilities do not sum to 1");
  }
  return std::max(h, 0.0);
}

template <class T>
BranchDistribution branch_distribution(const Net& net, const ForwardPass<T>& fw, int row) {
  BranchDistribution dist;
  const auto& heads = net.spec().heads;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    if (heads[h].kind != HeadKind::Categorical) continue;
    const T* p = fw.heads.data() + static_cast<std::size_t>(row) * net.output_size() + net.head_offset(h);
    dist.emplace_back(p, p + heads[h].size);
  }
  return dist;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(static_cast<double>(x)); });
}

/// Bias-corrected adaptive-moment update, in place. Non-finite gradients are
/// rejected before anything is modified.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    fail(ErrorKind::Incompatible, "adam_step: parameter, gradient and moment sizes differ");
  if (!all_finite(grads)) fail(ErrorKind::NonFinite, "adam_step: non-finite gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

/// Rescales grads to at most max_norm; returns the norm before clipping.
template <class T>
double clip_grad_norm(std::span<T> grads, double max_norm) {
  double sq = 0.0;
  for (T g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (T& g : grads) g = static_cast<T>(g * scale);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: "BHNN" | u32 version | u32 json length | spec json | u64 count |
// count float32 | 32-byte SHA-256 of everything before it.

struct Checkpoint {
  NetSpec spec;
  std::vector<float> params;
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::array<char, 4> kCheckpointMagic{'B', 'H', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const Net net(ck.spec);
  if (ck.params.size() != net.param_count()) fail(ErrorKind::Incompatible, "checkpoint parameters do not match spec");
  nlohmann::json header = {{"spec", to_json(ck.spec)}, {"meta", ck.meta}};
  const std::string json = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  auto put = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  const std::uint32_t version = kCheckpointVersion;
  const auto json_len = static_cast<std::uint32_t>(json.size());
  const auto count = static_cast<std::uint64_t>(ck.params.size());
  put(&version, sizeof version);
  put(&json_len, sizeof json_len);
  out += json;
  put(&count, sizeof count);
  put(ck.params.data(), ck.params.size() * sizeof(float));
  const auto digest = sha256(out);
  put(digest.data(), digest.size());
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  constexpr std::size_t kDigest = 32;
  if (bytes.size() < 4 + 4 + 4 + 8 + kDigest || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    fail(ErrorKind::Corrupt, "not a checkpoint container");
  const auto body = bytes.substr(0, bytes.size() - kDigest);
  const auto digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigest) != 0)
    fail(ErrorKind::Corrupt, "checkpoint checksum mismatch");
  std::size_t pos = 4;
  auto get = [&](void* dst, std::size_t n) {
    if (pos + n > body.size()) fail(ErrorKind::Corrupt, "truncated checkpoint");
    std::memcpy(dst, body.data() + pos, n);
    pos += n;
  };
  std::uint32_t version = 0, json_len = 0;
  get(&version, sizeof version);
  if (version != kCheckpointVersion) fail(ErrorKind::Incompatible, "unsupported checkpoint version");
  get(&json_len, sizeof json_len);
  if (pos + json_len > body.size()) fail(ErrorKind::Corrupt, "truncated checkpoint");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(body.substr(pos, json_len));
    ck.spec = net_spec_from_json(header.at("spec"));
    ck.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("checkpoint header: ") + e.what());
  }
  pos += json_len;
  std::uint64_t count = 0;
  get(&count, sizeof count);
  if (count != Net(ck.spec).param_count()) fail(ErrorKind::Corrupt, "checkpoint payload size does not match spec");
  ck.params.resize(count);
  get(ck.params.data(), count * sizeof(float));
  if (pos != body.size()) fail(ErrorKind::Corrupt, "trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  const auto bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace birdhunt::nn
