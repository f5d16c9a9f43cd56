#pragma once

// The prediction network. Each of the kSensorSlots sensor windows passes
// through the same two conv(valid, ReLU) + maxpool(2) stages; the flattened
// branch outputs are concatenated with the dense features, fed to one ReLU
// hidden layer and a linear 2-unit head that predicts log1p concentrations.
// The station variant has no branch and is a plain one-hidden-layer MLP.
//
// Everything runs in double precision with explicit forward/backward passes.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/dataset.hpp"
#include "aqe/features.hpp"

namespace aqe {

struct ModelConfig {
  Variant variant = Variant::station_and_sensor;
  std::size_t n_sensors = kSensorSlots;
  std::size_t window = kWindowLength;
  std::size_t channels = kSensorChannels;
  std::size_t n1 = 128;  // hidden units
  std::size_t k1 = 3, k2 = 3;
  std::size_t f1 = 32, f2 = 8;
  std::size_t pool = 2;
  std::size_t dense_dim = 0;  // raw dense features + presence flags
  std::uint64_t seed = 1;

  /// Default hyperparameters with the dense width implied by the variant.
  static ModelConfig for_variant(Variant v, std::uint64_t seed = 1) {
    ModelConfig c;
    c.variant = v;
    c.seed = seed;
    c.dense_dim = network_dense_size(v);
    if (!uses_sensors(v)) c.n_sensors = 0;
    return c;
  }

  bool has_branch() const { return uses_sensors(variant); }
  std::size_t conv1_len() const { return window - k1 + 1; }
  std::size_t pool1_len() const { return conv1_len() / pool; }
  std::size_t conv2_len() const { return pool1_len() - k2 + 1; }
  std::size_t pool2_len() const { return conv2_len() / pool; }
  std::size_t branch_out() const { return has_branch() ? pool2_len() * f2 : 0; }
  std::size_t sensor_input() const { return has_branch() ? n_sensors * window * channels : 0; }
  std::size_t concat_dim() const { return n_sensors * branch_out() + dense_dim; }

  void validate() const {
    if (n1 == 0 || dense_dim + (has_branch() ? 1 : 0) == 0) throw std::invalid_argument("ModelConfig: empty layers");
    if (!has_branch()) {
      if (n_sensors != 0) throw std::invalid_argument("ModelConfig: station variant has no sensor input");
      return;
    }
    if (n_sensors == 0 || channels == 0 || f1 == 0 || f2 == 0 || k1 == 0 || k2 == 0 || pool == 0) {
      throw std::invalid_argument("ModelConfig: zero-sized branch dimension");
    }
    if (window < k1 || conv1_len() / pool < k2 || conv2_len() / pool == 0) {
      throw std::invalid_argument("ModelConfig: window too short for the conv/pool chain");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

/// Parameter blocks in a fixed order. Conv weights are [tap][in][out], dense
/// weights [in][out]. Branch blocks are empty for the station variant.
struct ModelWeights {
  enum Block : std::size_t { conv1_w, conv1_b, conv2_w, conv2_b, hidden_w, hidden_b, out_w, out_b, kCount };
  std::array<ParamBlock, kCount> blocks;

  ParamBlock& operator[](Block b) { return blocks[b]; }
  const ParamBlock& operator[](Block b) const { return blocks[b]; }

  static ModelWeights zeros(const ModelConfig& c) {
    ModelWeights w;
    const std::size_t cin = c.has_branch() ? c.channels : 0;
    const std::size_t f1 = c.has_branch() ? c.f1 : 0;
    const std::size_t f2 = c.has_branch() ? c.f2 : 0;
    const std::size_t k1 = c.has_branch() ? c.k1 : 0;
    const std::size_t k2 = c.has_branch() ? c.k2 : 0;
    const auto make = [](std::string name, std::vector<std::size_t> shape) {
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      return ParamBlock{std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
    };
    w.blocks[conv1_w] = make("conv1.w", {k1, cin, f1});
    w.blocks[conv1_b] = make("conv1.b", {f1});
    w.blocks[conv2_w] = make("conv2.w", {k2, f1, f2});
    w.blocks[conv2_b] = make("conv2.b", {f2});
    w.blocks[hidden_w] = make("hidden.w", {c.concat_dim(), c.n1});
    w.blocks[hidden_b] = make("hidden.b", {c.n1});
    w.blocks[out_w] = make("output.w", {c.n1, 2});
    w.blocks[out_b] = make("output.b", {2});
    return w;
  }

  void set_zero() {
    for (auto& b : blocks) std::fill(b.values.begin(), b.values.end(), 0.0);
  }
};

using Gradients = ModelWeights;

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
inline ModelWeights init_weights(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelWeights w = ModelWeights::zeros(c);
  Rng rng(seed);
  const auto fill = [&](ParamBlock& b, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto& v : b.values) v = uniform(rng, -limit, limit);
  };
  fill(w[ModelWeights::conv1_w], c.k1 * c.channels);
  fill(w[ModelWeights::conv2_w], c.k2 * c.f1);
  fill(w[ModelWeights::hidden_w], c.concat_dim());
  fill(w[ModelWeights::out_w], c.n1);
  return w;
}

/// Activations of one data point kept for the backward pass.
struct PointCache {
  std::vector<double> conv1;              // [sensor][t][f1], post-ReLU
  std::vector<std::uint32_t> pool1_arg;   // [sensor][t][f1] -> conv1 time index
  std::vector<double> pool1;              // [sensor][t][f1]
  std::vector<double> conv2;              // [sensor][t][f2], post-ReLU
  std::vector<std::uint32_t> pool2_arg;   // [sensor][t][f2] -> conv2 time index
  std::vector<double> concat;             // branch outputs then dense inputs
  std::vector<double> hidden;             // post-ReLU
};

/// Cache of a batch forward pass. Refers to the inputs, which must outlive it.
struct ForwardCache {
  std::span<const NormalizedInput> inputs;
  std::vector<PointCache> points;
};

namespace detail {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Valid 1-D convolution + ReLU. in: [len][cin], w: [k][cin][cout].
inline void conv1d_relu(const double* in, std::size_t len, std::size_t cin, const std::vector<double>& w,
                        const std::vector<double>& b, std::size_t k, std::size_t cout, double* out) {
  const std::size_t out_len = len - k + 1;
  for (std::size_t t = 0; t < out_len; ++t) {
    double* o = out + t * cout;
    for (std::size_t f = 0; f < cout; ++f) o[f] = b[f];
    for (std::size_t j = 0; j < k; ++j) {
      const double* x = in + (t + j) * cin;
      const double* wj = w.data() + j * cin * cout;
      for (std::size_t c = 0; c < cin; ++c) {
        const double xc = x[c];
        const double* wr = wj + c * cout;
        for (std::size_t f = 0; f < cout; ++f) o[f] += xc * wr[f];
      }
    }
    for (std::size_t f = 0; f < cout; ++f) o[f] = relu(o[f]);
  }
}

// Max pooling over non-overlapping windows; trailing remainder dropped, ties
// resolve to the first index.
inline void maxpool(const double* in, std::size_t len, std::size_t ch, std::size_t pool, double* out,
                    std::uint32_t* arg) {
  const std::size_t out_len = len / pool;
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::size_t best = t * pool;
      for (std::size_t j = 1; j < pool; ++j) {
        if (in[(t * pool + j) * ch + c] > in[best * ch + c]) best = t * pool + j;
      }
      out[t * ch + c] = in[best * ch + c];
      arg[t * ch + c] = static_cast<std::uint32_t>(best);
    }
  }
}

}  // namespace detail

inline void check_input(const ModelConfig& c, const NormalizedInput& x) {
  if (x.sensor.size() != c.sensor_input() || x.dense.size() != c.dense_dim) {
    throw std::invalid_argument("forward: input shape does not match model config");
  }
}

/// Forward pass of one point; fills the cache and returns log1p predictions.
inline Concentrations forward_point(const ModelWeights& w, const ModelConfig& c, const NormalizedInput& x,
                                    PointCache& pc) {
  check_input(c, x);
  const std::size_t bo = c.branch_out();
  pc.concat.assign(c.concat_dim(), 0.0);
  if (c.has_branch()) {
    const std::size_t L1 = c.conv1_len(), P1 = c.pool1_len(), L2 = c.conv2_len(), P2 = c.pool2_len();
    pc.conv1.resize(c.n_sensors * L1 * c.f1);
    pc.pool1.resize(c.n_sensors * P1 * c.f1);
    pc.pool1_arg.resize(pc.pool1.size());
    pc.conv2.resize(c.n_sensors * L2 * c.f2);
    pc.pool2_arg.resize(c.n_sensors * P2 * c.f2);
    for (std::size_t s = 0; s < c.n_sensors; ++s) {
      const double* in = x.sensor.data() + s * c.window * c.channels;
      double* a1 = pc.conv1.data() + s * L1 * c.f1;
      double* p1 = pc.pool1.data() + s * P1 * c.f1;
      double* a2 = pc.conv2.data() + s * L2 * c.f2;
      detail::conv1d_relu(in, c.window, c.channels, w[ModelWeights::conv1_w].values,
                          w[ModelWeights::conv1_b].values, c.k1, c.f1, a1);
      detail::maxpool(a1, L1, c.f1, c.pool, p1, pc.pool1_arg.data() + s * P1 * c.f1);
      detail::conv1d_relu(p1, P1, c.f1, w[ModelWeights::conv2_w].values, w[ModelWeights::conv2_b].values,
                          c.k2, c.f2, a2);
      detail::maxpool(a2, L2, c.f2, c.pool, pc.concat.data() + s * bo, pc.pool2_arg.data() + s * P2 * c.f2);
    }
  }
  std::copy(x.dense.begin(), x.dense.end(), pc.concat.begin() + static_cast<std::ptrdiff_t>(c.n_sensors * bo));

  const auto& hw = w[ModelWeights::hidden_w].values;
  pc.hidden.assign(w[ModelWeights::hidden_b].values.begin(), w[ModelWeights::hidden_b].values.end());
  for (std::size_t i = 0; i < pc.concat.size(); ++i) {
    const double xi = pc.concat[i];
    if (xi == 0.0) continue;
    const double* row = hw.data() + i * c.n1;
    for (std::size_t h = 0; h < c.n1; ++h) pc.hidden[h] += xi * row[h];
  }
  for (auto& h : pc.hidden) h = detail::relu(h);

  const auto& ow = w[ModelWeights::out_w].values;
  Concentrations y{w[ModelWeights::out_b].values[0], w[ModelWeights::out_b].values[1]};
  for (std::size_t h = 0; h < c.n1; ++h) {
    y[0] += pc.hidden[h] * ow[h * 2];
    y[1] += pc.hidden[h] * ow[h * 2 + 1];
  }
  return y;
}

inline std::vector<Concentrations> forward(const ModelWeights& w, const ModelConfig& c,
                                           std::span<const NormalizedInput> batch, ForwardCache& cache) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  cache.inputs = batch;
  cache.points.resize(batch.size());
  std::vector<Concentrations> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = forward_point(w, c, batch[i], cache.points[i]);
  return out;
}

/// Accumulates into `g` the gradient of one point given dL/dy.
inline void backward_point(const ModelWeights& w, const ModelConfig& c, const NormalizedInput& x,
                           const PointCache& pc, const Concentrations& dy, Gradients& g) {
  if (dy[0] == 0.0 && dy[1] == 0.0) return;
  const std::size_t n1 = c.n1;
  auto& gow = g[ModelWeights::out_w].values;
  auto& gob = g[ModelWeights::out_b].values;
  gob[0] += dy[0];
  gob[1] += dy[1];
  std::vector<double> dh(n1);
  const auto& ow = w[ModelWeights::out_w].values;
  for (std::size_t h = 0; h < n1; ++h) {
    gow[h * 2] += pc.hidden[h] * dy[0];
    gow[h * 2 + 1] += pc.hidden[h] * dy[1];
    dh[h] = pc.hidden[h] > 0.0 ? ow[h * 2] * dy[0] + ow[h * 2 + 1] * dy[1] : 0.0;
  }
  auto& ghw = g[ModelWeights::hidden_w].values;
  auto& ghb = g[ModelWeights::hidden_b].values;
  for (std::size_t h = 0; h < n1; ++h) ghb[h] += dh[h];
  for (std::size_t i = 0; i < pc.concat.size(); ++i) {
    const double xi = pc.concat[i];
    if (xi == 0.0) continue;
    double* row = ghw.data() + i * n1;
    for (std::size_t h = 0; h < n1; ++h) row[h] += xi * dh[h];
  }
  if (!c.has_branch()) return;

  const auto& hw = w[ModelWeights::hidden_w].values;
  const std::size_t bo = c.branch_out();
  const std::size_t L1 = c.conv1_len(), P1 = c.pool1_len(), L2 = c.conv2_len();
  const auto& w1 = w[ModelWeights::conv1_w].values;
  const auto& w2 = w[ModelWeights::conv2_w].values;
  auto& g1 = g[ModelWeights::conv1_w].values;
  auto& gb1 = g[ModelWeights::conv1_b].values;
  auto& g2 = g[ModelWeights::conv2_w].values;
  auto& gb2 = g[ModelWeights::conv2_b].values;
  std::vector<double> dz2(L2 * c.f2), dp1(P1 * c.f1), dz1(L1 * c.f1);

  for (std::size_t s = 0; s < c.n_sensors; ++s) {
    // d concat (branch part) -> conv2 output through the pool argmax.
    std::fill(dz2.begin(), dz2.end(), 0.0);
    const double* a2 = pc.conv2.data() + s * L2 * c.f2;
    const std::uint32_t* arg2 = pc.pool2_arg.data() + s * c.pool2_len() * c.f2;
    bool any = false;
    for (std::size_t k = 0; k < bo; ++k) {
      const double* row = hw.data() + (s * bo + k) * n1;
      double d = 0.0;
      for (std::size_t h = 0; h < n1; ++h) d += row[h] * dh[h];
      const std::size_t f = k % c.f2;
      const std::size_t t = arg2[k];
      if (a2[t * c.f2 + f] > 0.0) {
        dz2[t * c.f2 + f] += d;
        any = any || d != 0.0;
      }
    }
    if (!any) continue;
    // conv2 parameters and d pool1.
    const double* p1 = pc.pool1.data() + s * P1 * c.f1;
    std::fill(dp1.begin(), dp1.end(), 0.0);
    for (std::size_t t = 0; t < L2; ++t) {
      for (std::size_t o = 0; o < c.f2; ++o) {
        const double d = dz2[t * c.f2 + o];
        if (d == 0.0) continue;
        gb2[o] += d;
        for (std::size_t j = 0; j < c.k2; ++j) {
          for (std::size_t ci = 0; ci < c.f1; ++ci) {
            const std::size_t wi = (j * c.f1 + ci) * c.f2 + o;
            g2[wi] += p1[(t + j) * c.f1 + ci] * d;
            dp1[(t + j) * c.f1 + ci] += w2[wi] * d;
          }
        }
      }
    }
    // d pool1 -> conv1 output, then conv1 parameters.
    std::fill(dz1.begin(), dz1.end(), 0.0);
    const double* a1 = pc.conv1.data() + s * L1 * c.f1;
    const std::uint32_t* arg1 = pc.pool1_arg.data() + s * P1 * c.f1;
    for (std::size_t k = 0; k < P1 * c.f1; ++k) {
      const std::size_t f = k % c.f1;
      const std::size_t t = arg1[k];
      if (a1[t * c.f1 + f] > 0.0) dz1[t * c.f1 + f] += dp1[k];
    }
    const double* in = x.sensor.data() + s * c.window * c.channels;
    for (std::size_t t = 0; t < L1; ++t) {
      for (std::size_t o = 0; o < c.f1; ++o) {
        const double d = dz1[t * c.f1 + o];
        if (d == 0.0) continue;
        gb1[o] += d;
        for (std::size_t j = 0; j < c.k1; ++j) {
          for (std::size_t ci = 0; ci < c.channels; ++ci) {
            g1[(j * c.channels + ci) * c.f1 + o] += in[(t + j) * c.channels + ci] * d;
          }
        }
      }
    }
  }
  (void)w1;
}

/// Parameter gradients of a batch, accumulated in point order.
inline Gradients backward(const ModelWeights& w, const ModelConfig& c, const ForwardCache& cache,
                          std::span<const Concentrations> dpred) {
  if (dpred.size() != cache.points.size()) throw std::invalid_argument("backward: gradient/batch size mismatch");
  Gradients g = w;
  g.set_zero();
  for (std::size_t i = 0; i < dpred.size(); ++i) backward_point(w, c, cache.inputs[i], cache.points[i], dpred[i], g);
  return g;
}

struct LossResult {
  double loss = 0;
  std::size_t supervised = 0;
  std::vector<Concentrations> grad;  // dL/dprediction
};

/// Mean squared error between log1p-space predictions and log1p(targets)
/// over the unmasked (point, pollutant) pairs.
inline LossResult msle_loss(std::span<const Concentrations> pred, std::span<const Target> targets) {
  if (pred.size() != targets.size()) throw std::invalid_argument("msle_loss: size mismatch");
  LossResult r;
  r.grad.assign(pred.size(), {0.0, 0.0});
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!targets[i].mask[p]) continue;
      const double e = pred[i][p] - std::log1p(targets[i].value[p]);
      sum += e * e;
      ++r.supervised;
    }
  }
  if (r.supervised == 0) throw std::domain_error("msle_loss: batch has no supervised pairs");
  const double m = static_cast<double>(r.supervised);
  r.loss = sum / m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (targets[i].mask[p]) r.grad[i][p] = 2.0 * (pred[i][p] - std::log1p(targets[i].value[p])) / m;
    }
  }
  return r;
}

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::array<std::vector<double>, ModelWeights::kCount> m, v;
  std::int64_t step = 0;

  explicit AdamState(const ModelWeights& w, AdamConfig cfg = {}) : config(cfg) {
    for (std::size_t b = 0; b < ModelWeights::kCount; ++b) {
      m[b].assign(w.blocks[b].values.size(), 0.0);
      v[b].assign(w.blocks[b].values.size(), 0.0);
    }
  }
};

/// Bias-corrected Adam update. Validates every gradient before touching any
/// weight.
inline void adam_step(ModelWeights& w, const Gradients& g, AdamState& st) {
  for (std::size_t b = 0; b < ModelWeights::kCount; ++b) {
    if (g.blocks[b].values.size() != w.blocks[b].values.size() || st.m[b].size() != w.blocks[b].values.size()) {
      throw std::invalid_argument("adam_step: shape mismatch in " + w.blocks[b].name);
    }
    for (double x : g.blocks[b].values) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in " + g.blocks[b].name);
    }
  }
  ++st.step;
  const auto& cfg = st.config;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t b = 0; b < ModelWeights::kCount; ++b) {
    auto& wv = w.blocks[b].values;
    const auto& gv = g.blocks[b].values;
    auto& m = st.m[b];
    auto& v = st.v[b];
    for (std::size_t i = 0; i < wv.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gv[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
      wv[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

/// A trained network with the normalization it expects.
struct Model {
  ModelConfig config;
  ModelWeights weights;
  NormStats norm;
};

/// Raw features to (pm25, pm10) in ug/m3: normalize, clamp to the training
/// range, forward, expm1, clamp at 0.
inline Concentrations predict(const Model& model, const FeatureVector& fv) {
  NormalizedInput x = normalize(model.norm, fv);
  clamp_to_training_range(model.norm, x);
  PointCache pc;
  const auto y = forward_point(model.weights, model.config, x, pc);
  Concentrations out{};
  for (std::size_t p = 0; p < 2; ++p) {
    const double v = std::max(0.0, std::expm1(y[p]));
    if (!std::isfinite(v)) throw NumericalError("prediction is not finite");
    out[p] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: text header terminated by "end_header", then per block a line
// "block <name> <ndim> <dims...> <count>" followed by count little-endian f64.
// The four norm range blocks are written only when the stats carry a range.

inline void save_model(const Model& m, const std::string& path) {
  const auto& c = m.config;
  std::ostringstream hdr;
  hdr << "AQE-MODEL 1\n"
      << "variant " << to_string(c.variant) << "\n"
      << "n_sensors " << c.n_sensors << "\nwindow " << c.window << "\nchannels " << c.channels << "\n"
      << "n1 " << c.n1 << "\nk1 " << c.k1 << "\nk2 " << c.k2 << "\nf1 " << c.f1 << "\nf2 " << c.f2 << "\n"
      << "pool " << c.pool << "\ndense_dim " << c.dense_dim << "\nseed " << c.seed << "\n"
      << "norm_digest " << std::hex << m.norm.digest() << std::dec << "\n"
      << "end_header\n";
  std::string buf = hdr.str();
  const auto write_block = [&](const std::string& name, const std::vector<std::size_t>& shape,
                               const double* data, std::size_t n) {
    buf += "block " + name + " " + std::to_string(shape.size());
    for (auto s : shape) buf += " " + std::to_string(s);
    buf += " " + std::to_string(n) + "\n";
    for (std::size_t i = 0; i < n; ++i) put_le<double>(buf, data[i]);
  };
  for (const auto& b : m.weights.blocks) write_block(b.name, b.shape, b.values.data(), b.values.size());
  write_block("norm.dense_mean", {m.norm.dense_mean.size()}, m.norm.dense_mean.data(), m.norm.dense_mean.size());
  write_block("norm.dense_std", {m.norm.dense_std.size()}, m.norm.dense_std.data(), m.norm.dense_std.size());
  write_block("norm.sensor_mean", {kSensorChannels}, m.norm.sensor_mean.data(), kSensorChannels);
  write_block("norm.sensor_std", {kSensorChannels}, m.norm.sensor_std.data(), kSensorChannels);
  if (m.norm.has_range()) {
    write_block("norm.dense_lo", {m.norm.dense_lo.size()}, m.norm.dense_lo.data(), m.norm.dense_lo.size());
    write_block("norm.dense_hi", {m.norm.dense_hi.size()}, m.norm.dense_hi.data(), m.norm.dense_hi.size());
    write_block("norm.sensor_lo", {kSensorChannels}, m.norm.sensor_lo.data(), kSensorChannels);
    write_block("norm.sensor_hi", {kSensorChannels}, m.norm.sensor_hi.data(), kSensorChannels);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Model load_model(const std::string& path) {
  const std::string buf = csv::read_file(path);
  std::string_view in = buf;
  std::size_t pos = 0;
  const auto next_line = [&]() {
    const auto nl = in.find('\n', pos);
    if (nl == std::string_view::npos) throw DataError(path + ": truncated model file");
    std::string line(in.substr(pos, nl - pos));
    pos = nl + 1;
    return line;
  };
  if (next_line() != "AQE-MODEL 1") throw DataError(path + ": not a model file");
  Model m;
  auto& c = m.config;
  std::string digest;
  for (;;) {
    const std::string line = next_line();
    if (line == "end_header") break;
    std::istringstream ss(line);
    std::string key, value;
    ss >> key >> value;
    const auto num = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "n_sensors") c.n_sensors = num();
    else if (key == "window") c.window = num();
    else if (key == "channels") c.channels = num();
    else if (key == "n1") c.n1 = num();
    else if (key == "k1") c.k1 = num();
    else if (key == "k2") c.k2 = num();
    else if (key == "f1") c.f1 = num();
    else if (key == "f2") c.f2 = num();
    else if (key == "pool") c.pool = num();
    else if (key == "dense_dim") c.dense_dim = num();
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "norm_digest") digest = value;
    else throw DataError(path + ": unknown header key " + key);
  }
  c.validate();
  m.weights = ModelWeights::zeros(c);
  m.norm.variant = c.variant;
  const auto read_block = [&](const std::string& expect, std::vector<double>& dst, bool resize) {
    std::istringstream ss(next_line());
    std::string tag, name;
    std::size_t ndim = 0, n = 0;
    ss >> tag >> name >> ndim;
    for (std::size_t d = 0; d < ndim; ++d) {
      std::size_t s;
      ss >> s;
    }
    ss >> n;
    if (tag != "block" || name != expect) throw DataError(path + ": expected block " + expect);
    if (resize) dst.resize(n);
    if (dst.size() != n) throw DataError(path + ": block " + expect + " has the wrong size");
    for (auto& v : dst) v = get_le<double>(in, pos);
  };
  for (auto& b : m.weights.blocks) read_block(b.name, b.values, false);
  read_block("norm.dense_mean", m.norm.dense_mean, true);
  read_block("norm.dense_std", m.norm.dense_std, true);
  std::vector<double> tmp(kSensorChannels);
  read_block("norm.sensor_mean", tmp, false);
  std::copy(tmp.begin(), tmp.end(), m.norm.sensor_mean.begin());
  read_block("norm.sensor_std", tmp, false);
  std::copy(tmp.begin(), tmp.end(), m.norm.sensor_std.begin());
  if (pos != in.size() && in.substr(pos).starts_with("block norm.dense_lo ")) {
    read_block("norm.dense_lo", m.norm.dense_lo, true);
    read_block("norm.dense_hi", m.norm.dense_hi, true);
    if (m.norm.dense_lo.size() != m.norm.dense_mean.size() || m.norm.dense_hi.size() != m.norm.dense_mean.size()) {
      throw DataError(path + ": normalization range has the wrong size");
    }
    read_block("norm.sensor_lo", tmp, false);
    std::copy(tmp.begin(), tmp.end(), m.norm.sensor_lo.begin());
    read_block("norm.sensor_hi", tmp, false);
    std::copy(tmp.begin(), tmp.end(), m.norm.sensor_hi.begin());
  }
  if (pos != in.size()) throw DataError(path + ": trailing bytes");
  std::ostringstream hex;
  hex << std::hex << m.norm.digest();
  if (hex.str() != digest) throw DataError(path + ": normalization digest mismatch");
  return m;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates where +-h crosses a ReLU/pool switch
  std::string worst_block;
};

/// Activation pattern (ReLU signs and pool winners) of a batch.
inline std::vector<std::uint64_t> activation_signature(const ForwardCache& cache) {
  std::vector<std::uint64_t> sig;
  for (const auto& pc : cache.points) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
    for (double v : pc.conv1) mix(v > 0.0);
    for (double v : pc.conv2) mix(v > 0.0);
    for (double v : pc.hidden) mix(v > 0.0);
    for (auto a : pc.pool1_arg) mix(a);
    for (auto a : pc.pool2_arg) mix(a);
    sig.push_back(h);
  }
  return sig;
}

/// Relative error with a small absolute floor so that gradients that are
/// zero up to rounding are not divided by themselves.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Compares backward() with central differences of msle_loss on a random
/// batch. Coordinates whose +-h perturbation changes the activation pattern
/// are non-differentiable there and are counted in skipped_kinks instead.
inline GradCheckResult gradient_check(const ModelConfig& c, std::uint64_t seed, std::size_t batch = 4,
                                      double h = 1e-4) {
  c.validate();
  Rng rng(seed);
  ModelWeights w = init_weights(c, seed);
  for (auto* b : {&w[ModelWeights::conv1_b], &w[ModelWeights::conv2_b], &w[ModelWeights::hidden_b],
                  &w[ModelWeights::out_b]}) {
    for (auto& v : b->values) v = uniform(rng, -0.1, 0.1);
  }
  std::vector<NormalizedInput> xs(batch);
  std::vector<Target> ts(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    xs[i].sensor.resize(c.sensor_input());
    xs[i].dense.resize(c.dense_dim);
    for (auto& v : xs[i].sensor) v = standard_normal(rng);
    for (auto& v : xs[i].dense) v = standard_normal(rng);
    const double a = uniform(rng, 0.0, 30.0), b = uniform(rng, 0.0, 60.0);
    ts[i] = Target::of(uniform01(rng) < 0.2 ? kNA : a, uniform01(rng) < 0.2 ? kNA : b);
    if (!ts[i].any()) ts[i] = Target::of(a, kNA);
  }
  ForwardCache cache;
  const auto loss_at = [&](const ModelWeights& ww, std::vector<std::uint64_t>* sig) {
    ForwardCache fc;
    const auto y = forward(ww, c, xs, fc);
    if (sig) *sig = activation_signature(fc);
    return msle_loss(y, ts).loss;
  };
  const auto y = forward(w, c, xs, cache);
  const auto base_sig = activation_signature(cache);
  const auto lr = msle_loss(y, ts);
  const Gradients g = backward(w, c, cache, lr.grad);

  GradCheckResult res;
  for (std::size_t b = 0; b < ModelWeights::kCount; ++b) {
    auto& vals = w.blocks[b].values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      std::vector<std::uint64_t> sp, sm;
      vals[i] = orig + h;
      const double lp = loss_at(w, &sp);
      vals[i] = orig - h;
      const double lm = loss_at(w, &sm);
      vals[i] = orig;
      if (sp != base_sig || sm != base_sig) {
        ++res.skipped_kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double err = relative_error(g.blocks[b].values[i], numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_block = w.blocks[b].name;
      }
    }
  }
  return res;
}

/// Small random configuration for gradient checks.
inline ModelConfig random_small_config(Variant v, Rng& rng) {
  ModelConfig c;
  c.variant = v;
  c.n1 = 3 + uniform_index(rng, 5);
  c.dense_dim = 2 + uniform_index(rng, 6);
  if (uses_sensors(v)) {
    c.n_sensors = 1 + uniform_index(rng, 3);
    c.channels = 2 + uniform_index(rng, 3);
    c.k1 = 2 + uniform_index(rng, 2);
    c.k2 = 2 + uniform_index(rng, 2);
    c.f1 = 2 + uniform_index(rng, 3);
    c.f2 = 2 + uniform_index(rng, 2);
    c.window = 12 + uniform_index(rng, 5);
  } else {
    c.n_sensors = 0;
  }
  c.seed = rng();
  c.validate();
  return c;
}

}  // namespace aqe
