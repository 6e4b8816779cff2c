#include "lsn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lsn/error.hpp"

namespace lsn::nn {

namespace {

constexpr double kStdEps = 1e-10;

void require_finite(std::span<const double> values, const char* layer) {
  // v * 0 is NaN exactly when v is NaN or infinite.
  double probe = 0.0;
#pragma omp simd reduction(+ : probe)
  for (std::size_t i = 0; i < values.size(); ++i) probe += values[i] * 0.0;
  if (probe != 0.0) throw NumericError(std::string("non-finite value after ") + layer);
}

// Copies a C x n x n block into a zeroed C x (n+2) x (n+2) buffer.
void pad_input(const double* in, std::size_t channels, std::size_t n, std::vector<double>& pad) {
  const std::size_t p = n + 2;
  pad.assign(channels * p * p, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < n; ++y) {
      std::copy_n(in + (c * n + y) * n, n, pad.data() + (c * p + y + 1) * p + 1);
    }
  }
}

// Accumulates a 3x3 correlation of a padded C_in x (n+2)^2 input into
// C_out x n^2 outputs.  Output channels are processed together so each
// input window is loaded once.
template <std::size_t Cout>
void correlate_block(const double* pad, std::size_t cin, std::size_t n, const double* w,
                     double* out) {
  const std::size_t p = n + 2;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double* src = pad + ci * p * p;
    double k[Cout][9];
    for (std::size_t co = 0; co < Cout; ++co) {
      for (std::size_t t = 0; t < 9; ++t) k[co][t] = w[(co * cin + ci) * 9 + t];
    }
    for (std::size_t y = 0; y < n; ++y) {
      const double* __restrict r0 = src + y * p;
      const double* __restrict r1 = r0 + p;
      const double* __restrict r2 = r1 + p;
#pragma omp simd
      for (std::size_t x = 0; x < n; ++x) {
        const double a0 = r0[x], a1 = r0[x + 1], a2 = r0[x + 2];
        const double a3 = r1[x], a4 = r1[x + 1], a5 = r1[x + 2];
        const double a6 = r2[x], a7 = r2[x + 1], a8 = r2[x + 2];
        for (std::size_t co = 0; co < Cout; ++co) {
          const double* kc = k[co];
          out[(co * n + y) * n + x] += kc[0] * a0 + kc[1] * a1 + kc[2] * a2 + kc[3] * a3 +
                                       kc[4] * a4 + kc[5] * a5 + kc[6] * a6 + kc[7] * a7 +
                                       kc[8] * a8;
        }
      }
    }
  }
}

void correlate(const double* pad, std::size_t cin, std::size_t cout, std::size_t n,
               const double* w, double* out) {
  if (cout == 6) {
    correlate_block<6>(pad, cin, n, w, out);
  } else if (cout == 1) {
    correlate_block<1>(pad, cin, n, w, out);
  } else {
    for (std::size_t co = 0; co < cout; ++co) {
      correlate_block<1>(pad, cin, n, w + co * cin * 9, out + co * n * n);
    }
  }
}

void conv_forward(const std::vector<double>& pad, std::size_t cin, std::size_t cout, std::size_t n,
                  const Tensor& w, const Tensor& b, std::vector<double>& out) {
  out.resize(cout * n * n);
  for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.data() + co * n * n, n * n, b.data[co]);
  correlate(pad.data(), cin, cout, n, w.data.data(), out.data());
}

// g_out: cout x n x n.  Accumulates into w.grad and b.grad; when want_input,
// writes dL/d(input) (unpadded, cin x n x n) into g_in.  The input gradient
// is a correlation of the padded output gradient with the flipped,
// channel-transposed kernels.
void conv_backward(const std::vector<double>& pad, const std::vector<double>& g_out,
                   std::size_t cin, std::size_t cout, std::size_t n, Tensor& w, Tensor& b,
                   bool want_input, std::vector<double>& g_pad, std::vector<double>& flipped,
                   std::vector<double>& g_in) {
  const std::size_t p = n + 2;
  pad_input(g_out.data(), cout, n, g_pad);
  // With both operands on the padded grid, a kernel tap is one flat dot
  // product: the two extra columns per row hit zero borders of g_pad.
  const std::size_t span = n * p - 2;
  for (std::size_t co = 0; co < cout; ++co) {
    const double* g = g_out.data() + co * n * n;
    double bsum = 0.0;
#pragma omp simd reduction(+ : bsum)
    for (std::size_t i = 0; i < n * n; ++i) bsum += g[i];
    b.grad[co] += bsum;
    const double* __restrict gp = g_pad.data() + co * p * p + p + 1;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* __restrict r0 = pad.data() + ci * p * p;
      const double* __restrict r1 = r0 + p;
      const double* __restrict r2 = r1 + p;
      double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4, a5, a6, a7, a8)
      for (std::size_t j = 0; j < span; ++j) {
        const double gv = gp[j];
        a0 += gv * r0[j];
        a1 += gv * r0[j + 1];
        a2 += gv * r0[j + 2];
        a3 += gv * r1[j];
        a4 += gv * r1[j + 1];
        a5 += gv * r1[j + 2];
        a6 += gv * r2[j];
        a7 += gv * r2[j + 1];
        a8 += gv * r2[j + 2];
      }
      double* dk = w.grad.data() + (co * cin + ci) * 9;
      dk[0] += a0;
      dk[1] += a1;
      dk[2] += a2;
      dk[3] += a3;
      dk[4] += a4;
      dk[5] += a5;
      dk[6] += a6;
      dk[7] += a7;
      dk[8] += a8;
    }
  }
  if (!want_input) return;
  flipped.resize(cin * cout * 9);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t t = 0; t < 9; ++t) {
        flipped[(ci * cout + co) * 9 + t] = w.data[(co * cin + ci) * 9 + (8 - t)];
      }
    }
  }
  g_in.assign(cin * n * n, 0.0);
  correlate(g_pad.data(), cout, cin, n, flipped.data(), g_in.data());
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = std::max(x, 0.0);
}

void relu_backward(const std::vector<double>& act, std::vector<double>& g) {
  const double* __restrict a = act.data();
  double* __restrict d = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] = a[i] > 0.0 ? d[i] : 0.0;
}

// 2x2 max-pool; ties keep the first candidate in row-major order.
void pool_forward(const std::vector<double>& in, std::size_t channels, std::size_t n,
                  std::vector<double>& out, std::vector<unsigned char>& arg) {
  const std::size_t h = n / 2;
  out.resize(channels * h * h);
  arg.resize(out.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < h; ++x) {
        const double* base = in.data() + (c * n + 2 * y) * n + 2 * x;
        const double cand[4] = {base[0], base[1], base[n], base[n + 1]};
        unsigned char best = 0;
        for (unsigned char t = 1; t < 4; ++t) {
          if (cand[t] > cand[best]) best = t;
        }
        const std::size_t o = (c * h + y) * h + x;
        out[o] = cand[best];
        arg[o] = best;
      }
    }
  }
}

void pool_backward(const std::vector<double>& g_out, const std::vector<unsigned char>& arg,
                   std::size_t channels, std::size_t n, std::vector<double>& g_in) {
  const std::size_t h = n / 2;
  g_in.assign(channels * n * n, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < h; ++x) {
        const std::size_t o = (c * h + y) * h + x;
        const std::size_t t = arg[o];
        g_in[(c * n + 2 * y + t / 2) * n + 2 * x + t % 2] += g_out[o];
      }
    }
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  data.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Probabilities softmax(const std::array<double, 2>& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ValidationError("Adam learning rate must be positive");
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

void Adam::step(const std::vector<Tensor*>& params) {
  if (states_.size() != params.size()) states_.assign(params.size(), AdamState{});
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_step(params[i]->data, params[i]->grad, states_[i], config_);
  }
}

DigitalModel::DigitalModel(std::size_t input_n) : input_n_(input_n) {
  if (input_n < 4 || input_n % 4 != 0) {
    throw ValidationError("model input size must be a positive multiple of 4");
  }
  const std::size_t ins[4] = {1, kChannels, kChannels, kChannels};
  for (std::size_t l = 0; l < 4; ++l) {
    conv_w_[l] = Tensor({kChannels, ins[l], 3, 3});
    conv_b_[l] = Tensor({kChannels});
  }
  const std::size_t q = input_n / 4;
  fc1_w_ = Tensor({kHidden, kChannels * q * q});
  fc1_b_ = Tensor({kHidden});
  fc2_w_ = Tensor({kClasses, kHidden});
  fc2_b_ = Tensor({kClasses});
}

DigitalModel DigitalModel::init_params(std::uint64_t seed, std::size_t input_n) {
  DigitalModel model(input_n);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& w, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data) v = dist(rng);
  };
  for (std::size_t l = 0; l < 4; ++l) fill(model.conv_w_[l], model.conv_w_[l].shape[1] * 9);
  fill(model.fc1_w_, model.fc1_w_.shape[1]);
  fill(model.fc2_w_, kHidden);
  return model;
}

std::vector<Tensor*> DigitalModel::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < 4; ++l) {
    out.push_back(&conv_w_[l]);
    out.push_back(&conv_b_[l]);
  }
  out.insert(out.end(), {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_});
  return out;
}

std::vector<const Tensor*> DigitalModel::parameters() const {
  auto mut = const_cast<DigitalModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> DigitalModel::parameter_names() {
  std::vector<std::string> names;
  for (int l = 1; l <= 4; ++l) {
    names.push_back("conv" + std::to_string(l) + ".weight");
    names.push_back("conv" + std::to_string(l) + ".bias");
  }
  names.insert(names.end(), {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"});
  return names;
}

void DigitalModel::zero_grad() {
  for (auto* t : parameters()) t->zero_grad();
}

void DigitalModel::scale_grad(double factor) {
  for (auto* t : parameters()) {
    for (double& g : t->grad) g *= factor;
  }
}

void DigitalModel::check_input(const RealImage& image) const {
  if (image.rows() != input_n_ || image.cols() != input_n_) {
    throw ShapeError("model expects a " + std::to_string(input_n_) + "x" +
                     std::to_string(input_n_) + " image");
  }
}

Probabilities DigitalModel::forward(const RealImage& image) const {
  Workspace ws;
  return forward(image, ws);
}

Probabilities DigitalModel::forward(const RealImage& image, Workspace& ws) const {
  check_input(image);
  const std::size_t n = input_n_;
  const std::size_t h = n / 2;
  const std::size_t q = n / 4;
  const std::size_t count = n * n;
  ws.n = n;

  require_finite(image.flat(), "input");
  double mean = 0.0;
  for (double v : image.flat()) mean += v;
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (double v : image.flat()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(count);
  ws.mean = mean;
  ws.inv_std = 1.0 / std::sqrt(var + kStdEps);
  ws.z.resize(count);
  for (std::size_t i = 0; i < count; ++i) ws.z[i] = (image.data()[i] - mean) * ws.inv_std;

  static const char* names[4] = {"conv1", "conv2", "conv3", "conv4"};
  const std::size_t sizes[4] = {n, n, h, h};
  const std::size_t ins[4] = {1, kChannels, kChannels, kChannels};
  const std::vector<double>* layer_in = &ws.z;
  for (std::size_t l = 0; l < 4; ++l) {
    pad_input(layer_in->data(), ins[l], sizes[l], ws.pad[l]);
    conv_forward(ws.pad[l], ins[l], kChannels, sizes[l], conv_w_[l], conv_b_[l], ws.act[l]);
    require_finite(ws.act[l], names[l]);
    relu_inplace(ws.act[l]);
    if (l == 1) {
      pool_forward(ws.act[1], kChannels, n, ws.pool2, ws.arg2);
      layer_in = &ws.pool2;
    } else {
      layer_in = &ws.act[l];
    }
  }
  pool_forward(ws.act[3], kChannels, h, ws.pool4, ws.arg4);

  const std::size_t flat = kChannels * q * q;
  ws.hidden.resize(kHidden);
  for (std::size_t o = 0; o < kHidden; ++o) {
    const double* __restrict wrow = fc1_w_.data.data() + o * flat;
    const double* __restrict xin = ws.pool4.data();
    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < flat; ++i) acc += wrow[i] * xin[i];
    ws.hidden[o] = acc + fc1_b_.data[o];
  }
  require_finite(ws.hidden, "fc1");
  relu_inplace(ws.hidden);

  for (std::size_t o = 0; o < kClasses; ++o) {
    double acc = fc2_b_.data[o];
    for (std::size_t i = 0; i < kHidden; ++i) acc += fc2_w_.data[o * kHidden + i] * ws.hidden[i];
    ws.logits[o] = acc;
  }
  require_finite(ws.logits, "fc2");
  ws.probs = softmax(ws.logits);
  return ws.probs;
}

double DigitalModel::backward(const RealImage& image, int label, Workspace& ws,
                              RealImage* input_grad) {
  if (label < 0 || label >= static_cast<int>(kClasses)) {
    throw ValidationError("label must be 0 or 1");
  }
  forward(image, ws);
  const std::size_t n = input_n_;
  const std::size_t h = n / 2;
  const std::size_t q = n / 4;
  const std::size_t flat = kChannels * q * q;

  const double m = std::max(ws.logits[0], ws.logits[1]);
  const double lse = m + std::log(std::exp(ws.logits[0] - m) + std::exp(ws.logits[1] - m));
  const double loss = lse - ws.logits[static_cast<std::size_t>(label)];
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");

  std::array<double, 2> g_logits = ws.probs;
  g_logits[static_cast<std::size_t>(label)] -= 1.0;

  std::vector<double> g_hidden(kHidden, 0.0);
  for (std::size_t o = 0; o < kClasses; ++o) {
    fc2_b_.grad[o] += g_logits[o];
    for (std::size_t i = 0; i < kHidden; ++i) {
      fc2_w_.grad[o * kHidden + i] += g_logits[o] * ws.hidden[i];
      g_hidden[i] += g_logits[o] * fc2_w_.data[o * kHidden + i];
    }
  }
  for (std::size_t i = 0; i < kHidden; ++i) {
    if (!(ws.hidden[i] > 0.0)) g_hidden[i] = 0.0;
  }

  std::vector<double>& g_pool4 = ws.g_a;
  g_pool4.assign(flat, 0.0);
  for (std::size_t o = 0; o < kHidden; ++o) {
    const double g = g_hidden[o];
    fc1_b_.grad[o] += g;
    if (g == 0.0) continue;
    double* __restrict dw = fc1_w_.grad.data() + o * flat;
    double* __restrict gx = g_pool4.data();
    const double* __restrict w = fc1_w_.data.data() + o * flat;
    const double* __restrict xin = ws.pool4.data();
    for (std::size_t i = 0; i < flat; ++i) {
      dw[i] += g * xin[i];
      gx[i] += g * w[i];
    }
  }

  std::vector<double> g_act;
  pool_backward(g_pool4, ws.arg4, kChannels, h, g_act);

  const std::size_t sizes[4] = {n, n, h, h};
  const std::size_t ins[4] = {1, kChannels, kChannels, kChannels};
  for (int l = 3; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    relu_backward(ws.act[li], g_act);
    const bool want_input = l > 0 || input_grad != nullptr;
    conv_backward(ws.pad[li], g_act, ins[li], kChannels, sizes[li], conv_w_[li], conv_b_[li],
                  want_input, ws.g_pad, ws.flipped, ws.g_b);
    if (!want_input) break;
    if (l == 2) {
      pool_backward(ws.g_b, ws.arg2, kChannels, n, g_act);
    } else {
      g_act.swap(ws.g_b);
    }
  }

  if (input_grad != nullptr) {
    // g_act now holds dL/dz for the standardised input.
    const std::size_t count = n * n;
    double mean_g = 0.0, mean_gz = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      mean_g += g_act[i];
      mean_gz += g_act[i] * ws.z[i];
    }
    mean_g /= static_cast<double>(count);
    mean_gz /= static_cast<double>(count);
    *input_grad = RealImage(n, n);
    for (std::size_t i = 0; i < count; ++i) {
      input_grad->data()[i] = ws.inv_std * (g_act[i] - mean_g - ws.z[i] * mean_gz);
    }
  }
  return loss;
}

}  // namespace lsn::nn
