#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsn/array2d.hpp"

namespace lsn::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t numel() const { return data.size(); }
  void zero_grad();
};

using Probabilities = std::array<double, 2>;

// Softmax over two logits.
Probabilities softmax(const std::array<double, 2>& logits);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// One bias-corrected Adam update.  Throws ValidationError for lr <= 0 and
// ShapeError for mismatched spans.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config);

// Per-image standardisation, four 3x3 "same" convolutions with 6 channels
// (ReLU after each, 2x2 max-pool after the 2nd and 4th), dense 64 + ReLU,
// dense 2, softmax.
class DigitalModel {
 public:
  static constexpr std::size_t kChannels = 6;
  static constexpr std::size_t kHidden = 64;
  static constexpr std::size_t kClasses = 2;

  explicit DigitalModel(std::size_t input_n = 64);

  // He-uniform fan-in initialisation, zero biases.
  static DigitalModel init_params(std::uint64_t seed, std::size_t input_n = 64);

  std::size_t input_n() const { return input_n_; }

  // Activation buffers reused across calls.
  class Workspace {
   public:
    Workspace() = default;

   private:
    friend class DigitalModel;
    std::size_t n = 0;
    double mean = 0.0;
    double inv_std = 1.0;
    std::vector<double> z;          // standardised input
    std::array<std::vector<double>, 4> act;   // post-ReLU conv outputs
    std::array<std::vector<double>, 4> pad;   // zero-padded conv inputs
    std::vector<double> pool2, pool4;
    std::vector<unsigned char> arg2, arg4;
    std::vector<double> hidden;     // post-ReLU fc1
    std::array<double, 2> logits{};
    Probabilities probs{};
    // backward scratch
    std::vector<double> g_a, g_b, g_pad, flipped;
  };

  Probabilities forward(const RealImage& image) const;
  Probabilities forward(const RealImage& image, Workspace& ws) const;

  // Cross-entropy -log p[label].  Runs a forward pass, accumulates parameter
  // gradients and, if input_grad is non-null, writes dL/dimage.
  double backward(const RealImage& image, int label, Workspace& ws, RealImage* input_grad);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  static std::vector<std::string> parameter_names();
  void zero_grad();
  void scale_grad(double factor);

 private:
  void check_input(const RealImage& image) const;

  std::size_t input_n_;
  std::array<Tensor, 4> conv_w_;
  std::array<Tensor, 4> conv_b_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// Adam over a fixed list of tensors.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(const std::vector<Tensor*>& params);

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
};

}  // namespace lsn::nn
