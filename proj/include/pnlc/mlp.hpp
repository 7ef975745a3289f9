// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pnlc/rng.hpp"

namespace pnlc {

/// Fully connected layer, weights stored row-major as out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// affine -> ReLU -> affine -> ReLU -> affine, scalar output.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t parameter_count() const;
  bool same_shape(const MlpParams& other) const;
  bool all_finite() const;

  /// Visits every parameter array (weights then bias, layer by layer).
  template <typename F>
  void for_each_array(F&& f) {
    for (auto& l : layers) {
      f(l.weights);
      f(l.bias);
    }
  }
  template <typename F>
  void for_each_array(F&& f) const {
    for (const auto& l : layers) {
      f(l.weights);
      f(l.bias);
    }
  }

  bool operator==(const MlpParams&) const = default;
};

/// Two-hidden-layer network with weights uniform in +-sqrt(6/(fan_in+fan_out))
/// and zero biases.
MlpParams make_mlp(std::size_t input, std::size_t hidden1, std::size_t hidden2, Rng& rng);

/// Same shapes, all entries zero.
MlpParams zeros_like(const MlpParams& p);

/// Single-input forward pass. Throws InvalidArgument on dimension mismatch.
double forward(const MlpParams& params, std::span<const double> input);

/// Dense row-major matrix used for minibatches.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

enum class KernelMode { kSerial, kParallel };

/// Activations kept from a batched forward pass for the backward pass.
struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activation of each layer
  std::vector<Matrix> post;  // input of each layer (post[0] is the batch input)
  std::vector<double> output;
};

/// Batched kernels. Both modes perform every reduction in the same order, so
/// results are bitwise identical regardless of mode or thread count. Zero
/// input entries are skipped in the first layer (embeddings are sparse).
namespace kernels {

void forward_batch(const MlpParams& params, const Matrix& inputs, ForwardCache& cache,
                   KernelMode mode);

/// Accumulates d(loss)/d(params) into grads (overwritten) given
/// d(loss)/d(output) per row.
void backward_batch(const MlpParams& params, const ForwardCache& cache,
                    std::span<const double> d_output, MlpParams& grads, KernelMode mode);

}  // namespace kernels

/// AdamW moments for one network.
struct AdamState {
  MlpParams m;
  MlpParams v;
  std::size_t step = 0;

  bool operator==(const AdamState&) const = default;
};

struct AdamConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

AdamState make_adam_state(const MlpParams& params);

/// Decoupled weight decay (params *= 1 - lr*wd) followed by the bias-corrected
/// adaptive-moment step.
void adamw_step(MlpParams& params, const MlpParams& grads, AdamState& state,
                const AdamConfig& config);

/// target <- (1 - alpha) * target + alpha * online. Throws on shape mismatch.
void polyak_update(MlpParams& target, const MlpParams& online, double alpha);

}  // namespace pnlc
