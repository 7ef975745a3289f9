#include "pnlc/mlp.hpp"

#include <cmath>
#include <cstdint>

#include "pnlc/error.hpp"

namespace pnlc {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].in != other.layers[i].in || layers[i].out != other.layers[i].out ||
        layers[i].weights.size() != other.layers[i].weights.size() ||
        layers[i].bias.size() != other.layers[i].bias.size())
      return false;
  return true;
}

bool MlpParams::all_finite() const {
  bool ok = true;
  for_each_array([&](const std::vector<double>& a) {
    for (double x : a) ok = ok && std::isfinite(x);
  });
  return ok;
}

namespace {

DenseLayer make_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  l.weights.resize(in * out);
  for (double& w : l.weights) w = rng.uniform(-limit, limit);
  l.bias.assign(out, 0.0);
  return l;
}

}  // namespace

MlpParams make_mlp(std::size_t input, std::size_t hidden1, std::size_t hidden2, Rng& rng) {
  if (input == 0 || hidden1 == 0 || hidden2 == 0) throw InvalidArgument("make_mlp: zero width");
  MlpParams p;
  p.layers.push_back(make_layer(input, hidden1, rng));
  p.layers.push_back(make_layer(hidden1, hidden2, rng));
  p.layers.push_back(make_layer(hidden2, 1, rng));
  return p;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  z.for_each_array([](std::vector<double>& a) { std::fill(a.begin(), a.end(), 0.0); });
  return z;
}

double forward(const MlpParams& params, std::span<const double> input) {
  if (params.layers.empty()) throw InvalidArgument("forward: empty network");
  if (input.size() != params.input_dim())
    throw InvalidArgument("forward: input length " + std::to_string(input.size()) +
                          " does not match " + std::to_string(params.input_dim()));
  std::vector<double> x(input.begin(), input.end()), y;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const DenseLayer& l = params.layers[li];
    y.assign(l.out, 0.0);
    for (std::size_t j = 0; j < l.out; ++j) {
      const double* w = l.weights.data() + j * l.in;
      double acc = 0.0;
      for (std::size_t i = 0; i < l.in; ++i)
        if (x[i] != 0.0) acc += w[i] * x[i];
      acc += l.bias[j];
      y[j] = (li + 1 < params.layers.size() && acc < 0.0) ? 0.0 : acc;
    }
    x.swap(y);
  }
  return x[0];
}

namespace kernels {

namespace {

// out[r, j] = sum_i W[j, i] x[r, i] + b[j], skipping zero inputs, i ascending.
void affine_rows(const DenseLayer& l, const Matrix& x, Matrix& out, KernelMode mode) {
  out = Matrix(x.rows, l.out);
  const long rows = static_cast<long>(x.rows);
#pragma omp parallel for schedule(static) if (mode == KernelMode::kParallel)
  for (long r = 0; r < rows; ++r) {
    const double* xr = x.row(r);
    std::vector<std::size_t> nz;
    nz.reserve(l.in);
    for (std::size_t i = 0; i < l.in; ++i)
      if (xr[i] != 0.0) nz.push_back(i);
    double* o = out.row(r);
    for (std::size_t j = 0; j < l.out; ++j) {
      const double* w = l.weights.data() + j * l.in;
      double acc = 0.0;
      for (std::size_t i : nz) acc += w[i] * xr[i];
      o[j] = acc + l.bias[j];
    }
  }
}

}  // namespace

void forward_batch(const MlpParams& params, const Matrix& inputs, ForwardCache& cache,
                   KernelMode mode) {
  if (inputs.cols != params.input_dim())
    throw InvalidArgument("forward_batch: input width " + std::to_string(inputs.cols) +
                          " does not match " + std::to_string(params.input_dim()));
  const std::size_t L = params.layers.size();
  cache.pre.resize(L);
  cache.post.resize(L);
  cache.post[0] = inputs;
  for (std::size_t li = 0; li < L; ++li) {
    affine_rows(params.layers[li], cache.post[li], cache.pre[li], mode);
    if (li + 1 < L) {
      Matrix act = cache.pre[li];
      for (double& v : act.data)
        if (v < 0.0) v = 0.0;
      cache.post[li + 1] = std::move(act);
    }
  }
  cache.output.assign(inputs.rows, 0.0);
  for (std::size_t r = 0; r < inputs.rows; ++r) cache.output[r] = cache.pre[L - 1].row(r)[0];
}

void backward_batch(const MlpParams& params, const ForwardCache& cache,
                    std::span<const double> d_output, MlpParams& grads, KernelMode mode) {
  const std::size_t L = params.layers.size();
  const std::size_t B = cache.output.size();
  if (d_output.size() != B) throw InvalidArgument("backward_batch: gradient length mismatch");
  if (!grads.same_shape(params)) grads = zeros_like(params);

  Matrix delta(B, 1);
  for (std::size_t r = 0; r < B; ++r) delta.row(r)[0] = d_output[r];

  for (std::size_t li = L; li-- > 0;) {
    const DenseLayer& l = params.layers[li];
    DenseLayer& g = grads.layers[li];
    const Matrix& x = cache.post[li];

    // Nonzero columns of each input row; zero inputs add nothing to dW.
    std::vector<std::vector<std::uint32_t>> nz(B);
    for (std::size_t r = 0; r < B; ++r) {
      const double* xr = x.row(r);
      for (std::size_t i = 0; i < l.in; ++i)
        if (xr[i] != 0.0) nz[r].push_back(static_cast<std::uint32_t>(i));
    }

    // dW[j, i] = sum_r delta[r, j] x[r, i]; rows summed in ascending order.
    // Each j is owned by one thread, so the order never depends on the mode.
    const long outs = static_cast<long>(l.out);
#pragma omp parallel for schedule(static) if (mode == KernelMode::kParallel)
    for (long j = 0; j < outs; ++j) {
      double* gw = g.weights.data() + j * l.in;
      std::fill(gw, gw + l.in, 0.0);
      double gb = 0.0;
      for (std::size_t r = 0; r < B; ++r) {
        const double dj = delta.row(r)[j];
        gb += dj;
        if (dj == 0.0) continue;
        const double* xr = x.row(r);
        for (const std::uint32_t i : nz[r]) gw[i] += dj * xr[i];
      }
      g.bias[j] = gb;
    }
    if (li == 0) break;

    // delta_prev[r, i] = relu'(pre_prev[r, i]) * sum_j W[j, i] delta[r, j]
    Matrix prev(B, l.in);
    const Matrix& pre_prev = cache.pre[li - 1];
    const long rows = static_cast<long>(B);
#pragma omp parallel for schedule(static) if (mode == KernelMode::kParallel)
    for (long r = 0; r < rows; ++r) {
      const double* dr = delta.row(r);
      double* pr = prev.row(r);
      for (std::size_t j = 0; j < l.out; ++j) {
        if (dr[j] == 0.0) continue;
        const double* w = l.weights.data() + j * l.in;
        for (std::size_t i = 0; i < l.in; ++i) pr[i] += w[i] * dr[j];
      }
      const double* z = pre_prev.row(r);
      for (std::size_t i = 0; i < l.in; ++i)
        if (z[i] <= 0.0) pr[i] = 0.0;
    }
    delta = std::move(prev);
  }
}

}  // namespace kernels

AdamState make_adam_state(const MlpParams& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adamw_step(MlpParams& params, const MlpParams& grads, AdamState& state,
                const AdamConfig& config) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw InvalidArgument("adamw_step: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double step_size = config.lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  const double decay = 1.0 - config.lr * config.weight_decay;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] *= decay;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double denom = std::sqrt(v[i]) / bc2_sqrt + config.eps;
        p[i] -= step_size * m[i] / denom;
      }
    };
    auto& pl = params.layers[li];
    const auto& gl = grads.layers[li];
    update(pl.weights, gl.weights, state.m.layers[li].weights, state.v.layers[li].weights);
    update(pl.bias, gl.bias, state.m.layers[li].bias, state.v.layers[li].bias);
  }
}

void polyak_update(MlpParams& target, const MlpParams& online, double alpha) {
  if (!target.same_shape(online)) throw InvalidArgument("polyak: shape mismatch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("polyak: alpha must lie in (0, 1]");
  for (std::size_t li = 0; li < target.layers.size(); ++li) {
    auto blend = [&](std::vector<double>& t, const std::vector<double>& o) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - alpha) * t[i] + alpha * o[i];
    };
    blend(target.layers[li].weights, online.layers[li].weights);
    blend(target.layers[li].bias, online.layers[li].bias);
  }
}

}  // namespace pnlc
