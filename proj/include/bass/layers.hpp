#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bass/error.hpp"
#include "bass/tensor.hpp"

namespace bass {

enum class Mode { train, eval };

// Learnable tensors of one layer. Weight layouts:
//   conv_xy     filter j is p x p x C, stored at j * p*p*C in canonical (dx, dy, c) order
//   conv_lambda filter j is A x B x p, stored at j * A*B*p in canonical (x, y, dc) order
//   fc          out_dim x in_dim, row-major
struct LayerParams {
  std::vector<double> weight;
  std::vector<double> bias;

  std::size_t count() const { return weight.size() + bias.size(); }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename Input>
struct GradBundle {
  Input d_input;
  LayerParams d_params;
};

// Spatial convolution: p x p window over the full spectral depth, valid (no padding).
struct ConvXySpec {
  std::size_t p = 1;
  std::size_t n = 1;
  Shape3 in_shape;

  Shape3 out_shape() const { return {in_shape.a - p + 1, in_shape.b - p + 1, n}; }
  std::size_t filter_size() const { return p * p * in_shape.c; }
  std::size_t weight_count() const { return n * filter_size(); }

  void validate() const {
    bass::validate(in_shape);
    if (p == 0 || n == 0) fail(ErrorKind::contract, "conv_xy: p and n must be positive");
    if (p > in_shape.a || p > in_shape.b) {
      fail(ErrorKind::contract,
           "conv_xy-" + std::to_string(p) + "," + std::to_string(n) + ": window exceeds input " + in_shape.str());
    }
  }
};

// Spectral convolution: full spatial extent, p channels deep, valid along the spectral axis.
struct ConvLambdaSpec {
  std::size_t p = 1;
  std::size_t n = 1;
  Shape3 in_shape;

  Shape3 out_shape() const { return {n, 1, in_shape.c - p + 1}; }
  std::size_t filter_size() const { return in_shape.a * in_shape.b * p; }
  std::size_t weight_count() const { return n * filter_size(); }

  void validate() const {
    bass::validate(in_shape);
    if (p == 0 || n == 0) fail(ErrorKind::contract, "conv_lambda: p and n must be positive");
    if (p > in_shape.c) {
      fail(ErrorKind::contract, "conv_lambda-" + std::to_string(p) + "," + std::to_string(n) +
                                    ": spectral field exceeds input " + in_shape.str());
    }
  }
};

struct FcSpec {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;

  std::size_t weight_count() const { return in_dim * out_dim; }

  void validate() const {
    if (in_dim == 0 || out_dim == 0) fail(ErrorKind::contract, "fc: dimensions must be positive");
  }
};

namespace detail {

inline void check_params(const LayerParams& params, std::size_t weights, std::size_t biases, const char* layer) {
  if (params.weight.size() != weights || params.bias.size() != biases) {
    fail(ErrorKind::contract, std::string(layer) + ": parameter shape mismatch (weights " +
                                  std::to_string(params.weight.size()) + "/" + std::to_string(weights) + ", biases " +
                                  std::to_string(params.bias.size()) + "/" + std::to_string(biases) + ")");
  }
}

inline void check_shape(const Shape3& got, const Shape3& want, const char* what) {
  if (got != want) fail(ErrorKind::contract, std::string(what) + ": expected " + want.str() + ", got " + got.str());
}

}  // namespace detail

inline Volume conv_xy_forward(const Volume& input, const ConvXySpec& spec, const LayerParams& params) {
  spec.validate();
  detail::check_shape(input.shape(), spec.in_shape, "conv_xy input");
  detail::check_params(params, spec.weight_count(), spec.n, "conv_xy");

  const Shape3 in = spec.in_shape;
  const Shape3 out_shape = spec.out_shape();
  const std::size_t p = spec.p, fsize = spec.filter_size();
  auto x = input.data();
  std::vector<double> out(out_shape.size());

  for (std::size_t i = 0; i < out_shape.a; ++i) {
    for (std::size_t j = 0; j < out_shape.b; ++j) {
      for (std::size_t f = 0; f < spec.n; ++f) {
        const double* w = params.weight.data() + f * fsize;
        double acc = params.bias[f];
        for (std::size_t di = 0; di < p; ++di) {
          for (std::size_t dj = 0; dj < p; ++dj) {
            const double* row = x.data() + in.index(i + di, j + dj, 0);
            const double* wrow = w + (di * p + dj) * in.c;
            for (std::size_t k = 0; k < in.c; ++k) acc += wrow[k] * row[k];
          }
        }
        out[out_shape.index(i, j, f)] = acc;
      }
    }
  }
  return Volume(out_shape, std::move(out));
}

inline GradBundle<Volume> conv_xy_backward(const Volume& input, const ConvXySpec& spec, const LayerParams& params,
                                           const Volume& d_output) {
  spec.validate();
  detail::check_shape(input.shape(), spec.in_shape, "conv_xy input");
  detail::check_shape(d_output.shape(), spec.out_shape(), "conv_xy d_output");
  detail::check_params(params, spec.weight_count(), spec.n, "conv_xy");

  const Shape3 in = spec.in_shape;
  const Shape3 out_shape = spec.out_shape();
  const std::size_t p = spec.p, fsize = spec.filter_size();
  auto x = input.data();
  auto dy = d_output.data();
  std::vector<double> dx(in.size(), 0.0), dw(params.weight.size(), 0.0), db(spec.n, 0.0);

  for (std::size_t i = 0; i < out_shape.a; ++i) {
    for (std::size_t j = 0; j < out_shape.b; ++j) {
      for (std::size_t f = 0; f < spec.n; ++f) {
        const double g = dy[out_shape.index(i, j, f)];
        if (g == 0.0) continue;
        db[f] += g;
        const double* w = params.weight.data() + f * fsize;
        double* gw = dw.data() + f * fsize;
        for (std::size_t di = 0; di < p; ++di) {
          for (std::size_t dj = 0; dj < p; ++dj) {
            const std::size_t base = in.index(i + di, j + dj, 0);
            const std::size_t wbase = (di * p + dj) * in.c;
            for (std::size_t k = 0; k < in.c; ++k) {
              gw[wbase + k] += g * x[base + k];
              dx[base + k] += g * w[wbase + k];
            }
          }
        }
      }
    }
  }
  return {Volume(in, std::move(dx)), LayerParams{std::move(dw), std::move(db)}};
}

inline Volume conv_lambda_forward(const Volume& input, const ConvLambdaSpec& spec, const LayerParams& params) {
  spec.validate();
  detail::check_shape(input.shape(), spec.in_shape, "conv_lambda input");
  detail::check_params(params, spec.weight_count(), spec.n, "conv_lambda");

  const Shape3 in = spec.in_shape;
  const Shape3 out_shape = spec.out_shape();
  const std::size_t p = spec.p, fsize = spec.filter_size(), steps = out_shape.c;
  const std::size_t pixels = in.a * in.b;
  auto x = input.data();
  std::vector<double> out(out_shape.size());

  for (std::size_t f = 0; f < spec.n; ++f) {
    const double* w = params.weight.data() + f * fsize;
    for (std::size_t t = 0; t < steps; ++t) {
      double acc = params.bias[f];
      for (std::size_t px = 0; px < pixels; ++px) {
        const double* spectrum = x.data() + px * in.c + t;
        const double* wp = w + px * p;
        for (std::size_t dc = 0; dc < p; ++dc) acc += wp[dc] * spectrum[dc];
      }
      out[out_shape.index(f, 0, t)] = acc;
    }
  }
  return Volume(out_shape, std::move(out));
}

inline GradBundle<Volume> conv_lambda_backward(const Volume& input, const ConvLambdaSpec& spec,
                                               const LayerParams& params, const Volume& d_output) {
  spec.validate();
  detail::check_shape(input.shape(), spec.in_shape, "conv_lambda input");
  detail::check_shape(d_output.shape(), spec.out_shape(), "conv_lambda d_output");
  detail::check_params(params, spec.weight_count(), spec.n, "conv_lambda");

  const Shape3 in = spec.in_shape;
  const Shape3 out_shape = spec.out_shape();
  const std::size_t p = spec.p, fsize = spec.filter_size(), steps = out_shape.c;
  const std::size_t pixels = in.a * in.b;
  auto x = input.data();
  auto dy = d_output.data();
  std::vector<double> dx(in.size(), 0.0), dw(params.weight.size(), 0.0), db(spec.n, 0.0);

  for (std::size_t f = 0; f < spec.n; ++f) {
    const double* w = params.weight.data() + f * fsize;
    double* gw = dw.data() + f * fsize;
    for (std::size_t t = 0; t < steps; ++t) {
      const double g = dy[out_shape.index(f, 0, t)];
      if (g == 0.0) continue;
      db[f] += g;
      for (std::size_t px = 0; px < pixels; ++px) {
        const std::size_t base = px * in.c + t;
        for (std::size_t dc = 0; dc < p; ++dc) {
          gw[px * p + dc] += g * x[base + dc];
          dx[base + dc] += g * w[px * p + dc];
        }
      }
    }
  }
  return {Volume(in, std::move(dx)), LayerParams{std::move(dw), std::move(db)}};
}

inline std::vector<double> fc_forward(std::span<const double> input, const FcSpec& spec, const LayerParams& params) {
  spec.validate();
  if (input.size() != spec.in_dim) {
    fail(ErrorKind::contract,
         "fc: input length " + std::to_string(input.size()) + " != in_dim " + std::to_string(spec.in_dim));
  }
  detail::check_params(params, spec.weight_count(), spec.out_dim, "fc");

  std::vector<double> out(spec.out_dim);
  for (std::size_t o = 0; o < spec.out_dim; ++o) {
    const double* row = params.weight.data() + o * spec.in_dim;
    double acc = params.bias[o];
    for (std::size_t i = 0; i < spec.in_dim; ++i) acc += row[i] * input[i];
    out[o] = acc;
  }
  return out;
}

inline GradBundle<std::vector<double>> fc_backward(std::span<const double> input, const FcSpec& spec,
                                                   const LayerParams& params, std::span<const double> d_output) {
  spec.validate();
  if (input.size() != spec.in_dim || d_output.size() != spec.out_dim) {
    fail(ErrorKind::contract, "fc backward: input/cotangent length mismatch");
  }
  detail::check_params(params, spec.weight_count(), spec.out_dim, "fc");

  std::vector<double> dx(spec.in_dim, 0.0), dw(params.weight.size(), 0.0);
  std::vector<double> db(d_output.begin(), d_output.end());
  for (std::size_t o = 0; o < spec.out_dim; ++o) {
    const double g = d_output[o];
    if (g == 0.0) continue;
    const double* row = params.weight.data() + o * spec.in_dim;
    double* grow = dw.data() + o * spec.in_dim;
    for (std::size_t i = 0; i < spec.in_dim; ++i) {
      grow[i] = g * input[i];
      dx[i] += g * row[i];
    }
  }
  return {std::move(dx), LayerParams{std::move(dw), std::move(db)}};
}

// Gradient of max(0, x) applied to a cotangent; the subgradient at 0 is taken as 0.
inline std::vector<double> relu_backward(std::span<const double> pre_activation, std::span<const double> d_output) {
  require(pre_activation.size() == d_output.size(), "relu_backward: length mismatch");
  std::vector<double> dx(d_output.size());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = pre_activation[i] > 0.0 ? d_output[i] : 0.0;
  return dx;
}

inline std::vector<double> relu(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

struct DropoutResult {
  std::vector<double> output;
  std::vector<double> mask;  // per-element multiplier: 0 or 1/(1 - rate); all ones in eval mode
};

// Inverted dropout: survivors are rescaled at train time so eval mode is the identity.
inline DropoutResult dropout_forward(std::span<const double> input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::contract, "dropout: rate must lie in [0, 1)");
  DropoutResult r{std::vector<double>(input.begin(), input.end()), std::vector<double>(input.size(), 1.0)};
  if (mode == Mode::eval || rate == 0.0) return r;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    r.output[i] *= r.mask[i];
  }
  return r;
}

inline std::vector<double> dropout_backward(std::span<const double> mask, std::span<const double> d_output) {
  require(mask.size() == d_output.size(), "dropout_backward: length mismatch");
  std::vector<double> dx(d_output.size());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask[i] * d_output[i];
  return dx;
}

inline std::vector<double> softmax(std::span<const double> z) {
  require(!z.empty(), "softmax: empty input");
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<double>> d_logits;  // one row per sample: p - onehot(y)
};

// Summed negative log-likelihood of the labels; the gradient is with respect to the
// logits that produced `probs` through softmax.
inline LossResult cross_entropy_loss(const std::vector<std::vector<double>>& probs, std::span<const std::size_t> labels) {
  require(probs.size() == labels.size(), "cross_entropy_loss: batch size mismatch");
  LossResult r;
  r.d_logits.reserve(probs.size());
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const auto& p = probs[s];
    if (labels[s] >= p.size()) {
      fail(ErrorKind::contract, "cross_entropy_loss: label " + std::to_string(labels[s]) + " outside [0, " +
                                    std::to_string(p.size()) + ")");
    }
    r.loss -= std::log(std::max(p[labels[s]], std::numeric_limits<double>::min()));
    auto g = p;
    g[labels[s]] -= 1.0;
    r.d_logits.push_back(std::move(g));
  }
  return r;
}

// Single-sample fused softmax + cross-entropy on raw logits, using log-sum-exp for the loss.
struct SampleLoss {
  double loss = 0.0;
  std::vector<double> probs;
  std::vector<double> d_logits;
};

inline SampleLoss softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    fail(ErrorKind::contract, "softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(logits.size()) + ")");
  }
  SampleLoss r;
  r.probs = softmax(logits);
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - zmax);
  r.loss = zmax + std::log(total) - logits[label];
  r.d_logits = r.probs;
  r.d_logits[label] -= 1.0;
  return r;
}

}  // namespace bass
