#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bass/architecture.hpp"
#include "bass/layers.hpp"
#include "bass/training.hpp"

namespace bass {

// Central-difference verification of the backward passes.

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  bool inject_fault = false;  // perturbs one analytic gradient; negative control for the harness
};

struct GradcheckEntry {
  std::string path;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  double tolerance = 1e-4;
  std::vector<GradcheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.max_rel_error <= tolerance; });
  }
  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

// |a - n| / max(|a|, |n|, 1e-6). The floor keeps gradients that are zero up to
// round-off from reading as large relative errors.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

namespace detail {

inline double central_difference(std::vector<double>& x, std::size_t i, double h,
                                 const std::function<double()>& objective) {
  const double saved = x[i];
  x[i] = saved + h;
  const double up = objective();
  x[i] = saved - h;
  const double down = objective();
  x[i] = saved;
  return (up - down) / (2.0 * h);
}

inline GradcheckEntry compare(const std::string& path, std::vector<double>& x, std::span<const double> analytic,
                              double h, const std::function<double()>& objective) {
  GradcheckEntry e{path, x.size(), 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], central_difference(x, i, h, objective)));
  }
  return e;
}

inline std::vector<double> random_vector(std::size_t n, double lo, double hi, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace detail

// Whole-network check of the loss softmax_cross_entropy(forward(input), label) in train
// mode, with the dropout stream replayed identically for every evaluation.
inline GradcheckReport gradcheck_network(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt = {},
                                         const std::string& prefix = "") {
  Rng root(seed);
  Rng init = root.derive(RngStreams::init);
  ParamStore params = build_network(cfg, init);
  Rng data_rng = root.derive(100);
  // Zero biases put units with all-dead inputs exactly on the ReLU kink, where the
  // central difference measures half a slope; nonzero biases move them off it.
  params.visit([&](const std::string&, LayerParams& p) {
    for (double& b : p.bias) b = data_rng.uniform(-0.1, 0.1);
  });
  const auto t = shape_trace(cfg);
  std::vector<double> input = detail::random_vector(t.input.size(), 0.0, 1.0, data_rng);
  const std::size_t label = static_cast<std::size_t>(seed % cfg.num_classes);
  const Rng dropout = root.derive(RngStreams::dropout);

  auto loss = [&]() {
    Rng d = dropout;
    return softmax_cross_entropy(forward(cfg, params, Volume(t.input, input), Mode::train, d).logits, label).loss;
  };

  Rng d = dropout;
  const auto tr = forward(cfg, params, Volume(t.input, input), Mode::train, d);
  auto grads = backward(cfg, params, tr, softmax_cross_entropy(tr.logits, label).d_logits);
  if (opt.inject_fault) {
    grads.params.visit([done = false](const std::string&, LayerParams& p) mutable {
      if (!done && !p.weight.empty()) {
        p.weight[0] = p.weight[0] * 1.5 + 1e-3;
        done = true;
      }
    });
  }

  GradcheckReport report{opt.tolerance, {}};
  std::vector<std::pair<std::string, LayerParams*>> analytic;
  grads.params.visit([&](const std::string& path, LayerParams& p) { analytic.emplace_back(path, &p); });
  std::size_t k = 0;
  params.visit([&](const std::string& path, LayerParams& p) {
    report.entries.push_back(detail::compare(prefix + path + "/weight", p.weight, analytic[k].second->weight, opt.step, loss));
    report.entries.push_back(detail::compare(prefix + path + "/bias", p.bias, analytic[k].second->bias, opt.step, loss));
    ++k;
  });
  report.entries.push_back(detail::compare(prefix + "input", input, grads.d_input.data(), opt.step, loss));
  return report;
}

// Standalone layer checks on the scalar objective <v, f(u)> for a random cotangent v,
// covering a multi-pixel spatial window that the network presets do not exercise.
inline GradcheckReport gradcheck_layers(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  Rng rng = Rng(seed).derive(200);
  GradcheckReport report{opt.tolerance, {}};

  auto run_volume_layer = [&](const std::string& name, Shape3 in_shape, Shape3 out_shape, std::size_t weights,
                              std::size_t biases, auto fwd, auto bwd) {
    std::vector<double> u = detail::random_vector(in_shape.size(), -1.0, 1.0, rng);
    LayerParams p{detail::random_vector(weights, -1.0, 1.0, rng), detail::random_vector(biases, -1.0, 1.0, rng)};
    const std::vector<double> v = detail::random_vector(out_shape.size(), -1.0, 1.0, rng);
    auto objective = [&]() {
      const Volume y = fwd(Volume(in_shape, u), p);
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * y[i];
      return s;
    };
    auto g = bwd(Volume(in_shape, u), p, Volume(out_shape, v));
    report.entries.push_back(detail::compare("layers/" + name + "/weight", p.weight, g.d_params.weight, opt.step, objective));
    report.entries.push_back(detail::compare("layers/" + name + "/bias", p.bias, g.d_params.bias, opt.step, objective));
    report.entries.push_back(detail::compare("layers/" + name + "/input", u, g.d_input.data(), opt.step, objective));
  };

  const ConvXySpec xy{2, 3, {4, 4, 2}};
  run_volume_layer(
      "conv_xy-2,3", xy.in_shape, xy.out_shape(), xy.weight_count(), xy.n,
      [&](const Volume& x, const LayerParams& p) { return conv_xy_forward(x, xy, p); },
      [&](const Volume& x, const LayerParams& p, const Volume& dy) { return conv_xy_backward(x, xy, p, dy); });

  const ConvLambdaSpec lam{3, 2, {3, 2, 6}};
  run_volume_layer(
      "conv_lambda-3,2", lam.in_shape, lam.out_shape(), lam.weight_count(), lam.n,
      [&](const Volume& x, const LayerParams& p) { return conv_lambda_forward(x, lam, p); },
      [&](const Volume& x, const LayerParams& p, const Volume& dy) { return conv_lambda_backward(x, lam, p, dy); });

  const FcSpec fc{5, 4};
  run_volume_layer(
      "fc-4", {1, 1, 5}, {1, 1, 4}, fc.weight_count(), fc.out_dim,
      [&](const Volume& x, const LayerParams& p) { return Volume({1, 1, 4}, fc_forward(x.data(), fc, p)); },
      [&](const Volume& x, const LayerParams& p, const Volume& dy) {
        auto g = fc_backward(x.data(), fc, p, dy.data());
        return GradBundle<Volume>{Volume({1, 1, 5}, std::move(g.d_input)), std::move(g.d_params)};
      });

  std::vector<double> z = detail::random_vector(6, -3.0, 3.0, rng);
  const std::size_t label = rng.below(z.size());
  auto xent = [&]() { return softmax_cross_entropy(z, label).loss; };
  const auto analytic = softmax_cross_entropy(z, label).d_logits;
  report.entries.push_back(detail::compare("layers/softmax_cross_entropy/logits", z, analytic, opt.step, xent));
  return report;
}

// The full self-check: reduced configurations 1-4 with sharing on and off, plus the
// standalone layer checks.
inline GradcheckReport gradcheck_all(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  GradcheckReport report{opt.tolerance, {}};
  for (int id = 1; id <= 4; ++id) {
    for (bool ps : {true, false}) {
      const auto prefix = "config" + std::to_string(id) + (ps ? "/ps_on/" : "/ps_off/");
      auto r = gradcheck_network(reduced_preset(id, ps), seed + static_cast<std::uint64_t>(id), opt, prefix);
      report.entries.insert(report.entries.end(), r.entries.begin(), r.entries.end());
    }
  }
  auto layers = gradcheck_layers(seed, opt);
  report.entries.insert(report.entries.end(), layers.entries.begin(), layers.entries.end());
  return report;
}

}  // namespace bass
