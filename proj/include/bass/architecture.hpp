#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "bass/error.hpp"
#include "bass/layers.hpp"
#include "bass/tensor.hpp"

namespace bass {

enum class PhiKind { identity, conv1x1 };
enum class LayerKind { conv_xy, conv_lambda, fc };
enum class Dataset { indian_pines, salinas, upavia };

struct PhiSpec {
  PhiKind kind = PhiKind::identity;
  std::size_t out_channels = 0;  // conv1x1 only

  friend bool operator==(const PhiSpec&, const PhiSpec&) = default;
};

// One layer of a Block-2 branch. `p` is unused for fc.
struct BranchLayer {
  LayerKind kind = LayerKind::fc;
  std::size_t p = 0;
  std::size_t n = 0;

  std::string str() const {
    switch (kind) {
      case LayerKind::conv_xy: return "conv_xy-" + std::to_string(p) + "," + std::to_string(n);
      case LayerKind::conv_lambda: return "conv_lambda-" + std::to_string(p) + "," + std::to_string(n);
      case LayerKind::fc: return "fc-" + std::to_string(n);
    }
    return "?";
  }

  friend bool operator==(const BranchLayer&, const BranchLayer&) = default;
};

struct NetworkConfig {
  int configuration_id = 0;  // 1-4 for the built-in table, 0 for a custom stack
  std::size_t patch_size = 3;
  std::size_t in_channels = 1;
  PhiSpec phi;
  std::size_t n_bands = 1;
  std::vector<BranchLayer> block2;
  std::vector<std::size_t> block3;  // fc widths; the last equals num_classes and feeds softmax
  std::size_t num_classes = 2;
  bool parameter_sharing = true;
  double dropout = 0.5;

  std::size_t phi_channels() const { return phi.kind == PhiKind::identity ? in_channels : phi.out_channels; }
  std::size_t branch_groups() const { return parameter_sharing ? 1 : n_bands; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// ---------------------------------------------------------------------------
// Built-in configurations

struct DatasetPreset {
  std::string_view name;
  std::size_t channels;
  std::size_t phi_out;
  std::size_t n_bands;
  std::size_t classes;
};

inline DatasetPreset dataset_preset(Dataset ds) {
  switch (ds) {
    case Dataset::indian_pines: return {"indian_pines", 220, 220, 10, 9};
    case Dataset::salinas: return {"salinas", 224, 224, 14, 16};
    case Dataset::upavia: return {"upavia", 103, 100, 5, 9};
  }
  fail(ErrorKind::config, "unknown dataset");
}

inline Dataset dataset_from_string(std::string_view s) {
  if (s == "indian_pines") return Dataset::indian_pines;
  if (s == "salinas") return Dataset::salinas;
  if (s == "upavia") return Dataset::upavia;
  fail(ErrorKind::config, "unknown dataset preset '" + std::string(s) + "' (expected indian_pines|salinas|upavia)");
}

namespace detail {

inline BranchLayer conv_lambda(std::size_t p, std::size_t n) { return {LayerKind::conv_lambda, p, n}; }
inline BranchLayer fc(std::size_t n) { return {LayerKind::fc, 0, n}; }

}  // namespace detail

// Architectural table: configurations 1-4 with the per-dataset overrides.
// Configurations 1 and 2 use the identity for Phi, which makes them undefined on a
// dataset whose channel count is not divisible by its band count (U. Pavia: 103 / 5);
// shape_trace() reports that case.
inline NetworkConfig preset(int configuration, Dataset ds, bool parameter_sharing = true, std::size_t patch_size = 3) {
  using detail::conv_lambda;
  using detail::fc;
  const auto d = dataset_preset(ds);
  NetworkConfig cfg;
  cfg.configuration_id = configuration;
  cfg.patch_size = patch_size;
  cfg.in_channels = d.channels;
  cfg.n_bands = d.n_bands;
  cfg.num_classes = d.classes;
  cfg.parameter_sharing = parameter_sharing;
  switch (configuration) {
    case 1:
      cfg.block2 = {fc(150), fc(100)};
      cfg.block3 = {500, 100, d.classes};
      break;
    case 2:
      cfg.block2 = {conv_lambda(3, 20), conv_lambda(3, 20), fc(100)};
      cfg.block3 = {500, 100, d.classes};
      break;
    case 3:
      cfg.phi = {PhiKind::conv1x1, d.phi_out};
      cfg.block2 = {conv_lambda(3, 20), conv_lambda(3, 20), fc(100)};
      cfg.block3 = {500, 100, d.classes};
      break;
    case 4:
      cfg.phi = {PhiKind::conv1x1, d.phi_out};
      cfg.block2 = {conv_lambda(3, 20), conv_lambda(3, 20), conv_lambda(3, 10), conv_lambda(5, 5)};
      cfg.block3 = {100, d.classes};
      break;
    default: fail(ErrorKind::config, "configuration must be 1, 2, 3 or 4, got " + std::to_string(configuration));
  }
  return cfg;
}

// Scaled-down versions of configurations 1-4 (3x3x8 input, two bands, two classes) that keep
// each configuration's layer-kind sequence. Used for gradient checks and toy runs.
inline NetworkConfig reduced_preset(int configuration, bool parameter_sharing = true) {
  using detail::conv_lambda;
  using detail::fc;
  NetworkConfig cfg;
  cfg.configuration_id = configuration;
  cfg.patch_size = 3;
  cfg.in_channels = 8;
  cfg.n_bands = 2;
  cfg.num_classes = 2;
  cfg.parameter_sharing = parameter_sharing;
  switch (configuration) {
    case 1:
      cfg.block2 = {fc(6), fc(5)};
      cfg.block3 = {7, 5, 2};
      break;
    case 2:
      cfg.block2 = {conv_lambda(2, 3), conv_lambda(2, 3), fc(5)};
      cfg.block3 = {7, 5, 2};
      break;
    case 3:
      cfg.phi = {PhiKind::conv1x1, 8};
      cfg.block2 = {conv_lambda(2, 3), conv_lambda(2, 3), fc(5)};
      cfg.block3 = {7, 5, 2};
      break;
    case 4:
      cfg.phi = {PhiKind::conv1x1, 8};
      cfg.block2 = {conv_lambda(2, 3), conv_lambda(2, 3), conv_lambda(1, 2), conv_lambda(2, 2)};
      cfg.block3 = {5, 2};
      break;
    default: fail(ErrorKind::config, "configuration must be 1, 2, 3 or 4, got " + std::to_string(configuration));
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Static shape trace

struct ResolvedLayer {
  BranchLayer layer;
  Shape3 in;
  Shape3 out;

  std::size_t weight_count() const {
    switch (layer.kind) {
      case LayerKind::conv_xy: return layer.n * layer.p * layer.p * in.c;
      case LayerKind::conv_lambda: return layer.n * in.a * in.b * layer.p;
      case LayerKind::fc: return layer.n * in.size();
    }
    return 0;
  }
  std::size_t bias_count() const { return layer.n; }

  // Fan-in / fan-out of one output unit, used for the balanced-variance init bound.
  std::pair<std::size_t, std::size_t> fans() const {
    switch (layer.kind) {
      case LayerKind::conv_xy: return {layer.p * layer.p * in.c, layer.n * layer.p * layer.p};
      case LayerKind::conv_lambda: return {in.a * in.b * layer.p, layer.n * layer.p};
      case LayerKind::fc: return {in.size(), layer.n};
    }
    return {1, 1};
  }
};

struct ShapeTrace {
  Shape3 input;
  Shape3 phi_out;
  Shape3 band;
  std::vector<ResolvedLayer> branch;
  std::size_t branch_flat = 0;
  std::size_t concat = 0;
  std::vector<FcSpec> block3;

  std::string str() const {
    std::string s = input.str() + " -> phi " + phi_out.str() + " -> split " + band.str();
    for (const auto& l : branch) s += " -> " + l.out.str();
    s += " -> flatten " + std::to_string(branch_flat) + " -> concat " + std::to_string(concat);
    for (const auto& f : block3) s += " -> fc-" + std::to_string(f.out_dim);
    s += " -> softmax-" + std::to_string(block3.empty() ? 0 : block3.back().out_dim);
    return s;
  }
};

// Validates the configuration end to end; the error names the first offending layer.
inline ShapeTrace shape_trace(const NetworkConfig& cfg) {
  auto bad = [](const std::string& what) { fail(ErrorKind::config, "network config: " + what); };
  if (cfg.patch_size == 0 || cfg.patch_size % 2 == 0) bad("patch_size must be odd and positive");
  if (cfg.in_channels == 0) bad("in_channels must be positive");
  if (cfg.phi.kind == PhiKind::conv1x1 && cfg.phi.out_channels == 0) bad("block1 conv1x1 needs out_channels > 0");
  if (cfg.n_bands == 0) bad("n_bands must be positive");
  if (cfg.num_classes == 0) bad("num_classes must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (cfg.block2.empty()) bad("block2 needs at least one layer");
  if (cfg.block3.empty()) bad("block3 needs at least one fc layer");
  if (cfg.block3.back() != cfg.num_classes) {
    bad("last block3 layer fc-" + std::to_string(cfg.block3.back()) + " does not match num_classes " +
        std::to_string(cfg.num_classes));
  }

  ShapeTrace t;
  t.input = {cfg.patch_size, cfg.patch_size, cfg.in_channels};
  t.phi_out = {cfg.patch_size, cfg.patch_size, cfg.phi_channels()};
  if (t.phi_out.c % cfg.n_bands != 0) {
    bad("block1 output has " + std::to_string(t.phi_out.c) + " channels, not divisible into " +
        std::to_string(cfg.n_bands) + " equal bands");
  }
  t.band = {cfg.patch_size, cfg.patch_size, t.phi_out.c / cfg.n_bands};

  Shape3 cur = t.band;
  for (std::size_t i = 0; i < cfg.block2.size(); ++i) {
    const auto& l = cfg.block2[i];
    const std::string where = "block2 layer " + std::to_string(i) + " (" + l.str() + ") on " + cur.str() + ": ";
    if (l.n == 0) bad(where + "output count must be positive");
    Shape3 out;
    switch (l.kind) {
      case LayerKind::conv_xy:
        if (l.p == 0 || l.p > cur.a || l.p > cur.b) bad(where + "spatial window does not fit");
        out = {cur.a - l.p + 1, cur.b - l.p + 1, l.n};
        break;
      case LayerKind::conv_lambda:
        if (l.p == 0 || l.p > cur.c) bad(where + "spectral field does not fit");
        out = {l.n, 1, cur.c - l.p + 1};
        break;
      case LayerKind::fc: out = {1, 1, l.n}; break;
    }
    t.branch.push_back({l, cur, out});
    cur = out;
  }
  t.branch_flat = cur.size();
  t.concat = t.branch_flat * cfg.n_bands;

  std::size_t width = t.concat;
  for (std::size_t i = 0; i < cfg.block3.size(); ++i) {
    if (cfg.block3[i] == 0) bad("block3 layer " + std::to_string(i) + " has zero width");
    t.block3.push_back({width, cfg.block3[i]});
    width = cfg.block3[i];
  }
  return t;
}

inline ConvXySpec phi_spec(const ShapeTrace& t) { return {1, t.phi_out.c, t.input}; }

// Closed-form parameter count (physical copies, so shared Block-2 weights count once).
inline std::size_t param_count(const NetworkConfig& cfg) {
  const auto t = shape_trace(cfg);
  std::size_t total = 0;
  if (cfg.phi.kind == PhiKind::conv1x1) total += t.phi_out.c * t.input.c + t.phi_out.c;
  std::size_t branch = 0;
  for (const auto& l : t.branch) branch += l.weight_count() + l.bias_count();
  total += branch * cfg.branch_groups();
  for (const auto& f : t.block3) total += f.weight_count() + f.out_dim;
  return total;
}

// ---------------------------------------------------------------------------
// Parameters

// All learnable tensors. With sharing on, block2 holds a single group that every band
// resolves to; otherwise one group per band.
struct ParamStore {
  bool shared = true;
  std::vector<LayerParams> phi;                  // empty when Phi is the identity
  std::vector<std::vector<LayerParams>> block2;  // [group][layer]
  std::vector<LayerParams> block3;

  const std::vector<LayerParams>& branch(std::size_t band) const { return block2.at(shared ? 0 : band); }
  std::vector<LayerParams>& branch(std::size_t band) { return block2.at(shared ? 0 : band); }

  template <typename F>
  void visit(F&& f) {
    for (auto& p : phi) f(std::string("block1/phi"), p);
    for (std::size_t g = 0; g < block2.size(); ++g) {
      const std::string group = shared ? "block2/shared" : "block2/band" + std::to_string(g);
      for (std::size_t l = 0; l < block2[g].size(); ++l) f(group + "/layer" + std::to_string(l), block2[g][l]);
    }
    for (std::size_t l = 0; l < block3.size(); ++l) f("block3/fc" + std::to_string(l), block3[l]);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<ParamStore*>(this)->visit([&](const std::string& path, LayerParams& p) {
      f(path, static_cast<const LayerParams&>(p));
    });
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const LayerParams& p) { n += p.count(); });
    return n;
  }

  std::size_t block2_count() const {
    std::size_t n = 0;
    for (const auto& g : block2)
      for (const auto& p : g) n += p.count();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore z = *this;
    z.visit([](const std::string&, LayerParams& p) {
      std::fill(p.weight.begin(), p.weight.end(), 0.0);
      std::fill(p.bias.begin(), p.bias.end(), 0.0);
    });
    return z;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

inline void add_into(LayerParams& dst, const LayerParams& src) {
  require(dst.weight.size() == src.weight.size() && dst.bias.size() == src.bias.size(), "add_into: shape mismatch");
  for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] += src.weight[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

inline void add_into(ParamStore& dst, const ParamStore& src) {
  require(dst.shared == src.shared && dst.phi.size() == src.phi.size() && dst.block2.size() == src.block2.size() &&
              dst.block3.size() == src.block3.size(),
          "add_into: store layout mismatch");
  for (std::size_t i = 0; i < dst.phi.size(); ++i) add_into(dst.phi[i], src.phi[i]);
  for (std::size_t g = 0; g < dst.block2.size(); ++g) {
    require(dst.block2[g].size() == src.block2[g].size(), "add_into: branch depth mismatch");
    for (std::size_t l = 0; l < dst.block2[g].size(); ++l) add_into(dst.block2[g][l], src.block2[g][l]);
  }
  for (std::size_t i = 0; i < dst.block3.size(); ++i) add_into(dst.block3[i], src.block3[i]);
}

namespace detail {

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline LayerParams init_layer(std::size_t weights, std::size_t biases, std::size_t fan_in, std::size_t fan_out,
                              Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto w = uniform_init({1, 1, weights}, bound, rng);
  return {std::move(w).release(), std::vector<double>(biases, 0.0)};
}

}  // namespace detail

inline ParamStore build_network(const NetworkConfig& cfg, Rng& rng) {
  const auto t = shape_trace(cfg);
  ParamStore store;
  store.shared = cfg.parameter_sharing;
  if (cfg.phi.kind == PhiKind::conv1x1) {
    const auto s = phi_spec(t);
    store.phi.push_back(detail::init_layer(s.weight_count(), s.n, t.input.c, t.phi_out.c, rng));
  }
  for (std::size_t g = 0; g < cfg.branch_groups(); ++g) {
    std::vector<LayerParams> group;
    for (const auto& l : t.branch) {
      auto [fan_in, fan_out] = l.fans();
      group.push_back(detail::init_layer(l.weight_count(), l.bias_count(), fan_in, fan_out, rng));
    }
    store.block2.push_back(std::move(group));
  }
  for (const auto& f : t.block3) {
    store.block3.push_back(detail::init_layer(f.weight_count(), f.out_dim, f.in_dim, f.out_dim, rng));
  }
  return store;
}

// Checks that a store has exactly the layout `cfg` calls for.
inline void check_store(const NetworkConfig& cfg, const ParamStore& store) {
  const auto t = shape_trace(cfg);
  auto bad = [](const std::string& what) { fail(ErrorKind::contract, "parameter store: " + what); };
  if (store.shared != cfg.parameter_sharing) bad("sharing flag differs from config");
  if (store.phi.size() != (cfg.phi.kind == PhiKind::conv1x1 ? 1u : 0u)) bad("block1 layout differs from config");
  if (!store.phi.empty()) {
    const auto s = phi_spec(t);
    if (store.phi[0].weight.size() != s.weight_count() || store.phi[0].bias.size() != s.n) bad("block1/phi shape");
  }
  if (store.block2.size() != cfg.branch_groups()) bad("block2 group count differs from config");
  for (std::size_t g = 0; g < store.block2.size(); ++g) {
    if (store.block2[g].size() != t.branch.size()) bad("block2 depth differs from config");
    for (std::size_t l = 0; l < t.branch.size(); ++l) {
      if (store.block2[g][l].weight.size() != t.branch[l].weight_count() ||
          store.block2[g][l].bias.size() != t.branch[l].bias_count()) {
        bad("block2 layer " + std::to_string(l) + " shape");
      }
    }
  }
  if (store.block3.size() != t.block3.size()) bad("block3 depth differs from config");
  for (std::size_t l = 0; l < t.block3.size(); ++l) {
    if (store.block3[l].weight.size() != t.block3[l].weight_count() ||
        store.block3[l].bias.size() != t.block3[l].out_dim) {
      bad("block3/fc" + std::to_string(l) + " shape");
    }
  }
}

// ---------------------------------------------------------------------------
// Block 1: feature selection and band partitioning

inline std::vector<Volume> band_split(const Volume& v, std::size_t n_bands) {
  const Shape3 s = v.shape();
  if (n_bands == 0 || s.c % n_bands != 0) {
    fail(ErrorKind::contract,
         "band_split: " + std::to_string(s.c) + " channels not divisible into " + std::to_string(n_bands) + " bands");
  }
  const std::size_t width = s.c / n_bands;
  const Shape3 band{s.a, s.b, width};
  auto x = v.data();
  std::vector<Volume> out;
  out.reserve(n_bands);
  for (std::size_t k = 0; k < n_bands; ++k) {
    std::vector<double> d;
    d.reserve(band.size());
    for (std::size_t px = 0; px < s.a * s.b; ++px) {
      auto first = x.begin() + static_cast<std::ptrdiff_t>(px * s.c + k * width);
      d.insert(d.end(), first, first + static_cast<std::ptrdiff_t>(width));
    }
    out.emplace_back(band, std::move(d));
  }
  return out;
}

// Inverse of band_split: stacks equal-shaped bands along the spectral axis.
inline Volume concat_bands(const std::vector<Volume>& bands) {
  require(!bands.empty(), "concat_bands: no bands");
  const Shape3 band = bands.front().shape();
  for (const auto& b : bands) require(b.shape() == band, "concat_bands: band shapes differ");
  const Shape3 s{band.a, band.b, band.c * bands.size()};
  std::vector<double> d;
  d.reserve(s.size());
  for (std::size_t px = 0; px < s.a * s.b; ++px) {
    for (const auto& b : bands) {
      auto x = b.data();
      d.insert(d.end(), x.begin() + static_cast<std::ptrdiff_t>(px * band.c),
               x.begin() + static_cast<std::ptrdiff_t>((px + 1) * band.c));
    }
  }
  return Volume(s, std::move(d));
}

// Identity, or a 1x1 spatial convolution followed by ReLU.
inline Volume apply_phi(const Volume& v, const PhiSpec& phi, const LayerParams* params) {
  if (phi.kind == PhiKind::identity) return v;
  require(params != nullptr, "apply_phi: conv1x1 needs parameters");
  return elementwise_max_zero(conv_xy_forward(v, ConvXySpec{1, phi.out_channels, v.shape()}, *params));
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline Volume layer_forward(const ResolvedLayer& l, const Volume& in, const LayerParams& p) {
  switch (l.layer.kind) {
    case LayerKind::conv_xy: return conv_xy_forward(in, {l.layer.p, l.layer.n, l.in}, p);
    case LayerKind::conv_lambda: return conv_lambda_forward(in, {l.layer.p, l.layer.n, l.in}, p);
    case LayerKind::fc: return Volume(l.out, fc_forward(in.data(), {l.in.size(), l.layer.n}, p));
  }
  fail(ErrorKind::contract, "unknown layer kind");
}

inline GradBundle<Volume> layer_backward(const ResolvedLayer& l, const Volume& in, const LayerParams& p,
                                         const Volume& d_out) {
  switch (l.layer.kind) {
    case LayerKind::conv_xy: return conv_xy_backward(in, {l.layer.p, l.layer.n, l.in}, p, d_out);
    case LayerKind::conv_lambda: return conv_lambda_backward(in, {l.layer.p, l.layer.n, l.in}, p, d_out);
    case LayerKind::fc: {
      auto g = fc_backward(in.data(), {l.in.size(), l.layer.n}, p, d_out.data());
      return {Volume(l.in, std::move(g.d_input)), std::move(g.d_params)};
    }
  }
  fail(ErrorKind::contract, "unknown layer kind");
}

}  // namespace detail

struct BranchTrace {
  std::vector<Volume> inputs;  // input of each layer
  std::vector<Volume> pre;     // pre-activation output of each layer
  Volume output;               // ReLU of the last pre-activation
};

struct ForwardTrace {
  Mode mode = Mode::eval;
  Volume input;
  Volume phi_pre;  // only meaningful for conv1x1
  Volume phi_out;
  std::vector<BranchTrace> branches;
  std::vector<std::vector<double>> fc_in;
  std::vector<std::vector<double>> fc_pre;
  std::vector<std::vector<double>> masks;  // dropout multipliers of every non-final fc
  std::vector<double> logits;
};

struct Gradients {
  ParamStore params;
  Volume d_input;
};

// `rng` drives dropout and is only consumed in train mode.
inline ForwardTrace forward(const NetworkConfig& cfg, const ParamStore& params, const Volume& input, Mode mode,
                            Rng& rng) {
  const auto t = shape_trace(cfg);
  if (input.shape() != t.input) {
    fail(ErrorKind::contract, "forward: input " + input.shape().str() + " does not match config " + t.input.str());
  }
  check_store(cfg, params);

  ForwardTrace tr;
  tr.mode = mode;
  tr.input = input;
  if (cfg.phi.kind == PhiKind::conv1x1) {
    tr.phi_pre = conv_xy_forward(input, phi_spec(t), params.phi[0]);
    tr.phi_out = elementwise_max_zero(tr.phi_pre);
  } else {
    tr.phi_out = input;
  }

  std::vector<double> concat;
  concat.reserve(t.concat);
  auto bands = band_split(tr.phi_out, cfg.n_bands);
  for (std::size_t b = 0; b < bands.size(); ++b) {
    const auto& group = params.branch(b);
    BranchTrace bt;
    Volume x = std::move(bands[b]);
    for (std::size_t l = 0; l < t.branch.size(); ++l) {
      auto pre = detail::layer_forward(t.branch[l], x, group[l]);
      bt.inputs.push_back(std::move(x));
      x = elementwise_max_zero(pre);
      bt.pre.push_back(std::move(pre));
    }
    concat.insert(concat.end(), x.data().begin(), x.data().end());
    bt.output = std::move(x);
    tr.branches.push_back(std::move(bt));
  }

  std::vector<double> h = std::move(concat);
  for (std::size_t k = 0; k < t.block3.size(); ++k) {
    auto pre = fc_forward(h, t.block3[k], params.block3[k]);
    tr.fc_in.push_back(std::move(h));
    if (k + 1 == t.block3.size()) {
      tr.logits = pre;
      tr.fc_pre.push_back(std::move(pre));
      break;
    }
    auto dropped = dropout_forward(relu(pre), cfg.dropout, mode, rng);
    tr.fc_pre.push_back(std::move(pre));
    tr.masks.push_back(std::move(dropped.mask));
    h = std::move(dropped.output);
  }
  return tr;
}

// Logits only, eval mode.
inline std::vector<double> predict_logits(const NetworkConfig& cfg, const ParamStore& params, const Volume& input) {
  Rng unused(0);
  return forward(cfg, params, input, Mode::eval, unused).logits;
}

inline Gradients backward(const NetworkConfig& cfg, const ParamStore& params, const ForwardTrace& tr,
                          std::span<const double> d_logits) {
  const auto t = shape_trace(cfg);
  check_store(cfg, params);
  auto stale = [](const std::string& what) { fail(ErrorKind::contract, "backward: trace does not match config (" + what + ")"); };
  if (tr.input.shape() != t.input) stale("input shape");
  if (tr.branches.size() != cfg.n_bands) stale("band count");
  for (const auto& b : tr.branches) {
    if (b.inputs.size() != t.branch.size() || b.pre.size() != t.branch.size()) stale("branch depth");
  }
  if (tr.fc_in.size() != t.block3.size() || tr.fc_pre.size() != t.block3.size() ||
      tr.masks.size() + 1 != t.block3.size()) {
    stale("block3 depth");
  }
  if (d_logits.size() != cfg.num_classes) stale("d_logits length");

  Gradients g{params.zeros_like(), zeros(t.input)};

  std::vector<double> d(d_logits.begin(), d_logits.end());
  for (std::size_t k = t.block3.size(); k-- > 0;) {
    if (k + 1 != t.block3.size()) d = relu_backward(tr.fc_pre[k], dropout_backward(tr.masks[k], d));
    auto gb = fc_backward(tr.fc_in[k], t.block3[k], params.block3[k], d);
    add_into(g.params.block3[k], gb.d_params);
    d = std::move(gb.d_input);
  }

  std::vector<Volume> d_bands;
  d_bands.reserve(cfg.n_bands);
  for (std::size_t b = 0; b < cfg.n_bands; ++b) {
    const auto& bt = tr.branches[b];
    const auto& group = params.branch(b);
    auto& ggroup = g.params.branch(b);
    auto first = d.begin() + static_cast<std::ptrdiff_t>(b * t.branch_flat);
    Volume dv(t.branch.back().out, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(t.branch_flat)));
    for (std::size_t l = t.branch.size(); l-- > 0;) {
      Volume d_pre(t.branch[l].out, relu_backward(bt.pre[l].data(), dv.data()));
      auto gb = detail::layer_backward(t.branch[l], bt.inputs[l], group[l], d_pre);
      add_into(ggroup[l], gb.d_params);
      dv = std::move(gb.d_input);
    }
    d_bands.push_back(std::move(dv));
  }
  Volume d_phi_out = concat_bands(d_bands);

  if (cfg.phi.kind == PhiKind::conv1x1) {
    Volume d_pre(t.phi_out, relu_backward(tr.phi_pre.data(), d_phi_out.data()));
    auto gb = conv_xy_backward(tr.input, phi_spec(t), params.phi[0], d_pre);
    add_into(g.params.phi[0], gb.d_params);
    g.d_input = std::move(gb.d_input);
  } else {
    g.d_input = std::move(d_phi_out);
  }
  return g;
}

// ---------------------------------------------------------------------------
// JSON schema

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv_xy: return "conv_xy";
    case LayerKind::conv_lambda: return "conv_lambda";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

inline nlohmann::json to_json(const NetworkConfig& cfg) {
  nlohmann::json j;
  j["configuration_id"] = cfg.configuration_id;
  j["patch_size"] = cfg.patch_size;
  j["in_channels"] = cfg.in_channels;
  j["phi"] = cfg.phi.kind == PhiKind::identity
                 ? nlohmann::json{{"kind", "identity"}}
                 : nlohmann::json{{"kind", "conv1x1"}, {"out_channels", cfg.phi.out_channels}};
  j["n_bands"] = cfg.n_bands;
  auto layers = nlohmann::json::array();
  for (const auto& l : cfg.block2) {
    nlohmann::json e{{"kind", to_string(l.kind)}, {"n", l.n}};
    if (l.kind != LayerKind::fc) e["p"] = l.p;
    layers.push_back(e);
  }
  j["block2"] = layers;
  j["block3"] = cfg.block3;
  j["num_classes"] = cfg.num_classes;
  j["parameter_sharing"] = cfg.parameter_sharing;
  j["dropout"] = cfg.dropout;
  return j;
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  try {
    NetworkConfig cfg;
    cfg.configuration_id = j.value("configuration_id", 0);
    cfg.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.in_channels = j.at("in_channels").get<std::size_t>();
    const auto& phi = j.at("phi");
    const auto kind = phi.at("kind").get<std::string>();
    if (kind == "identity") {
      cfg.phi = {PhiKind::identity, 0};
    } else if (kind == "conv1x1") {
      cfg.phi = {PhiKind::conv1x1, phi.at("out_channels").get<std::size_t>()};
    } else {
      fail(ErrorKind::config, "phi.kind must be identity|conv1x1, got '" + kind + "'");
    }
    cfg.n_bands = j.at("n_bands").get<std::size_t>();
    for (const auto& e : j.at("block2")) {
      const auto k = e.at("kind").get<std::string>();
      BranchLayer l;
      if (k == "conv_xy") {
        l.kind = LayerKind::conv_xy;
      } else if (k == "conv_lambda") {
        l.kind = LayerKind::conv_lambda;
      } else if (k == "fc") {
        l.kind = LayerKind::fc;
      } else {
        fail(ErrorKind::config, "block2 layer kind must be conv_xy|conv_lambda|fc, got '" + k + "'");
      }
      l.n = e.at("n").get<std::size_t>();
      l.p = l.kind == LayerKind::fc ? 0 : e.at("p").get<std::size_t>();
      cfg.block2.push_back(l);
    }
    cfg.block3 = j.at("block3").get<std::vector<std::size_t>>();
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.parameter_sharing = j.value("parameter_sharing", true);
    cfg.dropout = j.value("dropout", 0.5);
    shape_trace(cfg);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("network config: ") + e.what());
  }
}

// 64-bit FNV-1a of the canonical JSON form.
inline std::uint64_t config_hash(const NetworkConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace bass
