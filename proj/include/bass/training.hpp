#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bass/architecture.hpp"
#include "bass/data.hpp"
#include "bass/error.hpp"
#include "bass/io.hpp"
#include "bass/metrics.hpp"

namespace bass {

// ---------------------------------------------------------------------------
// Prediction

// Index of the largest logit; ties go to the lowest class index.
inline std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), "argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::size_t predict_class(const NetworkConfig& cfg, const ParamStore& params, const Volume& patch) {
  return argmax(predict_logits(cfg, params, patch));
}

inline double evaluate_accuracy(const NetworkConfig& cfg, const ParamStore& params,
                                std::span<const LabeledSample> samples) {
  if (samples.empty()) fail(ErrorKind::contract, "evaluate_accuracy: no samples");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += predict_class(cfg, params, s.patch) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// Confusion matrix over pixels of a cube, extracting patches on the fly.
inline ConfusionMatrix evaluate_pixels(const NetworkConfig& cfg, const ParamStore& params, const HyperCube& cube,
                                       std::span<const LabeledPixel> pixels) {
  ConfusionMatrix cm(cfg.num_classes);
  for (const auto& px : pixels) {
    if (px.label >= cfg.num_classes) fail(ErrorKind::data, "pixel label outside the network's class range");
    ++cm(px.label, predict_class(cfg, params, extract_patch(cube, px.x, px.y, cfg.patch_size)));
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig hp;
  std::uint64_t step = 0;
  ParamStore m;
  ParamStore v;

  friend bool operator==(const AdamState& l, const AdamState& r) {
    return l.step == r.step && l.m == r.m && l.v == r.v && l.hp.lr == r.hp.lr && l.hp.beta1 == r.hp.beta1 &&
           l.hp.beta2 == r.hp.beta2 && l.hp.epsilon == r.hp.epsilon;
  }
};

inline AdamState adam_init(const ParamStore& params, AdamConfig hp = {}) {
  return {hp, 0, params.zeros_like(), params.zeros_like()};
}

// One bias-corrected Adam update. Each physical tensor is updated exactly once, so a
// shared Block-2 group receives its summed gradient a single time.
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state) {
  std::vector<const LayerParams*> g;
  const_cast<ParamStore&>(grads).visit([&](const std::string& path, LayerParams& p) {
    for (double x : p.weight)
      if (!std::isfinite(x)) fail(ErrorKind::numerical, "adam_step: non-finite gradient in " + path + " (weights)");
    for (double x : p.bias)
      if (!std::isfinite(x)) fail(ErrorKind::numerical, "adam_step: non-finite gradient in " + path + " (bias)");
    g.push_back(&p);
  });
  std::vector<LayerParams*> m, v;
  state.m.visit([&](const std::string&, LayerParams& p) { m.push_back(&p); });
  state.v.visit([&](const std::string&, LayerParams& p) { v.push_back(&p); });

  std::size_t k = 0;
  const auto& hp = state.hp;
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  auto update = [&](std::vector<double>& theta, const std::vector<double>& grad, std::vector<double>& mm,
                    std::vector<double>& vv) {
    require(theta.size() == grad.size() && theta.size() == mm.size() && theta.size() == vv.size(),
            "adam_step: gradient/state shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      mm[i] = hp.beta1 * mm[i] + (1.0 - hp.beta1) * grad[i];
      vv[i] = hp.beta2 * vv[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
      const double m_hat = mm[i] / c1;
      const double v_hat = vv[i] / c2;
      theta[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    }
  };
  std::size_t count = 0;
  params.visit([&](const std::string&, LayerParams&) { ++count; });
  require(count == g.size() && count == m.size() && count == v.size(), "adam_step: store layouts differ");
  params.visit([&](const std::string&, LayerParams& p) {
    update(p.weight, g[k]->weight, m[k]->weight, v[k]->weight);
    update(p.bias, g[k]->bias, m[k]->bias, v[k]->bias);
    ++k;
  });
  state.step = t;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainSchedule {
  std::size_t batch_size = 100;  // clipped to the training-set size
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;
  AdamConfig adam;
};

// Stream labels for Rng::derive, so one top-level seed yields independent streams.
struct RngStreams {
  static constexpr std::uint64_t split = 1;
  static constexpr std::uint64_t init = 2;
  static constexpr std::uint64_t shuffle = 3;
  static constexpr std::uint64_t dropout = 4;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sample loss of the train-mode passes
  double train_acc = 0.0;   // eval-mode accuracy on the training set after the epoch
  double val_acc = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct Checkpoint {
  NetworkConfig cfg;
  ParamStore params;
  AdamState adam;
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  Rng shuffle_rng;
  Rng dropout_rng;
  nlohmann::json extra = nlohmann::json::object();  // caller metadata (class map, normalization, ...)
};

struct EpochStats {
  double loss_sum = 0.0;
  std::size_t samples = 0;
};

// One pass over `train` in a shuffled order: per batch, gradients are summed over
// samples in order and applied with a single Adam step.
inline EpochStats train_epoch(const NetworkConfig& cfg, ParamStore& params, AdamState& adam,
                              std::span<const LabeledSample> train, std::size_t batch_size, Rng& shuffle_rng,
                              Rng& dropout_rng) {
  require(!train.empty(), "train_epoch: empty training set");
  require(batch_size > 0, "train_epoch: batch size must be positive");
  const auto order = permutation(train.size(), shuffle_rng);
  EpochStats st;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    ParamStore grads = params.zeros_like();
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = train[order[i]];
      const auto tr = forward(cfg, params, s.patch, Mode::train, dropout_rng);
      const auto sl = softmax_cross_entropy(tr.logits, s.label);
      if (!std::isfinite(sl.loss)) fail(ErrorKind::numerical, "training loss is not finite");
      st.loss_sum += sl.loss;
      ++st.samples;
      add_into(grads, backward(cfg, params, tr, sl.d_logits).params);
    }
    adam_step(params, grads, adam);
  }
  return st;
}

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryRow> history;
  bool diverged = false;
  std::string diagnostic;
};

// Trains from a fresh initialization drawn from rng.derive(RngStreams::init). The returned
// checkpoint is the epoch with the highest validation accuracy (earliest on ties; epoch 0
// is the initialization). Stops after `patience` epochs without improvement. On a
// numerical failure the best checkpoint so far is returned with diverged = true.
inline TrainResult train(const NetworkConfig& cfg, std::span<const LabeledSample> train_set,
                         std::span<const LabeledSample> val_set, const TrainSchedule& schedule, const Rng& rng) {
  if (train_set.empty()) fail(ErrorKind::data, "train: empty training split");
  if (val_set.empty()) fail(ErrorKind::data, "train: empty validation split");
  if (schedule.batch_size == 0 || schedule.max_epochs == 0 || schedule.patience == 0) {
    fail(ErrorKind::config, "train: batch_size, max_epochs and patience must be positive");
  }
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      if (s.label >= cfg.num_classes) fail(ErrorKind::data, "train: label outside [0, num_classes)");
    }
  }

  Rng init_rng = rng.derive(RngStreams::init);
  TrainResult result;
  Checkpoint cur;
  cur.cfg = cfg;
  cur.params = build_network(cfg, init_rng);
  cur.adam = adam_init(cur.params, schedule.adam);
  cur.shuffle_rng = rng.derive(RngStreams::shuffle);
  cur.dropout_rng = rng.derive(RngStreams::dropout);
  cur.val_accuracy = evaluate_accuracy(cfg, cur.params, val_set);
  result.best = cur;

  const std::size_t batch = std::min(schedule.batch_size, train_set.size());
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    HistoryRow row;
    try {
      const auto st = train_epoch(cfg, cur.params, cur.adam, train_set, batch, cur.shuffle_rng, cur.dropout_rng);
      row = {epoch, st.loss_sum / static_cast<double>(st.samples), evaluate_accuracy(cfg, cur.params, train_set),
             evaluate_accuracy(cfg, cur.params, val_set)};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical) throw;
      result.diverged = true;
      result.diagnostic = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    result.history.push_back(row);
    cur.epoch = epoch;
    cur.val_accuracy = row.val_acc;
    if (row.val_acc > result.best.val_accuracy) {
      result.best = cur;
      since_best = 0;
    } else if (++since_best >= schedule.patience) {
      break;
    }
  }
  return result;
}

inline std::string encode_history(std::span<const HistoryRow> rows) {
  std::string out = "epoch,train_loss,train_acc,val_acc\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.train_acc, r.val_acc);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "BASSCKPT"  magic, 8 bytes
//   u32         format version
//   u64         length of the JSON metadata block
//   bytes       JSON metadata (config, epoch, metrics, optimizer scalars, rng states)
//   f64[]       parameters, then Adam first moments, then Adam second moments, each in
//               ParamStore visit order (weights then biases per layer), little-endian

inline constexpr std::string_view kCheckpointMagic = "BASSCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void put_store(std::string& out, const ParamStore& s) {
  s.visit([&](const std::string&, const LayerParams& p) {
    for (double x : p.weight) io::put_f64(out, x);
    for (double x : p.bias) io::put_f64(out, x);
  });
}

inline void get_store(io::Reader& r, ParamStore& s) {
  s.visit([&](const std::string&, LayerParams& p) {
    for (double& x : p.weight) x = r.get_f64();
    for (double& x : p.bias) x = r.get_f64();
  });
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  check_store(ck.cfg, ck.params);
  nlohmann::json meta;
  meta["config"] = to_json(ck.cfg);
  meta["config_hash"] = detail::hex64(config_hash(ck.cfg));
  meta["epoch"] = ck.epoch;
  meta["val_accuracy"] = ck.val_accuracy;
  meta["param_count"] = ck.params.count();
  meta["adam"] = {{"step", ck.adam.step},
                  {"lr", ck.adam.hp.lr},
                  {"beta1", ck.adam.hp.beta1},
                  {"beta2", ck.adam.hp.beta2},
                  {"epsilon", ck.adam.hp.epsilon}};
  meta["rng"] = {{"shuffle", {ck.shuffle_rng.seed(), ck.shuffle_rng.counter()}},
                 {"dropout", {ck.dropout_rng.seed(), ck.dropout_rng.counter()}}};
  meta["extra"] = ck.extra;
  const std::string json = meta.dump();

  std::string out(kCheckpointMagic);
  io::put_le<std::uint32_t>(out, kCheckpointVersion);
  io::put_le<std::uint64_t>(out, json.size());
  out += json;
  detail::put_store(out, ck.params);
  detail::put_store(out, ck.adam.m);
  detail::put_store(out, ck.adam.v);
  return out;
}

// Restores a checkpoint; when `expected` is given its config hash must match.
inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source,
                                    const std::optional<NetworkConfig>& expected = std::nullopt) {
  io::Reader r(bytes, source);
  if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) fail(ErrorKind::data, source + ": not a BASSCKPT file");
  const auto version = r.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::data, source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = r.get_le<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.get_bytes(len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, source + ": bad metadata: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.cfg = network_config_from_json(meta.at("config"));
    if (meta.at("config_hash").get<std::string>() != detail::hex64(config_hash(ck.cfg))) {
      fail(ErrorKind::data, source + ": config hash does not match the stored config");
    }
    if (expected && config_hash(*expected) != config_hash(ck.cfg)) {
      fail(ErrorKind::config, source + ": checkpoint was written for a different network config");
    }
    ck.epoch = meta.at("epoch").get<std::size_t>();
    ck.val_accuracy = meta.at("val_accuracy").get<double>();
    const auto& a = meta.at("adam");
    ck.adam.hp = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                  a.at("epsilon").get<double>()};
    ck.adam.step = a.at("step").get<std::uint64_t>();
    const auto& rng = meta.at("rng");
    ck.shuffle_rng = Rng(rng.at("shuffle").at(0).get<std::uint64_t>(), rng.at("shuffle").at(1).get<std::uint64_t>());
    ck.dropout_rng = Rng(rng.at("dropout").at(0).get<std::uint64_t>(), rng.at("dropout").at(1).get<std::uint64_t>());
    ck.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, source + ": bad metadata: " + e.what());
  }

  Rng layout_rng(0);
  ck.params = build_network(ck.cfg, layout_rng).zeros_like();
  ck.adam.m = ck.params;
  ck.adam.v = ck.params;
  detail::get_store(r, ck.params);
  detail::get_store(r, ck.adam.m);
  detail::get_store(r, ck.adam.v);
  if (r.remaining() != 0) fail(ErrorKind::data, source + ": trailing bytes after tensors");
  ck.params.visit([&](const std::string& path, const LayerParams& p) {
    for (double x : p.weight)
      if (!std::isfinite(x)) fail(ErrorKind::data, source + ": non-finite parameter in " + path);
  });
  return ck;
}

}  // namespace bass
