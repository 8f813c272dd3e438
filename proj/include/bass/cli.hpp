#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bass/architecture.hpp"
#include "bass/data.hpp"
#include "bass/error.hpp"
#include "bass/gradcheck.hpp"
#include "bass/io.hpp"
#include "bass/metrics.hpp"
#include "bass/thematic_map.hpp"
#include "bass/training.hpp"

namespace bass::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { ok = 0, usage_error = 1, data_error = 2, numerical_error = 3 };

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::data: return data_error;
    case ErrorKind::numerical: return numerical_error;
    case ErrorKind::contract:
    case ErrorKind::config: return usage_error;
  }
  return usage_error;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  fs::path cube;
  fs::path labels;
  std::optional<Dataset> dataset;  // set when the network comes from the preset table
  NetworkConfig network;
  SplitSpec split;
  TrainSchedule schedule;
  Normalization normalization = Normalization::max;
  std::uint64_t seed = 0;
  fs::path output_dir = "bass_out";
};

// Applies `key.sub=value` overrides; the value is parsed as JSON when possible, else kept as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorKind::config, "--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorKind::config, "--set: empty path component in '" + key + "'");
    if (!node->is_object()) fail(ErrorKind::config, "--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json load_config_json(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::string text;
    try {
      text = io::read_file(path);
    } catch (const Error& e) {
      fail(ErrorKind::config, e.what());
    }
    doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) fail(ErrorKind::config, path.string() + ": not a JSON object");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

inline RunConfig parse_run_config(const json& doc) {
  try {
    RunConfig rc;
    rc.cube = doc.value("cube", "");
    rc.labels = doc.value("labels", "");
    rc.seed = doc.value("seed", std::uint64_t{0});
    rc.output_dir = doc.value("output_dir", "bass_out");
    rc.normalization = normalization_from_string(doc.value("normalization", "max"));

    if (doc.contains("network") && doc.contains("preset")) fail(ErrorKind::config, "give either 'network' or 'preset', not both");
    if (doc.contains("network")) {
      rc.network = network_config_from_json(doc.at("network"));
    } else {
      const json p = doc.value("preset", json::object());
      rc.dataset = dataset_from_string(p.value("dataset", "indian_pines"));
      rc.network = preset(p.value("configuration", 4), *rc.dataset, p.value("parameter_sharing", true),
                          p.value("patch_size", std::size_t{3}));
      if (p.contains("dropout")) rc.network.dropout = p.at("dropout").get<double>();
      shape_trace(rc.network);
    }

    const json s = doc.value("split", json::object());
    rc.split.per_class_train = s.value("per_class_train", std::size_t{200});
    rc.split.val_fraction = s.value("val_fraction", 0.25);
    rc.split.seed = Rng(rc.seed).derive(RngStreams::split).seed();
    if (s.contains("top_k_classes") && !s.at("top_k_classes").is_null()) {
      rc.split.top_k_classes = s.at("top_k_classes").get<std::size_t>();
    } else if (!s.contains("top_k_classes") && rc.dataset == Dataset::indian_pines) {
      rc.split.top_k_classes = 9;
    }

    const json t = doc.value("train", json::object());
    rc.schedule.batch_size = t.value("batch_size", std::size_t{100});
    rc.schedule.max_epochs = t.value("max_epochs", std::size_t{1000});
    rc.schedule.patience = t.value("patience", std::size_t{100});
    rc.schedule.adam.lr = t.value("lr", 0.0005);
    rc.schedule.adam.beta1 = t.value("beta1", 0.9);
    rc.schedule.adam.beta2 = t.value("beta2", 0.999);
    rc.schedule.adam.epsilon = t.value("epsilon", 1e-8);
    return rc;
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("run config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared plumbing

// Line-delimited JSON events. Wall-clock timestamps appear only here.
class EventLog {
 public:
  explicit EventLog(const fs::path& path) : out_(path, std::ios::app) {}

  void emit(json event) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    event["time_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    out_ << event.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct PreparedData {
  HyperCube cube;  // normalized
  Splits splits;
};

inline HyperCube load_normalized(const RunConfig& rc) {
  if (rc.cube.empty() || rc.labels.empty()) fail(ErrorKind::config, "run config needs 'cube' and 'labels' paths");
  auto cube = load_cube(rc.cube, rc.labels);
  if (cube.channels != rc.network.in_channels) {
    fail(ErrorKind::config, "cube has " + std::to_string(cube.channels) + " channels, network expects " +
                                std::to_string(rc.network.in_channels));
  }
  return normalize_channels(cube, rc.normalization);
}

inline std::vector<std::string> class_names(const ClassMap& m) {
  std::vector<std::string> names;
  for (auto c : m.original) names.push_back(std::to_string(c));
  return names;
}

inline std::string encode_class_table(const Splits& s) {
  std::ostringstream os;
  os << "class,original_code,population,train,val,test\n";
  for (const auto& c : s.counts) {
    os << c.class_index << ',' << c.original_code << ',' << c.population << ',' << c.train << ',' << c.val << ','
       << c.test << '\n';
  }
  return os.str();
}

inline void print_class_table(const Splits& s, std::ostream& out) {
  char line[128];
  std::snprintf(line, sizeof line, "%6s %6s %10s %7s %7s %7s\n", "class", "code", "population", "train", "val", "test");
  out << line;
  for (const auto& c : s.counts) {
    std::snprintf(line, sizeof line, "%6zu %6u %10zu %7zu %7zu %7zu\n", c.class_index, unsigned{c.original_code},
                  c.population, c.train, c.val, c.test);
    out << line;
  }
}

// Raster of class codes 1..C following `classes`; other labels become 0.
inline std::vector<std::uint16_t> remap_labels(std::span<const std::uint16_t> labels, const ClassMap& classes) {
  std::vector<std::uint16_t> out(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (labels[i] == classes.original[c]) out[i] = static_cast<std::uint16_t>(c + 1);
    }
  }
  return out;
}

inline ClassMap class_map_from_extra(const json& extra) {
  ClassMap m;
  if (extra.contains("classes")) m.original = extra.at("classes").get<std::vector<std::uint16_t>>();
  return m;
}

// ---------------------------------------------------------------------------
// Commands

inline PreparedData prepare(const RunConfig& rc, std::ostream& out) {
  PreparedData d{load_normalized(rc), {}};
  d.splits = make_splits(d.cube, rc.split);
  if (d.splits.classes.size() != rc.network.num_classes) {
    fail(ErrorKind::config, "split retains " + std::to_string(d.splits.classes.size()) + " classes, network has " +
                                std::to_string(rc.network.num_classes) + " outputs");
  }
  for (const auto& w : d.splits.warnings) out << "warning: " << w << '\n';
  return d;
}

inline int cmd_split(const RunConfig& rc, std::ostream& out) {
  const auto d = prepare(rc, out);
  fs::create_directories(rc.output_dir);
  io::write_file_atomic(rc.output_dir / "manifest.csv", encode_manifest(d.splits));
  io::write_file_atomic(rc.output_dir / "classes.csv", encode_class_table(d.splits));
  print_class_table(d.splits, out);
  out << "manifest: " << (rc.output_dir / "manifest.csv").string() << '\n';
  return ok;
}

inline int cmd_train(const RunConfig& rc, const std::optional<fs::path>& manifest_path, std::ostream& out) {
  auto d = prepare(rc, out);
  if (manifest_path) {
    const auto m = decode_manifest(io::read_file(*manifest_path), manifest_path->string());
    d.splits.train = m.train;
    d.splits.val = m.val;
    d.splits.test = m.test;
  }
  const auto train_set = extract_samples(d.cube, d.splits.train, rc.network.patch_size);
  const auto val_set = extract_samples(d.cube, d.splits.val, rc.network.patch_size);

  fs::create_directories(rc.output_dir);
  EventLog log(rc.output_dir / "log.jsonl");
  const std::size_t n_params = param_count(rc.network);
  out << "network: " << shape_trace(rc.network).str() << '\n';
  out << "parameters: " << n_params << '\n';
  log.emit({{"event", "start"}, {"command", "train"}, {"parameters", n_params}, {"train", train_set.size()},
            {"val", val_set.size()}, {"test", d.splits.test.size()}});

  auto result = train(rc.network, train_set, val_set, rc.schedule, Rng(rc.seed));
  for (const auto& row : result.history) {
    log.emit({{"event", "epoch"}, {"epoch", row.epoch}, {"train_loss", row.train_loss}, {"train_acc", row.train_acc},
              {"val_acc", row.val_acc}});
  }

  result.best.extra = {{"classes", d.splits.classes.original},
                       {"normalization", to_string(rc.normalization)},
                       {"seed", rc.seed}};
  io::write_file_atomic(rc.output_dir / "checkpoint.bin", encode_checkpoint(result.best));
  io::write_file_atomic(rc.output_dir / "history.csv", encode_history(result.history));
  io::write_file_atomic(rc.output_dir / "manifest.csv", encode_manifest(d.splits));
  io::write_file_atomic(rc.output_dir / "classes.csv", encode_class_table(d.splits));

  if (result.diverged) {
    log.emit({{"event", "diverged"}, {"detail", result.diagnostic}});
    out << "error: training diverged: " << result.diagnostic << " (best checkpoint kept)\n";
    return numerical_error;
  }

  const auto cm = evaluate_pixels(rc.network, result.best.params, d.cube, d.splits.test);
  const auto report = make_report(cm, class_names(d.splits.classes));
  json rj = to_json(report);
  rj["confusion"] = to_json(cm);
  rj["best_epoch"] = result.best.epoch;
  rj["val_accuracy"] = result.best.val_accuracy;
  io::write_file_atomic(rc.output_dir / "report.json", rj.dump(2) + "\n");
  io::write_file_atomic(rc.output_dir / "report.txt", to_table(report));
  log.emit({{"event", "done"}, {"best_epoch", result.best.epoch}, {"test_oa", report.overall_accuracy}});
  out << "best epoch " << result.best.epoch << ", val acc " << result.best.val_accuracy << "\n" << to_table(report);
  return ok;
}

struct EvalArgs {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> cube;
  std::optional<fs::path> labels;
  std::optional<fs::path> manifest;
  std::string split = "test";
  std::optional<fs::path> confusion;  // evaluate a given confusion matrix instead of a model
  std::optional<fs::path> out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  ConfusionMatrix cm;
  std::vector<std::string> names;
  if (a.confusion) {
    const auto doc = json::parse(io::read_file(*a.confusion), nullptr, false);
    if (doc.is_discarded()) fail(ErrorKind::data, a.confusion->string() + ": not JSON");
    cm = confusion_from_json(doc);
  } else {
    if (!a.checkpoint || !a.cube) fail(ErrorKind::config, "eval needs --checkpoint and --cube (or --confusion)");
    const auto ck = decode_checkpoint(io::read_file(*a.checkpoint), a.checkpoint->string());
    const auto classes = class_map_from_extra(ck.extra);
    names = class_names(classes);
    const auto norm = normalization_from_string(ck.extra.value("normalization", "max"));

    std::vector<LabeledPixel> pixels;
    HyperCube cube;
    if (a.manifest) {
      const auto raw = decode_hsc(io::read_file(*a.cube), a.cube->string());
      cube = HyperCube(raw.width, raw.height, raw.channels, raw.values, std::vector<std::uint16_t>(raw.width * raw.height, 0));
      const auto m = decode_manifest(io::read_file(*a.manifest), a.manifest->string());
      if (a.split == "train") {
        pixels = m.train;
      } else if (a.split == "val") {
        pixels = m.val;
      } else if (a.split == "test") {
        pixels = m.test;
      } else if (a.split == "all") {
        pixels = m.train;
        pixels.insert(pixels.end(), m.val.begin(), m.val.end());
        pixels.insert(pixels.end(), m.test.begin(), m.test.end());
      } else {
        fail(ErrorKind::config, "--split must be train|val|test|all");
      }
    } else {
      if (!a.labels) fail(ErrorKind::config, "eval needs --manifest or --labels");
      cube = load_cube(*a.cube, *a.labels);
      const auto codes = remap_labels(cube.labels, classes);
      for (std::size_t y = 0; y < cube.height; ++y)
        for (std::size_t x = 0; x < cube.width; ++x)
          if (auto c = codes[y * cube.width + x]; c != 0) pixels.push_back({x, y, c - 1u});
    }
    if (cube.channels != ck.cfg.in_channels) fail(ErrorKind::data, "cube channel count does not match the checkpoint");
    cube = normalize_channels(cube, norm);
    cm = evaluate_pixels(ck.cfg, ck.params, cube, pixels);
  }
  const auto report = make_report(cm, names);
  json rj = to_json(report);
  rj["confusion"] = to_json(cm);
  if (a.out) io::write_file_atomic(*a.out, rj.dump(2) + "\n");
  out << to_table(report);
  return ok;
}

struct MapArgs {
  std::optional<fs::path> checkpoint;
  fs::path cube;
  std::optional<fs::path> labels;
  std::string coverage = "labeled";
  bool ground_truth = false;
  fs::path out = "map.ppm";
};

inline int cmd_map(const MapArgs& a, std::ostream& out) {
  Image img;
  if (a.ground_truth) {
    if (!a.labels) fail(ErrorKind::config, "--ground-truth needs --labels");
    const auto lf = decode_hsl(io::read_file(*a.labels), a.labels->string());
    std::vector<std::uint16_t> codes;
    if (a.checkpoint) {
      const auto ck = decode_checkpoint(io::read_file(*a.checkpoint), a.checkpoint->string());
      codes = remap_labels(lf.labels, class_map_from_extra(ck.extra));
    } else {
      HyperCube shell(lf.width, lf.height, 1, std::vector<double>(lf.width * lf.height, 0.0), lf.labels);
      codes = filter_top_classes(shell).cube.labels;
    }
    img = render_label_map(lf.width, lf.height, codes);
  } else {
    if (!a.checkpoint) fail(ErrorKind::config, "map needs --checkpoint (or --ground-truth)");
    const auto ck = decode_checkpoint(io::read_file(*a.checkpoint), a.checkpoint->string());
    MapCoverage coverage;
    if (a.coverage == "labeled") {
      coverage = MapCoverage::labeled;
    } else if (a.coverage == "all") {
      coverage = MapCoverage::all;
    } else {
      fail(ErrorKind::config, "--coverage must be labeled|all");
    }
    HyperCube cube;
    if (coverage == MapCoverage::labeled) {
      if (!a.labels) fail(ErrorKind::config, "--coverage labeled needs --labels");
      cube = load_cube(a.cube, *a.labels);
      cube.labels = remap_labels(cube.labels, class_map_from_extra(ck.extra));
    } else {
      const auto raw = decode_hsc(io::read_file(a.cube), a.cube.string());
      cube = HyperCube(raw.width, raw.height, raw.channels, raw.values, std::vector<std::uint16_t>(raw.width * raw.height, 0));
    }
    if (cube.channels != ck.cfg.in_channels) fail(ErrorKind::data, "cube channel count does not match the checkpoint");
    cube = normalize_channels(cube, normalization_from_string(ck.extra.value("normalization", "max")));
    img = render_thematic_map(cube, ck.cfg, ck.params, default_palette(), coverage);
  }
  io::write_file_atomic(a.out, encode_ppm(img));
  out << "map " << img.width << "x" << img.height << ": " << a.out.string() << '\n';
  return ok;
}

inline int cmd_gradcheck(std::uint64_t seed, const std::optional<NetworkConfig>& extra, bool inject_fault,
                         std::ostream& out) {
  GradcheckOptions opt;
  opt.inject_fault = inject_fault;
  auto report = gradcheck_all(seed, opt);
  if (extra) {
    auto r = gradcheck_network(*extra, seed, opt, "custom/");
    report.entries.insert(report.entries.end(), r.entries.begin(), r.entries.end());
  }
  char line[256];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof line, "%-44s %6zu  max rel err %.3e  %s\n", e.path.c_str(), e.checked, e.max_rel_error,
                  e.max_rel_error <= report.tolerance ? "ok" : "FAIL");
    out << line;
  }
  std::snprintf(line, sizeof line, "gradcheck %s: max rel err %.3e (tolerance %.0e)\n",
                report.passed() ? "PASSED" : "FAILED", report.max_error(), report.tolerance);
  out << line;
  return report.passed() ? ok : numerical_error;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"BASS Net: band-adaptive spectral-spatial hyperspectral pixel classifier"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string manifest;

  auto* split = app.add_subcommand("split", "draw the stratified train/val/test split and write a manifest");
  split->add_option("-c,--config", config_path, "run config JSON")->required();
  split->add_option("--set", overrides, "override a config key (key.sub=value)");

  auto* trn = app.add_subcommand("train", "train a network and evaluate it on the test split");
  trn->add_option("-c,--config", config_path, "run config JSON")->required();
  trn->add_option("--set", overrides, "override a config key (key.sub=value)");
  trn->add_option("--manifest", manifest, "use the splits from a manifest CSV");

  EvalArgs ea;
  std::string e_ck, e_cube, e_labels, e_manifest, e_conf, e_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or a confusion matrix)");
  ev->add_option("--checkpoint", e_ck);
  ev->add_option("--cube", e_cube);
  ev->add_option("--labels", e_labels);
  ev->add_option("--manifest", e_manifest);
  ev->add_option("--split", ea.split, "train|val|test|all (with --manifest)");
  ev->add_option("--confusion", e_conf, "JSON confusion matrix [[...], ...]");
  ev->add_option("-o,--out", e_out, "write the report JSON here");

  MapArgs ma;
  std::string m_ck, m_cube, m_labels, m_out = "map.ppm";
  auto* mp = app.add_subcommand("map", "render a thematic map as PPM");
  mp->add_option("--checkpoint", m_ck);
  mp->add_option("--cube", m_cube);
  mp->add_option("--labels", m_labels);
  mp->add_option("--coverage", ma.coverage, "labeled|all");
  mp->add_flag("--ground-truth", ma.ground_truth, "render the label raster instead of predictions");
  mp->add_option("-o,--out", m_out);

  std::uint64_t gc_seed = 0;
  bool inject_fault = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gc->add_option("--seed", gc_seed);
  gc->add_option("-c,--config", config_path, "also check the network of this run config");
  gc->add_option("--set", overrides, "override a config key (key.sub=value)");
  gc->add_flag("--inject-fault", inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  }

  auto opt_path = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };

  try {
    if (split->parsed()) return cmd_split(parse_run_config(load_config_json(config_path, overrides)), out);
    if (trn->parsed()) {
      return cmd_train(parse_run_config(load_config_json(config_path, overrides)), opt_path(manifest), out);
    }
    if (ev->parsed()) {
      ea.checkpoint = opt_path(e_ck);
      ea.cube = opt_path(e_cube);
      ea.labels = opt_path(e_labels);
      ea.manifest = opt_path(e_manifest);
      ea.confusion = opt_path(e_conf);
      ea.out = opt_path(e_out);
      return cmd_eval(ea, out);
    }
    if (mp->parsed()) {
      ma.checkpoint = opt_path(m_ck);
      ma.cube = m_cube;
      ma.labels = opt_path(m_labels);
      ma.out = m_out;
      return cmd_map(ma, out);
    }
    if (gc->parsed()) {
      std::optional<NetworkConfig> extra;
      if (!config_path.empty()) extra = parse_run_config(load_config_json(config_path, overrides)).network;
      return cmd_gradcheck(gc_seed, extra, inject_fault, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return data_error;
  }
  return usage_error;
}

}  // namespace bass::cli
