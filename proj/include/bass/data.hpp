#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bass/error.hpp"
#include "bass/io.hpp"
#include "bass/tensor.hpp"

namespace bass {

// A scene: radiance stored height x width x channels in (y, x, c) order, plus a
// height x width label raster where 0 means unlabeled.
struct HyperCube {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  Volume radiance;
  std::vector<std::uint16_t> labels;

  HyperCube() = default;

  HyperCube(std::size_t w, std::size_t h, std::size_t c, std::vector<double> values, std::vector<std::uint16_t> raster)
      : width(w), height(h), channels(c), radiance(Shape3{h, w, c}, std::move(values)), labels(std::move(raster)) {
    if (labels.size() != w * h) {
      fail(ErrorKind::data, "label raster has " + std::to_string(labels.size()) + " pixels, cube has " +
                                std::to_string(w * h));
    }
  }

  std::uint16_t label(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
  double value(std::size_t x, std::size_t y, std::size_t c) const { return radiance.at(y, x, c); }
};

enum class Normalization { max, minmax };

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "max") return Normalization::max;
  if (s == "minmax") return Normalization::minmax;
  fail(ErrorKind::config, "normalization must be max|minmax, got '" + s + "'");
}

inline std::string to_string(Normalization n) { return n == Normalization::max ? "max" : "minmax"; }

// Per-channel scaling with statistics over every pixel of the channel.
//   max:    y = (x - min) / max
//   minmax: y = (x - min) / (max - min)
// Constant channels map to zero in both modes. Otherwise max mode rejects a channel
// with negative values, since the result would leave [0, 1].
inline HyperCube normalize_channels(const HyperCube& cube, Normalization mode = Normalization::max) {
  const std::size_t C = cube.channels;
  const std::size_t pixels = cube.width * cube.height;
  auto x = cube.radiance.data();
  std::vector<double> lo(C, std::numeric_limits<double>::infinity()), hi(C, -std::numeric_limits<double>::infinity());
  for (std::size_t px = 0; px < pixels; ++px) {
    for (std::size_t c = 0; c < C; ++c) {
      lo[c] = std::min(lo[c], x[px * C + c]);
      hi[c] = std::max(hi[c], x[px * C + c]);
    }
  }
  std::vector<double> scale(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (hi[c] == lo[c]) {
      scale[c] = 0.0;
    } else if (mode == Normalization::max) {
      if (lo[c] < 0.0) fail(ErrorKind::data, "normalize: channel " + std::to_string(c) + " has negative values");
      scale[c] = 1.0 / hi[c];
    } else {
      scale[c] = 1.0 / (hi[c] - lo[c]);
    }
  }
  std::vector<double> out(x.size());
  for (std::size_t px = 0; px < pixels; ++px) {
    for (std::size_t c = 0; c < C; ++c) out[px * C + c] = (x[px * C + c] - lo[c]) * scale[c];
  }
  return HyperCube(cube.width, cube.height, C, std::move(out), cube.labels);
}

// Class index i corresponds to raster code original[i]; remapped rasters store i + 1.
struct ClassMap {
  std::vector<std::uint16_t> original;

  std::size_t size() const { return original.size(); }
  friend bool operator==(const ClassMap&, const ClassMap&) = default;
};

inline std::map<std::uint16_t, std::size_t> class_populations(std::span<const std::uint16_t> labels) {
  std::map<std::uint16_t, std::size_t> pop;
  for (auto l : labels)
    if (l != 0) ++pop[l];
  return pop;
}

struct FilteredCube {
  HyperCube cube;
  ClassMap classes;
};

// Keeps the k most populous classes (ties go to the smaller code), remaps them to
// codes 1..k in ascending original-code order and clears every other pixel to 0.
// Without k every class is kept.
inline FilteredCube filter_top_classes(const HyperCube& cube, std::optional<std::size_t> k = std::nullopt) {
  const auto pop = class_populations(cube.labels);
  const std::size_t keep = k.value_or(pop.size());
  if (keep == 0) fail(ErrorKind::config, "top_k_classes must be positive");
  if (keep > pop.size()) {
    fail(ErrorKind::config, "top_k_classes " + std::to_string(keep) + " exceeds the " + std::to_string(pop.size()) +
                                " labeled classes present");
  }
  std::vector<std::pair<std::uint16_t, std::size_t>> ranked(pop.begin(), pop.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) { return l.second > r.second; });
  ranked.resize(keep);

  ClassMap map;
  for (const auto& [code, n] : ranked) map.original.push_back(code);
  std::sort(map.original.begin(), map.original.end());

  std::map<std::uint16_t, std::uint16_t> remap;
  for (std::size_t i = 0; i < map.original.size(); ++i) remap[map.original[i]] = static_cast<std::uint16_t>(i + 1);

  std::vector<std::uint16_t> labels(cube.labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (auto it = remap.find(cube.labels[i]); it != remap.end()) labels[i] = it->second;
  }
  HyperCube out = cube;
  out.labels = std::move(labels);
  return {std::move(out), std::move(map)};
}

namespace detail {

// Mirror reflection without repeating the border sample: -1 -> 1, n -> n - 2.
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// p x p x C window centered on (x, y); patch axis a runs along y, b along x.
inline Volume extract_patch(const HyperCube& cube, std::size_t x, std::size_t y, std::size_t p) {
  if (p == 0 || p % 2 == 0) fail(ErrorKind::contract, "extract_patch: p must be odd, got " + std::to_string(p));
  if (x >= cube.width || y >= cube.height) fail(ErrorKind::contract, "extract_patch: pixel outside the image");
  const auto r = static_cast<std::ptrdiff_t>(p / 2);
  const std::size_t C = cube.channels;
  auto src = cube.radiance.data();
  std::vector<double> out;
  out.reserve(p * p * C);
  for (std::ptrdiff_t di = -r; di <= r; ++di) {
    const std::size_t yy = detail::reflect(static_cast<std::ptrdiff_t>(y) + di, cube.height);
    for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
      const std::size_t xx = detail::reflect(static_cast<std::ptrdiff_t>(x) + dj, cube.width);
      auto first = src.begin() + static_cast<std::ptrdiff_t>((yy * cube.width + xx) * C);
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(C));
    }
  }
  return Volume(Shape3{p, p, C}, std::move(out));
}

struct LabeledPixel {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t label = 0;  // class index in [0, C)

  friend bool operator==(const LabeledPixel&, const LabeledPixel&) = default;
};

struct LabeledSample {
  Volume patch;
  std::size_t label = 0;
  std::size_t x = 0;
  std::size_t y = 0;
};

inline std::vector<LabeledSample> extract_samples(const HyperCube& cube, std::span<const LabeledPixel> pixels,
                                                  std::size_t p) {
  std::vector<LabeledSample> out;
  out.reserve(pixels.size());
  for (const auto& px : pixels) out.push_back({extract_patch(cube, px.x, px.y, p), px.label, px.x, px.y});
  return out;
}

struct SplitSpec {
  std::size_t per_class_train = 200;
  double val_fraction = 0.25;
  std::uint64_t seed = 0;
  std::optional<std::size_t> top_k_classes;

  // Size of the validation draw per class: ceil(val_fraction * per_class_train), with a
  // relative guard so products like 0.1 * 30 do not round up past the exact integer.
  std::size_t val_per_class() const {
    return static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(per_class_train) * (1.0 - 1e-12)));
  }
};

struct ClassSplitCount {
  std::size_t class_index = 0;
  std::uint16_t original_code = 0;
  std::size_t population = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct Splits {
  ClassMap classes;
  std::vector<LabeledPixel> train;
  std::vector<LabeledPixel> val;
  std::vector<LabeledPixel> test;
  std::vector<ClassSplitCount> counts;
  std::vector<std::string> warnings;
};

// Per class: a seeded draw of per_class_train pixels without replacement, of which the
// first ceil(val_fraction * per_class_train) become validation; everything else labeled is test.
inline Splits make_splits(const HyperCube& cube, const SplitSpec& spec) {
  if (spec.per_class_train == 0) fail(ErrorKind::config, "per_class_train must be positive");
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) fail(ErrorKind::config, "val_fraction must lie in (0, 1)");
  const std::size_t n_val = spec.val_per_class();
  if (n_val >= spec.per_class_train) {
    fail(ErrorKind::config, "val_fraction leaves no training pixels out of " + std::to_string(spec.per_class_train));
  }

  auto filtered = filter_top_classes(cube, spec.top_k_classes);
  Splits s;
  s.classes = filtered.classes;
  std::vector<std::vector<LabeledPixel>> by_class(s.classes.size());
  for (std::size_t y = 0; y < cube.height; ++y) {
    for (std::size_t x = 0; x < cube.width; ++x) {
      const auto code = filtered.cube.label(x, y);
      if (code != 0) by_class[code - 1u].push_back({x, y, code - 1u});
    }
  }

  Rng rng(spec.seed);
  auto raster_order = [](const LabeledPixel& l, const LabeledPixel& r) {
    return std::tie(l.y, l.x) < std::tie(r.y, r.x);
  };
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& pixels = by_class[c];
    const auto code = s.classes.original[c];
    if (pixels.size() < spec.per_class_train) {
      fail(ErrorKind::data, "class " + std::to_string(code) + " has " + std::to_string(pixels.size()) +
                                " labeled pixels, fewer than per_class_train " + std::to_string(spec.per_class_train));
    }
    const auto order = permutation(pixels.size(), rng);
    std::vector<LabeledPixel> val, train, test;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& px = pixels[order[i]];
      if (i < n_val) {
        val.push_back(px);
      } else if (i < spec.per_class_train) {
        train.push_back(px);
      } else {
        test.push_back(px);
      }
    }
    if (test.empty()) s.warnings.push_back("class " + std::to_string(code) + " has no test pixels");
    for (auto* part : {&val, &train, &test}) std::sort(part->begin(), part->end(), raster_order);
    s.counts.push_back({c, code, pixels.size(), train.size(), val.size(), test.size()});
    s.train.insert(s.train.end(), train.begin(), train.end());
    s.val.insert(s.val.end(), val.begin(), val.end());
    s.test.insert(s.test.end(), test.begin(), test.end());
  }
  return s;
}

// ---------------------------------------------------------------------------
// File formats
//
// .hsc  JSON header line {"width","height","channels","dtype":"f32","order":"y,x,c"}\n
//       followed by W*H*C little-endian f32 in (y, x, c) order.
// .hsl  JSON header line {"width","height","dtype":"u16"}\n followed by W*H little-endian u16.

namespace detail {

inline nlohmann::json parse_header(io::Reader& r, const std::string& source) {
  try {
    return nlohmann::json::parse(r.get_line());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, source + ": bad header: " + e.what());
  }
}

inline std::size_t header_dim(const nlohmann::json& h, const char* key, const std::string& source) {
  if (!h.contains(key) || !h[key].is_number_unsigned() || h[key].get<std::size_t>() == 0) {
    fail(ErrorKind::data, source + ": header field '" + key + "' must be a positive integer");
  }
  return h[key].get<std::size_t>();
}

}  // namespace detail

struct RadianceFile {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> values;  // (y, x, c)
};

inline std::string encode_hsc(std::size_t width, std::size_t height, std::size_t channels,
                              std::span<const double> values) {
  require(values.size() == width * height * channels, "encode_hsc: value count mismatch");
  nlohmann::ordered_json h{{"width", width}, {"height", height}, {"channels", channels}, {"dtype", "f32"},
                           {"order", "y,x,c"}};
  std::string out = h.dump() + "\n";
  out.reserve(out.size() + values.size() * 4);
  for (double v : values) io::put_f32(out, static_cast<float>(v));
  return out;
}

inline RadianceFile decode_hsc(std::string_view bytes, const std::string& source) {
  io::Reader r(bytes, source);
  const auto h = detail::parse_header(r, source);
  if (h.value("dtype", "") != "f32") fail(ErrorKind::data, source + ": dtype must be f32");
  if (h.value("order", "") != "y,x,c") fail(ErrorKind::data, source + ": order must be y,x,c");
  RadianceFile f;
  f.width = detail::header_dim(h, "width", source);
  f.height = detail::header_dim(h, "height", source);
  f.channels = detail::header_dim(h, "channels", source);
  const std::size_t n = f.width * f.height * f.channels;
  if (r.remaining() != n * 4) {
    fail(ErrorKind::data, source + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                              std::to_string(n * 4));
  }
  f.values.resize(n);
  for (auto& v : f.values) {
    v = r.get_f32();
    if (!std::isfinite(v)) fail(ErrorKind::data, source + ": non-finite radiance value");
  }
  return f;
}

struct LabelFile {
  std::size_t width = 0, height = 0;
  std::vector<std::uint16_t> labels;
};

inline std::string encode_hsl(std::size_t width, std::size_t height, std::span<const std::uint16_t> labels) {
  require(labels.size() == width * height, "encode_hsl: label count mismatch");
  nlohmann::ordered_json h{{"width", width}, {"height", height}, {"dtype", "u16"}};
  std::string out = h.dump() + "\n";
  for (auto l : labels) io::put_le<std::uint16_t>(out, l);
  return out;
}

inline LabelFile decode_hsl(std::string_view bytes, const std::string& source) {
  io::Reader r(bytes, source);
  const auto h = detail::parse_header(r, source);
  if (h.value("dtype", "") != "u16") fail(ErrorKind::data, source + ": dtype must be u16");
  LabelFile f;
  f.width = detail::header_dim(h, "width", source);
  f.height = detail::header_dim(h, "height", source);
  if (r.remaining() != f.width * f.height * 2) fail(ErrorKind::data, source + ": payload size does not match header");
  f.labels.resize(f.width * f.height);
  for (auto& l : f.labels) l = r.get_le<std::uint16_t>();
  return f;
}

inline HyperCube load_cube(const std::filesystem::path& cube_path, const std::filesystem::path& label_path) {
  const auto cube = decode_hsc(io::read_file(cube_path), cube_path.string());
  auto labels = decode_hsl(io::read_file(label_path), label_path.string());
  if (cube.width != labels.width || cube.height != labels.height) {
    fail(ErrorKind::data, "label raster " + std::to_string(labels.width) + "x" + std::to_string(labels.height) +
                              " does not match cube " + std::to_string(cube.width) + "x" + std::to_string(cube.height));
  }
  return HyperCube(cube.width, cube.height, cube.channels, cube.values, std::move(labels.labels));
}

// Manifest CSV: x,y,label,split with label the class index.
inline std::string encode_manifest(const Splits& s) {
  std::ostringstream os;
  os << "x,y,label,split\n";
  auto emit = [&](const std::vector<LabeledPixel>& part, const char* name) {
    for (const auto& p : part) os << p.x << ',' << p.y << ',' << p.label << ',' << name << '\n';
  };
  emit(s.train, "train");
  emit(s.val, "val");
  emit(s.test, "test");
  return os.str();
}

struct Manifest {
  std::vector<LabeledPixel> train, val, test;
};

inline Manifest decode_manifest(std::string_view text, const std::string& source) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "x,y,label,split") fail(ErrorKind::data, source + ": expected header x,y,label,split");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string xs, ys, ls, split;
    if (!std::getline(fields, xs, ',') || !std::getline(fields, ys, ',') || !std::getline(fields, ls, ',') ||
        !std::getline(fields, split)) {
      fail(ErrorKind::data, source + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    LabeledPixel p;
    try {
      p = {std::stoul(xs), std::stoul(ys), std::stoul(ls)};
    } catch (const std::exception&) {
      fail(ErrorKind::data, source + ":" + std::to_string(lineno) + ": bad integer field");
    }
    if (split == "train") {
      m.train.push_back(p);
    } else if (split == "val") {
      m.val.push_back(p);
    } else if (split == "test") {
      m.test.push_back(p);
    } else {
      fail(ErrorKind::data, source + ":" + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
  }
  return m;
}

}  // namespace bass
