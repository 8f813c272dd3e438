#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bass/architecture.hpp"
#include "bass/data.hpp"
#include "bass/error.hpp"
#include "bass/training.hpp"

namespace bass {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Entry 0 is unlabeled (black); entry k colors raster code k, i.e. class index k - 1.
inline const std::vector<Rgb>& default_palette() {
  static const std::vector<Rgb> palette = {
      {0, 0, 0},       {255, 0, 0},     {0, 255, 0},   {0, 0, 255},     {255, 255, 0},   {255, 0, 255},
      {0, 255, 255},   {255, 128, 0},   {128, 0, 255}, {0, 128, 0},     {128, 64, 0},    {255, 128, 192},
      {128, 128, 128}, {0, 0, 128},     {128, 128, 0}, {0, 128, 128},   {192, 192, 255},
  };
  return palette;
}

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  void set(std::size_t x, std::size_t y, Rgb c) {
    auto* p = &rgb[(y * width + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
};

// Binary PPM (P6), 8-bit.
inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

// Renders raster codes (0 = unlabeled) through the palette.
inline Image render_label_map(std::size_t width, std::size_t height, std::span<const std::uint16_t> codes,
                              const std::vector<Rgb>& palette = default_palette()) {
  require(codes.size() == width * height, "render_label_map: raster size mismatch");
  Image img{width, height, std::vector<std::uint8_t>(width * height * 3, 0)};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto code = codes[y * width + x];
      if (code >= palette.size()) {
        fail(ErrorKind::config, "palette has " + std::to_string(palette.size()) + " entries, raster uses code " +
                                    std::to_string(code));
      }
      img.set(x, y, palette[code]);
    }
  }
  return img;
}

enum class MapCoverage { labeled, all };

// Predicted raster codes (class index + 1) for the scene; with MapCoverage::labeled,
// pixels with label 0 stay 0.
inline std::vector<std::uint16_t> predict_raster(const HyperCube& cube, const NetworkConfig& cfg,
                                                 const ParamStore& params, MapCoverage coverage) {
  std::vector<std::uint16_t> codes(cube.width * cube.height, 0);
  for (std::size_t y = 0; y < cube.height; ++y) {
    for (std::size_t x = 0; x < cube.width; ++x) {
      if (coverage == MapCoverage::labeled && cube.label(x, y) == 0) continue;
      codes[y * cube.width + x] =
          static_cast<std::uint16_t>(predict_class(cfg, params, extract_patch(cube, x, y, cfg.patch_size)) + 1);
    }
  }
  return codes;
}

inline Image render_thematic_map(const HyperCube& cube, const NetworkConfig& cfg, const ParamStore& params,
                                 const std::vector<Rgb>& palette = default_palette(),
                                 MapCoverage coverage = MapCoverage::labeled) {
  if (palette.size() < cfg.num_classes + 1) {
    fail(ErrorKind::config, "palette has " + std::to_string(palette.size()) + " entries, need " +
                                std::to_string(cfg.num_classes + 1) + " (unlabeled + one per class)");
  }
  return render_label_map(cube.width, cube.height, predict_raster(cube, cfg, params, coverage), palette);
}

}  // namespace bass
