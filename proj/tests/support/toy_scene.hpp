#pragma once

#include <cstdint>
#include <vector>

#include "bass/architecture.hpp"
#include "bass/data.hpp"
#include "bass/tensor.hpp"

namespace bass::toy {

// 16x16x8 two-class scene. The left half has a rising spectrum and is class 1, the
// right half a falling one and is class 2. The two columns at the seam stay
// unlabeled, so every labeled 3x3 patch is pure. Uniform noise of +-noise on all values.
inline HyperCube scene(std::uint64_t seed = 7, std::size_t width = 16, std::size_t height = 16,
                           std::size_t channels = 8, double noise = 0.002) {
  Rng rng(seed);
  std::vector<double> values;
  std::vector<std::uint16_t> labels;
  const std::size_t seam = width / 2;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const bool left = x < seam;
      const bool at_seam = x + 1 == seam || x == seam;
      labels.push_back(at_seam ? 0 : (left ? 1 : 2));
      for (std::size_t c = 0; c < channels; ++c) {
        const double ramp = static_cast<double>(c) / static_cast<double>(channels - 1);
        const double base = left ? 0.2 + 0.6 * ramp : 0.8 - 0.6 * ramp;
        values.push_back(base + rng.uniform(-noise, noise));
      }
    }
  }
  return HyperCube(width, height, channels, std::move(values), std::move(labels));
}

// Small network for the toy scene: conv1x1 block 1, two bands of 4 channels, three
// spectral convolutions per band. Narrower stacks (the reduced presets) lose units to
// dead ReLUs on some seeds and stall at chance.
inline NetworkConfig network(bool parameter_sharing = true) {
  NetworkConfig c;
  c.patch_size = 3;
  c.in_channels = 8;
  c.phi = {PhiKind::conv1x1, 8};
  c.n_bands = 2;
  c.block2 = {{LayerKind::conv_lambda, 2, 8}, {LayerKind::conv_lambda, 2, 8}, {LayerKind::conv_lambda, 2, 8}};
  c.block3 = {16, 2};
  c.num_classes = 2;
  c.parameter_sharing = parameter_sharing;
  return c;
}

// Split used with the toy scene: 100 of the 112 pixels per class go to train+val.
inline SplitSpec split(std::uint64_t seed) {
  SplitSpec s;
  s.per_class_train = 100;
  s.seed = seed;
  return s;
}

}  // namespace bass::toy
