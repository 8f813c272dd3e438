#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bass/error.hpp"

namespace bass {

// Extents of a rank-3 volume: two spatial axes (a, b) and the spectral axis c.
struct Shape3 {
  std::size_t a = 1;
  std::size_t b = 1;
  std::size_t c = 1;

  constexpr std::size_t size() const { return a * b * c; }

  // Canonical flat index, c fastest.
  constexpr std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * b + j) * c + k; }

  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;

  std::string str() const { return std::to_string(a) + "x" + std::to_string(b) + "x" + std::to_string(c); }
};

inline std::ostream& operator<<(std::ostream& os, const Shape3& s) { return os << s.str(); }

inline void validate(const Shape3& s) {
  if (s.a == 0 || s.b == 0 || s.c == 0) fail(ErrorKind::contract, "shape " + s.str() + " has a zero extent");
  constexpr auto max = std::numeric_limits<std::size_t>::max() / sizeof(double);
  if (s.a > max / s.b || s.a * s.b > max / s.c) {
    fail(ErrorKind::contract, "shape " + s.str() + " element count overflows");
  }
}

// Dense A x B x C array of doubles. Immutable after construction; every operation returns a new volume.
class Volume {
 public:
  Volume() : Volume(Shape3{}, std::vector<double>(1, 0.0)) {}

  Volume(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    validate(shape_);
    if (data_.size() != shape_.size()) {
      fail(ErrorKind::contract, "volume " + shape_.str() + " needs " + std::to_string(shape_.size()) +
                                    " elements, got " + std::to_string(data_.size()));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) fail(ErrorKind::numerical, "non-finite element in volume " + shape_.str());
    }
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  double operator[](std::size_t flat) const { return data_[flat]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[shape_.index(i, j, k)]; }

  // Same elements under a new shape with equal element count.
  Volume reshaped(Shape3 shape) const { return Volume(shape, data_); }

  // Moves the storage out; the volume is left empty and must not be used again.
  std::vector<double> release() && { return std::move(data_); }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Shape3 shape_;
  std::vector<double> data_;
};

inline Volume zeros(Shape3 shape) {
  validate(shape);
  return Volume(shape, std::vector<double>(shape.size(), 0.0));
}

inline double sum(const Volume& v) {
  double s = 0.0;
  for (double x : v.data()) s += x;
  return s;
}

inline Volume elementwise_max_zero(const Volume& v) {
  std::vector<double> out(v.data().begin(), v.data().end());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  return Volume(v.shape(), std::move(out));
}

// Counter-based generator: draw n is a pure function of (seed, n), which makes the
// sequence identical on every platform and lets the state be saved as two integers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64() { return mix(seed_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Independent child stream, keyed by a caller-chosen label.
  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ull))); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

inline Volume uniform_init(Shape3 shape, double bound, Rng& rng) {
  if (!(bound > 0.0) || !std::isfinite(bound)) fail(ErrorKind::contract, "uniform_init: bound must be positive");
  validate(shape);
  std::vector<double> out(shape.size());
  for (double& x : out) x = rng.uniform(-bound, bound);
  return Volume(shape, std::move(out));
}

// Fisher-Yates over [0, n).
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace bass
