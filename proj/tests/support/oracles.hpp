#pragma once

// Reference implementations written straight from the definitions, without sharing
// code with the library. Slow on purpose.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "bass/metrics.hpp"
#include "bass/tensor.hpp"

namespace bass::oracle {

// y(i, j, f) = b[f] + sum over (di, dj, c) of w[f](di, dj, c) * x(i + di, j + dj, c)
inline std::vector<double> conv_xy(const std::vector<double>& x, std::size_t A, std::size_t B, std::size_t C,
                                   const std::vector<double>& w, const std::vector<double>& b, std::size_t p,
                                   std::size_t n) {
  const std::size_t oa = A - p + 1, ob = B - p + 1;
  std::vector<double> y(oa * ob * n);
  for (std::size_t i = 0; i < oa; ++i)
    for (std::size_t j = 0; j < ob; ++j)
      for (std::size_t f = 0; f < n; ++f) {
        double s = b[f];
        for (std::size_t di = 0; di < p; ++di)
          for (std::size_t dj = 0; dj < p; ++dj)
            for (std::size_t c = 0; c < C; ++c)
              s += w[f * p * p * C + (di * p + dj) * C + c] * x[((i + di) * B + (j + dj)) * C + c];
        y[(i * ob + j) * n + f] = s;
      }
  return y;
}

// y(f, 0, k) = b[f] + sum over (x, y, d) of w[f](x, y, d) * in(x, y, k + d)
inline std::vector<double> conv_lambda(const std::vector<double>& in, std::size_t A, std::size_t B, std::size_t C,
                                       const std::vector<double>& w, const std::vector<double>& b, std::size_t p,
                                       std::size_t n) {
  const std::size_t oc = C - p + 1;
  std::vector<double> y(n * oc);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t k = 0; k < oc; ++k) {
      double s = b[f];
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t d = 0; d < p; ++d) s += w[f * A * B * p + (a * B + bb) * p + d] * in[(a * B + bb) * C + k + d];
      y[f * oc + k] = s;
    }
  return y;
}

inline std::vector<double> fc(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b) {
  std::vector<double> y(b.size());
  for (std::size_t o = 0; o < b.size(); ++o) {
    y[o] = b[o];
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += w[o * x.size() + i] * x[i];
  }
  return y;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Metrics recomputed from per-cell sums with no shared helpers.
struct BruteMetrics {
  std::vector<double> precision, recall, f_score;
  double micro_p = 0, micro_r = 0, micro_f = 0;
  double macro_p = 0, macro_r = 0, macro_f = 0;
  double oa = 0, kappa = 0;
};

inline BruteMetrics brute_metrics(const std::vector<std::vector<std::uint64_t>>& m) {
  const std::size_t C = m.size();
  BruteMetrics r;
  double total = 0, diag = 0, stp = 0, sfp = 0, sfn = 0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      total += static_cast<double>(m[i][j]);
      if (i == j) diag += static_cast<double>(m[i][j]);
    }
  auto div = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  for (std::size_t c = 0; c < C; ++c) {
    double tp = static_cast<double>(m[c][c]), fp = 0, fn = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (k == c) continue;
      fp += static_cast<double>(m[k][c]);
      fn += static_cast<double>(m[c][k]);
    }
    r.precision.push_back(div(tp, tp + fp));
    r.recall.push_back(div(tp, tp + fn));
    r.f_score.push_back(div(2 * tp, 2 * tp + fp + fn));
    r.macro_p += r.precision.back() / static_cast<double>(C);
    r.macro_r += r.recall.back() / static_cast<double>(C);
    r.macro_f += r.f_score.back() / static_cast<double>(C);
    stp += tp;
    sfp += fp;
    sfn += fn;
  }
  r.micro_p = div(stp, stp + sfp);
  r.micro_r = div(stp, stp + sfn);
  r.micro_f = div(2 * stp, 2 * stp + sfp + sfn);
  r.oa = div(diag, total);
  double pe = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += static_cast<double>(m[c][k]);
      col += static_cast<double>(m[k][c]);
    }
    pe += row * col;
  }
  pe /= total * total;
  r.kappa = (r.oa - pe) / (1 - pe);
  return r;
}

// Random C x C matrix with C in [2, max_c] and cells in [0, max_count]; redrawn until
// chance agreement is below 1 so kappa is defined.
inline ConfusionMatrix to_matrix(const std::vector<std::vector<std::uint64_t>>& m) {
  std::vector<std::uint64_t> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return ConfusionMatrix(m.size(), flat);
}

inline std::vector<std::vector<std::uint64_t>> random_confusion(Rng& rng, std::size_t max_c = 16,
                                                                std::uint64_t max_count = 50) {
  while (true) {
    const std::size_t C = 2 + rng.below(max_c - 1);
    std::vector<std::vector<std::uint64_t>> m(C, std::vector<std::uint64_t>(C));
    std::size_t nonzero = 0;
    for (auto& row : m)
      for (auto& v : row) {
        // Sparse cells exercise the 0/0 conventions.
        v = rng.below(4) == 0 ? 0 : rng.below(max_count + 1);
        nonzero += v != 0;
      }
    if (nonzero < 2) continue;
    // p_e == 1 only when a single row and a single column hold everything.
    std::size_t rows = 0, cols = 0;
    for (std::size_t i = 0; i < C; ++i) {
      std::uint64_t rs = 0, cs = 0;
      for (std::size_t j = 0; j < C; ++j) {
        rs += m[i][j];
        cs += m[j][i];
      }
      rows += rs != 0;
      cols += cs != 0;
    }
    if (rows > 1 || cols > 1) return m;
  }
}

}  // namespace bass::oracle
