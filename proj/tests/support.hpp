#pragma once

// Test-only oracles. Nothing here calls Graph::backward.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "textmax/graph.hpp"
#include "textmax/tensor.hpp"

namespace textmax::testing {

using DTensor = BasicTensor<double>;

inline DTensor uniform(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return DTensor(std::move(shape), std::move(v));
}

/// Central differences of a scalar function of a flat vector.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-3) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

struct GradientError {
  double max_relative = 0.0;
  double max_absolute = 0.0;
  bool ok = true;  // every element passes relative < rel_tol or absolute < abs_tol
};

inline GradientError compare_gradients(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                       double rel_tol = 1e-4, double abs_tol = 1e-6) {
  GradientError e;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    const double rel = scale > 0 ? diff / scale : 0.0;
    e.max_absolute = std::max(e.max_absolute, diff);
    if (diff >= abs_tol) e.max_relative = std::max(e.max_relative, rel);
    if (!(diff < abs_tol || rel < rel_tol)) e.ok = false;
  }
  return e;
}

/// A randomly wired two-layer graph over a (rows x cols) leaf. `build` is
/// deterministic in `seed`, so the same recipe runs for every FD probe.
struct RandomGraphRecipe {
  std::uint64_t seed = 0;
  std::size_t rows = 3, cols = 4;

  Var<double> build(Graph<double>& g, const Var<double>& x) const {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_op(0, 4);
    std::uniform_int_distribution<std::size_t> pick_width(2, 5);
    Var<double> h = x;
    for (int layer = 0; layer < 2; ++layer) {
      const std::size_t in = h.shape()[1], out = pick_width(rng);
      auto w = g.constant(uniform(rng, {in, out}, -1.0, 1.0));
      auto b = g.constant(uniform(rng, {out}, -0.5, 0.5));
      h = add(matmul(h, w), b);
      switch (pick_op(rng)) {
        case 0: h = gelu(h); break;
        case 1: h = tanh(h); break;
        case 2: h = softmax_lastdim(mul_scalar(h, 1.5)); break;
        case 3: {
          auto gain = g.constant(uniform(rng, {out}, 0.5, 1.5));
          auto bias = g.constant(uniform(rng, {out}, -0.5, 0.5));
          h = layernorm_lastdim(h, gain, bias, 1e-5);
          break;
        }
        default: {
          auto t = transpose2d(h);
          h = transpose2d(concat({slice(t, 0, 0, 1), mul(slice(t, 0, 1, out), slice(t, 0, 1, out))}, 0));
          break;
        }
      }
    }
    auto r = g.constant(uniform(rng, h.shape(), -1.0, 1.0));
    return add(mean(mul(h, r)), sum(pick(h, {0, h.value().numel() - 1})));
  }

  double evaluate(const std::vector<double>& flat) const {
    Graph<double> g;
    auto x = g.leaf(DTensor({rows, cols}, flat));
    return build(g, x).value().item();
  }
};

struct LineFit {
  double slope = 0.0, intercept = 0.0, t = 0.0, p = 1.0;
};

// Independent oracle: solve the 2x2 normal equations directly.
inline LineFit normal_equations(const std::vector<std::pair<double, double>>& pts) {
  double s1 = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (auto [x, y] : pts) {
    s1 += 1;
    sx += x;
    sxx += x * x;
    sy += y;
    sxy += x * y;
  }
  const double det = s1 * sxx - sx * sx;
  LineFit f;
  f.intercept = (sxx * sy - sx * sxy) / det;
  f.slope = (s1 * sxy - sx * sy) / det;
  double ssr = 0;
  for (auto [x, y] : pts) ssr += std::pow(y - f.intercept - f.slope * x, 2);
  const double sigma2 = ssr / (s1 - 2);
  f.t = f.slope / std::sqrt(sigma2 * s1 / det);
  f.p = std::erfc(std::abs(f.t) / std::sqrt(2.0));
  return f;
}

// Cyclic Jacobi eigen-decomposition of a symmetric matrix, used as a PCA oracle.
inline void jacobi(std::vector<std::vector<double>> a, std::vector<double>& vals, std::vector<std::vector<double>>& vecs) {
  const std::size_t n = a.size();
  vecs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k][p], vkq = vecs[k][q];
          vecs[k][p] = c * vkp - s * vkq;
          vecs[k][q] = s * vkp + c * vkq;
        }
      }
  }
  vals.resize(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a[i][i];
}

/// Top-2 PCA from the Jacobi solver, with the largest-magnitude loading made positive.
struct PcaOracle {
  std::array<double, 2> explained{};
  std::array<std::vector<double>, 2> components;
  std::vector<std::array<double, 2>> coords;
};

inline PcaOracle pca_oracle(const std::vector<std::vector<double>>& X) {
  const std::size_t n = X.size(), d = X.front().size();
  std::vector<double> mu(d, 0);
  for (const auto& r : X)
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j] / double(n);
  std::vector<std::vector<double>> C(d, std::vector<double>(d, 0));
  for (const auto& r : X)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) C[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]) / double(n);
  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  jacobi(C, vals, vecs);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] > vals[b]; });
  double total = 0;
  for (double v : vals) total += v;
  PcaOracle out;
  out.coords.assign(n, {0.0, 0.0});
  for (int c = 0; c < 2; ++c) {
    const std::size_t col = order[c];
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = vecs[j][col];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0)
      for (auto& x : v) x = -x;
    out.explained[c] = vals[col] / total;
    out.components[c] = v;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out.coords[i][c] += (X[i][j] - mu[j]) * v[j];
  }
  return out;
}

}  // namespace textmax::testing
