#pragma once

// Aggregates over run records: single-neuron and group summaries, per-layer
// regressions, 2-component PCA and magnitude statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "textmax/engine.hpp"
#include "textmax/probe.hpp"

namespace textmax {

/// Mean and population standard deviation.
struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / double(xs.size()));
  return out;
}

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (auto x : v) s += double(x) * x;
  return std::sqrt(s);
}

inline MeanSd magnitude_stats(const std::vector<std::vector<float>>& vectors) {
  std::vector<double> norms;
  for (const auto& v : vectors) norms.push_back(l2_norm(v));
  return mean_sd(norms);
}

// ---- single neurons -------------------------------------------------------------

struct SingleNeuronRow {
  NeuronRef neuron;
  double final_act = 0.0;
  double word_best_act = 0.0;
  std::optional<double> ratio;
  double cos_closest = 0.0;
  std::size_t closest_word = 0;
  std::size_t max_word = 0;
  bool coincide = false;
  double magnitude = 0.0;       // optimized input, comparison space
  double word_magnitude = 0.0;  // most activating word, comparison space
};

struct SingleNeuronSummary {
  std::vector<SingleNeuronRow> rows;  // sorted by neuron
  std::size_t failed = 0;
  MeanSd final_act, word_best_act, ratio, cos_closest, magnitude, word_magnitude;
  double coincide_pct = 0.0;
};

inline void check_record_model(const RunRecord& r, const std::string& model_hash) {
  if (r.model_hash != model_hash) {
    throw FormatError(FormatError::Kind::kHashMismatch, "model_hash",
                      "record " + r.key() + " was produced by model " + r.model_hash + ", expected " + model_hash);
  }
}

inline SingleNeuronSummary summarize_single(const std::vector<RunRecord>& records, const ActivationTable& table,
                                            const WordSpace& space) {
  SingleNeuronSummary s;
  for (const auto& r : records) {
    if (r.objective.kind() != Objective::Kind::kSingle) continue;
    check_record_model(r, table.model_hash());
    if (r.failed) {
      ++s.failed;
      continue;
    }
    const std::size_t idx = table.require(r.objective.refs().front());
    SingleNeuronRow row;
    row.neuron = r.objective.refs().front();
    row.final_act = r.final_value;
    row.word_best_act = table.amax(idx);
    row.ratio = activation_potential_ratio(r, row.word_best_act);
    std::span<const float> v(r.final_embedding.data(), space.dim());
    const auto best = nearest_words(space, v, 1).at(0);
    row.cos_closest = best.cosine;
    row.closest_word = best.word;
    row.max_word = table.argmax(idx);
    row.coincide = row.closest_word == row.max_word;
    row.magnitude = l2_norm(v);
    row.word_magnitude = l2_norm(space.vector(row.max_word));
    s.rows.push_back(row);
  }
  std::stable_sort(s.rows.begin(), s.rows.end(), [](const auto& a, const auto& b) { return a.neuron < b.neuron; });
  std::vector<double> fa, wb, ra, cc, mg, wm;
  double coincide = 0.0;
  for (const auto& r : s.rows) {
    fa.push_back(r.final_act);
    wb.push_back(r.word_best_act);
    if (r.ratio) ra.push_back(*r.ratio);
    cc.push_back(r.cos_closest);
    mg.push_back(r.magnitude);
    wm.push_back(r.word_magnitude);
    coincide += r.coincide;
  }
  s.final_act = mean_sd(fa);
  s.word_best_act = mean_sd(wb);
  s.ratio = mean_sd(ra);
  s.cos_closest = mean_sd(cc);
  s.magnitude = mean_sd(mg);
  s.word_magnitude = mean_sd(wm);
  s.coincide_pct = s.rows.empty() ? 0.0 : 100.0 * coincide / double(s.rows.size());
  return s;
}

// ---- groups ------------------------------------------------------------------------

struct GroupRow {
  std::size_t word = 0;
  std::size_t k = 0;
  std::string mode;
  double cos_oi_w = 0.0;
  double act_oi = 0.0;
  double act_w = 0.0;
  std::size_t rank = 0;
  bool hit1 = false;
  bool hit20 = false;
};

struct GroupCell {
  std::size_t k = 0;
  std::string mode;
  std::size_t n = 0;
  std::size_t failed = 0;
  MeanSd cos_oi_w, act_oi, act_w;
  double pct_hit1 = 0.0;
  double pct_hit20 = 0.0;
};

struct GroupSummary {
  std::vector<GroupRow> rows;   // sorted by (k, mode, word)
  std::vector<GroupCell> cells; // sorted by (k, mode)
  std::size_t failed = 0;
};

/// Mean table activation of `word` over the group's neurons, in sorted-ref order.
inline double group_word_activation(const ActivationTable& t, const Objective& obj, std::size_t word) {
  double s = 0.0;
  for (const auto& n : obj.refs()) s += t.at(t.require(n), word);
  return s / double(obj.size());
}

inline GroupSummary summarize_groups(const std::vector<RunRecord>& records, const ActivationTable& table,
                                     const WordSpace& space, const std::vector<std::size_t>& targets,
                                     const std::vector<std::size_t>& ks, const std::vector<std::string>& modes) {
  GroupSummary s;
  std::set<std::tuple<std::size_t, std::string, std::size_t>> seen;
  std::map<std::pair<std::size_t, std::string>, std::size_t> failed_per_cell;
  for (const auto& r : records) {
    if (!r.origin.word) continue;
    check_record_model(r, table.model_hash());
    const auto cell = std::make_tuple(r.origin.k, r.origin.mode, *r.origin.word);
    if (!seen.insert(cell).second) {
      throw ContractError("duplicate group record for word " + std::to_string(*r.origin.word) + ", k=" +
                          std::to_string(r.origin.k) + ", mode " + r.origin.mode);
    }
    if (r.failed) {
      ++s.failed;
      ++failed_per_cell[{r.origin.k, r.origin.mode}];
      continue;
    }
    GroupRow row;
    row.word = *r.origin.word;
    row.k = r.origin.k;
    row.mode = r.origin.mode;
    std::span<const float> v(r.final_embedding.data(), space.dim());
    row.cos_oi_w = cosine(v, space.vector(row.word));
    row.act_oi = r.final_value;
    row.act_w = group_word_activation(table, r.objective, row.word);
    row.rank = rank_of(space, v, row.word);
    row.hit1 = row.rank == 1;
    row.hit20 = row.rank <= 20;
    s.rows.push_back(row);
  }

  std::vector<std::string> missing;
  for (auto k : ks)
    for (const auto& m : modes)
      for (auto w : targets)
        if (!seen.count({k, m, w})) missing.push_back("(word " + std::to_string(w) + ", k=" + std::to_string(k) + ", " + m + ")");
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " missing group cells:";
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) msg += " " + missing[i];
    if (missing.size() > 5) msg += " ...";
    throw ContractError(msg);
  }

  std::sort(s.rows.begin(), s.rows.end(), [](const GroupRow& a, const GroupRow& b) {
    return std::tie(a.k, a.mode, a.word) < std::tie(b.k, b.mode, b.word);
  });
  std::set<std::pair<std::size_t, std::string>> keys;
  for (const auto& [k, m, w] : seen) keys.insert({k, m});
  for (const auto& [k, m] : keys) {
    GroupCell c;
    c.k = k;
    c.mode = m;
    c.failed = failed_per_cell[{k, m}];
    std::vector<double> cs, ao, aw;
    double h1 = 0.0, h20 = 0.0;
    for (const auto& r : s.rows) {
      if (r.k != k || r.mode != m) continue;
      cs.push_back(r.cos_oi_w);
      ao.push_back(r.act_oi);
      aw.push_back(r.act_w);
      h1 += r.hit1;
      h20 += r.hit20;
    }
    c.n = cs.size();
    c.cos_oi_w = mean_sd(cs);
    c.act_oi = mean_sd(ao);
    c.act_w = mean_sd(aw);
    c.pct_hit1 = c.n ? 100.0 * h1 / double(c.n) : 0.0;
    c.pct_hit20 = c.n ? 100.0 * h20 / double(c.n) : 0.0;
    s.cells.push_back(c);
  }
  return s;
}

// ---- trends ---------------------------------------------------------------------------

struct TrendFit {
  double slope = 0.0;
  double intercept = 0.0;
  double t = 0.0;
  double p = 1.0;  // two-sided, normal approximation of the t statistic
  std::size_t n = 0;
};

/// Ordinary least squares of value on layer index.
inline TrendFit layer_trend(const std::vector<std::pair<double, double>>& points) {
  std::set<double> layers;
  for (const auto& [x, y] : points) layers.insert(x);
  if (layers.size() < 3) {
    throw ContractError("layer_trend needs at least 3 distinct layers, got " + std::to_string(layers.size()));
  }
  const double n = double(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) throw ContractError("layer_trend: zero variance in layer index");
  TrendFit f;
  f.n = points.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (f.intercept + f.slope * x);
    ssr += e * e;
  }
  const double se = std::sqrt(ssr / (n - 2.0) / sxx);
  if (se > 0.0) {
    f.t = f.slope / se;
  } else {
    f.t = f.slope == 0.0 ? 0.0 : std::copysign(INFINITY, f.slope);
  }
  f.p = std::erfc(std::abs(f.t) / std::sqrt(2.0));
  return f;
}

// ---- PCA ------------------------------------------------------------------------------

struct Pca2 {
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> explained{0.0, 0.0};  // shares of total variance
  std::array<std::vector<double>, 2> components;
  bool second_flagged = false;  // fewer than two non-negligible directions
};

/// Mean-centered 2-component PCA. Each component's largest-magnitude loading
/// is made positive (first one wins a tie).
inline Pca2 pca2(const std::vector<std::vector<double>>& points) {
  if (points.size() < 3) throw ContractError("pca2 needs at least 3 points");
  const std::size_t d = points.front().size();
  if (d < 2) throw ContractError("pca2 needs dimension >= 2");
  const std::size_t n = points.size();
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != d) throw ShapeError("pca2: ragged point set");
    for (std::size_t j = 0; j < d; ++j) X(i, j) = points[i][j];
  }
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  const Eigen::MatrixXd C = (X.transpose() * X) / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);  // ascending
  const double total = vals.sum();

  Pca2 out;
  out.coords.assign(n, {0.0, 0.0});
  const double tol = 1e-12 * std::max(total, 1e-300);
  for (int c = 0; c < 2; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - c;
    const double lambda = vals(col);
    out.components[c].assign(d, 0.0);
    if (total <= 0.0 || lambda <= tol) {
      if (c == 1) out.second_flagged = true;
      continue;
    }
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j)
      if (std::abs(v(j)) > std::abs(v(arg)) * (1.0 + 1e-12)) arg = j;
    if (v(arg) < 0) v = -v;
    out.explained[c] = lambda / total;
    for (std::size_t j = 0; j < d; ++j) out.components[c][j] = v(static_cast<Eigen::Index>(j));
    const Eigen::VectorXd proj = X * v;
    for (std::size_t i = 0; i < n; ++i) out.coords[i][c] = proj(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace textmax
