#include <gtest/gtest.h>

#include <random>

#include "textmax/analytics.hpp"
#include "textmax/toy.hpp"
#include "support.hpp"

namespace textmax {
namespace {

const EncoderModel& toy() {
  static const EncoderModel m = generate_toy_model({});
  return m;
}

const ActivationTable& toy_table() {
  static const ActivationTable t = scan_vocab(toy());
  return t;
}

TEST(Stats, MeanAndPopulationSd) {
  auto s = mean_sd({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_EQ(s.mean, 5.0);
  EXPECT_EQ(s.sd, 2.0);
  EXPECT_EQ(s.n, 8u);
  auto one = mean_sd({3.5});
  EXPECT_EQ(one.sd, 0.0);
  EXPECT_EQ(mean_sd({}).n, 0u);
}

TEST(Stats, Magnitudes) {
  auto s = magnitude_stats({{3, 4}, {0, 0}, {6, 8}});
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt(50.0 / 3.0));
  EXPECT_EQ(l2_norm(std::vector<float>{1, 2, 2}), 3.0);
}

TEST(Trend, MatchesNormalEquations) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<double, double>> pts;
    const double a = noise(rng), b = noise(rng);
    for (int layer = 0; layer < 12; ++layer)
      for (int rep = 0; rep < 5; ++rep) pts.push_back({double(layer), a + b * layer + noise(rng)});
    auto got = layer_trend(pts);
    auto want = testing::normal_equations(pts);
    EXPECT_NEAR(got.slope, want.slope, 1e-8);
    EXPECT_NEAR(got.intercept, want.intercept, 1e-8);
    EXPECT_NEAR(got.t, want.t, 1e-8 * std::max(1.0, std::abs(want.t)));
    EXPECT_NEAR(got.p, want.p, 1e-8);
    EXPECT_EQ(got.n, 60u);
  }
}

TEST(Trend, ExactLineAndConstant) {
  std::vector<std::pair<double, double>> line, flat;
  for (int l = 0; l < 6; ++l) {
    line.push_back({double(l), 1.0 + 2.0 * l});
    flat.push_back({double(l), 4.0});
  }
  auto f = layer_trend(line);
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
  EXPECT_TRUE(std::isinf(f.t));
  EXPECT_EQ(f.p, 0.0);
  auto c = layer_trend(flat);
  EXPECT_EQ(c.slope, 0.0);
  EXPECT_EQ(c.t, 0.0);
  EXPECT_EQ(c.p, 1.0);
}

TEST(Trend, NeedsThreeLayers) {
  EXPECT_THROW(layer_trend({{0, 1}, {1, 2}, {1, 3}, {0, 4}}), ContractError);
  EXPECT_NO_THROW(layer_trend({{0, 1}, {1, 2}, {2, 3}}));
}

TEST(Pca, MatchesJacobiOracle) {
  const std::vector<std::vector<double>> X{
      {2.5, 2.4, 0.5}, {0.5, 0.7, -1.0}, {2.2, 2.9, 0.3}, {1.9, 2.2, 1.1}, {3.1, 3.0, -0.4}};
  const auto want = testing::pca_oracle(X);
  const auto got = pca2(X);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(got.explained[c], want.explained[c], 1e-10);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got.components[c][j], want.components[c][j], 1e-9);
    for (std::size_t i = 0; i < X.size(); ++i) EXPECT_NEAR(got.coords[i][c], want.coords[i][c], 1e-9);
  }
  EXPECT_FALSE(got.second_flagged);
}

TEST(Pca, CollinearPointsFlagSecondComponent) {
  std::vector<std::vector<double>> line;
  for (int i = 0; i < 6; ++i) line.push_back({1.0 * i, 2.0 * i, -1.0 * i});
  auto p = pca2(line);
  EXPECT_NEAR(p.explained[0], 1.0, 1e-12);
  EXPECT_TRUE(p.second_flagged);
  EXPECT_EQ(p.explained[1], 0.0);
  for (const auto& c : p.coords) EXPECT_EQ(c[1], 0.0);
}

TEST(Pca, IsotropicCloudSplitsVarianceEvenly) {
  std::vector<std::vector<double>> square{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  auto p = pca2(square);
  EXPECT_NEAR(p.explained[0], 0.5, 1e-12);
  EXPECT_NEAR(p.explained[1], 0.5, 1e-12);
}

TEST(Pca, InvariantToPermutationAndTranslation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({3 * g(rng), g(rng), 0.3 * g(rng), g(rng)});
  auto base = pca2(pts);
  auto shifted = pts;
  for (auto& r : shifted)
    for (auto& x : r) x += 100.0;
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<double>> permuted;
  for (auto i : perm) permuted.push_back(pts[i]);
  auto s = pca2(shifted);
  auto q = pca2(permuted);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(s.explained[c], base.explained[c], 1e-9);
    EXPECT_NEAR(q.explained[c], base.explained[c], 1e-12);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_NEAR(s.coords[i][c], base.coords[i][c], 1e-9);
      EXPECT_NEAR(q.coords[i][c], base.coords[perm[i]][c], 1e-9);
    }
  }
}

RunRecord record_for(const Objective& obj, std::vector<float> embedding, double final_value) {
  RunRecord r;
  r.objective = obj;
  r.final_embedding = std::move(embedding);
  r.final_value = final_value;
  r.initial_value = 0.0;
  r.model_hash = toy().hash();
  return r;
}

TEST(Single, RowsAndAggregates) {
  const auto& t = toy_table();
  WordSpace space(toy());
  std::vector<RunRecord> recs;
  // Neuron 0 lands exactly on its best word; neuron 1 lands on a different word.
  const NeuronRef n0 = t.ref(0), n1 = t.ref(1);
  const std::size_t w0 = t.argmax(0), w1 = t.argmax(1);
  std::size_t other = (w1 + 1) % 60;
  auto v1 = space.vector(other);
  recs.push_back(record_for(Objective::single(n1), {v1.begin(), v1.end()}, 2.0 * t.amax(1)));
  auto v0 = space.vector(w0);
  std::vector<float> scaled(v0.begin(), v0.end());
  for (auto& x : scaled) x *= 2.0f;
  recs.push_back(record_for(Objective::single(n0), scaled, t.amax(0)));
  auto failed = record_for(Objective::single(t.ref(2)), {}, NAN);
  failed.failed = true;
  recs.push_back(failed);

  auto s = summarize_single(recs, t, space);
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_EQ(s.rows[0].neuron, n0);
  EXPECT_TRUE(s.rows[0].coincide);
  EXPECT_NEAR(s.rows[0].cos_closest, 1.0, 1e-6);
  EXPECT_NEAR(s.rows[0].magnitude, 2.0 * s.rows[0].word_magnitude, 1e-5);
  EXPECT_FALSE(s.rows[1].coincide);
  EXPECT_EQ(s.rows[1].closest_word, other);
  EXPECT_DOUBLE_EQ(s.coincide_pct, 50.0);
  if (t.amax(0) > 0 && t.amax(1) > 0) {
    EXPECT_DOUBLE_EQ(*s.rows[0].ratio, 1.0);
    EXPECT_DOUBLE_EQ(*s.rows[1].ratio, 0.5);
    EXPECT_DOUBLE_EQ(s.ratio.mean, 0.75);
  }

  recs[0].model_hash = "0000";
  EXPECT_THROW(summarize_single(recs, t, space), FormatError);
}

TEST(Groups, MissingAndDuplicateCells) {
  const auto& t = toy_table();
  WordSpace space(toy());
  auto make = [&](std::size_t word, std::size_t k, const std::string& mode) {
    auto refs = top_k_neurons(t, word, k, parse_importance_mode(mode));
    auto v = space.vector(word);
    auto r = record_for(Objective::group(refs), {v.begin(), v.end()}, 1.0);
    r.origin = {word, k, mode};
    return r;
  };
  std::vector<RunRecord> recs{make(3, 2, "absolute"), make(4, 2, "absolute")};
  try {
    summarize_groups(recs, t, space, {3, 4, 5}, {2}, {"absolute", "relative"});
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("4 missing"), std::string::npos) << e.what();
  }
  auto ok = summarize_groups(recs, t, space, {3, 4}, {2}, {"absolute"});
  ASSERT_EQ(ok.cells.size(), 1u);
  EXPECT_EQ(ok.cells[0].n, 2u);
  EXPECT_EQ(ok.cells[0].pct_hit1, 100.0);
  EXPECT_NEAR(ok.cells[0].cos_oi_w.mean, 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(ok.rows[0].act_w, group_word_activation(t, recs[0].objective, 3));
  recs.push_back(make(3, 2, "absolute"));
  EXPECT_THROW(summarize_groups(recs, t, space, {3, 4}, {2}, {"absolute"}), ContractError);
}

TEST(Groups, Hit20NeverBelowHit1) {
  const auto& t = toy_table();
  WordSpace space(toy());
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g;
  std::vector<RunRecord> recs;
  for (std::size_t w = 0; w < 30; ++w) {
    auto refs = top_k_neurons(t, w, 5, ImportanceMode::kRelative);
    auto v = space.vector(w);
    std::vector<float> e(v.begin(), v.end());
    for (auto& x : e) x += 0.5f * g(rng);
    auto r = record_for(Objective::group(refs), e, 0.0);
    r.origin = {w, 5, "relative"};
    recs.push_back(r);
  }
  auto s = summarize_groups(recs, t, space, {}, {5}, {"relative"});
  for (const auto& row : s.rows) {
    EXPECT_GE(row.rank, 1u);
    EXPECT_EQ(row.hit1, row.rank == 1);
    if (row.hit1) EXPECT_TRUE(row.hit20);
  }
  EXPECT_GE(s.cells[0].pct_hit20, s.cells[0].pct_hit1);
}

}  // namespace
}  // namespace textmax
