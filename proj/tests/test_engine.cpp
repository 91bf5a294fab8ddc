#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "textmax/engine.hpp"
#include "textmax/toy.hpp"

namespace textmax {
namespace {

const EncoderModel& toy() {
  static const EncoderModel m = generate_toy_model({});
  return m;
}

OptimConfig short_config(std::size_t steps = 20, double lr = 1.0) {
  OptimConfig c;
  c.steps = steps;
  c.learning_rate = lr;
  c.record_every = 5;
  return c;
}

ObjectiveFn quadratic(std::vector<float> center) {
  return [center](const Tensor& x) {
    double v = 0.0;
    std::vector<float> g(x.numel());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double diff = double(x[i]) - center[i];
      v -= diff * diff;
      g[i] = static_cast<float>(-2.0 * diff);
    }
    return Evaluation{v, Tensor(x.shape(), std::move(g))};
  };
}

TEST(InitInput, ZeroScaleGivesZeroRows) {
  auto in = init_input(toy(), 2, 7, 0.0);
  for (auto x : in.middle().data()) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(in.middle().shape(), (Shape{2, 64}));
}

TEST(InitInput, SeedDeterminism) {
  auto a = init_input(toy(), 1, 7, 0.1);
  auto b = init_input(toy(), 1, 7, 0.1);
  auto c = init_input(toy(), 1, 8, 0.1);
  EXPECT_TRUE(bitwise_equal(a.middle(), b.middle()));
  EXPECT_FALSE(bitwise_equal(a.middle(), c.middle()));
  EXPECT_EQ(a.cls_row()[62], 1.0f);
  EXPECT_EQ(a.sep_row()[63], 1.0f);
}

TEST(InitInput, SampleMomentsMatchScale) {
  auto in = init_input(toy(), 10, 3, 0.1);
  double s = 0.0, s2 = 0.0;
  for (auto x : in.middle().data()) {
    s += x;
    s2 += double(x) * x;
  }
  const double n = double(in.middle().numel());
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.1, 0.01);
}

TEST(InitInput, PositionOverflow) { EXPECT_THROW(init_input(toy(), 15, 0, 0.1), ContractError); }

TEST(ObjectiveTest, GroupInvariants) {
  EXPECT_THROW(Objective::group({}), ContractError);
  EXPECT_THROW(Objective::group({{0, 1, 3}, {0, 1, 3}}), ContractError);
  auto g = Objective::group({{1, 1, 4}, {0, 1, 9}});
  EXPECT_EQ(g.refs().front(), (NeuronRef{0, 1, 9}));
  EXPECT_EQ(g.key(), "G2:L0P1C9+L1P1C4");
  EXPECT_EQ(Objective::single({1, 1, 2}).key(), "L1P1C2");
}

TEST(Evaluate, GroupOfOneEqualsSingle) {
  auto in = init_input(toy(), 1, 1, 1.0);
  for (std::size_t c = 0; c < 32; c += 7) {
    const NeuronRef n{1, 1, c};
    EXPECT_EQ(evaluate(toy(), in, Objective::group({n})), evaluate(toy(), in, Objective::single(n)));
    EXPECT_EQ(evaluate(toy(), in, Objective::single(n)), neuron_activation(toy(), in, n));
  }
}

TEST(Evaluate, GroupIsMeanOfMembers) {
  auto in = init_input(toy(), 1, 2, 1.0);
  std::vector<NeuronRef> refs{{0, 1, 3}, {1, 1, 0}, {1, 1, 17}, {0, 0, 5}, {1, 2, 31}};
  double mean = 0.0;
  for (const auto& r : refs) mean += neuron_activation(toy(), in, r);
  mean /= double(refs.size());
  EXPECT_NEAR(evaluate(toy(), in, Objective::group(refs)), mean, 1e-6);
}

TEST(Evaluate, PermutationInvariantBitwise) {
  auto in = init_input(toy(), 1, 3, 1.0);
  std::vector<NeuronRef> refs;
  for (std::size_t c = 0; c < 32; c += 3) refs.push_back({c % 2, 1, c});
  const double base = evaluate(toy(), in, Objective::group(refs));
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(refs.begin(), refs.end(), rng);
    EXPECT_EQ(evaluate(toy(), in, Objective::group(refs)), base);
  }
}

TEST(Evaluate, InvalidRefs) {
  auto in = init_input(toy(), 1, 3, 1.0);
  EXPECT_THROW(evaluate(toy(), in, Objective::single({2, 1, 0})), ContractError);
  EXPECT_THROW(evaluate(toy(), in, Objective::single({0, 3, 0})), ContractError);
}

TEST(Ascend, QuadraticSurrogateConverges) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto c = testing::uniform(rng, {1, 16}).cast<float>();
    auto x0 = testing::uniform(rng, {1, 16}).cast<float>();
    OptimConfig cfg = short_config(200, 0.1);
    auto r = ascend(x0, quadratic(c.vec()), cfg);
    ASSERT_FALSE(r.failed);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(r.final[i], c[i], 1e-3);
    EXPECT_NEAR(r.final_value, 0.0, 1e-6);
  }
}

TEST(Ascend, TrajectorySampling) {
  auto r = ascend(Tensor::zeros({1, 4}), quadratic({1, 1, 1, 1}), short_config(12, 0.1));
  std::vector<std::size_t> steps;
  for (const auto& [s, v] : r.trajectory) steps.push_back(s);
  EXPECT_EQ(steps, (std::vector<std::size_t>{0, 5, 10, 12}));
  EXPECT_EQ(r.trajectory.back().second, r.final_value);
}

TEST(Ascend, DivergenceAbortsWithFailedStep) {
  // f(x) = x^2 grows without bound; lr 1e39 overflows float on the first step.
  ObjectiveFn f = [](const Tensor& x) {
    return Evaluation{double(x[0]) * x[0], Tensor({1}, {2.0f * x[0]})};
  };
  auto r = ascend(Tensor({1}, {1.0f}), f, short_config(10, 1e39));
  EXPECT_TRUE(r.failed);
  EXPECT_EQ(r.failed_step, 1u);
  EXPECT_TRUE(std::isnan(r.trajectory.back().second));
}

TEST(Ascend, GreedyNeverDecreases) {
  ObjectiveFn wavy = [](const Tensor& x) {
    std::vector<float> g(x.numel());
    double v = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      v += std::sin(3.0 * x[i]) - 0.1 * x[i] * x[i];
      g[i] = static_cast<float>(3.0 * std::cos(3.0 * x[i]) - 0.2 * x[i]);
    }
    return Evaluation{v, Tensor(x.shape(), std::move(g))};
  };
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto x0 = testing::uniform(rng, {1, 8}).cast<float>();
    auto cfg = short_config(50, 5.0);
    cfg.accept_mode = AcceptMode::kGreedyAccept;
    auto r = ascend(x0, wavy, cfg);
    EXPECT_GE(r.final_value, r.initial_value);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
      EXPECT_GE(r.trajectory[i].second, r.trajectory[i - 1].second);
  }
}

TEST(Ascend, GreedyStopsWhenNoStepIsAcceptable) {
  auto cfg = short_config(50, 0.5);
  cfg.accept_mode = AcceptMode::kGreedyAccept;
  // The reported gradient points downhill, so every trial step decreases f.
  ObjectiveFn f = [](const Tensor& x) { return Evaluation{-double(x[0]), Tensor({1}, {1.0f})}; };
  auto r = ascend(Tensor({1}, {0.25f}), f, cfg);
  EXPECT_FALSE(r.failed);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.steps_taken, 0u);
  EXPECT_EQ(r.final_value, r.initial_value);
  EXPECT_EQ(r.final[0], 0.25f);
}

TEST(Maximize, NoOpAscent) {
  auto cfg = short_config(1, 0.0);
  auto rec = maximize(toy(), Objective::single({1, 1, 4}), cfg);
  EXPECT_TRUE(bitwise_equal(rec.initial_middle, rec.final_middle));
  EXPECT_EQ(rec.initial_value, rec.final_value);
  cfg.steps = 0;
  EXPECT_THROW(maximize(toy(), Objective::single({1, 1, 4}), cfg), ContractError);
}

TEST(Maximize, FinalValueMatchesFreshEvaluation) {
  for (auto mode : {AcceptMode::kVanilla, AcceptMode::kGreedyAccept}) {
    auto cfg = short_config(30, 1.0);
    cfg.accept_mode = mode;
    for (const auto& obj : {Objective::single({0, 1, 2}), Objective::group({{0, 1, 1}, {1, 1, 5}, {1, 1, 9}})}) {
      auto rec = maximize(toy(), obj, cfg);
      ASSERT_FALSE(rec.failed);
      auto in = RelaxedInput::from_middle(toy().spec(), rec.final_middle);
      EXPECT_NEAR(evaluate(toy(), in, obj), rec.final_value, 1e-6);
      EXPECT_GT(rec.final_value, rec.initial_value);
    }
  }
}

TEST(Maximize, SeedDeterminism) {
  auto cfg = short_config(25, 1.0);
  cfg.seed = 44;
  auto a = maximize(toy(), Objective::single({1, 1, 7}), cfg);
  auto b = maximize(toy(), Objective::single({1, 1, 7}), cfg);
  EXPECT_TRUE(bitwise_equal(a.final_middle, b.final_middle));
  EXPECT_EQ(a.final_embedding, b.final_embedding);
  EXPECT_EQ(a.trajectory, b.trajectory);
}

TEST(Maximize, ProjectsIntoComparisonSpace) {
  auto rec = maximize(toy(), Objective::single({1, 1, 7}), short_config(5, 1.0));
  auto want = embedding_projection(toy(), rec.final_middle.row(0));
  EXPECT_EQ(rec.final_embedding, want);
  auto full = toy().with_options({HookMode::kPreResidual, CompareSpace::kFullInput});
  auto rec2 = maximize(full, Objective::single({1, 1, 7}), short_config(5, 1.0));
  auto e = embed(full, RelaxedInput::from_middle(full.spec(), rec2.final_middle));
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(rec2.final_embedding[j], e.at(1, j));
}

TEST(Maximize, WordSeededGreedyDominatesWord) {
  const NeuronRef n{1, 1, 3};
  const std::size_t word = 10;
  auto cfg = short_config(30, 1.0);
  cfg.accept_mode = AcceptMode::kGreedyAccept;
  cfg.init_word = word;
  auto rec = maximize(toy(), Objective::single(n), cfg);
  const double word_act = neuron_activation(toy(), RelaxedInput::from_tokens(toy().spec(), std::vector<std::size_t>{word}), n);
  EXPECT_EQ(rec.initial_value, word_act);
  EXPECT_GE(rec.final_value, word_act);
}

TEST(Maximize, RegularizerHookIsApplied) {
  Regularizer reg{[](Graph<float>&, const Var<float>& mid) { return mul_scalar(sum(mul(mid, mid)), 1e3); }};
  auto plain = maximize(toy(), Objective::single({1, 1, 7}), short_config(1, 0.0));
  auto penalized = maximize(toy(), Objective::single({1, 1, 7}), short_config(1, 0.0), {}, reg);
  EXPECT_LT(penalized.initial_value, plain.initial_value);
}

TEST(Ratio, Definition) {
  RunRecord r;
  r.final_value = 4.0;
  EXPECT_EQ(*activation_potential_ratio(r, 4.0), 1.0);
  EXPECT_DOUBLE_EQ(*activation_potential_ratio(r, 1.0), 0.25);
  r.final_value = 0.0;
  EXPECT_FALSE(activation_potential_ratio(r, 1.0));
  r.final_value = 2.0;
  r.failed = true;
  EXPECT_FALSE(activation_potential_ratio(r, 1.0));
}

TEST(Sweep, SingleValueGrid) {
  auto s = sweep_learning_rate({0.3}, [](double) { return std::optional<double>(1.0); });
  EXPECT_EQ(s.recommended, 0.3);
}

TEST(Sweep, QuadraticRecommendsConvergingRate) {
  // x <- x + lr * (-2)(x - c) converges only for lr < 1.
  const std::vector<float> c{1.5f, -0.5f, 2.0f};
  auto run = [&](double lr) -> std::optional<double> {
    auto r = ascend(Tensor::zeros({1, 3}), quadratic(c), short_config(100, lr));
    if (r.failed) return std::nullopt;
    return r.final_value;
  };
  auto s = sweep_learning_rate(parse_lr_grid("1e-2..1e2"), run);
  EXPECT_EQ(s.points.size(), 5u);
  EXPECT_LT(s.recommended, 1.0);
  EXPECT_NEAR(run(s.recommended).value(), 0.0, 0.05 * 7.0);
  EXPECT_TRUE(s.points.back().failed || s.points.back().value < -1.0);
}

TEST(Sweep, GridParsing) {
  EXPECT_EQ(parse_lr_grid("1e-2..1e2"), (std::vector<double>{0.01, 0.1, 1.0, 10.0, 100.0}));
  EXPECT_EQ(parse_lr_grid("0.5,2"), (std::vector<double>{0.5, 2.0}));
  EXPECT_THROW(parse_lr_grid("abc"), ContractError);
  EXPECT_THROW(parse_lr_grid("-1"), ContractError);
}

}  // namespace
}  // namespace textmax
