#pragma once

// Activation maximization over relaxed inputs: gradient ascent on the middle
// rows with weights and the [CLS]/[SEP] rows frozen.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "textmax/graph.hpp"
#include "textmax/model.hpp"

namespace textmax {

enum class AcceptMode { kVanilla, kGreedyAccept };

inline const char* to_string(AcceptMode m) {
  return m == AcceptMode::kVanilla ? "vanilla" : "greedy_accept";
}

inline AcceptMode parse_accept_mode(std::string_view s) {
  if (s == "vanilla") return AcceptMode::kVanilla;
  if (s == "greedy_accept" || s == "greedy") return AcceptMode::kGreedyAccept;
  throw ContractError("unknown accept mode '" + std::string(s) + "'");
}

struct OptimConfig {
  std::size_t steps = 5000;
  double learning_rate = 100.0;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  std::size_t length = 1;
  AcceptMode accept_mode = AcceptMode::kVanilla;
  std::size_t record_every = 50;
  // Start every middle row at this word's one-hot instead of Gaussian noise.
  std::optional<std::size_t> init_word;
  bool checked = true;

  void validate() const {
    if (steps < 1) throw ContractError("steps must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ContractError("learning_rate must be finite and >= 0");
    }
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ContractError("init_scale must be >= 0");
    if (length < 1) throw ContractError("input length must be >= 1");
    if (record_every < 1) throw ContractError("record_every must be >= 1");
  }
};

/// A single neuron, or the mean over a duplicate-free neuron group.
class Objective {
 public:
  enum class Kind { kSingle, kGroup };

  static Objective single(const NeuronRef& n) { return Objective(Kind::kSingle, {n}); }

  static Objective group(std::vector<NeuronRef> refs) {
    if (refs.empty()) throw ContractError("neuron group is empty");
    std::sort(refs.begin(), refs.end());
    if (std::adjacent_find(refs.begin(), refs.end()) != refs.end()) {
      throw ContractError("neuron group contains duplicates");
    }
    return Objective(Kind::kGroup, std::move(refs));
  }

  Kind kind() const noexcept { return kind_; }
  const std::vector<NeuronRef>& refs() const noexcept { return refs_; }
  std::size_t size() const noexcept { return refs_.size(); }
  std::size_t max_layer() const noexcept { return refs_.back().layer; }

  std::string key() const {
    if (kind_ == Kind::kSingle) return to_string(refs_.front());
    std::string out = "G" + std::to_string(refs_.size()) + ":";
    for (std::size_t i = 0; i < refs_.size(); ++i) out += (i ? "+" : "") + to_string(refs_[i]);
    return out;
  }

  void validate(const ModelSpec& spec, std::size_t length) const {
    for (const auto& r : refs_) r.validate(spec, length);
  }

 private:
  Objective(Kind k, std::vector<NeuronRef> refs) : kind_(k), refs_(std::move(refs)) {}

  Kind kind_;
  std::vector<NeuronRef> refs_;
};

/// Objective node: the picked hook scalars, concatenated in sorted-ref order and averaged.
template <class T>
Var<T> objective_node(Graph<T>& g, const Encoder<T>& enc, const Var<T>& rows, const Objective& obj) {
  const auto trace = enc.run(g, enc.embed(g, rows), obj.max_layer() + 1);
  const std::size_t d = enc.spec().model_dim;
  const std::size_t n = rows.shape()[0];
  std::vector<Var<T>> parts;
  std::size_t i = 0;
  const auto& refs = obj.refs();
  while (i < refs.size()) {
    const std::size_t layer = refs[i].layer;
    std::vector<std::size_t> idx;
    for (; i < refs.size() && refs[i].layer == layer; ++i) {
      if (refs[i].position >= n) throw ContractError("neuron position outside the input");
      idx.push_back(refs[i].position * d + refs[i].channel);
    }
    parts.push_back(pick(trace.hooks[layer], std::move(idx)));
  }
  auto picked = parts.size() == 1 ? parts.front() : concat(std::span<const Var<T>>(parts), 0);
  return mean(picked);
}

inline double evaluate(const EncoderModel& model, const RelaxedInput& input, const Objective& obj) {
  obj.validate(model.spec(), input.length());
  Graph<float> g(false);
  Encoder<float> enc(model);
  return objective_node(g, enc, input_nodes(g, input, false).rows, obj).value().item();
}

inline RelaxedInput init_input(const EncoderModel& model, std::size_t length, std::uint64_t seed,
                               double init_scale) {
  const auto& spec = model.spec();
  if (length < 1) throw ContractError("input length must be >= 1");
  if (length + 2 > spec.max_positions) {
    throw ContractError("position overflow: input of length " + std::to_string(length) +
                        " needs " + std::to_string(length + 2) + " positions, model has " +
                        std::to_string(spec.max_positions));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> mid(length * spec.vocab_size);
  for (auto& x : mid) x = static_cast<float>(init_scale * n(rng));
  return RelaxedInput::from_middle(spec, Tensor({length, spec.vocab_size}, std::move(mid)));
}

inline RelaxedInput word_input(const EncoderModel& model, std::size_t length, std::size_t word) {
  return RelaxedInput::from_tokens(model.spec(), std::vector<std::size_t>(length, word));
}

// ---- generic ascent ---------------------------------------------------------

/// Value and gradient of the objective at a middle-row tensor.
struct Evaluation {
  double value = 0.0;
  Tensor gradient;
};

using ObjectiveFn = std::function<Evaluation(const Tensor& middle)>;

struct AscentResult {
  Tensor initial;
  Tensor final;
  double initial_value = 0.0;
  double final_value = 0.0;
  std::vector<std::pair<std::size_t, double>> trajectory;
  bool failed = false;
  std::size_t failed_step = 0;
  bool stopped_early = false;
  std::size_t steps_taken = 0;
  std::string failure;
};

namespace detail {

inline std::optional<Tensor> step_from(const Tensor& x, const Tensor& grad, double lr) {
  std::vector<float> next(x.numel());
  const auto px = x.data();
  const auto pg = grad.data();
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] = static_cast<float>(double(px[i]) + lr * double(pg[i]));
    if (!std::isfinite(next[i])) return std::nullopt;
  }
  return Tensor::adopt(x.shape(), std::move(next));
}

inline bool usable(const Evaluation& e) { return std::isfinite(e.value) && e.gradient.all_finite(); }

}  // namespace detail

inline constexpr int kMaxHalvings = 20;

/// x <- x + lr * grad for `steps` iterations. Vanilla applies every step;
/// greedy-accept halves a step that would decrease the objective, up to 20
/// times, and stops when none is acceptable.
inline AscentResult ascend(const Tensor& x0, const ObjectiveFn& f, const OptimConfig& cfg) {
  cfg.validate();
  AscentResult r;
  r.initial = x0;
  r.final = x0;
  auto fail = [&](std::size_t step, std::string why) {
    r.failed = true;
    r.failed_step = step;
    r.failure = std::move(why);
    r.trajectory.emplace_back(step, std::nan(""));
    return r;
  };

  Evaluation cur;
  try {
    cur = f(x0);
  } catch (const NumericError& e) {
    return fail(0, e.what());
  }
  if (!detail::usable(cur)) return fail(0, "non-finite objective or gradient");
  r.initial_value = r.final_value = cur.value;
  r.trajectory.emplace_back(0, cur.value);

  Tensor x = x0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    double lr = cfg.learning_rate;
    bool accepted = false;
    for (int attempt = 0; attempt <= (cfg.accept_mode == AcceptMode::kGreedyAccept ? kMaxHalvings : 0);
         ++attempt, lr *= 0.5) {
      auto next = detail::step_from(x, cur.gradient, lr);
      if (!next) {
        if (cfg.accept_mode == AcceptMode::kVanilla) return fail(step, "input overflow");
        continue;
      }
      Evaluation e;
      try {
        e = f(*next);
      } catch (const NumericError& err) {
        if (cfg.accept_mode == AcceptMode::kVanilla) return fail(step, err.what());
        continue;
      }
      if (!detail::usable(e)) {
        if (cfg.accept_mode == AcceptMode::kVanilla) return fail(step, "non-finite objective or gradient");
        continue;
      }
      if (cfg.accept_mode == AcceptMode::kGreedyAccept && e.value < cur.value) continue;
      x = std::move(*next);
      cur = std::move(e);
      accepted = true;
      break;
    }
    if (!accepted) {
      r.stopped_early = true;
      if (r.trajectory.back().first != r.steps_taken) r.trajectory.emplace_back(r.steps_taken, cur.value);
      break;
    }
    r.steps_taken = step;
    if (step % cfg.record_every == 0 || step == cfg.steps) r.trajectory.emplace_back(step, cur.value);
  }
  r.final = x;
  r.final_value = cur.value;
  return r;
}

// ---- model runs --------------------------------------------------------------

/// Extension point for a penalty on the middle rows. Unused (empty) by default.
struct Regularizer {
  std::function<Var<float>(Graph<float>&, const Var<float>& middle)> penalty;
  explicit operator bool() const { return static_cast<bool>(penalty); }
};

/// Where a run's objective came from: a sampled neuron, or a word's top-k group.
struct RunOrigin {
  std::optional<std::size_t> word;
  std::size_t k = 0;
  std::string mode;  // "absolute" / "relative"; empty for single neurons
};

struct RunRecord {
  Objective objective = Objective::single({});
  RunOrigin origin;
  OptimConfig config;
  Tensor initial_middle;
  Tensor final_middle;
  std::vector<float> final_embedding;
  std::vector<std::pair<std::size_t, double>> trajectory;
  double initial_value = 0.0;
  double final_value = 0.0;
  bool failed = false;
  std::size_t failed_step = 0;
  bool stopped_early = false;
  std::size_t steps_taken = 0;
  double wall_ms = 0.0;
  std::string model_hash;

  std::string key() const {
    if (origin.word) {
      return "W" + std::to_string(*origin.word) + ":" + origin.mode + ":k" + std::to_string(origin.k);
    }
    return objective.key();
  }
};

inline ObjectiveFn model_objective(const EncoderModel& model, const RelaxedInput& frame, const Objective& obj,
                                   bool checked, const Regularizer& reg = {}) {
  auto enc = std::make_shared<Encoder<float>>(model);
  return [enc, frame, obj, checked, reg](const Tensor& middle) {
    Graph<float> g(checked);
    auto nodes = input_nodes(g, frame.with_middle(middle), true);
    auto root = objective_node(g, *enc, nodes.rows, obj);
    if (reg) root = add(root, mul_scalar(reg.penalty(g, nodes.middle), -1.0));
    auto grads = g.backward(root);
    return Evaluation{root.value().item(), grads.at(nodes.middle.id())};
  };
}

inline RunRecord maximize(const EncoderModel& model, const Objective& obj, const OptimConfig& cfg,
                          RunOrigin origin = {}, const Regularizer& reg = {}) {
  cfg.validate();
  obj.validate(model.spec(), cfg.length);
  const auto t0 = std::chrono::steady_clock::now();
  const RelaxedInput start = cfg.init_word ? word_input(model, cfg.length, *cfg.init_word)
                                           : init_input(model, cfg.length, cfg.seed, cfg.init_scale);
  auto res = ascend(start.middle(), model_objective(model, start, obj, cfg.checked, reg), cfg);

  RunRecord rec;
  rec.objective = obj;
  rec.origin = std::move(origin);
  rec.config = cfg;
  rec.initial_middle = res.initial;
  rec.final_middle = res.final;
  rec.trajectory = std::move(res.trajectory);
  rec.initial_value = res.initial_value;
  rec.final_value = res.final_value;
  rec.failed = res.failed;
  rec.failed_step = res.failed_step;
  rec.stopped_early = res.stopped_early;
  rec.steps_taken = res.steps_taken;
  rec.model_hash = model.hash();
  if (!rec.failed) {
    const auto fin = start.with_middle(res.final);
    for (std::size_t row = 0; row < cfg.length; ++row) {
      auto v = comparison_vector(model, fin, row);
      rec.final_embedding.insert(rec.final_embedding.end(), v.begin(), v.end());
    }
  }
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// word_best / final objective; undefined when the run failed or final <= 0.
inline std::optional<double> activation_potential_ratio(const RunRecord& rec, double word_best) {
  if (rec.failed || !(rec.final_value > 0.0)) return std::nullopt;
  return word_best / rec.final_value;
}

// ---- learning-rate sweep -----------------------------------------------------

struct SweepPoint {
  double learning_rate = 0.0;
  double value = 0.0;  // mean final objective over the probed objectives
  bool failed = false;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double recommended = 0.0;
};

inline std::vector<double> default_lr_grid() { return {1e-2, 1e-1, 1.0, 1e1, 1e2}; }

/// Parses "1e-2..1e2" (powers of ten) or a comma list.
inline std::vector<double> parse_lr_grid(const std::string& s) {
  std::vector<double> out;
  auto dots = s.find("..");
  auto num = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || !(v > 0.0)) throw ContractError("bad learning rate '" + t + "'");
    return v;
  };
  if (dots != std::string::npos) {
    const double lo = num(s.substr(0, dots)), hi = num(s.substr(dots + 2));
    const int a = static_cast<int>(std::lround(std::log10(lo))), b = static_cast<int>(std::lround(std::log10(hi)));
    if (a > b) throw ContractError("empty learning-rate range '" + s + "'");
    for (int e = a; e <= b; ++e) out.push_back(std::pow(10.0, e));
    return out;
  }
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(num(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

/// Runs `run(lr)` over the grid; recommends the smallest rate whose value is
/// within 5% of the best non-failed one.
inline SweepResult sweep_learning_rate(std::vector<double> grid,
                                       const std::function<std::optional<double>(double)>& run) {
  if (grid.empty()) throw ContractError("empty learning-rate grid");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  SweepResult out;
  std::optional<double> best;
  for (double lr : grid) {
    auto v = run(lr);
    SweepPoint p{lr, v.value_or(std::nan("")), !v || !std::isfinite(*v)};
    if (!p.failed && (!best || p.value > *best)) best = p.value;
    out.points.push_back(p);
  }
  if (!best) throw NumericError(0, "every learning rate in the sweep diverged");
  const double floor = *best - 0.05 * std::abs(*best);
  for (const auto& p : out.points) {
    if (!p.failed && p.value >= floor) {
      out.recommended = p.learning_rate;
      break;
    }
  }
  return out;
}

}  // namespace textmax
