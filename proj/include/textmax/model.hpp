#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "textmax/errors.hpp"
#include "textmax/graph.hpp"
#include "textmax/hash.hpp"
#include "textmax/tensor.hpp"

namespace textmax {

/// Where a layer's neurons are read: the final FFN projection before or after
/// the residual addition. Both sit before that layer's closing layer norm.
enum class HookMode { kPreResidual, kPostResidual };

/// Space in which optimized inputs are compared with vocabulary words.
enum class CompareSpace { kTokenOnly, kFullInput };

inline const char* to_string(HookMode m) {
  return m == HookMode::kPreResidual ? "pre_residual" : "post_residual";
}
inline const char* to_string(CompareSpace s) {
  return s == CompareSpace::kTokenOnly ? "token_only" : "full_input";
}
inline HookMode parse_hook_mode(std::string_view s) {
  if (s == "pre_residual") return HookMode::kPreResidual;
  if (s == "post_residual") return HookMode::kPostResidual;
  throw ContractError("unknown hook_mode '" + std::string(s) + "'");
}
inline CompareSpace parse_compare_space(std::string_view s) {
  if (s == "token_only") return CompareSpace::kTokenOnly;
  if (s == "full_input") return CompareSpace::kFullInput;
  throw ContractError("unknown compare_space '" + std::string(s) + "'");
}

struct ModelSpec {
  std::size_t vocab_size = 64;
  std::size_t model_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t max_positions = 16;
  double layernorm_eps = 1e-12;
  std::size_t cls_id = 62;
  std::size_t sep_id = 63;
  // Diagnostic models switch this off to expose the raw embedding sum.
  bool embedding_layernorm = true;

  std::size_t head_dim() const { return model_dim / num_heads; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ContractError("model spec: " + m); };
    if (vocab_size == 0 || model_dim == 0 || ffn_dim == 0) fail("dimensions must be positive");
    if (num_heads == 0 || model_dim % num_heads != 0) fail("model_dim must be divisible by num_heads");
    if (cls_id == sep_id) fail("cls_id and sep_id must differ");
    if (cls_id >= vocab_size || sep_id >= vocab_size) fail("cls_id/sep_id out of vocabulary");
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (max_positions < 3) fail("max_positions must be >= 3");
    if (!(layernorm_eps >= 0.0)) fail("layernorm_eps must be >= 0");
  }

  bool operator==(const ModelSpec&) const = default;
};

struct ModelOptions {
  HookMode hook_mode = HookMode::kPreResidual;
  CompareSpace compare_space = CompareSpace::kTokenOnly;
};

template <class T>
struct LayerWeights {
  BasicTensor<T> attn_q_w, attn_q_b, attn_k_w, attn_k_b, attn_v_w, attn_v_b, attn_o_w, attn_o_b;
  BasicTensor<T> attn_ln_gain, attn_ln_bias;
  BasicTensor<T> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  BasicTensor<T> ffn_ln_gain, ffn_ln_bias;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "attn_q.weight", self.attn_q_w);
    f(prefix + "attn_q.bias", self.attn_q_b);
    f(prefix + "attn_k.weight", self.attn_k_w);
    f(prefix + "attn_k.bias", self.attn_k_b);
    f(prefix + "attn_v.weight", self.attn_v_w);
    f(prefix + "attn_v.bias", self.attn_v_b);
    f(prefix + "attn_o.weight", self.attn_o_w);
    f(prefix + "attn_o.bias", self.attn_o_b);
    f(prefix + "attn_ln_gain", self.attn_ln_gain);
    f(prefix + "attn_ln_bias", self.attn_ln_bias);
    f(prefix + "ffn_in.weight", self.ffn_in_w);
    f(prefix + "ffn_in.bias", self.ffn_in_b);
    f(prefix + "ffn_out.weight", self.ffn_out_w);
    f(prefix + "ffn_out.bias", self.ffn_out_b);
    f(prefix + "ffn_ln_gain", self.ffn_ln_gain);
    f(prefix + "ffn_ln_bias", self.ffn_ln_bias);
  }
};

/// All encoder parameters. Projection weights are stored (in, out) so that a
/// row-vector hidden state multiplies on the left.
template <class T>
struct Weights {
  BasicTensor<T> token_embedding, position_embedding, segment_embedding;
  BasicTensor<T> emb_ln_gain, emb_ln_bias;
  std::vector<LayerWeights<T>> layers;

  /// Visits every tensor with its file name, in canonical order.
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }
  template <class F>
  void for_each(F&& f) { visit(*this, f); }

  template <class U>
  Weights<U> cast() const {
    Weights<U> out;
    out.layers.resize(layers.size());
    std::vector<BasicTensor<U>*> dst;
    out.for_each([&](const std::string&, BasicTensor<U>& t) { dst.push_back(&t); });
    std::size_t i = 0;
    for_each([&](const std::string&, const BasicTensor<T>& t) { *dst[i++] = t.template cast<U>(); });
    return out;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding);
    f(std::string("position_embedding"), self.position_embedding);
    f(std::string("segment_embedding"), self.segment_embedding);
    f(std::string("emb_ln_gain"), self.emb_ln_gain);
    f(std::string("emb_ln_bias"), self.emb_ln_bias);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerWeights<T>::visit(self.layers[l], "layer" + std::to_string(l) + ".", f);
    }
  }
};

/// Expected (name, shape) of every tensor for a spec, in canonical order.
inline std::vector<std::pair<std::string, Shape>> expected_tensor_shapes(const ModelSpec& s) {
  const std::size_t V = s.vocab_size, d = s.model_dim, f = s.ffn_dim;
  std::vector<std::pair<std::string, Shape>> out = {
      {"token_embedding", {V, d}}, {"position_embedding", {s.max_positions, d}},
      {"segment_embedding", {2, d}}, {"emb_ln_gain", {d}}, {"emb_ln_bias", {d}},
  };
  for (std::size_t l = 0; l < s.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* proj : {"attn_q", "attn_k", "attn_v", "attn_o"}) {
      out.push_back({p + proj + ".weight", {d, d}});
      out.push_back({p + proj + ".bias", {d}});
    }
    out.push_back({p + "attn_ln_gain", {d}});
    out.push_back({p + "attn_ln_bias", {d}});
    out.push_back({p + "ffn_in.weight", {d, f}});
    out.push_back({p + "ffn_in.bias", {f}});
    out.push_back({p + "ffn_out.weight", {f, d}});
    out.push_back({p + "ffn_out.bias", {d}});
    out.push_back({p + "ffn_ln_gain", {d}});
    out.push_back({p + "ffn_ln_bias", {d}});
  }
  return out;
}

/// Frozen encoder: weights, architecture and the vocabulary they index.
class EncoderModel {
 public:
  EncoderModel(ModelSpec spec, Weights<float> weights, std::vector<std::string> vocab,
               ModelOptions options = {})
      : spec_(spec), options_(options) {
    spec_.validate();
    if (weights.layers.size() != spec_.num_layers) {
      throw FormatError(FormatError::Kind::kShapeMismatch, "layers",
                        "weights carry " + std::to_string(weights.layers.size()) +
                            " layers, spec says " + std::to_string(spec_.num_layers));
    }
    const auto expected = expected_tensor_shapes(spec_);
    std::size_t i = 0;
    weights.for_each([&](const std::string& name, const Tensor& t) {
      if (t.shape() != expected[i].second) {
        throw FormatError(FormatError::Kind::kShapeMismatch, name,
                          "tensor '" + name + "' has shape " + to_string(t.shape()) +
                              ", expected " + to_string(expected[i].second));
      }
      ++i;
    });
    if (vocab.size() != spec_.vocab_size) {
      throw FormatError(FormatError::Kind::kShapeMismatch, "vocab",
                        "vocabulary has " + std::to_string(vocab.size()) + " entries, spec says " +
                            std::to_string(spec_.vocab_size));
    }
    weights_ = std::make_shared<const Weights<float>>(std::move(weights));
    vocab_ = std::make_shared<const std::vector<std::string>>(std::move(vocab));
    hash_ = compute_hash();
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ModelOptions& options() const noexcept { return options_; }
  const Weights<float>& weights() const noexcept { return *weights_; }
  const std::vector<std::string>& vocab() const noexcept { return *vocab_; }
  const std::string& token(std::size_t id) const { return vocab_->at(id); }

  std::optional<std::size_t> find_token(std::string_view tok) const {
    auto it = std::find(vocab_->begin(), vocab_->end(), tok);
    if (it == vocab_->end()) return std::nullopt;
    return static_cast<std::size_t>(it - vocab_->begin());
  }

  /// Content hash over spec, vocabulary and tensor bytes (not over options).
  const std::string& hash() const noexcept { return hash_; }

  /// Same weights, different hook/comparison options. Weights are shared.
  EncoderModel with_options(ModelOptions options) const {
    EncoderModel m(*this);
    m.options_ = options;
    return m;
  }

  template <class T>
  std::shared_ptr<const Weights<T>> weights_as() const {
    if constexpr (std::is_same_v<T, float>) {
      return weights_;
    } else {
      return std::make_shared<const Weights<T>>(weights_->template cast<T>());
    }
  }

 private:
  std::string compute_hash() const {
    Fnv1a h;
    h.add_string(spec_string());
    for (const auto& tok : *vocab_) {
      h.add_string(tok);
      h.add_string("\n");
    }
    weights_->for_each([&](const std::string& name, const Tensor& t) {
      h.add_string(name);
      h.add_bytes(t.data().data(), t.numel() * sizeof(float));
    });
    return h.hex();
  }

  std::string spec_string() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", spec_.layernorm_eps);
    return std::to_string(spec_.vocab_size) + "," + std::to_string(spec_.model_dim) + "," +
           std::to_string(spec_.num_layers) + "," + std::to_string(spec_.num_heads) + "," +
           std::to_string(spec_.ffn_dim) + "," + std::to_string(spec_.max_positions) + "," + buf +
           "," + std::to_string(spec_.cls_id) + "," + std::to_string(spec_.sep_id) + "," +
           (spec_.embedding_layernorm ? "1" : "0");
  }

  ModelSpec spec_;
  ModelOptions options_;
  std::shared_ptr<const Weights<float>> weights_;
  std::shared_ptr<const std::vector<std::string>> vocab_;
  std::string hash_;
};

/// Address of one hook-point scalar.
struct NeuronRef {
  std::size_t layer = 0;
  std::size_t position = 1;
  std::size_t channel = 0;

  auto operator<=>(const NeuronRef&) const = default;

  void validate(const ModelSpec& spec, std::size_t input_length) const {
    if (layer >= spec.num_layers || position >= input_length + 2 || channel >= spec.model_dim) {
      throw ContractError("neuron (layer " + std::to_string(layer) + ", position " +
                          std::to_string(position) + ", channel " + std::to_string(channel) +
                          ") out of range");
    }
  }
};

inline std::string to_string(const NeuronRef& n) {
  return "L" + std::to_string(n.layer) + "P" + std::to_string(n.position) + "C" +
         std::to_string(n.channel);
}

inline Tensor one_hot_row(std::size_t vocab, std::size_t id) {
  std::vector<float> row(vocab, 0.0f);
  row.at(id) = 1.0f;
  return Tensor::adopt({1, vocab}, std::move(row));
}

/// The optimizable sequence: one-hot [CLS], l continuous vocabulary-space rows, one-hot [SEP].
class RelaxedInput {
 public:
  /// `middle` is l x V. Frozen rows are built from ModelSpec::cls_id and sep_id.
  static RelaxedInput from_middle(const ModelSpec& spec, const Tensor& middle) {
    if (middle.rank() != 2 || middle.dim(1) != spec.vocab_size) {
      throw ShapeError("relaxed input rows " + to_string(middle.shape()) + " vs vocabulary " +
                       std::to_string(spec.vocab_size));
    }
    return RelaxedInput(one_hot_row(spec.vocab_size, spec.cls_id), middle,
                        one_hot_row(spec.vocab_size, spec.sep_id));
  }

  static RelaxedInput from_tokens(const ModelSpec& spec, std::span<const std::size_t> words) {
    if (words.empty()) throw ContractError("relaxed input needs at least one word");
    std::vector<float> rows(words.size() * spec.vocab_size, 0.0f);
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i] >= spec.vocab_size) throw ContractError("word id out of vocabulary");
      rows[i * spec.vocab_size + words[i]] = 1.0f;
    }
    return from_middle(spec, Tensor::adopt({words.size(), spec.vocab_size}, std::move(rows)));
  }

  /// Same frozen rows, new middle rows.
  RelaxedInput with_middle(const Tensor& middle) const {
    if (middle.shape() != middle_.shape()) {
      throw ShapeError("relaxed input rows " + to_string(middle.shape()) + " vs " +
                       to_string(middle_.shape()));
    }
    return RelaxedInput(cls_, middle, sep_);
  }

  std::size_t length() const noexcept { return middle_.dim(0); }
  std::size_t vocab() const noexcept { return middle_.dim(1); }
  const Tensor& cls_row() const noexcept { return cls_; }
  const Tensor& middle() const noexcept { return middle_; }
  const Tensor& sep_row() const noexcept { return sep_; }

  /// All (l+2) x V rows.
  Tensor rows() const {
    std::vector<float> out;
    out.reserve((length() + 2) * vocab());
    for (const Tensor* t : {&cls_, &middle_, &sep_}) out.insert(out.end(), t->data().begin(), t->data().end());
    return Tensor::adopt({length() + 2, vocab()}, std::move(out));
  }

 private:
  RelaxedInput(Tensor cls, Tensor middle, Tensor sep)
      : cls_(std::move(cls)), middle_(std::move(middle)), sep_(std::move(sep)) {}

  Tensor cls_, middle_, sep_;
};

template <class T>
struct LayerTrace {
  Var<T> attn_hidden;  // after attention residual + layer norm
  Var<T> ffn_output;   // final dense projection, pre-residual
  Var<T> residual;     // attn_hidden + ffn_output, before the closing layer norm
  Var<T> output;
};

template <class T>
struct EncoderTrace {
  Var<T> embedded;
  std::vector<LayerTrace<T>> layers;
  std::vector<Var<T>> hooks;  // one (n x d) hook per executed layer
};

/// Adds `delta` (n x d) to one layer's FFN output before anything reads it.
template <class T>
struct HookPerturbation {
  std::size_t layer = 0;
  BasicTensor<T> delta;
};

/// Builds the encoder's computation on a Graph with weights of precision T.
template <class T>
class Encoder {
 public:
  explicit Encoder(const EncoderModel& model)
      : spec_(model.spec()), options_(model.options()), weights_(model.weights_as<T>()) {}

  const ModelSpec& spec() const noexcept { return spec_; }
  const Weights<T>& weights() const noexcept { return *weights_; }

  /// Relaxed vocabulary rows (n x V) to embedding-layer output (n x d).
  Var<T> embed(Graph<T>& g, const Var<T>& rows, std::span<const std::size_t> segments = {}) const {
    return finish_embedding(g, matmul(rows, g.constant(weights_->token_embedding)), segments);
  }

  /// Discrete tokens, gathering embedding rows directly.
  Var<T> embed_tokens(Graph<T>& g, std::span<const std::size_t> ids,
                      std::span<const std::size_t> segments = {}) const {
    auto table = g.constant(weights_->token_embedding);
    std::vector<Var<T>> rows;
    for (auto id : ids) {
      if (id >= spec_.vocab_size) throw ContractError("token id out of vocabulary");
      rows.push_back(slice(table, 0, id, id + 1));
    }
    return finish_embedding(g, concat(std::span<const Var<T>>(rows), 0), segments);
  }

  /// One encoder layer. Post-LN BERT block.
  LayerTrace<T> layer(Graph<T>& g, std::size_t index, const Var<T>& hidden,
                      const BasicTensor<T>* delta = nullptr) const {
    const auto& w = weights_->layers.at(index);
    const std::size_t dh = spec_.head_dim();
    auto proj = [&](const Var<T>& x, const BasicTensor<T>& wt, const BasicTensor<T>& b) {
      return add(matmul(x, g.constant(wt)), g.constant(b));
    };
    auto q = proj(hidden, w.attn_q_w, w.attn_q_b);
    auto k = proj(hidden, w.attn_k_w, w.attn_k_b);
    auto v = proj(hidden, w.attn_v_w, w.attn_v_b);
    const double scale = 1.0 / std::sqrt(double(dh));
    std::vector<Var<T>> heads;
    for (std::size_t h = 0; h < spec_.num_heads; ++h) {
      auto qh = slice(q, 1, h * dh, (h + 1) * dh);
      auto kh = slice(k, 1, h * dh, (h + 1) * dh);
      auto vh = slice(v, 1, h * dh, (h + 1) * dh);
      auto probs = softmax_lastdim(mul_scalar(matmul(qh, transpose2d(kh)), scale));
      heads.push_back(matmul(probs, vh));
    }
    auto context = spec_.num_heads == 1 ? heads.front() : concat(std::span<const Var<T>>(heads), 1);
    auto attn = proj(context, w.attn_o_w, w.attn_o_b);
    auto attn_hidden = layernorm_lastdim(add(hidden, attn), g.constant(w.attn_ln_gain),
                                         g.constant(w.attn_ln_bias), spec_.layernorm_eps);
    auto inner = gelu(proj(attn_hidden, w.ffn_in_w, w.ffn_in_b));
    auto ffn = proj(inner, w.ffn_out_w, w.ffn_out_b);
    if (delta) ffn = add(ffn, g.constant(*delta));
    auto residual = add(attn_hidden, ffn);
    auto out = layernorm_lastdim(residual, g.constant(w.ffn_ln_gain), g.constant(w.ffn_ln_bias),
                                 spec_.layernorm_eps);
    return {attn_hidden, ffn, residual, out};
  }

  Var<T> hook_of(const LayerTrace<T>& t) const {
    return options_.hook_mode == HookMode::kPreResidual ? t.ffn_output : t.residual;
  }

  /// Runs the first `num_layers` layers from an embedded sequence.
  EncoderTrace<T> run(Graph<T>& g, const Var<T>& embedded, std::size_t num_layers,
                      const HookPerturbation<T>* perturb = nullptr) const {
    if (num_layers > spec_.num_layers) throw ContractError("run: more layers than the model has");
    EncoderTrace<T> trace;
    trace.embedded = embedded;
    Var<T> hidden = embedded;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const BasicTensor<T>* delta = (perturb && perturb->layer == l) ? &perturb->delta : nullptr;
      auto t = layer(g, l, hidden, delta);
      trace.hooks.push_back(hook_of(t));
      trace.layers.push_back(t);
      hidden = t.output;
    }
    return trace;
  }

 private:
  Var<T> finish_embedding(Graph<T>& g, const Var<T>& token_part,
                          std::span<const std::size_t> segments) const {
    const std::size_t n = token_part.shape()[0];
    if (n > spec_.max_positions) {
      throw ContractError("position overflow: sequence of " + std::to_string(n) +
                          " exceeds max_positions " + std::to_string(spec_.max_positions));
    }
    const std::size_t d = spec_.model_dim;
    std::vector<T> seg(n * d);
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t s = segments.empty() ? 0 : segments[p];
      if (s > 1) throw ContractError("segment id must be 0 or 1");
      const auto src = weights_->segment_embedding.row(s);
      std::copy(src.begin(), src.end(), seg.begin() + p * d);
    }
    if (!segments.empty() && segments.size() != n) throw ContractError("segment ids length mismatch");
    auto pos = slice(g.constant(weights_->position_embedding), 0, 0, n);
    auto x = add(add(token_part, pos), g.constant(BasicTensor<T>::adopt({n, d}, std::move(seg))));
    if (!spec_.embedding_layernorm) return x;
    return layernorm_lastdim(x, g.constant(weights_->emb_ln_gain), g.constant(weights_->emb_ln_bias),
                             spec_.layernorm_eps);
  }

  ModelSpec spec_;
  ModelOptions options_;
  std::shared_ptr<const Weights<T>> weights_;
};

/// Rows of a relaxed input as graph nodes: frozen [CLS]/[SEP] constants around
/// the middle rows, which become a differentiable leaf when requested.
template <class T>
struct InputNodes {
  Var<T> rows;
  Var<T> middle;
};

template <class T>
InputNodes<T> input_nodes(Graph<T>& g, const RelaxedInput& in, bool differentiable) {
  auto cls = g.constant(in.cls_row().template cast<T>());
  auto mid = differentiable ? g.leaf(in.middle().template cast<T>())
                            : g.constant(in.middle().template cast<T>());
  auto sep = g.constant(in.sep_row().template cast<T>());
  return {concat({cls, mid, sep}, 0), mid};
}

// ---- float convenience API --------------------------------------------------

/// Embedding-layer output, (l+2) x d.
inline Tensor embed(const EncoderModel& model, const RelaxedInput& input,
                    std::span<const std::size_t> segments = {}) {
  Graph<float> g;
  Encoder<float> enc(model);
  return enc.embed(g, input_nodes(g, input, false).rows, segments).value();
}

inline Tensor stack_hooks(const std::vector<Var<float>>& hooks) {
  std::vector<float> out;
  const auto& s = hooks.front().shape();
  for (const auto& h : hooks) out.insert(out.end(), h.value().data().begin(), h.value().data().end());
  return Tensor::adopt({hooks.size(), s[0], s[1]}, std::move(out));
}

/// Hook activations of every layer, shape (L, l+2, d).
inline Tensor forward_hooks(const EncoderModel& model, const RelaxedInput& input) {
  Graph<float> g;
  Encoder<float> enc(model);
  auto x = enc.embed(g, input_nodes(g, input, false).rows);
  return stack_hooks(enc.run(g, x, model.spec().num_layers).hooks);
}

/// Discrete-token path: [CLS] words [SEP] without a relaxed one-hot matmul.
inline Tensor forward_hooks_tokens(const EncoderModel& model, std::span<const std::size_t> words) {
  Graph<float> g;
  Encoder<float> enc(model);
  std::vector<std::size_t> ids{model.spec().cls_id};
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(model.spec().sep_id);
  auto x = enc.embed_tokens(g, ids);
  return stack_hooks(enc.run(g, x, model.spec().num_layers).hooks);
}

inline float neuron_activation(const EncoderModel& model, const RelaxedInput& input,
                               const NeuronRef& n) {
  n.validate(model.spec(), input.length());
  Graph<float> g;
  Encoder<float> enc(model);
  auto x = enc.embed(g, input_nodes(g, input, false).rows);
  auto trace = enc.run(g, x, n.layer + 1);
  return trace.hooks[n.layer].value().at(n.position, n.channel);
}

/// relaxed_row . token_embedding, accumulated like matmul so one-hot rows
/// reproduce embedding rows exactly.
inline std::vector<float> embedding_projection(const EncoderModel& model, std::span<const float> row) {
  const auto& E = model.weights().token_embedding;
  const std::size_t V = model.spec().vocab_size, d = model.spec().model_dim;
  if (row.size() != V) throw ShapeError("embedding_projection: row of " + std::to_string(row.size()) +
                                        " vs vocabulary " + std::to_string(V));
  std::vector<double> acc(d, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const double x = row[v];
    const auto e = E.row(v);
    for (std::size_t j = 0; j < d; ++j) acc[j] += x * static_cast<double>(e[j]);
  }
  return {acc.begin(), acc.end()};
}

/// The vector a middle row is compared in: its token-embedding projection, or
/// the full embedding-layer output at that position (model option).
inline std::vector<float> comparison_vector(const EncoderModel& model, const RelaxedInput& input,
                                            std::size_t row = 0) {
  if (row >= input.length()) throw ContractError("comparison_vector: row out of range");
  if (model.options().compare_space == CompareSpace::kTokenOnly) {
    return embedding_projection(model, input.middle().row(row));
  }
  const auto e = embed(model, input);
  const auto r = e.row(row + 1);
  return {r.begin(), r.end()};
}

}  // namespace textmax
