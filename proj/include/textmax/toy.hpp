#pragma once

// Desk-scale encoders: random ones, and "planted" ones whose neurons provably
// encode known words, used as ground truth by the recovery tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "textmax/model.hpp"

namespace textmax {

enum class Planting { kNone, kWords, kGroups };

struct ToyConfig {
  std::size_t vocab = 64;
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  std::size_t max_positions = 16;
  std::uint64_t seed = 0;
  Planting planting = Planting::kNone;
  std::size_t group_k = 8;         // neurons per planted word (kGroups)
  std::size_t group_targets = 32;  // number of planted words (kGroups)
};

/// Vocabulary of a toy model: w0..w{V-5}, then [PAD] [UNK] [CLS] [SEP].
inline std::vector<std::string> toy_vocab(std::size_t vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 4 < vocab; ++i) out.push_back("w" + std::to_string(i));
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) out.push_back(s);
  return out;
}

inline std::size_t toy_word_count(const ToyConfig& c) { return c.vocab - 4; }

namespace detail {

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  Tensor tensor(Shape shape, double stddev) {
    std::vector<float> v(numel(shape));
    for (auto& x : v) x = static_cast<float>(stddev * dist_(rng_));
    return Tensor(std::move(shape), std::move(v));
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

inline Tensor with_rows(const Tensor& base, const std::vector<std::pair<std::size_t, std::vector<double>>>& rows) {
  std::vector<float> v = base.vec();
  const std::size_t cols = base.shape().back();
  for (const auto& [r, values] : rows)
    for (std::size_t j = 0; j < cols; ++j) v[r * cols + j] = static_cast<float>(values[j]);
  return Tensor(base.shape(), std::move(v));
}

inline std::vector<double> centered(std::span<const float> row) {
  std::vector<double> out(row.begin(), row.end());
  const double mu = std::accumulate(out.begin(), out.end(), 0.0) / double(out.size());
  for (auto& x : out) x -= mu;
  return out;
}

// Mutually orthogonal zero-mean rows of norm sqrt(d); needs count < d.
inline std::vector<std::vector<double>> centered_orthogonal_rows(Gaussian& g, std::size_t count, std::size_t d) {
  std::vector<std::vector<double>> basis;
  const Tensor raw = g.tensor({count, d}, 1.0);
  for (std::size_t r = 0; r < count; ++r) {
    auto v = centered(raw.row(r));
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
      }
    }
    double norm = 0.0;
    for (auto x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    basis.push_back(v);
  }
  for (auto& b : basis)
    for (auto& x : b) x *= std::sqrt(double(d));
  return basis;
}

}  // namespace detail

/// Which last-layer channels encode which planted word (kGroups). Balanced:
/// each word gets `group_k` distinct channels, loads differ by at most one.
inline std::map<std::size_t, std::vector<std::size_t>> planted_group_assignment(const ToyConfig& c) {
  std::mt19937_64 rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t targets = std::min(c.group_targets, toy_word_count(c));
  std::vector<std::size_t> load(c.dim, 0);
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (std::size_t w = 0; w < targets; ++w) {
    std::vector<std::size_t> order(c.dim);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return load[a] < load[b]; });
    std::vector<std::size_t> chosen(order.begin(), order.begin() + c.group_k);
    std::sort(chosen.begin(), chosen.end());
    for (auto ch : chosen) ++load[ch];
    out[w] = chosen;
  }
  return out;
}

inline EncoderModel generate_toy_model(const ToyConfig& c) {
  if (c.vocab < 5) throw ContractError("toy model needs vocab >= 5");
  ModelSpec spec;
  spec.vocab_size = c.vocab;
  spec.model_dim = c.dim;
  spec.num_layers = c.layers;
  spec.num_heads = c.heads;
  spec.ffn_dim = c.ffn;
  spec.max_positions = c.max_positions;
  spec.cls_id = c.vocab - 2;
  spec.sep_id = c.vocab - 1;
  spec.validate();
  const bool planted = c.planting != Planting::kNone;
  if (planted && c.ffn < 2 * c.dim) throw ContractError("planted models need ffn >= 2 * dim");
  if (c.planting == Planting::kGroups && (c.group_k == 0 || c.group_k > c.dim)) {
    throw ContractError("planted groups need 1 <= k <= dim");
  }

  const std::size_t V = c.vocab, d = c.dim, f = c.ffn;
  detail::Gaussian g(c.seed);
  Weights<float> w;
  w.token_embedding = g.tensor({V, d}, 1.0);
  const double side = planted ? 0.01 : 0.1;
  w.position_embedding = g.tensor({c.max_positions, d}, side);
  w.segment_embedding = g.tensor({2, d}, side);
  w.emb_ln_gain = Tensor::full({d}, 1.0f);
  w.emb_ln_bias = Tensor::zeros({d});

  if (planted) {
    std::vector<std::pair<std::size_t, std::vector<double>>> rows;
    for (std::size_t v = 0; v < V; ++v) rows.push_back({v, detail::centered(w.token_embedding.row(v))});
    if (c.planting == Planting::kGroups) {
      const std::size_t targets = std::min(c.group_targets, toy_word_count(c));
      if (targets < d) {
        auto ortho = detail::centered_orthogonal_rows(g, targets, d);
        for (std::size_t t = 0; t < targets; ++t) rows[t].second = ortho[t];
      }
    }
    w.token_embedding = detail::with_rows(w.token_embedding, rows);
  }

  const double sd = 1.0 / std::sqrt(double(d));
  const double sf = 1.0 / std::sqrt(double(f));
  for (std::size_t l = 0; l < c.layers; ++l) {
    LayerWeights<float> lw;
    lw.attn_q_w = g.tensor({d, d}, sd);
    lw.attn_q_b = g.tensor({d}, 0.02);
    lw.attn_k_w = g.tensor({d, d}, sd);
    lw.attn_k_b = g.tensor({d}, 0.02);
    lw.attn_v_w = g.tensor({d, d}, sd);
    lw.attn_v_b = g.tensor({d}, 0.02);
    lw.attn_o_w = g.tensor({d, d}, sd);
    lw.attn_o_b = g.tensor({d}, 0.02);
    lw.attn_ln_gain = Tensor::full({d}, 1.0f);
    lw.attn_ln_bias = Tensor::zeros({d});
    lw.ffn_in_w = g.tensor({d, f}, sd);
    lw.ffn_in_b = g.tensor({f}, 0.02);
    lw.ffn_out_w = g.tensor({f, d}, sf);
    lw.ffn_out_b = g.tensor({d}, 0.02);
    lw.ffn_ln_gain = Tensor::full({d}, 1.0f);
    lw.ffn_ln_bias = Tensor::zeros({d});
    if (planted) {
      // Attention contributes nothing, so positions do not mix; every layer
      // but the last passes its input through unchanged (up to layer norm).
      lw.attn_o_w = Tensor::zeros({d, d});
      lw.attn_o_b = Tensor::zeros({d});
      lw.ffn_out_w = Tensor::zeros({f, d});
      lw.ffn_out_b = Tensor::zeros({d});
      if (l + 1 == c.layers) {
        // gelu(z) - gelu(-z) == z makes the block linear: [I, -I] then [U; -U].
        std::vector<float> in(d * f, 0.0f);
        for (std::size_t j = 0; j < d; ++j) {
          in[j * f + j] = 1.0f;
          in[j * f + d + j] = -1.0f;
        }
        lw.ffn_in_w = Tensor({d, f}, std::move(in));
        lw.ffn_in_b = Tensor::zeros({f});
      }
    }
    w.layers.push_back(std::move(lw));
  }

  auto vocab = toy_vocab(V);
  if (!planted) return EncoderModel(spec, std::move(w), std::move(vocab));

  // Read directions: the hidden state each word produces at position 1 right
  // before the planted layer's FFN.
  const std::size_t last = c.layers - 1;
  std::vector<std::vector<double>> unit(toy_word_count(c));
  {
    EncoderModel probe(spec, w, vocab);
    Encoder<float> enc(probe);
    for (std::size_t word = 0; word < unit.size(); ++word) {
      Graph<float> gr(false);
      const std::size_t ids[] = {spec.cls_id, word, spec.sep_id};
      auto trace = enc.run(gr, enc.embed_tokens(gr, ids), c.layers);
      auto h = trace.layers[last].attn_hidden.value().row(1);
      double norm = 0.0;
      for (auto x : h) norm += double(x) * x;
      norm = std::sqrt(norm);
      unit[word].resize(d);
      for (std::size_t j = 0; j < d; ++j) unit[word][j] = h[j] / norm;
    }
  }

  std::vector<std::vector<double>> read(d, std::vector<double>(d, 0.0));  // read[channel]
  if (c.planting == Planting::kWords) {
    for (std::size_t ch = 0; ch < std::min(d, unit.size()); ++ch) read[ch] = unit[ch];
  } else {
    for (const auto& [word, channels] : planted_group_assignment(c))
      for (auto ch : channels)
        for (std::size_t j = 0; j < d; ++j) read[ch][j] += unit[word][j];
  }
  std::vector<float> out(f * d, 0.0f);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t ch = 0; ch < d; ++ch) {
      out[j * d + ch] = static_cast<float>(read[ch][j]);
      out[(d + j) * d + ch] = static_cast<float>(-read[ch][j]);
    }
  w.layers[last].ffn_out_w = Tensor({f, d}, std::move(out));
  return EncoderModel(spec, std::move(w), std::move(vocab));
}

}  // namespace textmax
