#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "textmax/hash.hpp"
#include "textmax/model.hpp"
#include "textmax/toy.hpp"

namespace textmax {
namespace {

EncoderModel random_model(std::size_t layers = 2, std::uint64_t seed = 3) {
  ToyConfig c;
  c.layers = layers;
  c.seed = seed;
  return generate_toy_model(c);
}

EncoderModel edited(const EncoderModel& m, ModelSpec spec, const std::function<void(Weights<float>&)>& edit) {
  Weights<float> w = m.weights();
  edit(w);
  return EncoderModel(spec, std::move(w), m.vocab(), m.options());
}

Tensor random_middle(std::size_t l, std::size_t V, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<float> v(l * V);
  for (auto& x : v) x = static_cast<float>(n(rng));
  return Tensor({l, V}, std::move(v));
}

std::string weight_bytes_hash(const EncoderModel& m) {
  Fnv1a h;
  m.weights().for_each([&](const std::string&, const Tensor& t) { h.add_bytes(t.data().data(), t.numel() * 4); });
  return h.hex();
}

TEST(Spec, Validation) {
  ModelSpec s;
  EXPECT_NO_THROW(s.validate());
  s.num_heads = 5;
  EXPECT_THROW(s.validate(), ContractError);
  s = ModelSpec{};
  s.sep_id = s.cls_id;
  EXPECT_THROW(s.validate(), ContractError);
  s = ModelSpec{};
  s.max_positions = 2;
  EXPECT_THROW(s.validate(), ContractError);
  s = ModelSpec{};
  s.num_layers = 0;
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(Embed, OneHotSelectsRowWhenExtrasDisabled) {
  auto base = random_model();
  auto spec = base.spec();
  spec.embedding_layernorm = false;
  auto m = edited(base, spec, [&](Weights<float>& w) {
    w.position_embedding = Tensor::zeros(w.position_embedding.shape());
    w.segment_embedding = Tensor::zeros(w.segment_embedding.shape());
  });
  const std::size_t word = 17;
  auto e = embed(m, RelaxedInput::from_tokens(spec, std::vector<std::size_t>{word}));
  const auto want = m.weights().token_embedding.row(word);
  for (std::size_t j = 0; j < spec.model_dim; ++j) EXPECT_EQ(e.at(1, j), want[j]);
}

TEST(Embed, ZeroRowIsPositionPlusSegment) {
  auto base = random_model();
  auto spec = base.spec();
  spec.embedding_layernorm = false;
  auto m = edited(base, spec, [](Weights<float>&) {});
  auto e = embed(m, RelaxedInput::from_middle(spec, Tensor::zeros({1, spec.vocab_size})));
  const auto& w = m.weights();
  for (std::size_t j = 0; j < spec.model_dim; ++j)
    EXPECT_FLOAT_EQ(e.at(1, j), w.position_embedding.at(1, j) + w.segment_embedding.at(0, j));
}

TEST(Embed, RelaxedRowMatchesDirectSummation) {
  auto m = random_model();
  const auto& s = m.spec();
  const auto& w = m.weights();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto mid = random_middle(2, s.vocab_size, seed);
    auto input = RelaxedInput::from_middle(s, mid);
    auto e = embed(m, input);
    auto rows = input.rows();
    for (std::size_t p = 0; p < 4; ++p) {
      std::vector<double> x(s.model_dim);
      for (std::size_t j = 0; j < s.model_dim; ++j) {
        double acc = 0.0;
        for (std::size_t v = 0; v < s.vocab_size; ++v) acc += double(rows.at(p, v)) * w.token_embedding.at(v, j);
        x[j] = acc + w.position_embedding.at(p, j) + w.segment_embedding.at(0, j);
      }
      double mu = 0.0, var = 0.0;
      for (auto xi : x) mu += xi;
      mu /= double(x.size());
      for (auto xi : x) var += (xi - mu) * (xi - mu);
      var /= double(x.size());
      for (std::size_t j = 0; j < s.model_dim; ++j) {
        const double want = (x[j] - mu) / std::sqrt(var + s.layernorm_eps) * w.emb_ln_gain[j] + w.emb_ln_bias[j];
        EXPECT_NEAR(e.at(p, j), want, 1e-5);
      }
    }
  }
}

TEST(Embed, PositionOverflow) {
  auto m = random_model();
  auto mid = Tensor::zeros({m.spec().max_positions - 1, m.spec().vocab_size});
  EXPECT_THROW(embed(m, RelaxedInput::from_middle(m.spec(), mid)), ContractError);
}

TEST(Hooks, ShapeContract) {
  auto m = random_model(3);
  for (std::size_t l : {1, 2, 5}) {
    auto h = forward_hooks(m, RelaxedInput::from_middle(m.spec(), random_middle(l, 64, l)));
    EXPECT_EQ(h.shape(), (Shape{3, l + 2, 32}));
  }
}

TEST(Hooks, ZeroOutputProjectionGivesBias) {
  auto base = random_model(1);
  auto m = edited(base, base.spec(), [](Weights<float>& w) {
    w.layers[0].ffn_out_w = Tensor::zeros(w.layers[0].ffn_out_w.shape());
  });
  auto h = forward_hooks(m, RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 9)));
  const auto& b = m.weights().layers[0].ffn_out_b;
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(h.at(p, j), b[j]);
}

// Attention contributes nothing (W_o = 0), so the post-attention hidden state
// is LN(x) with x the embedded input, computed here by hand.
std::vector<double> hand_post_attention(const EncoderModel& m, const RelaxedInput& in, std::size_t p) {
  auto e = embed(m, in);
  const auto& w = m.weights().layers[0];
  const std::size_t d = m.spec().model_dim;
  double mu = 0.0, var = 0.0;
  for (std::size_t j = 0; j < d; ++j) mu += e.at(p, j);
  mu /= double(d);
  for (std::size_t j = 0; j < d; ++j) var += (e.at(p, j) - mu) * (e.at(p, j) - mu);
  var /= double(d);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = (e.at(p, j) - mu) / std::sqrt(var + m.spec().layernorm_eps) * w.attn_ln_gain[j] + w.attn_ln_bias[j];
  return out;
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

TEST(Hooks, IdentityFfnExposesPostAttentionState) {
  ToyConfig c;
  c.layers = 1;
  c.ffn = 32;
  auto base = generate_toy_model(c);
  const std::size_t d = 32;
  std::vector<float> eye(d * d, 0.0f);
  for (std::size_t j = 0; j < d; ++j) eye[j * d + j] = 1.0f;
  auto m = edited(base, base.spec(), [&](Weights<float>& w) {
    auto& lw = w.layers[0];
    lw.attn_o_w = Tensor::zeros({d, d});
    lw.attn_o_b = Tensor::zeros({d});
    lw.ffn_in_w = Tensor({d, d}, eye);
    lw.ffn_in_b = Tensor::zeros({d});
    lw.ffn_out_w = Tensor({d, d}, eye);
    lw.ffn_out_b = Tensor::zeros({d});
  });
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 4));
  auto h = forward_hooks(m, in);
  for (std::size_t p = 0; p < 3; ++p) {
    auto want = hand_post_attention(m, in, p);
    // the FFN nonlinearity still sits between the two identities
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(h[p * d + j], gelu_ref(want[j]), 1e-5);
  }
}

TEST(Hooks, AntisymmetricFfnReturnsPostAttentionState) {
  ToyConfig c;
  c.layers = 1;
  auto base = generate_toy_model(c);
  const std::size_t d = 32, f = 64;
  std::vector<float> in_w(d * f, 0.0f), out_w(f * d, 0.0f);
  for (std::size_t j = 0; j < d; ++j) {
    in_w[j * f + j] = 1.0f;
    in_w[j * f + d + j] = -1.0f;
    out_w[j * d + j] = 1.0f;
    out_w[(d + j) * d + j] = -1.0f;
  }
  auto m = edited(base, base.spec(), [&](Weights<float>& w) {
    auto& lw = w.layers[0];
    lw.attn_o_w = Tensor::zeros({d, d});
    lw.attn_o_b = Tensor::zeros({d});
    lw.ffn_in_w = Tensor({d, f}, in_w);
    lw.ffn_in_b = Tensor::zeros({f});
    lw.ffn_out_w = Tensor({f, d}, out_w);
    lw.ffn_out_b = Tensor::zeros({d});
  });
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 5));
  auto h = forward_hooks(m, in);
  for (std::size_t p = 0; p < 3; ++p) {
    auto want = hand_post_attention(m, in, p);
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(h[p * d + j], want[j], 1e-5);
  }
}

TEST(Hooks, PostResidualModeReadsTheSum) {
  auto m = random_model();
  auto post = m.with_options({HookMode::kPostResidual, CompareSpace::kTokenOnly});
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 6));
  Graph<float> g;
  Encoder<float> enc(m);
  auto trace = enc.run(g, enc.embed(g, input_nodes(g, in, false).rows), 2);
  auto h = forward_hooks(post, in);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& r = trace.layers[l].residual.value();
    for (std::size_t i = 0; i < r.numel(); ++i) EXPECT_EQ(h[l * r.numel() + i], r[i]);
  }
  EXPECT_EQ(m.hash(), post.hash());
}

TEST(Hooks, FaithfulUnderPerturbation) {
  auto m = random_model();
  Encoder<double> enc(m);
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 7));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<double> delta(3 * 32);
  for (auto& x : delta) x = n(rng);
  HookPerturbation<double> pert{0, BasicTensor<double>({3, 32}, delta)};

  Graph<double> fresh;
  auto perturbed = enc.run(fresh, enc.embed(fresh, input_nodes(fresh, in, false).rows), 2, &pert);

  // Re-run only the downstream part by hand from the unperturbed trace.
  Graph<double> g;
  auto clean = enc.run(g, enc.embed(g, input_nodes(g, in, false).rows), 2);
  const auto& w = enc.weights().layers[0];
  auto hook0 = add(clean.layers[0].ffn_output, g.constant(pert.delta));
  auto out0 = layernorm_lastdim(add(clean.layers[0].attn_hidden, hook0), g.constant(w.ffn_ln_gain),
                                g.constant(w.ffn_ln_bias), m.spec().layernorm_eps);
  auto down = enc.layer(g, 1, out0);

  for (std::size_t i = 0; i < 96; ++i) {
    EXPECT_NEAR(perturbed.hooks[0].value()[i], hook0.value()[i], 1e-5);
    EXPECT_NEAR(perturbed.hooks[1].value()[i], down.ffn_output.value()[i], 1e-5);
  }
}

TEST(Hooks, RelaxationConsistentWithDiscretePath) {
  auto m = random_model();
  for (std::size_t w = 0; w < m.spec().vocab_size; ++w) {
    const std::vector<std::size_t> ids{w};
    auto relaxed = forward_hooks(m, RelaxedInput::from_tokens(m.spec(), ids));
    auto discrete = forward_hooks_tokens(m, ids);
    EXPECT_TRUE(bitwise_equal(relaxed, discrete)) << "word " << w;
  }
}

TEST(Hooks, WeightsUnchangedByForwardAndBackward) {
  auto m = random_model();
  const auto before = weight_bytes_hash(m);
  Encoder<float> enc(m);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, s));
    forward_hooks(m, in);
    Graph<float> g;
    auto nodes = input_nodes(g, in, true);
    auto tr = enc.run(g, enc.embed(g, nodes.rows), 2);
    g.backward(sum(tr.hooks[1]));
  }
  EXPECT_EQ(weight_bytes_hash(m), before);
}

TEST(NeuronActivation, ReadsForwardHooksExactly) {
  auto m = random_model();
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(1, 64, 11));
  auto h = forward_hooks(m, in);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t c : {0, 13, 31}) {
        const float a = neuron_activation(m, in, {l, p, c});
        EXPECT_EQ(a, h[(l * 3 + p) * 32 + c]);
        EXPECT_EQ(a, neuron_activation(m, in, {l, p, c}));
      }
  EXPECT_THROW(neuron_activation(m, in, {2, 1, 0}), ContractError);
  EXPECT_THROW(neuron_activation(m, in, {0, 3, 0}), ContractError);
  EXPECT_THROW(neuron_activation(m, in, {0, 1, 32}), ContractError);
}

TEST(NeuronActivation, PlantedWordIsTheUniqueMaximizer) {
  ToyConfig c;
  c.planting = Planting::kWords;
  auto m = generate_toy_model(c);
  const std::size_t V = m.spec().vocab_size;
  for (std::size_t j = 0; j < 32; ++j) {
    const NeuronRef n{1, 1, j};
    const float own = neuron_activation(m, RelaxedInput::from_tokens(m.spec(), std::vector<std::size_t>{j}), n);
    for (std::size_t w = 0; w < V; ++w) {
      if (w == j) continue;
      EXPECT_GT(own, neuron_activation(m, RelaxedInput::from_tokens(m.spec(), std::vector<std::size_t>{w}), n))
          << "neuron " << j << " word " << w;
    }
  }
}

TEST(Projection, Examples) {
  auto m = random_model();
  const auto& E = m.weights().token_embedding;
  std::vector<float> row(64, 0.0f);
  auto zero = embedding_projection(m, row);
  for (auto x : zero) EXPECT_EQ(x, 0.0f);
  row[5] = 1.0f;
  auto one = embedding_projection(m, row);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(one[j], E.at(5, j));
  row[5] = 0.5f;
  row[9] = 0.5f;
  auto mid = embedding_projection(m, row);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(mid[j], 0.5 * (E.at(5, j) + E.at(9, j)), 1e-6);
  EXPECT_THROW(embedding_projection(m, std::vector<float>(3)), ShapeError);
}

TEST(RelaxedInputTest, FrozenRowsAreOneHots) {
  auto m = random_model();
  auto in = RelaxedInput::from_middle(m.spec(), random_middle(2, 64, 1));
  auto rows = in.rows();
  EXPECT_EQ(rows.shape(), (Shape{4, 64}));
  for (std::size_t v = 0; v < 64; ++v) {
    EXPECT_EQ(rows.at(0, v), v == m.spec().cls_id ? 1.0f : 0.0f);
    EXPECT_EQ(rows.at(3, v), v == m.spec().sep_id ? 1.0f : 0.0f);
  }
  EXPECT_THROW(in.with_middle(Tensor::zeros({1, 64})), ShapeError);
}

}  // namespace
}  // namespace textmax
