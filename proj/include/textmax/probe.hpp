#pragma once

// Brute-force vocabulary probes: one forward per word, per-neuron maxima,
// relative importance, top-k neuron groups and nearest-word search.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "textmax/hash.hpp"
#include "textmax/io.hpp"
#include "textmax/model.hpp"
#include "textmax/parallel.hpp"

namespace textmax {

enum class ImportanceMode { kAbsolute, kRelative };

inline const char* to_string(ImportanceMode m) { return m == ImportanceMode::kAbsolute ? "absolute" : "relative"; }

inline ImportanceMode parse_importance_mode(std::string_view s) {
  if (s == "absolute") return ImportanceMode::kAbsolute;
  if (s == "relative") return ImportanceMode::kRelative;
  throw ContractError("unknown importance mode '" + std::string(s) + "'");
}

/// Activations of every word at every (layer, channel) of a fixed position.
/// Neuron index = layer slot * d + channel, layer slots in ascending layer order.
class ActivationTable {
 public:
  ActivationTable() = default;
  ActivationTable(std::string model_hash, HookMode hook_mode, std::size_t position, std::vector<std::size_t> layers,
                  std::size_t dim, std::size_t vocab, std::vector<float> values)
      : model_hash_(std::move(model_hash)),
        hook_mode_(hook_mode),
        position_(position),
        layers_(std::move(layers)),
        dim_(dim),
        vocab_(vocab),
        values_(std::move(values)) {
    if (values_.size() != neurons() * vocab_) throw ShapeError("activation table payload size mismatch");
    amax_.resize(neurons());
    argmax_.resize(neurons());
    for (std::size_t i = 0; i < neurons(); ++i) {
      const float* row = values_.data() + i * vocab_;
      std::size_t best = 0;
      for (std::size_t w = 1; w < vocab_; ++w)
        if (row[w] > row[best]) best = w;
      amax_[i] = row[best];
      argmax_[i] = static_cast<std::uint32_t>(best);
    }
  }

  const std::string& model_hash() const noexcept { return model_hash_; }
  HookMode hook_mode() const noexcept { return hook_mode_; }
  std::size_t position() const noexcept { return position_; }
  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t neurons() const noexcept { return layers_.size() * dim_; }
  const std::vector<float>& values() const noexcept { return values_; }

  float at(std::size_t neuron, std::size_t word) const { return values_.at(neuron * vocab_ + word); }
  float amax(std::size_t neuron) const { return amax_.at(neuron); }
  std::size_t argmax(std::size_t neuron) const { return argmax_.at(neuron); }
  const std::vector<float>& amax_column() const noexcept { return amax_; }
  const std::vector<std::uint32_t>& argmax_column() const noexcept { return argmax_; }

  NeuronRef ref(std::size_t neuron) const { return {layers_.at(neuron / dim_), position_, neuron % dim_}; }

  std::optional<std::size_t> index_of(const NeuronRef& n) const {
    if (n.position != position_ || n.channel >= dim_) return std::nullopt;
    auto it = std::find(layers_.begin(), layers_.end(), n.layer);
    if (it == layers_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - layers_.begin()) * dim_ + n.channel;
  }

  std::size_t require(const NeuronRef& n) const {
    auto i = index_of(n);
    if (!i) throw ContractError("neuron " + to_string(n) + " is not in the activation table");
    return *i;
  }

  void check_model(const EncoderModel& m) const {
    if (m.hash() != model_hash_ || m.options().hook_mode != hook_mode_) {
      throw FormatError(FormatError::Kind::kHashMismatch, "model_hash",
                        "activation table was built for model " + model_hash_ + " (" + to_string(hook_mode_) +
                            "), not " + m.hash() + " (" + to_string(m.options().hook_mode) + ")");
    }
  }

  std::string content_hash() const {
    Fnv1a h;
    h.add_string(model_hash_ + "|" + to_string(hook_mode_) + "|" + std::to_string(position_) + "|" +
                 io::format_shape(layers_) + "|" + std::to_string(dim_) + "|" + std::to_string(vocab_) + "|");
    h.add_bytes(values_.data(), values_.size() * sizeof(float));
    return h.hex();
  }

  bool operator==(const ActivationTable& o) const {
    return model_hash_ == o.model_hash_ && hook_mode_ == o.hook_mode_ && position_ == o.position_ &&
           layers_ == o.layers_ && dim_ == o.dim_ && vocab_ == o.vocab_ &&
           io::encode_f32(values_) == io::encode_f32(o.values_);
  }

 private:
  std::string model_hash_;
  HookMode hook_mode_ = HookMode::kPreResidual;
  std::size_t position_ = 1;
  std::vector<std::size_t> layers_;
  std::size_t dim_ = 0, vocab_ = 0;
  std::vector<float> values_;
  std::vector<float> amax_;
  std::vector<std::uint32_t> argmax_;
};

inline std::vector<std::size_t> normalize_layers(const EncoderModel& model, std::vector<std::size_t> layers) {
  if (layers.empty()) {
    for (std::size_t l = 0; l < model.spec().num_layers; ++l) layers.push_back(l);
  }
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  if (layers.back() >= model.spec().num_layers) throw ContractError("layer out of range in scan");
  return layers;
}

/// One forward per word of [CLS] w [SEP] (relaxed one-hot rows, the same path
/// neuron_activation uses). Words are spread over `jobs` workers.
inline ActivationTable scan_vocab(const EncoderModel& model, std::size_t position = 1,
                                  std::vector<std::size_t> layers = {}, std::size_t jobs = 1) {
  const auto& spec = model.spec();
  if (position > 2) throw ContractError("probe position must address a 3-token input");
  layers = normalize_layers(model, std::move(layers));
  const std::size_t V = spec.vocab_size, d = spec.model_dim;
  const std::size_t neurons = layers.size() * d;
  std::vector<float> values(neurons * V);
  Encoder<float> enc(model);
  parallel_for(V, jobs, [&](std::size_t w) {
    Graph<float> g(false);
    const auto in = RelaxedInput::from_tokens(spec, std::vector<std::size_t>{w});
    const auto trace = enc.run(g, enc.embed(g, input_nodes(g, in, false).rows), layers.back() + 1);
    for (std::size_t s = 0; s < layers.size(); ++s) {
      const auto& h = trace.hooks[layers[s]].value();
      for (std::size_t c = 0; c < d; ++c) values[(s * d + c) * V + w] = h.at(position, c);
    }
  });
  return ActivationTable(model.hash(), model.options().hook_mode, position, std::move(layers), d, V,
                         std::move(values));
}

// ---- persistence -------------------------------------------------------------

inline void save_table(const std::filesystem::path& path, const ActivationTable& t,
                       const std::string& tool_version = "", const std::string& config_hash = "") {
  auto values = io::encode_f32(t.values());
  auto amax = io::encode_f32(t.amax_column());
  auto argmax = io::encode_u32(t.argmax_column());
  std::vector<unsigned char> payload;
  for (const auto* part : {&values, &amax, &argmax}) payload.insert(payload.end(), part->begin(), part->end());
  std::ostringstream head;
  head << "textmax-activation-table\n"
       << "format_version=1\n"
       << "tool_version=" << tool_version << "\n"
       << "config_hash=" << config_hash << "\n"
       << "model_hash=" << t.model_hash() << "\n"
       << "hook_mode=" << to_string(t.hook_mode()) << "\n"
       << "position=" << t.position() << "\n"
       << "layers=" << io::format_shape(t.layers()) << "\n"
       << "dim=" << t.dim() << "\n"
       << "vocab_size=" << t.vocab() << "\n"
       << "content_hash=" << t.content_hash() << "\n"
       << "payload_crc32=" << io::hex32(io::crc32(payload)) << "\n"
       << "[payload]\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const auto h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

inline ActivationTable load_table(const std::filesystem::path& path) {
  using Kind = FormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "textmax-activation-table") {
    throw FormatError(Kind::kMalformed, "magic", "'" + path.string() + "' is not an activation table");
  }
  io::KeyValues kv;
  bool saw_payload = false;
  while (std::getline(in, line)) {
    if (line == "[payload]") {
      saw_payload = true;
      break;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(Kind::kMalformed, "header", "bad header line '" + line + "'");
    kv.set(line.substr(0, eq), line.substr(eq + 1));
  }
  if (!saw_payload) throw FormatError(Kind::kMalformed, "payload", "missing [payload] section");
  if (kv.get_size("format_version") != 1) {
    throw FormatError(Kind::kUnknownVersion, "format_version", "unknown table format_version " + kv.get("format_version"));
  }
  const auto layers = io::parse_shape(kv.get("layers"));
  const std::size_t d = kv.get_size("dim"), V = kv.get_size("vocab_size");
  const std::size_t neurons = layers.size() * d;
  const auto payload = io::read_rest(in);
  if (payload.size() != (neurons * V + 2 * neurons) * 4 ||
      io::hex32(io::crc32(payload)) != kv.get("payload_crc32")) {
    throw FormatError(Kind::kBadChecksum, "payload", "activation table payload is corrupt");
  }
  std::span<const unsigned char> bytes(payload);
  ActivationTable t(kv.get("model_hash"), parse_hook_mode(kv.get("hook_mode")), kv.get_size("position"), layers, d,
                    V, io::decode_f32(bytes.subspan(0, neurons * V * 4)));
  if (io::encode_f32(t.amax_column()) != std::vector<unsigned char>(bytes.begin() + neurons * V * 4,
                                                                     bytes.begin() + (neurons * V + neurons) * 4) ||
      io::encode_u32(t.argmax_column()) !=
          std::vector<unsigned char>(bytes.begin() + (neurons * V + neurons) * 4, bytes.end())) {
    throw FormatError(Kind::kMalformed, "sidecar", "a^max/argmax sidecar disagrees with the table");
  }
  if (t.content_hash() != kv.get("content_hash")) {
    throw FormatError(Kind::kHashMismatch, "content_hash", "activation table content hash mismatch");
  }
  return t;
}

/// Cache file name for a (model, hook mode, position, layer set) scan.
inline std::string table_cache_name(const EncoderModel& model, std::size_t position,
                                    const std::vector<std::size_t>& layers) {
  return "table-" +
         fnv1a_hex(model.hash() + "|" + to_string(model.options().hook_mode) + "|" + std::to_string(position) +
                   "|" + io::format_shape(normalize_layers(model, layers))) +
         ".tmt";
}

/// Reuses a cached scan when one exists for the same key, else scans and stores it.
inline ActivationTable load_or_scan(const EncoderModel& model, std::size_t position, std::vector<std::size_t> layers,
                                    const std::filesystem::path& cache_dir, std::size_t jobs = 1,
                                    bool* cache_hit = nullptr) {
  const auto path = cache_dir / table_cache_name(model, position, layers);
  if (std::filesystem::exists(path)) {
    try {
      auto t = load_table(path);
      t.check_model(model);
      if (t.position() == position && t.layers() == normalize_layers(model, layers)) {
        if (cache_hit) *cache_hit = true;
        return t;
      }
    } catch (const FormatError&) {
      // stale or corrupt cache entry: rescan below
    }
  }
  if (cache_hit) *cache_hit = false;
  auto t = scan_vocab(model, position, std::move(layers), jobs);
  std::filesystem::create_directories(cache_dir);
  save_table(path, t);
  return t;
}

// ---- importance ---------------------------------------------------------------

/// Number of divisions relative_activation has performed (instrumentation).
inline std::atomic<std::uint64_t>& relative_division_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

/// a_abs / a_max, or nullopt ("nonpositive-max") when a_max <= 0. No division
/// happens in that case.
inline std::optional<double> relative_activation(const ActivationTable& t, std::size_t word, std::size_t neuron) {
  const float amax = t.amax(neuron);
  if (!(amax > 0.0f)) return std::nullopt;
  relative_division_counter().fetch_add(1, std::memory_order_relaxed);
  return double(t.at(neuron, word)) / double(amax);
}

inline bool eligible(const ActivationTable& t, std::size_t neuron, ImportanceMode mode) {
  return mode == ImportanceMode::kAbsolute || t.amax(neuron) > 0.0f;
}

inline std::size_t eligible_count(const ActivationTable& t, ImportanceMode mode) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.neurons(); ++i) n += eligible(t, i, mode);
  return n;
}

/// The k neurons ranked highest for `word`; ties go to the lower (layer, channel).
inline std::vector<NeuronRef> top_k_neurons(const ActivationTable& t, std::size_t word, std::size_t k,
                                            ImportanceMode mode) {
  if (word >= t.vocab()) throw ContractError("word id out of vocabulary");
  if (k < 1) throw ContractError("k must be >= 1");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < t.neurons(); ++i) {
    if (mode == ImportanceMode::kAbsolute) {
      scored.emplace_back(double(t.at(i, word)), i);
    } else if (auto r = relative_activation(t, word, i)) {
      scored.emplace_back(*r, i);
    }
  }
  if (k > scored.size()) {
    throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(scored.size()) +
                        " eligible neurons (" + to_string(mode) + " mode)");
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<NeuronRef> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(t.ref(scored[i].second));
  return out;
}

// ---- comparison space -----------------------------------------------------------

inline double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw ShapeError("cosine: lengths " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * v[i];
    nu += double(u[i]) * u[i];
    nv += double(v[i]) * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw ContractError("cosine: zero vector has no direction");
  return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

/// Which vocabulary items nearest-word searches skip. Default: bracketed
/// specials such as [CLS], [SEP], [PAD], [unused3].
class WordFilter {
 public:
  static constexpr const char* kDefaultPattern = R"(^\[.*\]$)";

  WordFilter() : WordFilter(kDefaultPattern) {}
  explicit WordFilter(std::string pattern) : pattern_(std::move(pattern)) {
    if (!pattern_.empty() && pattern_ != "none") re_ = std::regex(pattern_);
  }
  static WordFilter none() { return WordFilter("none"); }

  bool excludes(const std::string& token) const { return re_ && std::regex_search(token, *re_); }
  const std::string& pattern() const noexcept { return pattern_; }

 private:
  std::string pattern_;
  std::optional<std::regex> re_;
};

/// Every vocabulary word as a vector of the model's comparison space.
class WordSpace {
 public:
  explicit WordSpace(const EncoderModel& model, const WordFilter& filter = {}) : dim_(model.spec().model_dim) {
    const std::size_t V = model.spec().vocab_size;
    vectors_.reserve(V * dim_);
    for (std::size_t w = 0; w < V; ++w) {
      const auto v = comparison_vector(model, RelaxedInput::from_tokens(model.spec(), std::vector<std::size_t>{w}));
      vectors_.insert(vectors_.end(), v.begin(), v.end());
      allowed_.push_back(!filter.excludes(model.token(w)));
    }
  }

  std::size_t size() const noexcept { return allowed_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> vector(std::size_t w) const { return {vectors_.data() + w * dim_, dim_}; }
  bool allowed(std::size_t w) const { return allowed_.at(w); }

 private:
  std::size_t dim_;
  std::vector<float> vectors_;
  std::vector<bool> allowed_;
};

struct ScoredWord {
  std::size_t word = 0;
  double cosine = 0.0;
  bool operator==(const ScoredWord&) const = default;
};

/// Top-n filtered words by cosine, descending; ties by word id.
inline std::vector<ScoredWord> nearest_words(const WordSpace& space, std::span<const float> v, std::size_t n) {
  if (v.size() != space.dim()) throw ShapeError("nearest_words: query of " + std::to_string(v.size()) + " vs " + std::to_string(space.dim()));
  if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) {
    throw ContractError("nearest_words: zero query vector has no direction");
  }
  std::vector<ScoredWord> all;
  for (std::size_t w = 0; w < space.size(); ++w) {
    if (!space.allowed(w)) continue;
    all.push_back({w, cosine(v, space.vector(w))});
  }
  n = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const ScoredWord& a, const ScoredWord& b) {
                      return a.cosine > b.cosine || (a.cosine == b.cosine && a.word < b.word);
                    });
  all.resize(n);
  return all;
}

/// 1-based rank `word` would take in nearest_words(space, v, all).
inline std::size_t rank_of(const WordSpace& space, std::span<const float> v, std::size_t word) {
  const double own = cosine(v, space.vector(word));
  std::size_t rank = 1;
  for (std::size_t u = 0; u < space.size(); ++u) {
    if (u == word || !space.allowed(u)) continue;
    const double c = cosine(v, space.vector(u));
    if (c > own || (c == own && u < word)) ++rank;
  }
  return rank;
}

}  // namespace textmax
