#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textmax/analytics.hpp"
#include "textmax/config.hpp"
#include "textmax/parallel.hpp"
#include "textmax/record_io.hpp"
#include "textmax/toy.hpp"
#include "textmax/weights_io.hpp"

namespace textmax::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = TEXTMAX_VERSION;

class CliError : public Error {
 public:
  CliError(std::string code, const std::string& what) : Error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

std::uint64_t mix_seed(std::uint64_t base, std::string_view tag) {
  Fnv1a h;
  h.add_bytes(&base, sizeof base);
  h.add_string(tag);
  return h.value();
}

// Seeds depend only on the neuron set, so a one-neuron group and the single
// neuron start from the same point.
std::string refs_key(const Objective& obj) {
  std::string s;
  for (const auto& r : obj.refs()) {
    if (!s.empty()) s += '+';
    s += Objective::single(r).key();
  }
  return s;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// "all", "sample[:f]" (fraction per layer), "random:N" or bare "N", or "l:c,l:c,...".
std::vector<NeuronRef> select_neurons(const EncoderModel& m, const std::string& spec, double fraction,
                                      std::size_t position, std::uint64_t seed) {
  const std::size_t L = m.spec().num_layers, d = m.spec().model_dim;
  std::vector<NeuronRef> out;
  if (spec == "all") {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < d; ++c) out.push_back({l, position, c});
  } else if (spec == "sample" || spec.rfind("sample:", 0) == 0) {
    const double f = spec == "sample" ? fraction : io::parse_real(spec.substr(7), "--neurons");
    if (!(f > 0.0 && f <= 1.0)) throw ContractError("sampling fraction must be in (0, 1]");
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * double(d))));
    for (std::size_t l = 0; l < L; ++l) {
      auto idx = shuffled_indices(d, mix_seed(seed, "sample/layer" + std::to_string(l)));
      for (std::size_t i = 0; i < count; ++i) out.push_back({l, position, idx[i]});
    }
  } else if (spec.rfind("random:", 0) == 0 || all_digits(spec)) {
    const std::size_t n = io::parse_size(all_digits(spec) ? spec : spec.substr(7), "--neurons");
    if (n == 0 || n > L * d) {
      throw ContractError("--neurons asks for " + std::to_string(n) + " neurons, model has " + std::to_string(L * d));
    }
    auto idx = shuffled_indices(L * d, mix_seed(seed, "random"));
    for (std::size_t i = 0; i < n; ++i) out.push_back({idx[i] / d, position, idx[i] % d});
  } else {
    for (const auto& item : split_list(spec)) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ContractError("bad neuron '" + item + "', expected layer:channel");
      const auto l = io::parse_size(item.substr(0, colon), "--neurons");
      const auto c = io::parse_size(item.substr(colon + 1), "--neurons");
      if (l >= L || c >= d) throw ContractError("neuron '" + item + "' is out of range");
      out.push_back({l, position, c});
    }
  }
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw ContractError("--neurons lists a neuron twice");
  return out;
}

std::size_t resolve_word(const EncoderModel& m, const std::string& w) {
  if (auto id = m.find_token(w)) return *id;
  if (all_digits(w)) {
    const auto id = io::parse_size(w, "word");
    if (id < m.spec().vocab_size) return id;
  }
  throw ContractError("unknown word '" + w + "'");
}

std::vector<std::size_t> select_targets(const EncoderModel& m, const ExperimentConfig& cfg) {
  std::vector<std::size_t> out;
  if (!cfg.targets_words.empty()) {
    for (const auto& w : cfg.targets_words) out.push_back(resolve_word(m, w));
  } else {
    const WordFilter filter(cfg.filter);
    std::vector<std::size_t> allowed;
    for (std::size_t w = 0; w < m.spec().vocab_size; ++w)
      if (!filter.excludes(m.token(w))) allowed.push_back(w);
    if (cfg.targets_count > allowed.size()) {
      throw ContractError("targets.count=" + std::to_string(cfg.targets_count) + " but only " +
                          std::to_string(allowed.size()) + " words pass the filter");
    }
    std::mt19937_64 rng(mix_seed(cfg.seed, "targets"));
    std::shuffle(allowed.begin(), allowed.end(), rng);
    out.assign(allowed.begin(), allowed.begin() + static_cast<std::ptrdiff_t>(cfg.targets_count));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> parse_layers(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "all") return out;
  for (const auto& x : split_list(s)) out.push_back(io::parse_size(x, "--layers"));
  return out;
}

ActivationTable table_for(const EncoderModel& model, const std::string& table_path, std::size_t position,
                          const fs::path& cache_dir, std::size_t jobs) {
  ActivationTable t = table_path.empty() ? load_or_scan(model, position, {}, cache_dir, jobs) : load_table(table_path);
  t.check_model(model);
  if (t.position() != position) {
    throw ContractError("activation table probes position " + std::to_string(t.position()) + ", runs use " +
                        std::to_string(position));
  }
  return t;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  return format_number(v);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

class Csv {
 public:
  Csv(const std::string& provenance, const std::vector<std::string>& columns,
      const std::vector<std::string>& comments = {}) {
    text_ << provenance << "\n";
    for (const auto& c : comments) text_ << "# " << c << "\n";
    row(columns);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) text_ << (i ? "," : "") << csv_field(cells[i]);
    text_ << "\n";
  }
  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    out << text_.str();
    if (!out) throw Error("cannot write '" + path.string() + "'");
  }

 private:
  std::ostringstream text_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir.empty() ? "." : dir);
  fs::create_directories(p);
  return p;
}

// Command-line values destined for ExperimentConfig keys; applied only when given.
struct Overrides {
  std::vector<std::tuple<CLI::Option*, std::string, std::string*>> entries;
  std::vector<std::unique_ptr<std::string>> storage;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    storage.push_back(std::make_unique<std::string>());
    auto* target = storage.back().get();
    entries.emplace_back(app->add_option(flag, *target, help), key, target);
  }
  void apply(ExperimentConfig& cfg) const {
    for (const auto& [opt, key, value] : entries)
      if (opt->count()) cfg.set(key, *value);
  }
};

ExperimentConfig make_config(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  o.apply(cfg);
  cfg.validate();
  if (cfg.model.empty()) throw ContractError("no model given (--model or model= in the config file)");
  return cfg;
}

// ---- commands -----------------------------------------------------------------------

struct GenArgs {
  ToyConfig toy;
  std::string out;
  bool planted_words = false;
  std::size_t planted_groups = 0;
  CLI::Option* groups_opt = nullptr;
  std::string hook_mode = "pre_residual";
  std::string compare_space = "token_only";
};

void cmd_gen(const GenArgs& a, std::ostream& out) {
  ToyConfig c = a.toy;
  if (a.planted_words) c.planting = Planting::kWords;
  if (a.groups_opt->count()) {
    c.planting = Planting::kGroups;
    c.group_k = a.planted_groups;
  }
  auto model = generate_toy_model(c).with_options({parse_hook_mode(a.hook_mode), parse_compare_space(a.compare_space)});
  save_model(a.out, model);
  out << "wrote " << a.out << " model=" << model.hash() << "\n";
}

struct ScanArgs {
  std::string model, out = ".", layers = "all";
  std::size_t position = 1, jobs = 0;
};

void cmd_scan(const ScanArgs& a, std::ostream& out) {
  auto model = load_model(a.model);
  auto t = scan_vocab(model, a.position, parse_layers(a.layers), resolve_jobs(a.jobs));
  const auto dir = ensure_dir(a.out);
  const auto cfg_hash = fnv1a_hex("position=" + std::to_string(a.position) + "\nlayers=" + io::format_shape(t.layers()));
  save_table(dir / "table.tmt", t, kVersion, cfg_hash);
  out << "wrote " << (dir / "table.tmt").string() << " (" << t.neurons() << " neurons x " << t.vocab()
      << " words) model=" << model.hash() << "\n";
}

struct OptimizeArgs {
  std::string config, neurons, table, records = "records.jsonl";
  bool groups = false;
  Overrides overrides;
};

struct Job {
  Objective objective;
  RunOrigin origin;
};

void cmd_optimize(const OptimizeArgs& a, std::ostream& out) {
  const auto cfg = make_config(a.config, a.overrides);
  const auto model = load_model(cfg.model);
  const auto dir = ensure_dir(cfg.out);
  const auto jobs = resolve_jobs(cfg.jobs);

  std::vector<Job> work;
  if (!a.neurons.empty()) {
    for (const auto& ref : select_neurons(model, a.neurons, cfg.sampling_fraction, cfg.position, cfg.seed))
      work.push_back({Objective::single(ref), {}});
  }
  const bool group_mode = a.groups || !cfg.targets_words.empty() ||
                          std::any_of(a.overrides.entries.begin(), a.overrides.entries.end(), [](const auto& e) {
                            return std::get<1>(e) == "targets.count" && std::get<0>(e)->count();
                          });
  if (group_mode) {
    const auto table = table_for(model, a.table, cfg.position, dir, jobs);
    const auto targets = select_targets(model, cfg);
    for (auto k : cfg.ks)
      for (const auto& mode : cfg.modes)
        for (auto w : targets)
          work.push_back({Objective::group(top_k_neurons(table, w, k, parse_importance_mode(mode))), {w, k, mode}});
  }
  if (work.empty()) throw ContractError("optimize needs --neurons or target words (--word, --targets, --groups)");

  OptimConfig base = cfg.optim;
  if (!cfg.init_word.empty()) base.init_word = resolve_word(model, cfg.init_word);
  std::vector<RunRecord> records(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    OptimConfig c = base;
    c.seed = mix_seed(cfg.seed, refs_key(work[i].objective));
    records[i] = maximize(model, work[i].objective, c, work[i].origin);
  });

  const auto path = dir / a.records;
  write_records(path, {kVersion, model.hash(), cfg.hash()}, records, cfg.wall_time);
  write_text(dir / "config.txt", cfg.to_text(false));
  const auto failed = static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
  out << "optimize: " << records.size() << " runs, " << failed << " failed -> " << path.string() << "\n";
  if (double(failed) > cfg.max_fail_rate * double(records.size())) {
    throw CliError("failed-runs", std::to_string(failed) + " of " + std::to_string(records.size()) +
                                      " runs failed, above run.max_fail_rate=" + format_number(cfg.max_fail_rate));
  }
}

struct ReportArgs {
  std::string config, table, kind = "all";
  std::vector<std::string> records;
  Overrides overrides;
};

void write_single(const std::string& prov, const SingleNeuronSummary& s, const EncoderModel& m, const fs::path& dir) {
  Csv rows(prov, {"neuron_layer", "channel", "final_act", "word_best_act", "ratio", "cos_closest", "closest_word",
                  "max_word", "coincide", "magnitude"});
  for (const auto& r : s.rows) {
    rows.row({std::to_string(r.neuron.layer), std::to_string(r.neuron.channel), num(r.final_act), num(r.word_best_act),
              r.ratio ? num(*r.ratio) : "", num(r.cos_closest), m.token(r.closest_word), m.token(r.max_word),
              r.coincide ? "1" : "0", num(r.magnitude)});
  }
  rows.write(dir / "single_neuron.csv");

  Csv agg(prov, {"metric", "n", "mean", "sd"});
  auto add = [&](const char* name, const MeanSd& v) { agg.row({name, std::to_string(v.n), num(v.mean), num(v.sd)}); };
  add("final_act", s.final_act);
  add("word_best_act", s.word_best_act);
  add("ratio", s.ratio);
  add("cos_closest", s.cos_closest);
  add("magnitude", s.magnitude);
  add("word_magnitude", s.word_magnitude);
  agg.row({"coincide_pct", std::to_string(s.rows.size()), num(s.coincide_pct), ""});
  agg.row({"failed", std::to_string(s.failed), "", ""});
  agg.write(dir / "single_neuron_summary.csv");
}

void write_trends(const std::string& prov, const SingleNeuronSummary& s, const fs::path& dir) {
  Csv csv(prov, {"metric", "n", "slope", "intercept", "t", "p", "status"});
  auto add = [&](const char* name, auto value) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : s.rows)
      if (auto v = value(r)) pts.push_back({double(r.neuron.layer), *v});
    std::set<double> layers;
    for (const auto& p : pts) layers.insert(p.first);
    if (layers.size() < 3) {
      csv.row({name, std::to_string(pts.size()), "", "", "", "", "insufficient-layers"});
      return;
    }
    const auto f = layer_trend(pts);
    csv.row({name, std::to_string(f.n), num(f.slope), num(f.intercept), num(f.t), num(f.p), "ok"});
  };
  using R = SingleNeuronRow;
  add("final_act", [](const R& r) { return std::optional<double>(r.final_act); });
  add("word_best_act", [](const R& r) { return std::optional<double>(r.word_best_act); });
  add("ratio", [](const R& r) { return r.ratio; });
  add("cos_closest", [](const R& r) { return std::optional<double>(r.cos_closest); });
  add("magnitude", [](const R& r) { return std::optional<double>(r.magnitude); });
  csv.write(dir / "trends.csv");
}

void write_groups(const std::string& prov, const std::vector<RunRecord>& records, const ActivationTable& table,
                  const WordSpace& space, const EncoderModel& m, const fs::path& dir) {
  std::set<std::size_t> words, ks;
  std::set<std::string> modes;
  for (const auto& r : records) {
    if (!r.origin.word) continue;
    words.insert(*r.origin.word);
    ks.insert(r.origin.k);
    modes.insert(r.origin.mode);
  }
  GroupSummary s;
  try {
    s = summarize_groups(records, table, space, {words.begin(), words.end()}, {ks.begin(), ks.end()},
                         {modes.begin(), modes.end()});
  } catch (const ContractError& e) {
    throw CliError("missing-cells", e.what());
  }
  std::string target_list;
  for (auto w : words) target_list += (target_list.empty() ? "" : ",") + m.token(w);

  Csv rows(prov, {"word", "k", "mode", "cos_oi_w", "act_oi", "act_w", "rank", "hit1", "hit20"},
           {"targets=" + target_list});
  for (const auto& r : s.rows) {
    rows.row({m.token(r.word), std::to_string(r.k), r.mode, num(r.cos_oi_w), num(r.act_oi), num(r.act_w),
              std::to_string(r.rank), r.hit1 ? "1" : "0", r.hit20 ? "1" : "0"});
  }
  rows.write(dir / "groups.csv");

  Csv cells(prov, {"k", "mode", "n", "failed", "cos_mean", "cos_sd", "act_oi_mean", "act_oi_sd", "act_w_mean",
                   "act_w_sd", "pct_hit1", "pct_hit20"},
            {"targets=" + target_list});
  for (const auto& c : s.cells) {
    cells.row({std::to_string(c.k), c.mode, std::to_string(c.n), std::to_string(c.failed), num(c.cos_oi_w.mean),
               num(c.cos_oi_w.sd), num(c.act_oi.mean), num(c.act_oi.sd), num(c.act_w.mean), num(c.act_w.sd),
               num(c.pct_hit1), num(c.pct_hit20)});
  }
  cells.write(dir / "groups_summary.csv");
}

void write_pca(const std::string& prov, const std::vector<RunRecord>& records, const EncoderModel& m,
               const fs::path& dir) {
  const WordSpace all(m, WordFilter::none());
  const std::size_t d = all.dim();
  std::vector<std::vector<double>> points;
  std::vector<std::pair<std::string, std::string>> labels;
  for (const auto& r : records) {
    if (r.failed) continue;
    const std::size_t rows = r.final_embedding.size() / d;
    for (std::size_t row = 0; row < rows; ++row) {
      points.emplace_back(r.final_embedding.begin() + row * d, r.final_embedding.begin() + (row + 1) * d);
      labels.emplace_back(rows == 1 ? r.key() : r.key() + "#" + std::to_string(row), "optimized");
    }
  }
  for (std::size_t w = 0; w < m.spec().vocab_size; ++w) {
    auto v = all.vector(w);
    points.emplace_back(v.begin(), v.end());
    labels.emplace_back(m.token(w), "word");
  }
  const auto p = pca2(points);
  Csv csv(prov, {"label", "kind", "pc1", "pc2"},
          {"explained=" + num(p.explained[0]) + "," + num(p.explained[1]) +
           " second_flagged=" + (p.second_flagged ? "1" : "0")});
  for (std::size_t i = 0; i < points.size(); ++i)
    csv.row({labels[i].first, labels[i].second, num(p.coords[i][0]), num(p.coords[i][1])});
  csv.write(dir / "pca.csv");
}

void cmd_report(const ReportArgs& a, std::ostream& out) {
  const auto cfg = make_config(a.config, a.overrides);
  const auto model = load_model(cfg.model);
  const auto dir = ensure_dir(cfg.out);

  std::vector<RunRecord> records;
  std::set<std::string> config_hashes;
  for (const auto& path : a.records) {
    auto f = read_records(path);
    if (f.header.model_hash != model.hash()) {
      throw FormatError(FormatError::Kind::kHashMismatch, "model_hash",
                        "'" + path + "' was produced by model " + f.header.model_hash + ", expected " + model.hash());
    }
    config_hashes.insert(f.header.config_hash);
    for (auto& r : f.records) records.push_back(std::move(r));
  }
  if (records.empty()) throw CliError("no-records", "no records in the given files");
  const auto failed = static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
  if (double(failed) > cfg.max_fail_rate * double(records.size())) {
    throw CliError("failed-runs", std::to_string(failed) + " of " + std::to_string(records.size()) +
                                      " runs failed, above run.max_fail_rate=" + format_number(cfg.max_fail_rate));
  }
  std::set<std::size_t> positions;
  for (const auto& r : records)
    for (const auto& n : r.objective.refs()) positions.insert(n.position);
  if (positions.size() != 1) throw ContractError("records mix probe positions");

  const auto table = table_for(model, a.table, *positions.begin(), dir, resolve_jobs(cfg.jobs));
  const WordSpace space(model, WordFilter(cfg.filter));
  std::string cfg_hash;
  for (const auto& h : config_hashes) cfg_hash += (cfg_hash.empty() ? "" : "+") + h;
  const std::string prov = std::string("# textmax ") + kVersion + " model=" + model.hash() + " config=" + cfg_hash;

  const bool any_single = std::any_of(records.begin(), records.end(),
                                      [](const auto& r) { return r.objective.kind() == Objective::Kind::kSingle && !r.origin.word; });
  const bool any_group = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.origin.word.has_value(); });
  const bool all = a.kind == "all";
  if ((a.kind == "single" || a.kind == "trend") && !any_single) throw CliError("no-records", "no single-neuron records");
  if (a.kind == "groups" && !any_group) throw CliError("no-records", "no group records");

  std::vector<RunRecord> singles;
  for (const auto& r : records)
    if (!r.origin.word) singles.push_back(r);
  std::vector<std::string> written;
  if (all || a.kind == "single" || a.kind == "trend") {
    const auto s = summarize_single(singles, table, space);
    if (all || a.kind == "single") {
      write_single(prov, s, model, dir);
      written.insert(written.end(), {"single_neuron.csv", "single_neuron_summary.csv"});
    }
    if (all || a.kind == "trend") {
      write_trends(prov, s, dir);
      written.push_back("trends.csv");
    }
  }
  if ((all && any_group) || a.kind == "groups") {
    write_groups(prov, records, table, space, model, dir);
    written.insert(written.end(), {"groups.csv", "groups_summary.csv"});
  }
  if (all || a.kind == "pca") {
    write_pca(prov, records, model, dir);
    written.push_back("pca.csv");
  }
  out << "report: " << records.size() << " records";
  for (const auto& w : written) out << " " << (dir / w).string();
  out << "\n";
}

struct SweepArgs {
  std::string config, neurons = "5", grid = "1e-2..1e2", out;
  Overrides overrides;
};

void cmd_sweep(const SweepArgs& a, std::ostream& out) {
  auto cfg = make_config(a.config, a.overrides);
  const auto model = load_model(cfg.model);
  const auto jobs = resolve_jobs(cfg.jobs);
  const auto neurons = select_neurons(model, a.neurons, cfg.sampling_fraction, cfg.position, cfg.seed);
  const auto result = sweep_learning_rate(parse_lr_grid(a.grid), [&](double lr) -> std::optional<double> {
    std::vector<RunRecord> runs(neurons.size());
    parallel_for(neurons.size(), jobs, [&](std::size_t i) {
      OptimConfig c = cfg.optim;
      c.learning_rate = lr;
      const auto obj = Objective::single(neurons[i]);
      c.seed = mix_seed(cfg.seed, refs_key(obj));
      runs[i] = maximize(model, obj, c);
    });
    double sum = 0.0;
    for (const auto& r : runs) {
      if (r.failed) return std::nullopt;
      sum += r.final_value;
    }
    return sum / double(runs.size());
  });
  cfg.optim.learning_rate = result.recommended;

  for (const auto& p : result.points)
    out << "lr=" << num(p.learning_rate) << " value=" << (p.failed ? "diverged" : num(p.value)) << "\n";
  out << "recommended_lr=" << num(result.recommended) << "\n";
  if (!a.out.empty()) {
    const auto dir = ensure_dir(a.out);
    Csv csv(std::string("# textmax ") + kVersion + " model=" + model.hash() + " config=" + cfg.hash(),
            {"lr", "mean_final", "failed", "recommended"});
    for (const auto& p : result.points) {
      csv.row({num(p.learning_rate), p.failed ? "" : num(p.value), p.failed ? "1" : "0",
               p.learning_rate == result.recommended ? "1" : "0"});
    }
    csv.write(dir / "sweep.csv");
    write_text(dir / "config.txt", cfg.to_text(false));
  }
}

void report_error(std::ostream& err, const std::string& code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = code;
  j["message"] = message;
  err << j.dump() << std::endl;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"textmax: activation maximization for small transformer encoders"};
  app.name("textmax");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-toy-model", "Generate a seeded toy encoder weights file");
  g->add_option("--vocab", gen.toy.vocab, "vocabulary size (4 of them special tokens)")->capture_default_str();
  g->add_option("--dim", gen.toy.dim, "model dimension")->capture_default_str();
  g->add_option("--layers", gen.toy.layers, "encoder layers")->capture_default_str();
  g->add_option("--heads", gen.toy.heads, "attention heads")->capture_default_str();
  g->add_option("--ffn", gen.toy.ffn, "feed-forward width")->capture_default_str();
  g->add_option("--max-positions", gen.toy.max_positions, "position table size")->capture_default_str();
  g->add_option("--seed", gen.toy.seed, "generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "weights file to write")->required();
  auto* planted_words = g->add_flag("--planted-words", gen.planted_words, "plant word j on last-layer channel j");
  gen.groups_opt = g->add_option("--planted-groups", gen.planted_groups, "plant each target word on K last-layer channels");
  planted_words->excludes(gen.groups_opt);
  g->add_option("--group-targets", gen.toy.group_targets, "number of planted target words")->capture_default_str();
  g->add_option("--hook-mode", gen.hook_mode, "pre_residual | post_residual")->capture_default_str();
  g->add_option("--compare-space", gen.compare_space, "token_only | full_input")->capture_default_str();

  ScanArgs scan;
  auto* s = app.add_subcommand("scan", "Tabulate every neuron's activation for every vocabulary word");
  s->add_option("--model", scan.model, "weights file")->required();
  s->add_option("--position", scan.position, "probe position")->capture_default_str();
  s->add_option("--layers", scan.layers, "'all' or a comma list")->capture_default_str();
  s->add_option("--out", scan.out, "output directory")->capture_default_str();
  s->add_option("--jobs", scan.jobs, "worker threads (default: TEXTMAX_JOBS or 1)");

  auto add_common = [](CLI::App* sub, Overrides& o, bool with_out) {
    o.add(sub, "--model", "model", "weights file");
    if (with_out) o.add(sub, "--out", "out", "output directory");
    o.add(sub, "--seed", "seed", "experiment seed");
    o.add(sub, "--steps", "optim.steps", "ascent steps");
    o.add(sub, "--lr", "optim.lr", "learning rate");
    o.add(sub, "--init-scale", "optim.init_scale", "std of the random initial input");
    o.add(sub, "--length", "optim.length", "optimized tokens");
    o.add(sub, "--accept", "optim.accept_mode", "vanilla | greedy_accept");
    o.add(sub, "--record-every", "optim.record_every", "trajectory spacing");
    o.add(sub, "--checked", "optim.checked", "true: validate every graph node");
    o.add(sub, "--position", "sampling.position", "probe position");
    o.add(sub, "--sample-fraction", "sampling.fraction", "per-layer fraction for --neurons sample");
    o.add(sub, "--jobs", "run.jobs", "worker threads (default: TEXTMAX_JOBS or 1)");
  };

  OptimizeArgs opt;
  auto* o = app.add_subcommand("optimize", "Maximize single neurons and/or top-k neuron groups of target words");
  o->add_option("--config", opt.config, "experiment config file");
  o->add_option("--neurons", opt.neurons, "all | sample[:f] | random:N | layer:channel,...");
  o->add_option("--table", opt.table, "activation table (default: scan and cache in --out)");
  o->add_option("--records", opt.records, "records file name inside --out")->capture_default_str();
  o->add_flag("--groups", opt.groups, "optimize target-word groups from the config");
  add_common(o, opt.overrides, true);
  opt.overrides.add(o, "--word", "targets.words", "target words (tokens or ids, comma list)");
  opt.overrides.add(o, "--targets", "targets.count", "number of seeded random target words");
  opt.overrides.add(o, "--k", "groups.ks", "group sizes, comma list");
  opt.overrides.add(o, "--mode", "groups.modes", "absolute,relative");
  opt.overrides.add(o, "--filter", "filter", "regex of tokens excluded from targets and rankings, or 'none'");
  opt.overrides.add(o, "--init-word", "optim.init_word", "start from this word instead of random noise");
  opt.overrides.add(o, "--max-fail-rate", "run.max_fail_rate", "tolerated fraction of diverged runs");
  opt.overrides.add(o, "--wall-time", "run.wall_time", "true: store wall time in records");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Summaries and plot data from run records");
  r->add_option("--config", rep.config, "experiment config file");
  r->add_option("--records", rep.records, "records files")->required()->expected(1, -1);
  r->add_option("--table", rep.table, "activation table (default: scan and cache in --out)");
  r->add_option("--kind", rep.kind, "single | groups | trend | pca | all")
      ->check(CLI::IsMember({"single", "groups", "trend", "pca", "all"}))
      ->capture_default_str();
  rep.overrides.add(r, "--model", "model", "weights file");
  rep.overrides.add(r, "--out", "out", "output directory");
  rep.overrides.add(r, "--filter", "filter", "regex of tokens excluded from rankings, or 'none'");
  rep.overrides.add(r, "--max-fail-rate", "run.max_fail_rate", "tolerated fraction of diverged runs");
  rep.overrides.add(r, "--jobs", "run.jobs", "worker threads for a table scan");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep-lr", "Pick a learning rate from short runs over a grid");
  w->add_option("--config", sw.config, "experiment config file");
  w->add_option("--neurons", sw.neurons, "neuron selection, as for optimize")->capture_default_str();
  w->add_option("--grid", sw.grid, "'1e-2..1e2' (powers of ten) or a comma list")->capture_default_str();
  w->add_option("--out", sw.out, "directory for sweep.csv and config.txt");
  add_common(w, sw.overrides, false);

  std::vector<const char*> argv{"textmax"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    report_error(err, "usage", e.what());
    return 2;
  }

  try {
    if (g->parsed()) cmd_gen(gen, out);
    if (s->parsed()) cmd_scan(scan, out);
    if (o->parsed()) cmd_optimize(opt, out);
    if (r->parsed()) cmd_report(rep, out);
    if (w->parsed()) cmd_sweep(sw, out);
  } catch (const CliError& e) {
    report_error(err, e.code(), e.what());
    return 1;
  } catch (const FormatError& e) {
    report_error(err, to_string(e.kind()), e.what());
    return 1;
  } catch (const NumericError& e) {
    report_error(err, "numeric", e.what());
    return 1;
  } catch (const ShapeError& e) {
    report_error(err, "shape", e.what());
    return 1;
  } catch (const ContractError& e) {
    report_error(err, "contract", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "error", e.what());
    return 1;
  }
  return 0;
}

}  // namespace textmax::cli
