#pragma once

// Experiment configuration: flat `section.key = value` lines, '#' comments.
// Every key has a default; command-line flags override file values.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textmax/engine.hpp"
#include "textmax/hash.hpp"
#include "textmax/probe.hpp"

namespace textmax {

inline std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(sep, pos);
    if (next == std::string_view::npos) next = s.size();
    out.push_back(trim(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

struct ExperimentConfig {
  std::string model;
  std::string out = ".";
  std::uint64_t seed = 0;
  OptimConfig optim;
  double sampling_fraction = 0.10;
  std::size_t position = 1;
  std::size_t targets_count = 8;
  std::vector<std::string> targets_words;
  std::string init_word;  // token or id; empty: random init
  std::vector<std::size_t> ks{10, 100, 250, 450};
  std::vector<std::string> modes{"absolute", "relative"};
  std::string filter = WordFilter::kDefaultPattern;
  std::size_t jobs = 0;  // 0: TEXTMAX_JOBS or 1
  double max_fail_rate = 0.05;
  bool wall_time = false;

  ExperimentConfig() { optim.checked = false; }

  void set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto size = [&] { return io::parse_size(v, key); };
    auto real = [&] { return io::parse_real(v, key); };
    auto flag = [&] {
      if (v == "1" || v == "true") return true;
      if (v == "0" || v == "false") return false;
      throw ContractError("config key '" + key + "' expects true/false, got '" + v + "'");
    };
    if (key == "model") model = v;
    else if (key == "out") out = v;
    else if (key == "seed") seed = size();
    else if (key == "optim.steps") optim.steps = size();
    else if (key == "optim.lr") optim.learning_rate = real();
    else if (key == "optim.init_scale") optim.init_scale = real();
    else if (key == "optim.length") optim.length = size();
    else if (key == "optim.accept_mode") optim.accept_mode = parse_accept_mode(v);
    else if (key == "optim.record_every") optim.record_every = size();
    else if (key == "optim.checked") optim.checked = flag();
    else if (key == "optim.init_word") init_word = v;
    else if (key == "sampling.fraction") sampling_fraction = real();
    else if (key == "sampling.position") position = size();
    else if (key == "targets.count") targets_count = size();
    else if (key == "targets.words") targets_words = split_list(v);
    else if (key == "groups.ks") {
      ks.clear();
      for (const auto& k : split_list(v)) ks.push_back(io::parse_size(k, key));
    } else if (key == "groups.modes") {
      modes = split_list(v);
      for (const auto& m : modes) parse_importance_mode(m);
    } else if (key == "filter") filter = v;
    else if (key == "run.jobs") jobs = size();
    else if (key == "run.max_fail_rate") max_fail_rate = real();
    else if (key == "run.wall_time") wall_time = flag();
    else throw ContractError("unknown config key '" + key + "'");
  }

  void validate() const {
    optim.validate();
    if (!(sampling_fraction > 0.0 && sampling_fraction <= 1.0)) throw ContractError("sampling.fraction must be in (0, 1]");
    if (!(max_fail_rate >= 0.0 && max_fail_rate <= 1.0)) throw ContractError("run.max_fail_rate must be in [0, 1]");
    for (auto k : ks)
      if (k == 0) throw ContractError("groups.ks entries must be >= 1");
  }

  /// Canonical key=value text; `with_runtime` adds paths and scheduling keys,
  /// which do not change results (the model is identified by its hash instead).
  std::string to_text(bool with_runtime = true) const {
    std::ostringstream o;
    auto join = [](const auto& xs) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<std::decay_t<decltype(xs[i])>, std::string>) s += xs[i];
        else s += std::to_string(xs[i]);
      }
      return s;
    };
    o << "seed=" << seed << "\n"
      << "optim.steps=" << optim.steps << "\n"
      << "optim.lr=" << format_number(optim.learning_rate) << "\n"
      << "optim.init_scale=" << format_number(optim.init_scale) << "\n"
      << "optim.length=" << optim.length << "\n"
      << "optim.accept_mode=" << to_string(optim.accept_mode) << "\n"
      << "optim.record_every=" << optim.record_every << "\n"
      << "optim.checked=" << (optim.checked ? "true" : "false") << "\n"
      << "optim.init_word=" << init_word << "\n"
      << "sampling.fraction=" << format_number(sampling_fraction) << "\n"
      << "sampling.position=" << position << "\n"
      << "targets.count=" << targets_count << "\n"
      << "targets.words=" << join(targets_words) << "\n"
      << "groups.ks=" << join(ks) << "\n"
      << "groups.modes=" << join(modes) << "\n"
      << "filter=" << filter << "\n"
      << "run.max_fail_rate=" << format_number(max_fail_rate) << "\n";
    if (with_runtime) {
      o << "model=" << model << "\n"
        << "out=" << out << "\n"
        << "run.jobs=" << jobs << "\n"
        << "run.wall_time=" << (wall_time ? "true" : "false") << "\n";
    }
    return o.str();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    std::istringstream in(to_text());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
  }

  /// Hash of everything that can change results.
  std::string hash() const { return fnv1a_hex(to_text(false)); }
};

inline void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  cfg.validate();
  return cfg;
}

}  // namespace textmax
