#pragma once

// Run records as JSON Lines. The first line is a header object
// ({"kind":"header", tool/model/config provenance}); every further line is one run.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textmax/engine.hpp"

namespace textmax {

using ordered_json = nlohmann::ordered_json;

struct RecordsHeader {
  std::string tool_version;
  std::string model_hash;
  std::string config_hash;
};

namespace detail {

inline ordered_json real(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline double real_of(const ordered_json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

inline ordered_json rows_json(const Tensor& t) {
  ordered_json out = ordered_json::array();
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    ordered_json row = ordered_json::array();
    for (auto x : t.row(r)) row.push_back(double(x));
    out.push_back(std::move(row));
  }
  return out;
}

inline Tensor rows_of(const ordered_json& j) {
  std::vector<float> v;
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  for (const auto& row : j) {
    if (row.size() != cols) throw FormatError(FormatError::Kind::kMalformed, "input", "ragged input rows");
    for (const auto& x : row) v.push_back(static_cast<float>(x.get<double>()));
  }
  return Tensor::adopt({rows, cols}, std::move(v));
}

}  // namespace detail

inline ordered_json record_to_json(const RunRecord& r, bool include_wall_time = false) {
  ordered_json j;
  j["kind"] = "run";
  j["key"] = r.key();
  j["objective"] = r.objective.key();
  j["objective_kind"] = r.objective.kind() == Objective::Kind::kSingle ? "single" : "group";
  ordered_json layer = ordered_json::array(), position = ordered_json::array(), channels = ordered_json::array();
  for (const auto& n : r.objective.refs()) {
    layer.push_back(n.layer);
    position.push_back(n.position);
    channels.push_back(n.channel);
  }
  j["layer"] = std::move(layer);
  j["position"] = std::move(position);
  j["channels"] = std::move(channels);
  j["word"] = r.origin.word ? ordered_json(*r.origin.word) : ordered_json(nullptr);
  j["k"] = r.origin.k;
  j["mode"] = r.origin.mode;
  j["steps"] = r.config.steps;
  j["lr"] = r.config.learning_rate;
  j["seed"] = r.config.seed;
  j["init_scale"] = r.config.init_scale;
  j["length"] = r.config.length;
  j["accept_mode"] = to_string(r.config.accept_mode);
  j["record_every"] = r.config.record_every;
  j["init_word"] = r.config.init_word ? ordered_json(*r.config.init_word) : ordered_json(nullptr);
  j["initial_value"] = detail::real(r.initial_value);
  j["final_value"] = detail::real(r.final_value);
  j["failed"] = r.failed;
  j["failed_step"] = r.failed_step;
  j["stopped_early"] = r.stopped_early;
  j["steps_taken"] = r.steps_taken;
  ordered_json traj = ordered_json::array();
  for (const auto& [s, v] : r.trajectory) traj.push_back(ordered_json::array({s, detail::real(v)}));
  j["trajectory"] = std::move(traj);
  ordered_json emb = ordered_json::array();
  for (auto x : r.final_embedding) emb.push_back(double(x));
  j["final_embedding"] = std::move(emb);
  j["initial_input"] = detail::rows_json(r.initial_middle);
  j["final_input"] = detail::rows_json(r.final_middle);
  j["model_hash"] = r.model_hash;
  j["wall_ms"] = include_wall_time ? r.wall_ms : 0.0;
  return j;
}

inline RunRecord record_from_json(const ordered_json& j) {
  try {
    RunRecord r;
    const auto& layer = j.at("layer");
    const auto& position = j.at("position");
    const auto& channels = j.at("channels");
    if (layer.size() != channels.size() || position.size() != channels.size() || channels.empty()) {
      throw FormatError(FormatError::Kind::kMalformed, "channels", "layer/position/channels lengths differ");
    }
    std::vector<NeuronRef> refs;
    for (std::size_t i = 0; i < channels.size(); ++i)
      refs.push_back({layer[i].get<std::size_t>(), position[i].get<std::size_t>(), channels[i].get<std::size_t>()});
    r.objective = j.value("objective_kind", "single") == "group" ? Objective::group(refs) : Objective::single(refs.at(0));
    if (!j.at("word").is_null()) r.origin.word = j.at("word").get<std::size_t>();
    r.origin.k = j.value("k", std::size_t{0});
    r.origin.mode = j.value("mode", "");
    r.config.steps = j.at("steps").get<std::size_t>();
    r.config.learning_rate = j.at("lr").get<double>();
    r.config.seed = j.at("seed").get<std::uint64_t>();
    r.config.init_scale = j.value("init_scale", 0.1);
    r.config.length = j.value("length", std::size_t{1});
    r.config.accept_mode = parse_accept_mode(j.value("accept_mode", "vanilla"));
    r.config.record_every = j.value("record_every", std::size_t{50});
    if (j.contains("init_word") && !j["init_word"].is_null()) r.config.init_word = j["init_word"].get<std::size_t>();
    r.initial_value = detail::real_of(j.at("initial_value"));
    r.final_value = detail::real_of(j.at("final_value"));
    r.failed = j.at("failed").get<bool>();
    r.failed_step = j.value("failed_step", std::size_t{0});
    r.stopped_early = j.value("stopped_early", false);
    r.steps_taken = j.value("steps_taken", std::size_t{0});
    for (const auto& p : j.at("trajectory")) r.trajectory.emplace_back(p.at(0).get<std::size_t>(), detail::real_of(p.at(1)));
    for (const auto& x : j.at("final_embedding")) r.final_embedding.push_back(static_cast<float>(x.get<double>()));
    if (j.contains("initial_input")) r.initial_middle = detail::rows_of(j["initial_input"]);
    if (j.contains("final_input")) r.final_middle = detail::rows_of(j["final_input"]);
    r.model_hash = j.value("model_hash", "");
    r.wall_ms = j.at("wall_ms").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, "record", std::string("bad run record: ") + e.what());
  }
}

inline ordered_json header_to_json(const RecordsHeader& h) {
  ordered_json j;
  j["kind"] = "header";
  j["tool"] = "textmax";
  j["tool_version"] = h.tool_version;
  j["model_hash"] = h.model_hash;
  j["config_hash"] = h.config_hash;
  return j;
}

inline void write_records(const std::filesystem::path& path, const RecordsHeader& header,
                          const std::vector<RunRecord>& records, bool include_wall_time = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << header_to_json(header).dump() << "\n";
  for (const auto& r : records) out << record_to_json(r, include_wall_time).dump() << "\n";
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

struct RecordsFile {
  RecordsHeader header;
  std::vector<RunRecord> records;
};

inline RecordsFile read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  RecordsFile f;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw FormatError(FormatError::Kind::kMalformed, "line " + std::to_string(lineno),
                        "'" + path.string() + "' line " + std::to_string(lineno) + " is not JSON");
    }
    if (j.value("kind", "run") == "header") {
      f.header = {j.value("tool_version", ""), j.value("model_hash", ""), j.value("config_hash", "")};
      saw_header = true;
      continue;
    }
    f.records.push_back(record_from_json(j));
  }
  if (!saw_header) throw FormatError(FormatError::Kind::kMalformed, "header", "'" + path.string() + "' has no header line");
  return f;
}

}  // namespace textmax
