#pragma once

// Weights file, format_version 1:
//
//   textmax-weights
//   format_version=1
//   vocab_size=... model_dim=... (one key=value per line, ModelSpec + options)
//   tensor=<name> <d0,d1,..> <byte offset> <byte length> <crc32 hex>   (one per tensor)
//   [vocab]
//   <one token per line, vocab_size lines>
//   [payload]
//   <concatenated row-major little-endian float32 tensor data>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "textmax/io.hpp"
#include "textmax/model.hpp"

namespace textmax {

inline constexpr std::size_t kWeightsFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Low-level writer; does not check that the tensors match the ModelSpec.
inline void write_weights_file(const std::filesystem::path& path, const ModelSpec& spec,
                               const ModelOptions& options, const std::vector<NamedTensor>& tensors,
                               const std::vector<std::string>& vocab) {
  std::ostringstream head;
  head << "textmax-weights\n"
       << "format_version=" << kWeightsFormatVersion << "\n"
       << "vocab_size=" << spec.vocab_size << "\n"
       << "model_dim=" << spec.model_dim << "\n"
       << "num_layers=" << spec.num_layers << "\n"
       << "num_heads=" << spec.num_heads << "\n"
       << "ffn_dim=" << spec.ffn_dim << "\n"
       << "max_positions=" << spec.max_positions << "\n"
       << "layernorm_eps=" << io::format_real(spec.layernorm_eps) << "\n"
       << "cls_id=" << spec.cls_id << "\n"
       << "sep_id=" << spec.sep_id << "\n"
       << "embedding_layernorm=" << (spec.embedding_layernorm ? 1 : 0) << "\n"
       << "hook_mode=" << to_string(options.hook_mode) << "\n"
       << "compare_space=" << to_string(options.compare_space) << "\n";

  std::vector<unsigned char> payload;
  for (const auto& t : tensors) {
    auto bytes = io::encode_f32(t.tensor.data());
    head << "tensor=" << t.name << " " << io::format_shape(t.tensor.shape()) << " " << payload.size()
         << " " << bytes.size() << " " << io::hex32(io::crc32(bytes)) << "\n";
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
  head << "[vocab]\n";
  for (const auto& tok : vocab) {
    if (tok.find('\n') != std::string::npos || tok.find('\r') != std::string::npos) {
      throw ContractError("vocabulary token contains a line break");
    }
    head << tok << "\n";
  }
  head << "[payload]\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const auto h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

inline void save_model(const std::filesystem::path& path, const EncoderModel& model) {
  std::vector<NamedTensor> tensors;
  model.weights().for_each(
      [&](const std::string& name, const Tensor& t) { tensors.push_back({name, t}); });
  write_weights_file(path, model.spec(), model.options(), tensors, model.vocab());
}

inline EncoderModel load_model(const std::filesystem::path& path) {
  using Kind = FormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line) || line != "textmax-weights") {
    throw FormatError(Kind::kMalformed, "magic", "'" + path.string() + "' is not a textmax weights file");
  }

  struct Entry {
    Shape shape;
    std::size_t offset = 0, length = 0;
    std::uint32_t crc = 0;
  };
  io::KeyValues kv;
  std::map<std::string, Entry> table;
  bool in_vocab = false;
  bool saw_payload = false;
  std::vector<std::string> vocab;
  while (std::getline(in, line)) {
    if (line == "[payload]") {
      saw_payload = true;
      break;
    }
    if (line == "[vocab]") {
      in_vocab = true;
      continue;
    }
    if (in_vocab) {
      vocab.push_back(line);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(Kind::kMalformed, "header", "bad header line '" + line + "'");
    auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "tensor") {
      std::istringstream fields(value);
      std::string name, shape, crc;
      Entry e;
      if (!(fields >> name >> shape >> e.offset >> e.length >> crc)) {
        throw FormatError(Kind::kMalformed, "tensor", "bad tensor entry '" + value + "'");
      }
      e.shape = io::parse_shape(shape);
      e.crc = static_cast<std::uint32_t>(std::stoul(crc, nullptr, 16));
      table[name] = e;
    } else {
      kv.set(key, value);
    }
  }
  if (!saw_payload) throw FormatError(Kind::kMalformed, "payload", "missing [payload] section");

  const auto version = kv.get_size("format_version");
  if (version != kWeightsFormatVersion) {
    throw FormatError(Kind::kUnknownVersion, "format_version",
                      "unknown weights format_version " + std::to_string(version));
  }

  ModelSpec spec;
  spec.vocab_size = kv.get_size("vocab_size");
  spec.model_dim = kv.get_size("model_dim");
  spec.num_layers = kv.get_size("num_layers");
  spec.num_heads = kv.get_size("num_heads");
  spec.ffn_dim = kv.get_size("ffn_dim");
  spec.max_positions = kv.get_size("max_positions");
  spec.layernorm_eps = kv.get_real("layernorm_eps");
  spec.cls_id = kv.get_size("cls_id");
  spec.sep_id = kv.get_size("sep_id");
  spec.embedding_layernorm = kv.get_size("embedding_layernorm") != 0;
  spec.validate();
  ModelOptions options;
  if (kv.has("hook_mode")) options.hook_mode = parse_hook_mode(kv.get("hook_mode"));
  if (kv.has("compare_space")) options.compare_space = parse_compare_space(kv.get("compare_space"));

  const auto payload = io::read_rest(in);

  std::map<std::string, Tensor> tensors;
  for (const auto& [name, shape] : expected_tensor_shapes(spec)) {
    auto it = table.find(name);
    if (it == table.end()) {
      throw FormatError(Kind::kMissingTensor, name, "missing tensor '" + name + "'");
    }
    const Entry& e = it->second;
    if (e.shape != shape || e.length != numel(shape) * 4) {
      throw FormatError(Kind::kShapeMismatch, name,
                        "tensor '" + name + "' has shape " + to_string(e.shape) + ", expected " +
                            to_string(shape));
    }
    const std::size_t begin = std::min(e.offset, payload.size());
    const std::size_t end = std::min(e.offset + e.length, payload.size());
    std::span<const unsigned char> bytes(payload.data() + begin, end - begin);
    if (bytes.size() != e.length || io::crc32(bytes) != e.crc) {
      throw FormatError(Kind::kBadChecksum, name, "checksum mismatch in tensor '" + name + "'");
    }
    tensors.emplace(name, Tensor(shape, io::decode_f32(bytes)));
  }
  if (vocab.size() != spec.vocab_size) {
    throw FormatError(Kind::kShapeMismatch, "vocab",
                      "vocabulary section has " + std::to_string(vocab.size()) + " tokens, expected " +
                          std::to_string(spec.vocab_size));
  }

  Weights<float> w;
  w.layers.resize(spec.num_layers);
  w.for_each([&](const std::string& name, Tensor& t) { t = tensors.at(name); });
  return EncoderModel(spec, std::move(w), std::move(vocab), options);
}

}  // namespace textmax
