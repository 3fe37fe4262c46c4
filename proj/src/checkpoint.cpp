#include "hitrans/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "hitrans/errors.hpp"

namespace hitrans {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

template <typename T>
T field(const ojson& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("missing config field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad config field '") + key + "': " + e.what());
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_le64(std::string& out, Real v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

Real get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<Real>(bits);
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ojson encoder_config_to_json(const EncoderConfig& cfg) {
  ojson j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_model"] = cfg.d_model;
  j["d_ff"] = cfg.d_ff;
  j["dropout"] = cfg.attn_dropout;
  j["max_positions"] = cfg.max_positions;
  j["positional_kind"] = to_string(cfg.positional_kind);
  return j;
}

EncoderConfig encoder_config_from_json(const ojson& j) {
  EncoderConfig c;
  c.n_layers = field<std::size_t>(j, "n_layers");
  c.n_heads = field<std::size_t>(j, "n_heads");
  c.d_model = field<std::size_t>(j, "d_model");
  c.d_ff = field<std::size_t>(j, "d_ff");
  c.attn_dropout = field<Real>(j, "dropout");
  c.max_positions = field<std::size_t>(j, "max_positions");
  c.positional_kind = positional_kind_from_string(field<std::string>(j, "positional_kind"));
  return c;
}

ojson model_config_to_json(const HiTransformerConfig& cfg) {
  ojson j;
  j["lower"] = encoder_config_to_json(cfg.lower);
  j["upper"] = encoder_config_to_json(cfg.upper);
  j["vocab_size"] = cfg.vocab_size;
  j["n_classes"] = cfg.n_classes;
  j["classifier_hidden"] = cfg.classifier_hidden;
  j["classifier_dropout"] = cfg.classifier_dropout;
  j["speaker_variant"] = cfg.speaker_variant;
  j["s_max"] = cfg.s_max;
  j["pool_specials"] = cfg.pool_specials;
  return j;
}

HiTransformerConfig model_config_from_json(const ojson& j) {
  HiTransformerConfig c;
  if (!j.contains("lower") || !j.contains("upper")) throw SchemaError("model config needs lower and upper");
  c.lower = encoder_config_from_json(j["lower"]);
  c.upper = encoder_config_from_json(j["upper"]);
  c.vocab_size = field<std::size_t>(j, "vocab_size");
  c.n_classes = field<std::size_t>(j, "n_classes");
  c.classifier_hidden = field<std::size_t>(j, "classifier_hidden");
  c.classifier_dropout = field<Real>(j, "classifier_dropout");
  c.speaker_variant = field<bool>(j, "speaker_variant");
  c.s_max = field<std::size_t>(j, "s_max");
  c.pool_specials = field<bool>(j, "pool_specials");
  c.validate();
  return c;
}

ojson tokenizer_config_to_json(const TokenizerConfig& cfg) {
  ojson j;
  j["max_len"] = cfg.max_len;
  j["lowercase"] = cfg.lowercase;
  return j;
}

TokenizerConfig tokenizer_config_from_json(const ojson& j) {
  TokenizerConfig c;
  c.max_len = field<std::size_t>(j, "max_len");
  c.lowercase = field<bool>(j, "lowercase");
  c.validate();
  return c;
}

std::uint64_t config_hash(const HiTransformerConfig& cfg, const std::vector<std::string>& label_set) {
  ojson j;
  j["model"] = model_config_to_json(cfg);
  j["labels"] = label_set;
  return fnv1a(j.dump());
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) s[static_cast<std::size_t>(i)] = digits[value & 0xF];
  return s;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  const fs::path target(dir);
  fs::path tmp = target;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  std::string blob;
  ojson tensors = ojson::array();
  for (const auto& [name, t] : ckpt.params.named_parameters()) {
    ojson entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = blob.size();
    tensors.push_back(std::move(entry));
    for (Real v : t.data()) put_le64(blob, v);
  }
  std::ostringstream vocab_text;
  ckpt.vocab.write(vocab_text);

  ojson manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = model_config_to_json(ckpt.params.config);
  manifest["tokenizer"] = tokenizer_config_to_json(ckpt.tokenizer);
  manifest["label_set"] = ckpt.label_set;
  manifest["config_hash"] = hex64(config_hash(ckpt.params.config, ckpt.label_set));
  manifest["vocab_size"] = ckpt.vocab.size();
  manifest["vocab_hash"] = hex64(ckpt.vocab.hash());
  manifest["dtype"] = "float64-le";
  manifest["blob"] = "tensors.bin";
  manifest["blob_bytes"] = blob.size();
  manifest["tensors"] = std::move(tensors);

  write_file(tmp / "tensors.bin", blob);
  write_file(tmp / "vocab.txt", vocab_text.str());
  write_file(tmp / "manifest.json", manifest.dump(2) + "\n");

  fs::remove_all(target);
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  ojson manifest;
  try {
    manifest = ojson::parse(read_file(root / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", std::string{}) != kCheckpointFormat) {
    throw CompatibilityError(dir + " is not a checkpoint directory");
  }
  const int version = manifest.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CompatibilityError("checkpoint version " + std::to_string(version) +
                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ckpt;
  const auto cfg = model_config_from_json(manifest.at("config"));
  ckpt.tokenizer = tokenizer_config_from_json(manifest.at("tokenizer"));
  ckpt.label_set = manifest.at("label_set").get<std::vector<std::string>>();
  if (manifest.at("config_hash").get<std::string>() != hex64(config_hash(cfg, ckpt.label_set))) {
    throw CompatibilityError("checkpoint config hash does not match its config");
  }
  ckpt.vocab = Vocab::load((root / "vocab.txt").string());
  if (manifest.at("vocab_hash").get<std::string>() != hex64(ckpt.vocab.hash())) {
    throw CompatibilityError("vocab.txt does not match the checkpoint's vocab hash");
  }
  if (cfg.vocab_size != ckpt.vocab.size()) {
    throw CompatibilityError("checkpoint vocab size disagrees with its model config");
  }

  const std::string blob = read_file(root / manifest.value("blob", std::string("tensors.bin")));
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
    throw CompatibilityError("tensor blob is truncated or oversized");
  }
  std::map<std::string, std::pair<Shape, std::size_t>> entries;
  for (const auto& e : manifest.at("tensors")) {
    entries[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(),
                                                e.at("offset").get<std::size_t>()};
  }

  ckpt.params = ModelParams::init(cfg, 0);
  auto named = ckpt.params.named_parameters();
  if (named.size() != entries.size()) {
    throw CompatibilityError("checkpoint tensor list does not match the model structure");
  }
  for (auto& [name, t] : named) {
    auto it = entries.find(name);
    if (it == entries.end()) throw CompatibilityError("checkpoint lacks tensor " + name);
    const auto& [shape, offset] = it->second;
    if (shape != t.shape()) {
      throw CompatibilityError("tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                               shape_str(t.shape()));
    }
    if (offset + 8 * t.numel() > blob.size()) throw CompatibilityError("tensor " + name + " overruns the blob");
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_le64(blob.data() + offset + 8 * i);
  }
  return ckpt;
}

void check_label_compatibility(const Checkpoint& ckpt, const std::vector<std::string>& label_set) {
  if (ckpt.label_set != label_set) {
    std::string want, have;
    for (const auto& l : ckpt.label_set) want += (want.empty() ? "" : ",") + l;
    for (const auto& l : label_set) have += (have.empty() ? "" : ",") + l;
    throw CompatibilityError("checkpoint was trained on labels [" + want +
                             "] but the corpus uses [" + have + "]");
  }
}

}  // namespace hitrans
