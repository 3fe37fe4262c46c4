#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hitrans/model.hpp"
#include "hitrans/tokenizer.hpp"
#include "json.hpp"

namespace hitrans {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "hitrans-checkpoint";

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json model_config_to_json(const HiTransformerConfig& cfg);
HiTransformerConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json tokenizer_config_to_json(const TokenizerConfig& cfg);
TokenizerConfig tokenizer_config_from_json(const nlohmann::ordered_json& j);

// FNV-1a over the model config and label set; eval/predict compare it against
// the corpus they are pointed at.
std::uint64_t config_hash(const HiTransformerConfig& cfg, const std::vector<std::string>& label_set);
std::string hex64(std::uint64_t value);

struct Checkpoint {
  ModelParams params;
  std::vector<std::string> label_set;
  Vocab vocab;
  TokenizerConfig tokenizer;
};

// A checkpoint is a directory:
//   manifest.json  format, version, config, label set, vocab hash, and
//                  {name, shape, offset} for every tensor
//   tensors.bin    raw little-endian float64 values, back to back
//   vocab.txt      the vocabulary the model was trained with
// The directory is assembled under a temporary name and renamed into place.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// Throws CompatibilityError unless the checkpoint's label set equals `label_set`.
void check_label_compatibility(const Checkpoint& ckpt, const std::vector<std::string>& label_set);

}  // namespace hitrans
