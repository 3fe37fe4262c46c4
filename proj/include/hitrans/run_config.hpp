#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hitrans/data.hpp"
#include "hitrans/metrics.hpp"
#include "hitrans/model.hpp"
#include "hitrans/tokenizer.hpp"
#include "hitrans/training.hpp"
#include "json.hpp"

namespace hitrans {

// Everything a command needs, minus what only the data can tell us
// (vocab size, class count, speaker width).
struct RunConfig {
  std::string preset = "tiny";
  HiTransformerConfig model;  // vocab_size / n_classes / s_max filled by resolve_model
  std::size_t s_max = 0;      // 0 = derive from the corpus
  TrainConfig train;
  TokenizerConfig tokenizer;

  std::string train_path, val_path, test_path;
  std::string labels = "friends4";  // preset name or comma-separated list
  OutOfSetPolicy out_of_set = OutOfSetPolicy::mask;

  std::string vocab_path;
  std::size_t vocab_size = 8000;
  std::size_t vocab_min_freq = 1;

  UwaAverage uwa_average = UwaAverage::all_classes;

  std::vector<std::string> label_set() const;
  CorpusPaths corpus_paths() const;
};

// Preset defaults as the JSON tree that config files and --set overrides edit.
nlohmann::ordered_json preset_json(const std::string& preset);

// Recursively overlays `patch` onto `base`. Keys absent from `base` are
// rejected with ConfigError naming the dotted path.
void merge_config(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch,
                  const std::string& path = "");

// "a.b.c=value": value is parsed as JSON when it can be, else taken as a string.
void apply_override(nlohmann::ordered_json& tree, const std::string& assignment);

RunConfig run_config_from_json(const nlohmann::ordered_json& tree);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

struct ConfigSources {
  std::string preset = "tiny";
  std::optional<std::string> file;
  std::vector<std::string> overrides;
};

// preset, then file, then overrides; validated before returning.
RunConfig load_run_config(const ConfigSources& sources);

// Smallest s >= needed such that (d_lower + s) is divisible by the upper head count.
std::size_t padded_s_max(std::size_t d_lower, std::size_t n_heads, std::size_t needed);

// Completes the model config from the vocab, label set and corpus speaker count.
HiTransformerConfig resolve_model(const RunConfig& cfg, std::size_t vocab_size,
                                  std::size_t n_classes, std::size_t corpus_s_max);

}  // namespace hitrans
