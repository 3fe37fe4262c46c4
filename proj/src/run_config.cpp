#include "hitrans/run_config.hpp"

#include <fstream>
#include <sstream>

#include "hitrans/errors.hpp"

namespace hitrans {

using ojson = nlohmann::ordered_json;

namespace {

ojson encoder_json(std::size_t layers, std::size_t heads, std::size_t d_model, std::size_t d_ff,
                   double dropout, std::size_t max_positions, const char* positions) {
  ojson j;
  j["n_layers"] = layers;
  j["n_heads"] = heads;
  if (d_model) j["d_model"] = d_model;
  j["d_ff"] = d_ff;
  j["dropout"] = dropout;
  j["max_positions"] = max_positions;
  j["positional_kind"] = positions;
  return j;
}

template <typename T>
T get(const ojson& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config value at '" + path + "' has the wrong type: " + j.dump());
  }
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError("empty label in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

}  // namespace

std::vector<std::string> RunConfig::label_set() const {
  if (labels.find(',') == std::string::npos) return label_preset(labels);
  return split_commas(labels);
}

CorpusPaths RunConfig::corpus_paths() const { return {train_path, val_path, test_path}; }

ojson preset_json(const std::string& preset) {
  ojson j;
  j["preset"] = preset;
  ojson model;
  ojson train;
  ojson tok;
  if (preset == "tiny") {
    model["lower"] = encoder_json(2, 4, 32, 128, 0.1, 64, "learned");
    model["upper"] = encoder_json(2, 8, 0, 0, 0.1, 64, "sinusoidal");
    train["learning_rate"] = 1e-3;
    train["epochs"] = 30;
    tok["max_len"] = 64;
  } else if (preset == "paper") {
    model["lower"] = encoder_json(12, 12, 768, 3072, 0.1, 512, "learned");
    model["upper"] = encoder_json(4, 8, 0, 0, 0.1, 512, "sinusoidal");
    train["learning_rate"] = 1e-5;
    train["epochs"] = 30;
    tok["max_len"] = 512;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (tiny|paper)");
  }
  model["classifier_hidden"] = 300;
  model["classifier_dropout"] = 0.5;
  model["speaker_variant"] = false;
  model["s_max"] = 0;
  model["pool_specials"] = true;
  train["beta1"] = 0.9;
  train["beta2"] = 0.999;
  train["adam_eps"] = 1e-8;
  train["seed"] = 1;
  train["freeze_lower"] = false;
  train["log_base"] = "2";
  train["stop_at_train_accuracy"] = 0.0;
  tok["lowercase"] = true;
  j["model"] = std::move(model);
  j["train"] = std::move(train);
  j["tokenizer"] = std::move(tok);
  j["data"] = {{"train", ""}, {"val", ""}, {"test", ""}, {"labels", "friends4"}, {"out_of_set", "mask"}};
  j["vocab"] = {{"path", ""}, {"size", 8000}, {"min_freq", 1}};
  j["eval"] = {{"uwa_average", "all"}};
  return j;
}

void merge_config(ojson& base, const ojson& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config at '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    if (base[key].is_object()) {
      merge_config(base[key], value, where);
    } else {
      if (value.is_object() || value.is_array()) {
        throw ConfigError("config key '" + where + "' expects a scalar");
      }
      base[key] = value;
    }
  }
}

void apply_override(ojson& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ojson value = ojson::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  ojson patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos;) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("malformed config key '" + key + "'");
    patch = ojson{{*it, std::move(patch)}};
  }
  merge_config(tree, patch);
}

namespace {

EncoderConfig encoder_from(const ojson& j, const std::string& path) {
  EncoderConfig c;
  c.n_layers = get<std::size_t>(j.at("n_layers"), path + ".n_layers");
  c.n_heads = get<std::size_t>(j.at("n_heads"), path + ".n_heads");
  if (j.contains("d_model")) c.d_model = get<std::size_t>(j.at("d_model"), path + ".d_model");
  c.d_ff = get<std::size_t>(j.at("d_ff"), path + ".d_ff");
  c.attn_dropout = get<double>(j.at("dropout"), path + ".dropout");
  c.max_positions = get<std::size_t>(j.at("max_positions"), path + ".max_positions");
  c.positional_kind = positional_kind_from_string(get<std::string>(j.at("positional_kind"), path + ".positional_kind"));
  return c;
}

ojson encoder_to(const EncoderConfig& c, bool with_width) {
  ojson j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  if (with_width) j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["dropout"] = c.attn_dropout;
  j["max_positions"] = c.max_positions;
  j["positional_kind"] = to_string(c.positional_kind);
  return j;
}

}  // namespace

RunConfig run_config_from_json(const ojson& t) {
  RunConfig c;
  try {
    c.preset = get<std::string>(t.at("preset"), "preset");
    const auto& m = t.at("model");
    c.model.lower = encoder_from(m.at("lower"), "model.lower");
    c.model.upper = encoder_from(m.at("upper"), "model.upper");
    c.model.classifier_hidden = get<std::size_t>(m.at("classifier_hidden"), "model.classifier_hidden");
    c.model.classifier_dropout = get<double>(m.at("classifier_dropout"), "model.classifier_dropout");
    c.model.speaker_variant = get<bool>(m.at("speaker_variant"), "model.speaker_variant");
    c.s_max = get<std::size_t>(m.at("s_max"), "model.s_max");
    c.model.pool_specials = get<bool>(m.at("pool_specials"), "model.pool_specials");

    const auto& tr = t.at("train");
    c.train.learning_rate = get<double>(tr.at("learning_rate"), "train.learning_rate");
    c.train.beta1 = get<double>(tr.at("beta1"), "train.beta1");
    c.train.beta2 = get<double>(tr.at("beta2"), "train.beta2");
    c.train.adam_eps = get<double>(tr.at("adam_eps"), "train.adam_eps");
    c.train.epochs = get<std::size_t>(tr.at("epochs"), "train.epochs");
    c.train.seed = get<std::uint64_t>(tr.at("seed"), "train.seed");
    c.train.freeze_lower = get<bool>(tr.at("freeze_lower"), "train.freeze_lower");
    const auto& lb = tr.at("log_base");
    c.train.log_base = log_base_from_string(lb.is_string() ? lb.get<std::string>() : lb.dump());
    c.train.stop_at_train_accuracy = get<double>(tr.at("stop_at_train_accuracy"), "train.stop_at_train_accuracy");

    const auto& tok = t.at("tokenizer");
    c.tokenizer.max_len = get<std::size_t>(tok.at("max_len"), "tokenizer.max_len");
    c.tokenizer.lowercase = get<bool>(tok.at("lowercase"), "tokenizer.lowercase");

    const auto& d = t.at("data");
    c.train_path = get<std::string>(d.at("train"), "data.train");
    c.val_path = get<std::string>(d.at("val"), "data.val");
    c.test_path = get<std::string>(d.at("test"), "data.test");
    c.labels = get<std::string>(d.at("labels"), "data.labels");
    const auto policy = get<std::string>(d.at("out_of_set"), "data.out_of_set");
    if (policy == "mask") {
      c.out_of_set = OutOfSetPolicy::mask;
    } else if (policy == "drop") {
      c.out_of_set = OutOfSetPolicy::drop;
    } else {
      throw ConfigError("data.out_of_set must be mask or drop, got '" + policy + "'");
    }

    const auto& v = t.at("vocab");
    c.vocab_path = get<std::string>(v.at("path"), "vocab.path");
    c.vocab_size = get<std::size_t>(v.at("size"), "vocab.size");
    c.vocab_min_freq = get<std::size_t>(v.at("min_freq"), "vocab.min_freq");

    const auto avg = get<std::string>(t.at("eval").at("uwa_average"), "eval.uwa_average");
    if (avg == "all") {
      c.uwa_average = UwaAverage::all_classes;
    } else if (avg == "present") {
      c.uwa_average = UwaAverage::present_only;
    } else {
      throw ConfigError("eval.uwa_average must be all or present, got '" + avg + "'");
    }
  } catch (const nlohmann::json::out_of_range& e) {
    throw ConfigError(std::string("incomplete config: ") + e.what());
  }
  c.train.validate();
  c.tokenizer.validate();
  c.model.lower.validate();
  if (c.model.lower.positional_kind == PositionalKind::learned &&
      c.tokenizer.max_len > c.model.lower.max_positions) {
    throw ConfigError("tokenizer.max_len " + std::to_string(c.tokenizer.max_len) +
                      " exceeds model.lower.max_positions " + std::to_string(c.model.lower.max_positions));
  }
  (void)c.label_set();
  return c;
}

ojson run_config_to_json(const RunConfig& c) {
  ojson j = preset_json(c.preset);
  j["model"]["lower"] = encoder_to(c.model.lower, true);
  j["model"]["upper"] = encoder_to(c.model.upper, false);
  j["model"]["classifier_hidden"] = c.model.classifier_hidden;
  j["model"]["classifier_dropout"] = c.model.classifier_dropout;
  j["model"]["speaker_variant"] = c.model.speaker_variant;
  j["model"]["s_max"] = c.s_max;
  j["model"]["pool_specials"] = c.model.pool_specials;
  j["train"]["learning_rate"] = c.train.learning_rate;
  j["train"]["beta1"] = c.train.beta1;
  j["train"]["beta2"] = c.train.beta2;
  j["train"]["adam_eps"] = c.train.adam_eps;
  j["train"]["epochs"] = c.train.epochs;
  j["train"]["seed"] = c.train.seed;
  j["train"]["freeze_lower"] = c.train.freeze_lower;
  j["train"]["log_base"] = to_string(c.train.log_base);
  j["train"]["stop_at_train_accuracy"] = c.train.stop_at_train_accuracy;
  j["tokenizer"]["max_len"] = c.tokenizer.max_len;
  j["tokenizer"]["lowercase"] = c.tokenizer.lowercase;
  j["data"]["train"] = c.train_path;
  j["data"]["val"] = c.val_path;
  j["data"]["test"] = c.test_path;
  j["data"]["labels"] = c.labels;
  j["data"]["out_of_set"] = c.out_of_set == OutOfSetPolicy::mask ? "mask" : "drop";
  j["vocab"]["path"] = c.vocab_path;
  j["vocab"]["size"] = c.vocab_size;
  j["vocab"]["min_freq"] = c.vocab_min_freq;
  j["eval"]["uwa_average"] = c.uwa_average == UwaAverage::all_classes ? "all" : "present";
  return j;
}

RunConfig load_run_config(const ConfigSources& sources) {
  ojson tree = preset_json(sources.preset);
  if (sources.file) {
    std::ifstream in(*sources.file);
    if (!in) throw IoError("cannot open config " + *sources.file);
    ojson file = ojson::parse(in, nullptr, false);
    if (file.is_discarded()) throw ParseError(*sources.file + ": not valid JSON");
    if (file.contains("preset")) {
      const auto preset = get<std::string>(file["preset"], "preset");
      if (preset != sources.preset) tree = preset_json(preset);
    }
    merge_config(tree, file);
  }
  for (const auto& o : sources.overrides) {
    if (o.rfind("preset=", 0) == 0) {
      throw ConfigError("choose the preset with --preset, not --set");
    }
    apply_override(tree, o);
  }
  return run_config_from_json(tree);
}

std::size_t padded_s_max(std::size_t d_lower, std::size_t n_heads, std::size_t needed) {
  if (n_heads == 0) throw ConfigError("n_heads must be >= 1");
  std::size_t s = std::max<std::size_t>(needed, 1);
  while ((d_lower + s) % n_heads != 0) ++s;
  return s;
}

HiTransformerConfig resolve_model(const RunConfig& cfg, std::size_t vocab_size,
                                  std::size_t n_classes, std::size_t corpus_s_max) {
  HiTransformerConfig m = cfg.model;
  m.vocab_size = vocab_size;
  m.n_classes = n_classes;
  if (m.speaker_variant) {
    if (cfg.s_max != 0 && cfg.s_max < corpus_s_max) {
      throw CapacityError("model.s_max " + std::to_string(cfg.s_max) + " is below the corpus's " +
                          std::to_string(corpus_s_max) + " distinct speakers per dialog");
    }
    m.s_max = cfg.s_max != 0 ? cfg.s_max : padded_s_max(m.lower.d_model, m.upper.n_heads, corpus_s_max);
  } else {
    m.s_max = std::max<std::size_t>(cfg.s_max, 1);
  }
  m.upper.d_model = m.upper_width();
  if (m.upper.d_ff == 0) m.upper.d_ff = 4 * m.upper.d_model;
  m.validate();
  return m;
}

}  // namespace hitrans
