#include "hitrans/model.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "hitrans/errors.hpp"

namespace hitrans {

void HiTransformerConfig::validate() const {
  lower.validate();
  upper.validate();
  if (vocab_size < 5) throw ConfigError("vocab_size must cover the specials plus one token");
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (classifier_hidden < 1) throw ConfigError("classifier_hidden must be >= 1");
  if (!(classifier_dropout >= 0.0 && classifier_dropout < 1.0)) {
    throw ConfigError("classifier_dropout must lie in [0,1)");
  }
  if (s_max < 1) throw ConfigError("s_max must be >= 1");
  if (upper.d_model != upper_width()) {
    throw ConfigError("upper d_model " + std::to_string(upper.d_model) + " must equal " +
                      (speaker_variant ? "lower d_model + s_max = " : "lower d_model = ") +
                      std::to_string(upper_width()));
  }
  if (upper.positional_kind == PositionalKind::sinusoidal && lower.d_model % 2 != 0) {
    throw ConfigError("sinusoidal upper positions need an even lower d_model");
  }
}

namespace {

Tensor normal_param(Shape shape, Rng& rng) {
  std::normal_distribution<Real> dist(0.0, 0.02);
  std::vector<Real> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// The upper stack never owns positions; the model adds them at the lower width
// before the speaker one-hots are appended.
EncoderConfig upper_stack_config(const HiTransformerConfig& cfg) {
  EncoderConfig c = cfg.upper;
  c.positional_kind = PositionalKind::none;
  return c;
}

}  // namespace

ModelParams ModelParams::init(const HiTransformerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = cfg;
  const std::size_t d = cfg.lower.d_model;
  p.token_embedding = normal_param({cfg.vocab_size, d}, rng);
  p.lower = EncoderStack::init(cfg.lower, rng);
  if (cfg.upper.positional_kind == PositionalKind::learned) {
    p.upper_positions = normal_param({cfg.upper.max_positions, d}, rng);
  }
  p.upper = EncoderStack::init(upper_stack_config(cfg), rng);
  p.w_hidden = normal_param({cfg.upper_width(), cfg.classifier_hidden}, rng);
  p.b_hidden = Tensor::zeros({cfg.classifier_hidden}, true);
  p.w_out = normal_param({cfg.classifier_hidden, cfg.n_classes}, rng);
  p.b_out = Tensor::zeros({cfg.n_classes}, true);
  return p;
}

NamedTensors ModelParams::named_parameters() const {
  NamedTensors out;
  out.emplace_back("lower.token_embedding", token_embedding);
  for (auto& nt : lower.named_parameters("lower.")) out.push_back(std::move(nt));
  if (upper_positions.defined()) out.emplace_back("upper.positions", upper_positions);
  for (auto& nt : upper.named_parameters("upper.")) out.push_back(std::move(nt));
  out.emplace_back("classifier.w_hidden", w_hidden);
  out.emplace_back("classifier.b_hidden", b_hidden);
  out.emplace_back("classifier.w_out", w_out);
  out.emplace_back("classifier.b_out", b_out);
  return out;
}

bool ModelParams::is_lower_parameter(const std::string& name) const {
  return name.rfind("lower.", 0) == 0;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

EncodedDialog encode_dialog(const Dialog& dialog, const Vocab& vocab, const TokenizerConfig& cfg,
                            std::span<const std::string> label_set) {
  EncodedDialog out;
  out.utterances.reserve(dialog.utterances.size());
  for (const auto& u : dialog.utterances) out.utterances.push_back(encode(u.text, vocab, cfg));
  out.speakers = speakers_of(dialog);
  out.gold = gold_labels(dialog, label_set);
  return out;
}

Tensor speaker_onehots(std::span<const std::string> speakers, std::size_t s_max) {
  if (speakers.empty()) throw ContractError("speaker list is empty");
  std::unordered_map<std::string, std::size_t> first_seen;
  std::vector<Real> rows(speakers.size() * s_max, 0.0);
  for (std::size_t j = 0; j < speakers.size(); ++j) {
    auto [it, inserted] = first_seen.emplace(speakers[j], first_seen.size());
    if (it->second >= s_max) {
      throw CapacityError("dialog has more than s_max = " + std::to_string(s_max) +
                          " distinct speakers");
    }
    rows[j * s_max + it->second] = 1.0;
  }
  return Tensor::from_data({speakers.size(), s_max}, std::move(rows));
}

Tensor embed_utterance(const ModelParams& params, std::span<const std::int32_t> ids) {
  if (ids.size() < 2) throw ContractError("an encoded utterance has at least [CLS] and [SEP]");
  return add_positions(embedding_lookup(params.token_embedding, ids), params.lower);
}

Tensor utterance_vector(const ModelParams& params, const Encoding& utterance,
                        const ForwardContext& ctx) {
  const Tensor contextual =
      encode_layers(embed_utterance(params, utterance.ids), {}, params.lower, ctx);
  std::vector<std::uint8_t> mask = utterance.pool_mask;
  if (mask.size() != utterance.ids.size()) {
    throw DimensionError("pool mask length does not match the id list");
  }
  // Without specials an empty utterance would have nothing to pool; keep them then.
  if (!params.config.pool_specials && mask.size() > 2) {
    mask.front() = 0;
    mask.back() = 0;
  }
  return max_pool_rows(contextual, mask);
}

DialogOutput dialog_forward(const ModelParams& params, const EncodedDialog& dialog,
                            const ForwardContext& ctx) {
  const auto& cfg = params.config;
  const std::size_t n = dialog.utterances.size();
  if (n == 0) throw ContractError("dialog has no utterances");
  if (cfg.speaker_variant && dialog.speakers.size() != n) {
    throw ContractError("speaker variant needs one speaker per utterance");
  }

  std::vector<Tensor> pooled;
  pooled.reserve(n);
  for (const auto& u : dialog.utterances) pooled.push_back(utterance_vector(params, u, ctx));
  Tensor u = stack(pooled);

  const std::size_t d = cfg.lower.d_model;
  switch (cfg.upper.positional_kind) {
    case PositionalKind::none:
      break;
    case PositionalKind::sinusoidal:
      u = add(u, sinusoidal_positions(n, d));
      break;
    case PositionalKind::learned: {
      if (n > cfg.upper.max_positions) {
        throw LengthError("dialog of " + std::to_string(n) + " utterances exceeds upper max_positions " +
                          std::to_string(cfg.upper.max_positions));
      }
      std::vector<std::int32_t> rows(n);
      std::iota(rows.begin(), rows.end(), 0);
      u = add(u, embedding_lookup(params.upper_positions, rows));
      break;
    }
  }
  if (cfg.speaker_variant) {
    const Tensor parts[] = {u, speaker_onehots(dialog.speakers, cfg.s_max)};
    u = concat(parts, 1);
  }

  DialogOutput out;
  out.upper_input = u;
  const Tensor t = encode_layers(u, {}, params.upper, ctx);
  Tensor hidden = selu(add(matmul(t, params.w_hidden), params.b_hidden));
  hidden = dropout(hidden, cfg.classifier_dropout, ctx.mode, ctx.rng);
  out.logits = add(matmul(hidden, params.w_out), params.b_out);
  out.probabilities = softmax_rows(out.logits);
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows needs a matrix");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  const auto s = scores.data();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j) {
      if (s[i * cols + j] > s[i * cols + out[i]]) out[i] = j;
    }
  }
  return out;
}

std::vector<std::size_t> predict(const ModelParams& params, const EncodedDialog& dialog) {
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.mode = Mode::eval;
  return argmax_rows(dialog_forward(params, dialog, ctx).logits);
}

}  // namespace hitrans
