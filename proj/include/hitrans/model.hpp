#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hitrans/data.hpp"
#include "hitrans/encoder.hpp"
#include "hitrans/tensor.hpp"
#include "hitrans/tokenizer.hpp"

namespace hitrans {

struct HiTransformerConfig {
  EncoderConfig lower;
  EncoderConfig upper;
  std::size_t vocab_size = 0;
  std::size_t n_classes = 0;
  std::size_t classifier_hidden = 300;
  Real classifier_dropout = 0.5;
  bool speaker_variant = false;
  std::size_t s_max = 1;
  // Whether [CLS]/[SEP] take part in the utterance max-pool.
  bool pool_specials = true;

  // Checks the speaker/upper width coupling among other things.
  void validate() const;
  std::size_t upper_width() const { return lower.d_model + (speaker_variant ? s_max : 0); }
};

// Every trainable tensor of the model.
struct ModelParams {
  HiTransformerConfig config;
  Tensor token_embedding;   // [V, d_lower]
  EncoderStack lower;       // owns the learned lower position table
  Tensor upper_positions;   // [upper.max_positions, d_lower], learned upper positions only
  EncoderStack upper;
  Tensor w_hidden, b_hidden, w_out, b_out;

  static ModelParams init(const HiTransformerConfig& cfg, std::uint64_t seed);
  // Stable names, used for checkpoints and optimizer bookkeeping.
  NamedTensors named_parameters() const;
  bool is_lower_parameter(const std::string& name) const;
  std::size_t parameter_count() const;
};

struct EncodedDialog {
  std::vector<Encoding> utterances;
  std::vector<std::string> speakers;
  std::vector<std::optional<std::size_t>> gold;
};

EncodedDialog encode_dialog(const Dialog& dialog, const Vocab& vocab, const TokenizerConfig& cfg,
                            std::span<const std::string> label_set);

// Rows are one-hots of each speaker's first-appearance index, zero padded to s_max.
Tensor speaker_onehots(std::span<const std::string> speakers, std::size_t s_max);

// Token embedding plus learned lower position, row by row.
Tensor embed_utterance(const ModelParams& params, std::span<const std::int32_t> ids);

// Lower-encoded, then max-pooled over the pooling-eligible positions.
Tensor utterance_vector(const ModelParams& params, const Encoding& utterance,
                        const ForwardContext& ctx);

struct DialogOutput {
  Tensor upper_input;    // [N_i, upper width]
  Tensor logits;         // [N_i, n_classes]
  Tensor probabilities;  // softmax of logits
};

DialogOutput dialog_forward(const ModelParams& params, const EncodedDialog& dialog,
                            const ForwardContext& ctx);

// Row-wise argmax, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& scores);
std::vector<std::size_t> predict(const ModelParams& params, const EncodedDialog& dialog);

}  // namespace hitrans
