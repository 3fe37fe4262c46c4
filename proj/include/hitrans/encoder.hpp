#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hitrans/tensor.hpp"

namespace hitrans {

enum class PositionalKind { learned, sinusoidal, none };

std::string to_string(PositionalKind kind);
PositionalKind positional_kind_from_string(const std::string& name);

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 128;
  // Applied to each sublayer output before the residual add.
  Real attn_dropout = 0.1;
  std::size_t max_positions = 512;
  PositionalKind positional_kind = PositionalKind::learned;

  void validate() const;
  // Closed-form trainable parameter count.
  std::size_t parameter_count() const;
};

struct LayerParams {
  Tensor w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Tensor w_ff_in, b_ff_in, w_ff_out, b_ff_out;
  Tensor ln_attn_gamma, ln_attn_beta, ln_ff_gamma, ln_ff_beta;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class EncoderStack {
public:
  EncoderStack() = default;
  // Projections ~ N(0, 0.02), biases 0, LN gamma 1 / beta 0.
  static EncoderStack init(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  // Defined only for PositionalKind::learned: [max_positions, d_model].
  const Tensor& positions() const { return positions_; }

  NamedTensors named_parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;

private:
  EncoderConfig cfg_;
  std::vector<LayerParams> layers_;
  Tensor positions_;
};

// Per-head attention probabilities, in layer-major then head order.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;
  AttentionTrace* trace = nullptr;
};

Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> mask,
                            const LayerParams& layer, std::size_t n_heads,
                            const ForwardContext& ctx);

// Post-norm: LN(x + Drop(MHA(x))) then LN(h + Drop(FFN(h))), GELU in the FFN.
Tensor transformer_layer(const Tensor& x, std::span<const std::uint8_t> mask,
                         const LayerParams& layer, const EncoderConfig& cfg,
                         const ForwardContext& ctx);

// Adds the stack's positional signal to x ([T, d_model]).
Tensor add_positions(const Tensor& x, const EncoderStack& stack);

// Runs the layers only, no positional signal.
Tensor encode_layers(const Tensor& x, std::span<const std::uint8_t> mask,
                     const EncoderStack& stack, const ForwardContext& ctx);

// add_positions followed by encode_layers. Attention is bidirectional.
Tensor encode(const Tensor& x, std::span<const std::uint8_t> mask, const EncoderStack& stack,
              const ForwardContext& ctx);

Tensor sinusoidal_positions(std::size_t length, std::size_t d);

}  // namespace hitrans
