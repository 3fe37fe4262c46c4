#include "hitrans/encoder.hpp"

#include <cmath>
#include <numeric>

#include "hitrans/errors.hpp"

namespace hitrans {

namespace {

Tensor normal_init(Shape shape, Real stddev, Rng& rng) {
  std::normal_distribution<Real> dist(0.0, stddev);
  std::vector<Real> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

constexpr Real kInitStd = 0.02;

}  // namespace

std::string to_string(PositionalKind kind) {
  switch (kind) {
    case PositionalKind::learned: return "learned";
    case PositionalKind::sinusoidal: return "sinusoidal";
    case PositionalKind::none: return "none";
  }
  return "none";
}

PositionalKind positional_kind_from_string(const std::string& name) {
  if (name == "learned") return PositionalKind::learned;
  if (name == "sinusoidal") return PositionalKind::sinusoidal;
  if (name == "none") return PositionalKind::none;
  throw ConfigError("unknown positional kind '" + name + "' (learned|sinusoidal|none)");
}

void EncoderConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_positions < 1) {
    throw ConfigError("encoder counts and dimensions must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) {
    throw ConfigError("encoder dropout must lie in [0,1)");
  }
}

std::size_t EncoderConfig::parameter_count() const {
  const std::size_t d = d_model;
  const std::size_t per_layer = 4 * (d * d + d) + (d * d_ff + d_ff) + (d_ff * d + d) + 4 * d;
  const std::size_t table = positional_kind == PositionalKind::learned ? max_positions * d : 0;
  return n_layers * per_layer + table;
}

EncoderStack EncoderStack::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderStack stack;
  stack.cfg_ = cfg;
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams p;
    p.w_query = normal_init({d, d}, kInitStd, rng);
    p.b_query = Tensor::zeros({d}, true);
    p.w_key = normal_init({d, d}, kInitStd, rng);
    p.b_key = Tensor::zeros({d}, true);
    p.w_value = normal_init({d, d}, kInitStd, rng);
    p.b_value = Tensor::zeros({d}, true);
    p.w_out = normal_init({d, d}, kInitStd, rng);
    p.b_out = Tensor::zeros({d}, true);
    p.w_ff_in = normal_init({d, ff}, kInitStd, rng);
    p.b_ff_in = Tensor::zeros({ff}, true);
    p.w_ff_out = normal_init({ff, d}, kInitStd, rng);
    p.b_ff_out = Tensor::zeros({d}, true);
    p.ln_attn_gamma = Tensor::full({d}, 1.0, true);
    p.ln_attn_beta = Tensor::zeros({d}, true);
    p.ln_ff_gamma = Tensor::full({d}, 1.0, true);
    p.ln_ff_beta = Tensor::zeros({d}, true);
    stack.layers_.push_back(std::move(p));
  }
  if (cfg.positional_kind == PositionalKind::learned) {
    stack.positions_ = normal_init({cfg.max_positions, d}, kInitStd, rng);
  }
  return stack;
}

NamedTensors EncoderStack::named_parameters(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    const std::string base = prefix + "layer" + std::to_string(l) + ".";
    out.emplace_back(base + "attn.w_query", p.w_query);
    out.emplace_back(base + "attn.b_query", p.b_query);
    out.emplace_back(base + "attn.w_key", p.w_key);
    out.emplace_back(base + "attn.b_key", p.b_key);
    out.emplace_back(base + "attn.w_value", p.w_value);
    out.emplace_back(base + "attn.b_value", p.b_value);
    out.emplace_back(base + "attn.w_out", p.w_out);
    out.emplace_back(base + "attn.b_out", p.b_out);
    out.emplace_back(base + "ff.w_in", p.w_ff_in);
    out.emplace_back(base + "ff.b_in", p.b_ff_in);
    out.emplace_back(base + "ff.w_out", p.w_ff_out);
    out.emplace_back(base + "ff.b_out", p.b_ff_out);
    out.emplace_back(base + "ln_attn.gamma", p.ln_attn_gamma);
    out.emplace_back(base + "ln_attn.beta", p.ln_attn_beta);
    out.emplace_back(base + "ln_ff.gamma", p.ln_ff_gamma);
    out.emplace_back(base + "ln_ff.beta", p.ln_ff_beta);
  }
  if (positions_.defined()) out.emplace_back(prefix + "positions", positions_);
  return out;
}

std::size_t EncoderStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters("")) n += t.numel();
  return n;
}

// ---- forward ----------------------------------------------------------------

Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> mask,
                            const LayerParams& layer, std::size_t n_heads,
                            const ForwardContext& ctx) {
  if (x.rank() != 2 || x.dim(0) < 1) {
    throw DimensionError("attention input must be [T,d], got " + shape_str(x.shape()));
  }
  const std::size_t t = x.dim(0);
  const std::size_t d = x.dim(1);
  if (layer.w_query.dim(0) != d) {
    throw DimensionError("attention input width " + std::to_string(d) +
                         " does not match d_model " + std::to_string(layer.w_query.dim(0)));
  }
  if (!mask.empty() && mask.size() != t) {
    throw DimensionError("attention mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(t) + " positions");
  }
  const std::size_t head_dim = d / n_heads;
  const Real score_scale = 1.0 / std::sqrt(static_cast<Real>(head_dim));

  const Tensor q = add(matmul(x, layer.w_query), layer.b_query);
  const Tensor k = add(matmul(x, layer.w_key), layer.b_key);
  const Tensor v = add(matmul(x, layer.w_value), layer.b_value);

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t col = h * head_dim;
    const Tensor qh = slice_cols(q, col, head_dim);
    const Tensor kh = slice_cols(k, col, head_dim);
    const Tensor vh = slice_cols(v, col, head_dim);
    const Tensor scores = scale(matmul(qh, transpose(kh)), score_scale);
    const Tensor weights = softmax_rows(scores, mask);
    if (ctx.trace) ctx.trace->weights.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return add(matmul(merged, layer.w_out), layer.b_out);
}

Tensor transformer_layer(const Tensor& x, std::span<const std::uint8_t> mask,
                         const LayerParams& layer, const EncoderConfig& cfg,
                         const ForwardContext& ctx) {
  const Tensor attn = multi_head_attention(x, mask, layer, cfg.n_heads, ctx);
  const Tensor h = layer_norm(add(x, dropout(attn, cfg.attn_dropout, ctx.mode, ctx.rng)),
                              layer.ln_attn_gamma, layer.ln_attn_beta);
  const Tensor ff = add(matmul(gelu(add(matmul(h, layer.w_ff_in), layer.b_ff_in)), layer.w_ff_out),
                        layer.b_ff_out);
  return layer_norm(add(h, dropout(ff, cfg.attn_dropout, ctx.mode, ctx.rng)), layer.ln_ff_gamma,
                    layer.ln_ff_beta);
}

Tensor add_positions(const Tensor& x, const EncoderStack& stack) {
  const auto& cfg = stack.config();
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) {
    throw DimensionError("encoder input must be [T," + std::to_string(cfg.d_model) + "], got " +
                         shape_str(x.shape()));
  }
  const std::size_t t = x.dim(0);
  switch (cfg.positional_kind) {
    case PositionalKind::none:
      return x;
    case PositionalKind::sinusoidal:
      return add(x, sinusoidal_positions(t, cfg.d_model));
    case PositionalKind::learned: {
      if (t > cfg.max_positions) {
        throw LengthError("sequence of length " + std::to_string(t) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
      }
      std::vector<std::int32_t> rows(t);
      std::iota(rows.begin(), rows.end(), 0);
      return add(x, embedding_lookup(stack.positions(), rows));
    }
  }
  return x;
}

Tensor encode_layers(const Tensor& x, std::span<const std::uint8_t> mask,
                     const EncoderStack& stack, const ForwardContext& ctx) {
  Tensor h = x;
  for (const auto& layer : stack.layers()) h = transformer_layer(h, mask, layer, stack.config(), ctx);
  return h;
}

Tensor encode(const Tensor& x, std::span<const std::uint8_t> mask, const EncoderStack& stack,
              const ForwardContext& ctx) {
  return encode_layers(add_positions(x, stack), mask, stack, ctx);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError("sinusoidal positions need an even dimension, got " + std::to_string(d));
  }
  if (length == 0) throw DimensionError("sinusoidal positions need length >= 1");
  std::vector<Real> table(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const Real angle = static_cast<Real>(pos) /
                         std::pow(10000.0, static_cast<Real>(2 * i) / static_cast<Real>(d));
      table[pos * d + 2 * i] = std::sin(angle);
      table[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({length, d}, std::move(table));
}

}  // namespace hitrans
