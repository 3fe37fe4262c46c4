#include "hitrans/verification.hpp"

#include <chrono>
#include <cmath>

#include "hitrans/run_config.hpp"
#include "hitrans/training.hpp"

namespace hitrans {

ModelGradCheckReport model_grad_check(const ModelGradCheckOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const Corpus corpus = make_overfit_corpus(options.seed, {.dialogs = 4, .min_utterances = 4, .max_utterances = 6});
  std::vector<std::string> texts;
  for (const auto& d : corpus.train) {
    for (const auto& u : d.utterances) texts.push_back(u.text);
  }
  const Vocab vocab = build_vocab(texts, 200, 1);

  RunConfig rc = load_run_config({});
  rc.model.speaker_variant = options.speaker_variant;
  const auto cfg = resolve_model(rc, vocab.size(), corpus.label_set.size(), corpus.s_max);
  ModelParams params = ModelParams::init(cfg, options.seed);

  const auto weights = class_weights(corpus.train, corpus.label_set);
  const auto dialog = encode_dialog(corpus.train.front(), vocab, rc.tokenizer, corpus.label_set);
  ForwardContext ctx;
  ctx.mode = Mode::eval;

  Rng rng(options.seed);
  auto named = params.named_parameters();
  std::vector<Tensor> tensors;
  std::vector<std::string> names;
  for (auto& [name, t] : named) {
    if (options.jitter > 0.0) {
      // Projections get fan-in scaled noise so logits stay O(1) and the loss
      // moderate; tables, biases and LayerNorm vectors get a flat 0.1 * jitter.
      const bool projection = t.rank() == 2 && name.find("token_embedding") == std::string::npos &&
                              name.find("positions") == std::string::npos;
      const Real std = projection ? options.jitter / std::sqrt(static_cast<Real>(t.dim(0)))
                                  : 0.1 * options.jitter;
      std::normal_distribution<Real> noise(0.0, std);
      for (auto& v : t.mutable_data()) v += noise(rng);
    }
    // Softmax rows are invariant to the q.b_key shift, so this gradient is
    // identically zero and both sides of the comparison are pure roundoff.
    if (name.ends_with(".attn.b_key")) continue;
    names.push_back(name);
    tensors.push_back(t);
  }

  ModelGradCheckReport report;
  report.result = grad_check(
      [&] { return weighted_ce(dialog_forward(params, dialog, ctx).probabilities, dialog.gold, weights).total; },
      tensors, options.eps, options.samples, rng);
  report.worst_name = names[report.result.worst_param];
  report.parameters = params.parameter_count();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace hitrans
