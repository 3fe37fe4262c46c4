#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hitrans/data.hpp"
#include "hitrans/metrics.hpp"
#include "hitrans/model.hpp"
#include "hitrans/tensor.hpp"
#include "hitrans/tokenizer.hpp"

namespace hitrans {

struct ClassWeights {
  std::vector<double> w;             // w_c = a_c / sum(a)
  std::vector<std::size_t> counts;   // a_c from the training split
};

// Throws ConfigError naming the class when some a_c is zero.
ClassWeights class_weights_from_counts(std::vector<std::size_t> counts,
                                       std::span<const std::string> label_set = {});
ClassWeights class_weights(std::span<const Dialog> train, std::span<const std::string> label_set);

enum class LogBase { two, natural };
std::string to_string(LogBase base);
LogBase log_base_from_string(const std::string& name);

inline constexpr Real kProbabilityFloor = 1e-12;

struct LossTerm {
  Tensor total;            // scalar: sum over unmasked utterances of (1/w_c) * -log(p_c)
  std::size_t count = 0;   // unmasked utterances that contributed
};

LossTerm weighted_ce(const Tensor& probabilities, std::span<const std::optional<std::size_t>> gold,
                     const ClassWeights& weights, LogBase base = LogBase::two);

struct AdamConfig {
  Real learning_rate = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

// Bias-corrected Adam over a fixed, named parameter list.
class Adam {
public:
  Adam(NamedTensors params, AdamConfig cfg);

  // Parameters for which `frozen(name)` holds are left untouched. Missing
  // gradients count as zero.
  void step(const std::function<bool(const std::string&)>& frozen = {});
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<Real>>& first_moments() const { return m_; }
  const std::vector<std::vector<Real>>& second_moments() const { return v_; }

private:
  NamedTensors params_;
  AdamConfig cfg_;
  std::vector<std::vector<Real>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  Real learning_rate = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real adam_eps = 1e-8;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  bool freeze_lower = false;
  LogBase log_base = LogBase::two;
  // Stop once training accuracy (eval mode) reaches this fraction; 0 disables.
  double stop_at_train_accuracy = 0.0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_wa = 0.0;
  double val_uwa = 0.0;
  double seconds = 0.0;
  std::optional<double> train_accuracy;
};

std::string epoch_log_json(const EpochLog& log);

struct TrainResult {
  ModelParams best;        // parameters at the best validation macro-F1
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
  std::size_t optimizer_steps = 0;
  ClassWeights weights;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// One dialog per optimizer step, seeded shuffle each epoch, validation after
// each epoch, model selection on validation macro-F1.
TrainResult train(const Corpus& corpus, const Vocab& vocab, const TokenizerConfig& tok_cfg,
                  const HiTransformerConfig& model_cfg, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch = {});

// Eval-mode predictions over many dialogs. `threads` > 1 shards dialogs across
// workers; totals are identical for any thread count.
std::vector<std::vector<std::size_t>> predict_all(const ModelParams& params,
                                                  std::span<const EncodedDialog> dialogs,
                                                  unsigned threads = 1);
EvaluationReport evaluate(const ModelParams& params, std::span<const EncodedDialog> dialogs,
                          std::vector<std::string> label_set, unsigned threads = 1,
                          UwaAverage average = UwaAverage::all_classes);
// Fraction of unmasked utterances predicted correctly.
double accuracy(const ModelParams& params, std::span<const EncodedDialog> dialogs,
                unsigned threads = 1);

// HITRANS_THREADS if set and positive, otherwise 1.
unsigned eval_threads_from_env();

std::vector<std::vector<Real>> snapshot(const ModelParams& params);
void restore(ModelParams& params, const std::vector<std::vector<Real>>& values);

}  // namespace hitrans
