#include "hitrans/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <thread>

#include "hitrans/errors.hpp"
#include "json.hpp"

namespace hitrans {

// ---- class weights ---------------------------------------------------------

ClassWeights class_weights_from_counts(std::vector<std::size_t> counts,
                                       std::span<const std::string> label_set) {
  if (counts.empty()) throw ConfigError("class weights need at least one class");
  std::size_t total = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      const std::string name = c < label_set.size() ? "'" + label_set[c] + "'" : std::to_string(c);
      throw ConfigError("class " + name +
                        " has no training utterances, so its loss weight 1/w_c is undefined; "
                        "remove it from the label set");
    }
    total += counts[c];
  }
  ClassWeights cw;
  cw.w.reserve(counts.size());
  for (auto a : counts) cw.w.push_back(static_cast<double>(a) / static_cast<double>(total));
  cw.counts = std::move(counts);
  return cw;
}

ClassWeights class_weights(std::span<const Dialog> train, std::span<const std::string> label_set) {
  return class_weights_from_counts(split_stats(train, label_set).per_class, label_set);
}

// ---- loss ------------------------------------------------------------------

std::string to_string(LogBase base) { return base == LogBase::two ? "2" : "e"; }

LogBase log_base_from_string(const std::string& name) {
  if (name == "2") return LogBase::two;
  if (name == "e" || name == "natural") return LogBase::natural;
  throw ConfigError("unknown log base '" + name + "' (2|e)");
}

LossTerm weighted_ce(const Tensor& probabilities, std::span<const std::optional<std::size_t>> gold,
                     const ClassWeights& weights, LogBase base) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != gold.size()) {
    throw DimensionError("weighted_ce: probabilities " + shape_str(probabilities.shape()) +
                         " do not match " + std::to_string(gold.size()) + " gold labels");
  }
  const std::size_t n_classes = probabilities.dim(1);
  if (weights.w.size() != n_classes) {
    throw DimensionError("weighted_ce: " + std::to_string(weights.w.size()) +
                         " class weights for " + std::to_string(n_classes) + " classes");
  }
  const Real log_scale = base == LogBase::two ? 1.0 / std::numbers::ln2 : 1.0;
  const auto P = probabilities.data();

  // (flat index, coefficient 1/w_c) per contributing utterance
  std::vector<std::pair<std::size_t, Real>> terms;
  Real total = 0.0;
  for (std::size_t j = 0; j < gold.size(); ++j) {
    if (!gold[j]) continue;
    const std::size_t c = *gold[j];
    if (c >= n_classes) {
      throw IndexError("gold class " + std::to_string(c) + " out of range for " +
                       std::to_string(n_classes) + " classes");
    }
    const std::size_t idx = j * n_classes + c;
    const Real coef = 1.0 / weights.w[c];
    const Real clamped = std::max(P[idx], kProbabilityFloor);
    total += coef * -(base == LogBase::two ? std::log2(clamped) : std::log(clamped));
    terms.emplace_back(idx, coef);
  }
  LossTerm out;
  out.count = terms.size();
  out.total = detail::make_op(
      "weighted_ce", {}, {total}, {probabilities},
      [terms = std::move(terms), log_scale](detail::Node& self) {
        auto& d = self.inputs[0]->ensure_grad();
        const auto& p = self.inputs[0]->data;
        for (const auto& [idx, coef] : terms) {
          if (p[idx] >= kProbabilityFloor) d[idx] -= self.grad[0] * coef * log_scale / p[idx];
        }
      });
  return out;
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(NamedTensors params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(const std::function<bool(const std::string&)>& frozen) {
  for (auto& [name, t] : params_) {
    if (frozen && frozen(name)) continue;
    if (!t.has_grad()) continue;
    for (Real g : t.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  const Real bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& [name, t] = params_[p];
    if (frozen && frozen(name)) continue;
    auto theta = t.mutable_data();
    const bool has_grad = t.has_grad();
    const std::span<const Real> grad = has_grad ? t.grad() : std::span<const Real>{};
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const Real g = has_grad ? grad[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const Real m_hat = m[i] / bias1;
      const Real v_hat = v[i] / bias2;
      theta[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---- training loop -----------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(stop_at_train_accuracy >= 0.0 && stop_at_train_accuracy <= 1.0)) {
    throw ConfigError("stop_at_train_accuracy must lie in [0,1]");
  }
}

std::string epoch_log_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["mean_train_loss"] = log.mean_train_loss;
  j["val_macro_f1"] = log.val_macro_f1;
  j["val_wa"] = log.val_wa;
  j["val_uwa"] = log.val_uwa;
  j["seconds"] = log.seconds;
  if (log.train_accuracy) j["train_accuracy"] = *log.train_accuracy;
  return j.dump();
}

std::vector<std::vector<Real>> snapshot(const ModelParams& params) {
  std::vector<std::vector<Real>> values;
  for (const auto& [name, t] : params.named_parameters()) {
    values.emplace_back(t.data().begin(), t.data().end());
  }
  return values;
}

void restore(ModelParams& params, const std::vector<std::vector<Real>>& values) {
  auto named = params.named_parameters();
  if (named.size() != values.size()) throw ContractError("snapshot does not match the model");
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].second.mutable_data();
    if (dst.size() != values[i].size()) throw ContractError("snapshot does not match the model");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

namespace {

std::vector<EncodedDialog> encode_split(std::span<const Dialog> dialogs, const Vocab& vocab,
                                        const TokenizerConfig& cfg,
                                        std::span<const std::string> label_set) {
  std::vector<EncodedDialog> out;
  out.reserve(dialogs.size());
  for (const auto& d : dialogs) out.push_back(encode_dialog(d, vocab, cfg, label_set));
  return out;
}

}  // namespace

TrainResult train(const Corpus& corpus, const Vocab& vocab, const TokenizerConfig& tok_cfg,
                  const HiTransformerConfig& model_cfg, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch) {
  train_cfg.validate();
  tok_cfg.validate();
  if (corpus.train.empty()) throw TrainingError("training split is empty");
  if (corpus.val.empty()) throw TrainingError("validation split is empty");
  if (model_cfg.n_classes != corpus.label_set.size()) {
    throw ConfigError("model n_classes does not match the corpus label set");
  }
  if (model_cfg.vocab_size != vocab.size()) {
    throw ConfigError("model vocab_size does not match the vocabulary");
  }

  TrainResult result;
  result.weights = class_weights(corpus.train, corpus.label_set);
  const auto train_set = encode_split(corpus.train, vocab, tok_cfg, corpus.label_set);
  const auto val_set = encode_split(corpus.val, vocab, tok_cfg, corpus.label_set);

  std::size_t total_count = 0;
  for (const auto& d : train_set) {
    for (const auto& g : d.gold) total_count += g.has_value();
  }
  if (total_count == 0) throw TrainingError("training split has no labelled utterances");
  const Real normaliser = 1.0 / static_cast<Real>(total_count);

  ModelParams params = ModelParams::init(model_cfg, train_cfg.seed);
  Adam adam(params.named_parameters(), {train_cfg.learning_rate, train_cfg.beta1,
                                        train_cfg.beta2, train_cfg.adam_eps});
  std::function<bool(const std::string&)> frozen;
  if (train_cfg.freeze_lower) {
    frozen = [&params](const std::string& name) { return params.is_lower_parameter(name); };
  }

  Rng rng(train_cfg.seed);
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.rng = &rng;

  const unsigned threads = eval_threads_from_env();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_f1 = -1.0;
  std::vector<std::vector<Real>> best_values;

  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    Real epoch_loss = 0.0;
    for (std::size_t i : order) {
      const auto out = dialog_forward(params, train_set[i], ctx);
      const auto term = weighted_ce(out.probabilities, train_set[i].gold, result.weights,
                                    train_cfg.log_base);
      const Real value = term.total.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", dialog " +
                            std::to_string(i));
      }
      epoch_loss += value;
      backward(scale(term.total, normaliser));
      adam.step(frozen);
      adam.zero_grad();
      ++result.optimizer_steps;
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_train_loss = epoch_loss * normaliser;
    const auto report = evaluate(params, val_set, corpus.label_set, threads);
    log.val_macro_f1 = report.macro_f1;
    log.val_wa = report.wa;
    log.val_uwa = report.uwa;
    if (train_cfg.stop_at_train_accuracy > 0.0) log.train_accuracy = accuracy(params, train_set, threads);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (report.macro_f1 > best_f1) {
      best_f1 = report.macro_f1;
      result.best_epoch = epoch;
      best_values = snapshot(params);
    }
    if (log.train_accuracy && *log.train_accuracy >= train_cfg.stop_at_train_accuracy) break;
  }
  restore(params, best_values);
  result.best = std::move(params);
  return result;
}

// ---- evaluation ----------------------------------------------------------------

std::vector<std::vector<std::size_t>> predict_all(const ModelParams& params,
                                                  std::span<const EncodedDialog> dialogs,
                                                  unsigned threads) {
  std::vector<std::vector<std::size_t>> preds(dialogs.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(dialogs.size())));
  auto worker = [&](unsigned w) {
    for (std::size_t i = w; i < dialogs.size(); i += threads) preds[i] = predict(params, dialogs[i]);
  };
  if (threads == 1) {
    worker(0);
    return preds;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
  pool.clear();
  return preds;
}

EvaluationReport evaluate(const ModelParams& params, std::span<const EncodedDialog> dialogs,
                          std::vector<std::string> label_set, unsigned threads,
                          UwaAverage average) {
  const auto preds = predict_all(params, dialogs, threads);
  ConfusionMatrix cm(label_set.size());
  std::size_t masked = 0;
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    cm.merge(confusion(preds[i], dialogs[i].gold, label_set.size()));
    for (const auto& g : dialogs[i].gold) masked += !g.has_value();
  }
  return make_report(cm, std::move(label_set), masked, average);
}

double accuracy(const ModelParams& params, std::span<const EncodedDialog> dialogs,
                unsigned threads) {
  const auto preds = predict_all(params, dialogs, threads);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    for (std::size_t j = 0; j < preds[i].size(); ++j) {
      if (!dialogs[i].gold[j]) continue;
      ++total;
      correct += *dialogs[i].gold[j] == preds[i][j];
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

unsigned eval_threads_from_env() {
  if (const char* v = std::getenv("HITRANS_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

}  // namespace hitrans
