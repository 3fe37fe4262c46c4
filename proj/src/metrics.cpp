#include "hitrans/metrics.hpp"

#include "hitrans/errors.hpp"
#include "json.hpp"

namespace hitrans {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : n_(n_classes), counts_(n_classes * n_classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_counts(std::vector<std::vector<std::uint64_t>> counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (counts[g].size() != counts.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t p = 0; p < counts.size(); ++p) cm.counts_[g * cm.n_ + p] = counts[g][p];
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t gold, std::size_t pred, std::uint64_t count) {
  if (gold >= n_ || pred >= n_) {
    throw IndexError("class index (" + std::to_string(gold) + "," + std::to_string(pred) +
                     ") out of range for " + std::to_string(n_) + " classes");
  }
  counts_[gold * n_ + pred] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw DimensionError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n_; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::gold_count(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t p = 0; p < n_; ++p) t += at(c, p);
  return t;
}

std::uint64_t ConfusionMatrix::pred_count(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t g = 0; g < n_; ++g) t += at(g, c);
  return t;
}

ConfusionMatrix confusion(std::span<const std::size_t> preds,
                          std::span<const std::optional<std::size_t>> golds, std::size_t n_classes) {
  if (preds.size() != golds.size()) {
    throw ContractError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(golds.size()) + " gold labels");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (golds[i]) cm.add(*golds[i], preds[i]);
  }
  return cm;
}

ClassScores class_scores(const ConfusionMatrix& cm, std::size_t c) {
  const auto tp = static_cast<double>(cm.at(c, c));
  ClassScores s;
  s.precision = ratio(tp, static_cast<double>(cm.pred_count(c)));
  s.recall = ratio(tp, static_cast<double>(cm.gold_count(c)));
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.n_classes() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) total += class_scores(cm, c).f1;
  return total / static_cast<double>(cm.n_classes());
}

double wa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw ContractError("WA is undefined on an empty confusion matrix");
  // Sum of w_c * a_c = (gold_c / total) * (tp_c / gold_c), kept as an exact
  // fraction over `total` and rounded once.
  std::uint64_t numerator = 0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const auto gold = cm.gold_count(c);
    if (gold == 0) continue;
    numerator += gold * cm.at(c, c) / gold;
  }
  return static_cast<double>(numerator) / static_cast<double>(total);
}

double uwa(const ConfusionMatrix& cm, UwaAverage average) {
  if (cm.total() == 0) throw ContractError("UWA is undefined on an empty confusion matrix");
  double acc = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const auto gold = cm.gold_count(c);
    if (average == UwaAverage::present_only && gold == 0) continue;
    acc += ratio(static_cast<double>(cm.at(c, c)), static_cast<double>(gold));
    ++classes;
  }
  return acc / static_cast<double>(classes);
}

EvaluationReport make_report(const ConfusionMatrix& cm, std::vector<std::string> label_set,
                             std::size_t masked, UwaAverage average) {
  if (label_set.size() != cm.n_classes()) {
    throw DimensionError("label set size does not match the confusion matrix");
  }
  EvaluationReport r;
  r.label_set = std::move(label_set);
  r.cm = cm;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) r.per_class.push_back(class_scores(cm, c));
  r.macro_f1 = macro_f1(cm);
  r.wa = wa(cm);
  r.uwa = uwa(cm, average);
  r.evaluated = cm.total();
  r.masked = masked;
  return r;
}

std::string report_json(const EvaluationReport& report, int indent) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    classes.push_back({{"label", report.label_set[c]},
                       {"precision", report.per_class[c].precision},
                       {"recall", report.per_class[c].recall},
                       {"f1", report.per_class[c].f1},
                       {"support", report.cm.gold_count(c)}});
  }
  nlohmann::ordered_json matrix = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < report.cm.n_classes(); ++g) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < report.cm.n_classes(); ++p) row.push_back(report.cm.at(g, p));
    matrix.push_back(std::move(row));
  }
  j["labels"] = report.label_set;
  j["per_class"] = std::move(classes);
  j["confusion_matrix"] = std::move(matrix);
  j["macro_f1"] = report.macro_f1;
  j["wa"] = report.wa;
  j["uwa"] = report.uwa;
  j["evaluated"] = report.evaluated;
  j["masked"] = report.masked;
  return j.dump(indent);
}

}  // namespace hitrans
