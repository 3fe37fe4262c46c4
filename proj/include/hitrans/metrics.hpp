#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hitrans {

// Rows are gold classes, columns predicted classes.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t n_classes = 0);
  static ConfusionMatrix from_counts(std::vector<std::vector<std::uint64_t>> counts);

  std::size_t n_classes() const { return n_; }
  std::uint64_t at(std::size_t gold, std::size_t pred) const { return counts_[gold * n_ + pred]; }
  void add(std::size_t gold, std::size_t pred, std::uint64_t count = 1);
  // Entrywise sum; associative and commutative, so shards merge in any order.
  void merge(const ConfusionMatrix& other);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t gold_count(std::size_t c) const;
  std::uint64_t pred_count(std::size_t c) const;

  bool operator==(const ConfusionMatrix&) const = default;

private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> preds,
                          std::span<const std::optional<std::size_t>> golds, std::size_t n_classes);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// 0/0 is taken as 0 for precision, recall and F1.
ClassScores class_scores(const ConfusionMatrix& cm, std::size_t c);

double macro_f1(const ConfusionMatrix& cm);
// Gold-share weighted recall; equals trace/total. Throws on an empty matrix.
double wa(const ConfusionMatrix& cm);

enum class UwaAverage {
  all_classes,   // zero-gold classes count with recall 0
  present_only,  // average over classes that occur in the gold labels
};
double uwa(const ConfusionMatrix& cm, UwaAverage average = UwaAverage::all_classes);

struct EvaluationReport {
  std::vector<std::string> label_set;
  ConfusionMatrix cm;
  std::vector<ClassScores> per_class;
  double macro_f1 = 0.0;
  double wa = 0.0;
  double uwa = 0.0;
  std::size_t evaluated = 0;
  std::size_t masked = 0;
};

EvaluationReport make_report(const ConfusionMatrix& cm, std::vector<std::string> label_set,
                             std::size_t masked, UwaAverage average = UwaAverage::all_classes);
// JSON text: per-class P/R/F1, confusion matrix, macro_f1, wa, uwa, counts.
std::string report_json(const EvaluationReport& report, int indent = 2);

}  // namespace hitrans
