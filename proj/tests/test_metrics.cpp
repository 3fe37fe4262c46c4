#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "json.hpp"

#include "hitrans/errors.hpp"
#include "hitrans/metrics.hpp"

using namespace hitrans;

namespace {

// F1 per class straight from label lists.
double brute_macro_f1(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                      std::size_t n) {
  double total = 0;
  for (std::size_t c = 0; c < n; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == c && gold[i] == c) ++tp;
      if (pred[i] == c && gold[i] != c) ++fp;
      if (pred[i] != c && gold[i] == c) ++fn;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    total += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return total / static_cast<double>(n);
}

ConfusionMatrix permuted(const ConfusionMatrix& cm, const std::vector<std::size_t>& perm) {
  ConfusionMatrix out(cm.n_classes());
  for (std::size_t g = 0; g < cm.n_classes(); ++g)
    for (std::size_t p = 0; p < cm.n_classes(); ++p) out.add(perm[g], perm[p], cm.at(g, p));
  return out;
}

}  // namespace

TEST_CASE("worked two-class example") {
  const std::vector<std::size_t> preds{0, 0, 1, 1, 0, 1, 1};
  const std::vector<std::optional<std::size_t>> golds{0, 0, 0, 1, 1, 1, 1};
  const auto cm = confusion(preds, golds, 2);
  CHECK(cm == ConfusionMatrix::from_counts({{2, 1}, {1, 3}}));
  CHECK(std::abs(macro_f1(cm) - 0.708333333333) < 1e-9);
  CHECK(std::abs(wa(cm) - 0.714285714286) < 1e-9);
  CHECK(std::abs(uwa(cm) - 0.708333333333) < 1e-9);
  const auto s0 = class_scores(cm, 0);
  CHECK(std::abs(s0.precision - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(s0.recall - 2.0 / 3.0) < 1e-12);
}

TEST_CASE("masked golds are skipped") {
  const std::vector<std::size_t> preds{0, 1, 1};
  const std::vector<std::optional<std::size_t>> golds{0, std::nullopt, 1};
  const auto cm = confusion(preds, golds, 2);
  CHECK(cm.total() == 2);
  CHECK(macro_f1(cm) == 1.0);
  CHECK_THROWS_AS(confusion(std::vector<std::size_t>{0}, golds, 2), ContractError);
}

TEST_CASE("a perfect diagonal scores one everywhere") {
  const auto cm = ConfusionMatrix::from_counts({{3, 0, 0}, {0, 1, 0}, {0, 0, 5}});
  CHECK(macro_f1(cm) == 1.0);
  CHECK(wa(cm) == 1.0);
  CHECK(uwa(cm) == 1.0);
}

TEST_CASE("0/0 is taken as zero") {
  // class 2 never occurs and is never predicted
  const auto cm = ConfusionMatrix::from_counts({{2, 0, 0}, {1, 1, 0}, {0, 0, 0}});
  const auto s2 = class_scores(cm, 2);
  CHECK(s2.precision == 0.0);
  CHECK(s2.recall == 0.0);
  CHECK(s2.f1 == 0.0);
  CHECK(std::abs(uwa(cm) - (1.0 + 0.5) / 3.0) < 1e-15);
  CHECK(std::abs(uwa(cm, UwaAverage::present_only) - (1.0 + 0.5) / 2.0) < 1e-15);
  CHECK_THROWS(wa(ConfusionMatrix(3)));
}

TEST_CASE("wa equals trace over total on every small matrix") {
  for (std::size_t n : {2u, 3u}) {
    const std::size_t cells = n * n;
    std::size_t combos = 1;
    for (std::size_t i = 0; i < cells; ++i) combos *= 4;
    std::size_t checked = 0;
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<std::vector<std::uint64_t>> counts(n, std::vector<std::uint64_t>(n));
      std::size_t rest = code, total = 0, trace = 0;
      for (std::size_t k = 0; k < cells; ++k, rest /= 4) {
        counts[k / n][k % n] = rest % 4;
        total += rest % 4;
        if (k / n == k % n) trace += rest % 4;
      }
      if (total == 0) continue;
      const double got = wa(ConfusionMatrix::from_counts(counts));
      if (got != static_cast<double>(trace) / static_cast<double>(total)) {
        FAIL("wa differs from trace/total at code " << code);
      }
      ++checked;
    }
    CHECK(checked == combos - 1);
  }
}

TEST_CASE("macro-F1 matches a brute-force count and all scores stay in [0,1]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 5, len = 1 + rng() % 40;
    std::vector<std::size_t> gold(len), pred(len);
    for (auto& g : gold) g = rng() % n;
    for (auto& p : pred) p = rng() % n;
    const std::vector<std::optional<std::size_t>> golds(gold.begin(), gold.end());
    const auto cm = confusion(pred, golds, n);
    CHECK(std::abs(macro_f1(cm) - brute_macro_f1(gold, pred, n)) < 1e-12);
    for (double v : {macro_f1(cm), wa(cm), uwa(cm), uwa(cm, UwaAverage::present_only)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("metrics are invariant under relabelling the classes") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 4;
    std::vector<std::vector<std::uint64_t>> counts(n, std::vector<std::uint64_t>(n));
    for (auto& r : counts)
      for (auto& v : r) v = rng() % 6;
    counts[0][0] += 1;
    const auto cm = ConfusionMatrix::from_counts(counts);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pm = permuted(cm, perm);
    CHECK(std::abs(macro_f1(cm) - macro_f1(pm)) < 1e-12);
    CHECK(wa(cm) == wa(pm));
    CHECK(std::abs(uwa(cm) - uwa(pm)) < 1e-12);
  }
}

TEST_CASE("merging shards in any order gives the same matrix") {
  std::mt19937_64 rng(5);
  std::vector<ConfusionMatrix> shards;
  ConfusionMatrix whole(4);
  for (int s = 0; s < 6; ++s) {
    ConfusionMatrix part(4);
    for (int i = 0; i < 20; ++i) {
      const auto g = rng() % 4, p = rng() % 4;
      part.add(g, p);
      whole.add(g, p);
    }
    shards.push_back(part);
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(shards.begin(), shards.end(), rng);
    ConfusionMatrix merged(4);
    for (const auto& s : shards) merged.merge(s);
    CHECK(merged == whole);
  }
  CHECK_THROWS(whole.merge(ConfusionMatrix(3)));
}

TEST_CASE("report json carries every field") {
  const auto cm = ConfusionMatrix::from_counts({{2, 1}, {1, 3}});
  const auto report = make_report(cm, {"same", "switch"}, 4);
  CHECK(report.evaluated == 7);
  const auto j = nlohmann::json::parse(report_json(report));
  CHECK(j["labels"] == nlohmann::json({"same", "switch"}));
  CHECK(j["confusion_matrix"] == nlohmann::json({{2, 1}, {1, 3}}));
  CHECK(j["per_class"].size() == 2);
  CHECK(j["per_class"][1]["support"] == 4);
  CHECK(std::abs(j["macro_f1"].get<double>() - 0.708333333333) < 1e-9);
  CHECK(std::abs(j["wa"].get<double>() - 5.0 / 7.0) < 1e-15);
  CHECK(j["masked"] == 4);
  CHECK(j["evaluated"] == 7);
  CHECK_THROWS(make_report(cm, {"only-one"}, 0));
}
