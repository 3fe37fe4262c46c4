// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "hitrans/checkpoint.hpp"
#include "hitrans/metrics.hpp"
#include "hitrans/run_config.hpp"
#include "hitrans/training.hpp"
#include "hitrans/verification.hpp"

using namespace hitrans;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("criterion %d %s: %s (%s)\n", id, ok ? "PASS" : "FAIL", title, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> texts_of(const std::vector<Dialog>& dialogs) {
  std::vector<std::string> out;
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances) out.push_back(u.text);
  return out;
}

std::vector<EncodedDialog> encode_all(const std::vector<Dialog>& dialogs, const Vocab& vocab,
                                      const TokenizerConfig& tok, const std::vector<std::string>& labels) {
  std::vector<EncodedDialog> out;
  for (const auto& d : dialogs) out.push_back(encode_dialog(d, vocab, tok, labels));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- 1 ----

void gradient_integrity() {
  const auto t0 = Clock::now();
  ModelGradCheckOptions base_opts;
  ModelGradCheckOptions speaker_opts;
  speaker_opts.speaker_variant = true;
  const auto base = model_grad_check(base_opts);
  const auto speaker = model_grad_check(speaker_opts);
  const double secs = seconds_since(t0);
  const bool ok = base.result.max_rel_error < 1e-5 && speaker.result.max_rel_error < 1e-5 &&
                  base.result.samples == 200 && speaker.result.samples == 200 && secs < 60.0;
  report(1, "gradient integrity", ok,
         "max rel err base " + fmt("%.2e", base.result.max_rel_error) + ", speaker " +
             fmt("%.2e", speaker.result.max_rel_error) + ", 200 coords each, " + fmt("%.1f", secs) +
             " s; limit 1e-5, 60 s");
}

// ---- 2 ----

void metric_oracles() {
  const auto cm = ConfusionMatrix::from_counts({{2, 1}, {1, 3}});
  const double f1 = macro_f1(cm), w = wa(cm), u = uwa(cm);
  bool ok = std::abs(f1 - 0.708333333333) < 1e-9 && std::abs(w - 0.714285714286) < 1e-9 &&
            std::abs(u - 0.708333333333) < 1e-9;
  std::size_t checked = 0, mismatched = 0;
  for (std::size_t n : {2u, 3u}) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < n * n; ++i) combos *= 4;
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<std::vector<std::uint64_t>> counts(n, std::vector<std::uint64_t>(n));
      std::uint64_t total = 0, trace = 0, rest = code;
      for (std::size_t k = 0; k < n * n; ++k, rest /= 4) {
        counts[k / n][k % n] = rest % 4;
        total += rest % 4;
        if (k / n == k % n) trace += rest % 4;
      }
      if (total == 0) continue;
      ++checked;
      if (wa(ConfusionMatrix::from_counts(counts)) != static_cast<double>(trace) / static_cast<double>(total))
        ++mismatched;
    }
  }
  ok = ok && mismatched == 0 && checked == 255 + 262143;
  report(2, "metric oracles", ok,
         "macro_f1 " + fmt("%.5f", f1) + ", wa " + fmt("%.5f", w) + ", uwa " + fmt("%.5f", u) +
             "; wa == trace/total on " + std::to_string(checked) + " matrices, " +
             std::to_string(mismatched) + " mismatches");
}

// ---- 3 ----

void loss_oracles() {
  const std::vector<std::optional<std::size_t>> g0{0}, g01{0, 1};
  const auto one = weighted_ce(Tensor::from_data({1, 2}, {0.5, 0.5}), g0, ClassWeights{{0.25, 0.75}, {1, 3}});
  const auto two =
      weighted_ce(Tensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5}), g01, ClassWeights{{0.75, 0.25}, {3, 1}});
  const double a = one.total.item();
  const double b = two.total.item() / static_cast<double>(two.count);
  bool ok = std::abs(a - 4.0) < 1e-9 && std::abs(b - 8.0 / 3.0) < 1e-9;

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<Real> unif(0.01, 1.0);
  int exact = 0, trials = 0;
  for (std::size_t classes : {2u, 4u}) {
    const auto even = class_weights_from_counts(std::vector<std::size_t>(classes, 9));
    for (int t = 0; t < 50; ++t, ++trials) {
      const std::size_t n = 1 + rng() % 8;
      std::vector<Real> p(n * classes);
      std::vector<std::optional<std::size_t>> gold(n);
      Real plain = 0;
      for (std::size_t i = 0; i < n; ++i) {
        Real z = 0;
        for (std::size_t c = 0; c < classes; ++c) z += (p[i * classes + c] = unif(rng));
        for (std::size_t c = 0; c < classes; ++c) p[i * classes + c] /= z;
        gold[i] = rng() % classes;
        plain += -std::log2(p[i * classes + *gold[i]]);
      }
      const auto term = weighted_ce(Tensor::from_data({n, classes}, p), gold, even);
      if (term.total.item() / static_cast<Real>(n) == static_cast<Real>(classes) * (plain / static_cast<Real>(n)))
        ++exact;
    }
  }
  ok = ok && exact == trials;
  report(3, "loss oracle", ok,
         "single " + fmt("%.12f", a) + ", two-utterance mean " + fmt("%.12f", b) + "; equifrequent |C| scaling exact in " +
             std::to_string(exact) + "/" + std::to_string(trials) + " random cases");
}

// ---- 4 ----

void class_weight_oracle() {
  const auto cw = class_weights_from_counts({756, 1710, 498, 6530});
  const double expected[] = {0.07963, 0.18011, 0.05245, 0.68780};
  double worst = 0;
  for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(cw.w[c] - expected[c]));
  report(4, "class-weight oracle", worst < 5e-6,
         "w = (" + fmt("%.5f", cw.w[0]) + ", " + fmt("%.5f", cw.w[1]) + ", " + fmt("%.5f", cw.w[2]) + ", " +
             fmt("%.5f", cw.w[3]) + "), max deviation " + fmt("%.1e", worst) + "; limit 5e-6");
}

// ---- 5 ----

void overfit() {
  const auto t0 = Clock::now();
  const auto corpus = make_overfit_corpus(1, {32, 4, 8});
  auto rc = load_run_config({});
  const auto vocab = build_vocab(texts_of(corpus.train), rc.vocab_size, 1);
  std::size_t words = 0;
  for (const auto& t : vocab.tokens())
    if (t.size() > 1 && t.rfind("##", 0) != 0 && t.front() != '[') ++words;
  const auto model = resolve_model(rc, vocab.size(), corpus.label_set.size(), corpus.s_max);

  // loss trajectory over the first five epochs, no early stop
  auto first = rc.train;
  first.epochs = 5;
  const auto early = train(corpus, vocab, rc.tokenizer, model, first);
  bool decreasing = early.log.size() == 5;
  std::string losses;
  for (std::size_t e = 0; e < early.log.size(); ++e) {
    if (e > 0 && !(early.log[e].mean_train_loss < early.log[e - 1].mean_train_loss)) decreasing = false;
    losses += (e ? " " : "") + fmt("%.3f", early.log[e].mean_train_loss);
  }

  auto full = rc.train;
  full.epochs = 300;
  full.stop_at_train_accuracy = 0.95;
  const auto run = train(corpus, vocab, rc.tokenizer, model, full);
  const double acc = run.log.back().train_accuracy.value_or(0.0);
  const double secs = seconds_since(t0);
  const bool ok = decreasing && acc >= 0.95 && secs < 300.0 && corpus.train.size() == 32;
  report(5, "overfit", ok,
         "32 dialogs, " + std::to_string(words) + " word types, lr 1e-3; epoch losses " + losses +
             (decreasing ? " strictly decreasing" : " NOT strictly decreasing") + "; train accuracy " +
             fmt("%.4f", acc) + " at epoch " + std::to_string(run.log.size()) + "; " + fmt("%.1f", secs) +
             " s; limits 0.95, 300 epochs, 300 s");
}

// ---- 6 ----

void speaker_sensitivity() {
  const auto t0 = Clock::now();
  const auto corpus = make_speaker_parity_corpus(1);
  auto rc = load_run_config({});
  rc.train.epochs = 60;
  const auto vocab = build_vocab(texts_of(corpus.train), rc.vocab_size, 1);
  const auto test = encode_all(corpus.test, vocab, rc.tokenizer, corpus.label_set);

  const auto st = split_stats(corpus.test, corpus.label_set);
  const double majority =
      static_cast<double>(*std::max_element(st.per_class.begin(), st.per_class.end())) /
      static_cast<double>(st.utterances - st.masked);

  auto run_variant = [&](bool speaker) {
    auto r = rc;
    r.model.speaker_variant = speaker;
    const auto model = resolve_model(r, vocab.size(), corpus.label_set.size(), corpus.s_max);
    return train(corpus, vocab, r.tokenizer, model, r.train);
  };
  const auto spk = run_variant(true);
  const auto base = run_variant(false);
  const double spk_acc = accuracy(spk.best, test);
  const double base_acc = accuracy(base.best, test);

  // base logits across twin dialogs (same text, different speakers)
  bool identical = true;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i + 1 < test.size(); i += 2, ++pairs) {
    const auto a = dialog_forward(base.best, test[i], {}).logits;
    const auto b = dialog_forward(base.best, test[i + 1], {}).logits;
    identical = identical && a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
  }
  const double secs = seconds_since(t0);
  const bool ok = spk_acc >= 0.90 && base_acc <= majority + 0.05 && identical;
  report(6, "speaker sensitivity", ok,
         "speaker variant test accuracy " + fmt("%.4f", spk_acc) + " (>= 0.90), base " + fmt("%.4f", base_acc) +
             " (<= majority " + fmt("%.2f", majority) + " + 0.05); base logits bitwise identical across " +
             std::to_string(pairs) + " twin pairs: " + (identical ? "yes" : "NO") + "; 60 epochs each, " + fmt("%.1f", secs) + " s");
}

// ---- 7 ----

ModelParams jittered_tiny(bool speaker, std::size_t vocab_size, std::uint64_t seed) {
  auto rc = load_run_config({});
  rc.model.speaker_variant = speaker;
  auto params = ModelParams::init(resolve_model(rc, vocab_size, 2, 2), seed);
  std::mt19937_64 gen(seed);
  std::normal_distribution<Real> noise(0.0, 0.3);
  for (auto& [name, t] : params.named_parameters())
    for (auto& v : t.mutable_data()) v += noise(gen);
  return params;
}

void structural_invariants() {
  const auto corpus = make_overfit_corpus(2, {4, 4, 6});
  const auto vocab = build_vocab(texts_of(corpus.train), 200, 1);
  const auto rc = load_run_config({});
  const auto dialogs = encode_all(corpus.train, vocab, rc.tokenizer, corpus.label_set);
  const auto params = jittered_tiny(true, vocab.size(), 5);

  // attention rows at every layer and head, lower and upper
  double worst_row = 0;
  std::size_t matrices = 0;
  for (const auto& d : dialogs) {
    AttentionTrace trace;
    ForwardContext ctx;
    ctx.trace = &trace;
    dialog_forward(params, d, ctx);
    for (const auto& w : trace.weights) {
      ++matrices;
      for (std::size_t i = 0; i < w.dim(0); ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < w.dim(1); ++j) s += w.at(i, j);
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
  }
  const std::size_t expected = [&] {
    std::size_t n = 0;
    for (const auto& d : dialogs) n += d.utterances.size() * 2 * 4 + 2 * 8;
    return n;
  }();

  // upper encoder, no positions: permuting utterances permutes outputs
  std::mt19937_64 gen(6);
  std::normal_distribution<Real> dist;
  const std::size_t n = 7, width = params.config.upper_width();
  std::vector<Real> x(n * width);
  for (auto& v : x) v = dist(gen);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<Real> xp(n * width);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[i] * width), width,
                xp.begin() + static_cast<std::ptrdiff_t>(i * width));
  const auto y = encode_layers(Tensor::from_data({n, width}, x), {}, params.upper, {});
  const auto yp = encode_layers(Tensor::from_data({n, width}, xp), {}, params.upper, {});
  double worst_perm = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j) worst_perm = std::max(worst_perm, std::abs(yp.at(i, j) - y.at(perm[i], j)));

  // predict under a per-row logit shift, and against the softmax argmax
  std::size_t shift_mismatch = 0, rows = 0;
  std::uniform_real_distribution<Real> shift(-100.0, 100.0);
  for (const auto& d : dialogs) {
    const auto out = dialog_forward(params, d, {});
    const std::size_t r = out.logits.dim(0), c = out.logits.dim(1);
    std::vector<Real> shifted(out.logits.data().begin(), out.logits.data().end());
    for (std::size_t i = 0; i < r; ++i) {
      const Real k = shift(gen);
      for (std::size_t j = 0; j < c; ++j) shifted[i * c + j] += k;
    }
    const auto p = predict(params, d);
    const auto ps = argmax_rows(Tensor::from_data({r, c}, shifted));
    const auto pp = argmax_rows(out.probabilities);
    for (std::size_t i = 0; i < r; ++i, ++rows) shift_mismatch += (p[i] != ps[i]) + (p[i] != pp[i]);
  }

  const bool ok = worst_row < 1e-9 && matrices == expected && worst_perm < 1e-12 && shift_mismatch == 0;
  report(7, "structural invariants", ok,
         std::to_string(matrices) + " attention matrices, max |row sum - 1| " + fmt("%.1e", worst_row) +
             " (limit 1e-9); upper permutation max deviation " + fmt("%.1e", worst_perm) +
             " (limit 1e-12); predict shift/softmax mismatches " + std::to_string(shift_mismatch) + " of " +
             std::to_string(rows) + " rows");
}

// ---- 8 ----

void determinism() {
  const auto root = fs::temp_directory_path() / "hitrans_acceptance_ckpt";
  fs::remove_all(root);
  const auto corpus = make_overfit_corpus(3, {8, 3, 6});
  auto rc = load_run_config({"tiny", std::nullopt, {"model.speaker_variant=true"}});
  rc.train.epochs = 3;
  const auto vocab = build_vocab(texts_of(corpus.train), rc.vocab_size, 1);
  const auto model = resolve_model(rc, vocab.size(), corpus.label_set.size(), corpus.s_max);

  auto run_and_save = [&](const std::string& name) {
    const auto r = train(corpus, vocab, rc.tokenizer, model, rc.train);
    save_checkpoint((root / name).string(), Checkpoint{r.best, corpus.label_set, vocab, rc.tokenizer});
    return r;
  };
  const auto first = run_and_save("a");
  run_and_save("b");
  bool same_bytes = true;
  for (const char* f : {"manifest.json", "tensors.bin", "vocab.txt"})
    same_bytes = same_bytes && slurp(root / "a" / f) == slurp(root / "b" / f);

  const auto test = encode_all(corpus.test, vocab, rc.tokenizer, corpus.label_set);
  const auto before = report_json(evaluate(first.best, test, corpus.label_set));
  const auto loaded = load_checkpoint((root / "a").string());
  const auto reloaded_test = encode_all(corpus.test, loaded.vocab, loaded.tokenizer, loaded.label_set);
  const auto after = report_json(evaluate(loaded.params, reloaded_test, loaded.label_set));
  fs::remove_all(root);

  report(8, "determinism", same_bytes && before == after,
         std::string("two identical runs -> checkpoints ") + (same_bytes ? "byte-identical" : "DIFFER") +
             "; save/load/eval report " + (before == after ? "bitwise equal" : "DIFFERS"));
}

}  // namespace

int main() {
  struct Step {
    int id;
    const char* title;
    void (*run)();
  };
  const Step steps[] = {{1, "gradient integrity", gradient_integrity},
                        {2, "metric oracles", metric_oracles},
                        {3, "loss oracle", loss_oracles},
                        {4, "class-weight oracle", class_weight_oracle},
                        {5, "overfit", overfit},
                        {6, "speaker sensitivity", speaker_sensitivity},
                        {7, "structural invariants", structural_invariants},
                        {8, "determinism", determinism}};
  for (const auto& s : steps) {
    try {
      s.run();
    } catch (const std::exception& e) {
      report(s.id, s.title, false, std::string("exception: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
