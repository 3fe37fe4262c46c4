#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hitrans/checkpoint.hpp"
#include "hitrans/errors.hpp"
#include "hitrans/run_config.hpp"
#include "hitrans/training.hpp"
#include "hitrans/verification.hpp"
#include "json.hpp"

using namespace hitrans;
using ojson = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string preset = "tiny";
  std::string variant;
  std::string split = "test";
  std::string checkpoint;
  std::string out;
  std::string input;
  std::string kind = "overfit";
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "seed");
  cmd->add_option("--preset", o.preset, "tiny|paper")->check(CLI::IsMember({"tiny", "paper"}));
  cmd->add_option("--variant", o.variant, "base|speaker")->check(CLI::IsMember({"base", "speaker"}));
}

RunConfig resolve(const Options& o) {
  ConfigSources src;
  src.preset = o.preset;
  if (!o.config.empty()) src.file = o.config;
  src.overrides = o.sets;
  if (o.seed) src.overrides.push_back("train.seed=" + std::to_string(*o.seed));
  if (!o.variant.empty()) {
    src.overrides.push_back(std::string("model.speaker_variant=") + (o.variant == "speaker" ? "true" : "false"));
  }
  return load_run_config(src);
}

std::vector<std::string> texts_of(std::span<const Dialog> dialogs) {
  std::vector<std::string> texts;
  for (const auto& d : dialogs) {
    for (const auto& u : d.utterances) texts.push_back(u.text);
  }
  return texts;
}

void require(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError(what + " is required");
}

// Writes to `path` via a sibling temporary, or to stdout when path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out.flush()) throw IoError("failed writing " + path);
  }
  std::filesystem::rename(tmp, path);
}

int cmd_build_vocab(const Options& o) {
  const auto cfg = resolve(o);
  require(cfg.train_path, "data.train");
  const std::string out = o.out.empty() ? cfg.vocab_path : o.out;
  require(out, "--out or vocab.path");
  const auto dialogs = load_dialogs(cfg.train_path);
  const auto vocab = build_vocab(texts_of(dialogs), cfg.vocab_size, cfg.vocab_min_freq, cfg.tokenizer.lowercase);
  std::ostringstream text;
  vocab.write(text);
  emit(out, text.str());
  std::cout << ojson{{"vocab", out}, {"size", vocab.size()}, {"hash", hex64(vocab.hash())}}.dump() << "\n";
  return 0;
}

int cmd_stats(const Options& o) {
  const auto cfg = resolve(o);
  const auto corpus = load_corpus(cfg.corpus_paths(), cfg.label_set(), cfg.out_of_set);
  std::cout << format_stats(corpus_stats(corpus));
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve(o);
  const std::string dir = o.checkpoint.empty() ? o.out : o.checkpoint;
  require(dir, "--checkpoint");
  require(cfg.train_path, "data.train");
  require(cfg.val_path, "data.val");
  const auto corpus = load_corpus({cfg.train_path, cfg.val_path, ""}, cfg.label_set(), cfg.out_of_set);
  const Vocab vocab = cfg.vocab_path.empty()
                          ? build_vocab(texts_of(corpus.train), cfg.vocab_size, cfg.vocab_min_freq,
                                        cfg.tokenizer.lowercase)
                          : Vocab::load(cfg.vocab_path);
  const auto model = resolve_model(cfg, vocab.size(), corpus.label_set.size(), corpus.s_max);

  std::optional<std::ofstream> log_file;
  if (!o.out.empty() && !o.checkpoint.empty()) {
    log_file.emplace(o.out);
    if (!*log_file) throw IoError("cannot write " + o.out);
  }
  auto result = train(corpus, vocab, cfg.tokenizer, model, cfg.train, [&](const EpochLog& log) {
    const auto line = epoch_log_json(log);
    std::cout << line << "\n" << std::flush;
    if (log_file) *log_file << line << "\n" << std::flush;
  });
  save_checkpoint(dir, {std::move(result.best), corpus.label_set, vocab, cfg.tokenizer});
  std::cout << ojson{{"checkpoint", dir}, {"best_epoch", result.best_epoch},
                     {"optimizer_steps", result.optimizer_steps}}
                   .dump()
            << "\n";
  return 0;
}

std::string split_path(const RunConfig& cfg, Split split) {
  switch (split) {
    case Split::train: return cfg.train_path;
    case Split::val: return cfg.val_path;
    case Split::test: return cfg.test_path;
  }
  return {};
}

std::vector<Dialog> load_split(const Options& o, const RunConfig& cfg, const std::vector<std::string>& labels) {
  std::string path = o.input;
  if (path.empty()) {
    const Split split = split_from_string(o.split);
    path = split_path(cfg, split);
    require(path, "data." + to_string(split));
  }
  auto corpus = make_corpus({}, {}, load_dialogs(path), labels, cfg.out_of_set);
  return std::move(corpus.test);
}

int cmd_eval(const Options& o) {
  const auto cfg = resolve(o);
  require(o.checkpoint, "--checkpoint");
  const auto ckpt = load_checkpoint(o.checkpoint);
  check_label_compatibility(ckpt, cfg.label_set());
  const auto dialogs = load_split(o, cfg, ckpt.label_set);
  std::vector<EncodedDialog> encoded;
  for (const auto& d : dialogs) encoded.push_back(encode_dialog(d, ckpt.vocab, ckpt.tokenizer, ckpt.label_set));
  const auto report = evaluate(ckpt.params, encoded, ckpt.label_set, eval_threads_from_env(), cfg.uwa_average);
  const auto text = report_json(report) + "\n";
  std::cout << text;
  if (!o.out.empty()) emit(o.out, text);
  return 0;
}

int cmd_predict(const Options& o) {
  const auto cfg = resolve(o);
  require(o.checkpoint, "--checkpoint");
  const auto ckpt = load_checkpoint(o.checkpoint);
  std::string path = o.input;
  if (path.empty()) {
    const Split split = split_from_string(o.split);
    path = split_path(cfg, split);
    require(path, "data." + to_string(split));
  }
  // Every input utterance gets a prediction, whatever its gold label.
  auto dialogs = load_dialogs(path);
  std::vector<EncodedDialog> encoded;
  for (const auto& d : dialogs) encoded.push_back(encode_dialog(d, ckpt.vocab, ckpt.tokenizer, ckpt.label_set));
  const auto preds = predict_all(ckpt.params, encoded, eval_threads_from_env());
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    for (std::size_t j = 0; j < dialogs[i].utterances.size(); ++j) {
      dialogs[i].utterances[j].label = ckpt.label_set[preds[i][j]];
    }
  }
  std::ostringstream out;
  write_dialogs(out, dialogs);
  emit(o.out, out.str());
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto cfg = resolve(o);
  (void)cfg;
  std::vector<bool> variants;
  if (o.variant.empty()) {
    variants = {false, true};
  } else {
    variants = {o.variant == "speaker"};
  }
  bool ok = true;
  for (bool speaker : variants) {
    ModelGradCheckOptions opts;
    opts.speaker_variant = speaker;
    if (o.seed) opts.seed = *o.seed;
    const auto r = model_grad_check(opts);
    const bool pass = r.result.max_rel_error < 1e-5;
    ok = ok && pass;
    std::cout << ojson{{"variant", speaker ? "speaker" : "base"},
                       {"max_rel_error", r.result.max_rel_error},
                       {"samples", r.result.samples},
                       {"worst", r.worst_name + "[" + std::to_string(r.result.worst_index) + "]"},
                       {"pass", pass},
                       {"seconds", r.seconds}}
                     .dump()
              << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_synth(const Options& o) {
  require(o.out, "--out");
  const std::uint64_t seed = o.seed.value_or(1);
  Corpus corpus;
  if (o.kind == "overfit") {
    corpus = make_overfit_corpus(seed);
  } else if (o.kind == "parity") {
    corpus = make_speaker_parity_corpus(seed);
  } else {
    throw ConfigError("unknown synthetic corpus '" + o.kind + "' (overfit|parity)");
  }
  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  for (auto split : {Split::train, Split::val, Split::test}) {
    std::ostringstream text;
    write_dialogs(text, corpus.split(split));
    emit((dir / (to_string(split) + ".jsonl")).string(), text.str());
  }
  std::string labels;
  for (const auto& l : corpus.label_set) labels += (labels.empty() ? "" : ",") + l;
  ojson cfg;
  cfg["data"] = {{"train", (dir / "train.jsonl").string()},
                 {"val", (dir / "val.jsonl").string()},
                 {"test", (dir / "test.jsonl").string()},
                 {"labels", labels}};
  emit((dir / "config.json").string(), cfg.dump(2) + "\n");
  std::cout << ojson{{"out", o.out}, {"kind", o.kind}, {"seed", seed}}.dump() << "\n";
  return 0;
}

void fail(const std::string& kind, const std::string& message) {
  std::cerr << ojson{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical transformer for utterance-level emotion recognition"};
  app.require_subcommand(1);
  Options o;

  auto* vocab = app.add_subcommand("build-vocab", "build a WordPiece vocabulary from the training split");
  add_common(vocab, o);
  vocab->add_option("--out", o.out, "vocab file");

  auto* stats = app.add_subcommand("stats", "dialog/utterance/class counts per split");
  add_common(stats, o);

  auto* tr = app.add_subcommand("train", "train and write the best-validation checkpoint");
  add_common(tr, o);
  tr->add_option("--checkpoint", o.checkpoint, "checkpoint directory to write");
  tr->add_option("--out", o.out, "also append the epoch log here");

  auto* ev = app.add_subcommand("eval", "metrics JSON for a checkpoint on a split");
  add_common(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  ev->add_option("--split", o.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--input", o.input, "dialog file instead of a configured split");
  ev->add_option("--out", o.out, "also write the report here");

  auto* pr = app.add_subcommand("predict", "per-utterance labels as JSON-lines");
  add_common(pr, o);
  pr->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  pr->add_option("--split", o.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  pr->add_option("--input", o.input, "dialog file instead of a configured split");
  pr->add_option("--out", o.out, "output file (default stdout)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  add_common(gc, o);

  auto* sy = app.add_subcommand("synth", "write a seeded synthetic corpus");
  sy->add_option("--kind", o.kind, "overfit|parity")->check(CLI::IsMember({"overfit", "parity"}));
  sy->add_option("--seed", o.seed, "seed");
  sy->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*vocab) return cmd_build_vocab(o);
    if (*stats) return cmd_stats(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*pr) return cmd_predict(o);
    if (*gc) return cmd_gradcheck(o);
    if (*sy) return cmd_synth(o);
  } catch (const Error& e) {
    fail(e.kind(), e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    fail("io", e.what());
    return 1;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 1;
}
