#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hitrans {

struct Utterance {
  std::string text;
  std::string speaker;
  std::optional<std::string> label;

  bool operator==(const Utterance&) const = default;
};

struct Dialog {
  std::vector<Utterance> utterances;

  bool operator==(const Dialog&) const = default;
};

enum class Split { train, val, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

// What happens to utterances whose label is outside the active label set.
enum class OutOfSetPolicy {
  mask,  // kept as dialog context, excluded from loss and metrics
  drop,  // removed from the dialog entirely
};

struct Corpus {
  std::vector<Dialog> train, val, test;
  std::vector<std::string> label_set;
  // Max distinct speakers in any dialog of any split.
  std::size_t s_max = 1;

  const std::vector<Dialog>& split(Split s) const;
  bool operator==(const Corpus&) const = default;
};

// friends4 = (anger, joy, sadness, neutral); emorynlp7 = the seven EmoryNLP emotions.
std::vector<std::string> label_preset(const std::string& name);

std::optional<std::size_t> label_index(const std::optional<std::string>& label,
                                       std::span<const std::string> label_set);

// Gold class per utterance, nullopt where masked.
std::vector<std::optional<std::size_t>> gold_labels(const Dialog& dialog,
                                                    std::span<const std::string> label_set);

std::vector<std::string> speakers_of(const Dialog& dialog);
std::size_t distinct_speakers(const Dialog& dialog);

// JSON-lines, one dialog per line:
//   {"utterances":[{"text":"...","speaker":"...","label":"..."}]}
std::vector<Dialog> read_dialogs(std::istream& in, const std::string& source = "<stream>");
std::vector<Dialog> load_dialogs(const std::string& path);
void write_dialogs(std::ostream& out, std::span<const Dialog> dialogs);
void save_dialogs(const std::string& path, std::span<const Dialog> dialogs);

struct CorpusPaths {
  std::string train, val, test;
};

Corpus make_corpus(std::vector<Dialog> train, std::vector<Dialog> val, std::vector<Dialog> test,
                   std::vector<std::string> label_set,
                   OutOfSetPolicy policy = OutOfSetPolicy::mask);
Corpus load_corpus(const CorpusPaths& paths, std::vector<std::string> label_set,
                   OutOfSetPolicy policy = OutOfSetPolicy::mask);

struct SplitStats {
  std::size_t dialogs = 0;
  std::size_t utterances = 0;
  std::vector<std::size_t> per_class;
  std::size_t masked = 0;
};

struct CorpusStats {
  std::vector<std::string> label_set;
  SplitStats train, val, test;
};

SplitStats split_stats(std::span<const Dialog> dialogs, std::span<const std::string> label_set);
CorpusStats corpus_stats(const Corpus& corpus);
// "#dialog(#utterance)" per split followed by per-class and masked counts.
std::string format_stats(const CorpusStats& stats);

// ---- synthetic corpora -------------------------------------------------------

struct OverfitCorpusOptions {
  std::size_t dialogs = 32;
  std::size_t min_utterances = 4;
  std::size_t max_utterances = 8;
};

// Four-class corpus over a ~60-word vocabulary where each utterance carries one
// class keyword among filler words. Val and test get a quarter as many dialogs.
Corpus make_overfit_corpus(std::uint64_t seed, const OverfitCorpusOptions& options = {});

struct SpeakerParityOptions {
  std::size_t train_pairs = 48;
  std::size_t val_pairs = 8;
  std::size_t test_pairs = 32;
  std::size_t min_utterances = 4;
  std::size_t max_utterances = 8;
};

inline constexpr const char* kParityText = "Yes, I agree. I think so, too.";

// Every utterance has the same text. Utterance j > 0 is labelled "same" when
// its speaker equals speaker j-1, "switch" otherwise; utterance 0 is unlabelled.
// Dialogs come in twins with complementary label sequences, so within every
// split each (dialog length, position) cell is exactly balanced.
Corpus make_speaker_parity_corpus(std::uint64_t seed, const SpeakerParityOptions& options = {});

}  // namespace hitrans
