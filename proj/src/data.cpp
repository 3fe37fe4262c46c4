#include "hitrans/data.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hitrans/errors.hpp"
#include "hitrans/tensor.hpp"

namespace hitrans {

using ordered_json = nlohmann::ordered_json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (train|val|test)");
}

const std::vector<Dialog>& Corpus::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

std::vector<std::string> label_preset(const std::string& name) {
  if (name == "friends4") return {"anger", "joy", "sadness", "neutral"};
  if (name == "emorynlp7") {
    return {"neutral", "joyful", "peaceful", "powerful", "scared", "mad", "sad"};
  }
  throw ConfigError("unknown label preset '" + name + "' (friends4|emorynlp7)");
}

std::optional<std::size_t> label_index(const std::optional<std::string>& label,
                                       std::span<const std::string> label_set) {
  if (!label) return std::nullopt;
  auto it = std::find(label_set.begin(), label_set.end(), *label);
  if (it == label_set.end()) return std::nullopt;
  return static_cast<std::size_t>(it - label_set.begin());
}

std::vector<std::optional<std::size_t>> gold_labels(const Dialog& dialog,
                                                    std::span<const std::string> label_set) {
  std::vector<std::optional<std::size_t>> gold;
  gold.reserve(dialog.utterances.size());
  for (const auto& u : dialog.utterances) gold.push_back(label_index(u.label, label_set));
  return gold;
}

std::vector<std::string> speakers_of(const Dialog& dialog) {
  std::vector<std::string> out;
  out.reserve(dialog.utterances.size());
  for (const auto& u : dialog.utterances) out.push_back(u.speaker);
  return out;
}

std::size_t distinct_speakers(const Dialog& dialog) {
  std::set<std::string> names;
  for (const auto& u : dialog.utterances) names.insert(u.speaker);
  return names.size();
}

// ---- JSON-lines ------------------------------------------------------------

namespace {

Dialog parse_dialog(const std::string& line, const std::string& where) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("utterances") || !j["utterances"].is_array()) {
    throw SchemaError(where + ": expected an object with an \"utterances\" array");
  }
  Dialog d;
  for (const auto& u : j["utterances"]) {
    if (!u.is_object() || !u.contains("text") || !u["text"].is_string() ||
        !u.contains("speaker") || !u["speaker"].is_string()) {
      throw SchemaError(where + ": every utterance needs string \"text\" and \"speaker\"");
    }
    Utterance utt;
    utt.text = u["text"].get<std::string>();
    utt.speaker = u["speaker"].get<std::string>();
    if (utt.speaker.empty()) throw SchemaError(where + ": empty speaker name");
    if (u.contains("label") && !u["label"].is_null()) {
      if (!u["label"].is_string()) throw SchemaError(where + ": \"label\" must be a string");
      utt.label = u["label"].get<std::string>();
    }
    d.utterances.push_back(std::move(utt));
  }
  if (d.utterances.empty()) throw SchemaError(where + ": dialog has no utterances");
  return d;
}

}  // namespace

std::vector<Dialog> read_dialogs(std::istream& in, const std::string& source) {
  std::vector<Dialog> dialogs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    dialogs.push_back(parse_dialog(line, source + ":" + std::to_string(line_no)));
  }
  return dialogs;
}

std::vector<Dialog> load_dialogs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  return read_dialogs(in, path);
}

void write_dialogs(std::ostream& out, std::span<const Dialog> dialogs) {
  for (const auto& d : dialogs) {
    ordered_json utts = ordered_json::array();
    for (const auto& u : d.utterances) {
      ordered_json j;
      j["text"] = u.text;
      j["speaker"] = u.speaker;
      if (u.label) j["label"] = *u.label;
      utts.push_back(std::move(j));
    }
    ordered_json line;
    line["utterances"] = std::move(utts);
    out << line.dump() << '\n';
  }
}

void save_dialogs(const std::string& path, std::span<const Dialog> dialogs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path);
  write_dialogs(out, dialogs);
  if (!out) throw IoError("failed writing corpus file " + path);
}

// ---- corpus ------------------------------------------------------------------

namespace {

void apply_policy(std::vector<Dialog>& dialogs, std::span<const std::string> label_set,
                  OutOfSetPolicy policy) {
  if (policy == OutOfSetPolicy::mask) return;
  for (auto& d : dialogs) {
    std::erase_if(d.utterances, [&](const Utterance& u) {
      return u.label && !label_index(u.label, label_set);
    });
  }
  std::erase_if(dialogs, [](const Dialog& d) { return d.utterances.empty(); });
}

}  // namespace

Corpus make_corpus(std::vector<Dialog> train, std::vector<Dialog> val, std::vector<Dialog> test,
                   std::vector<std::string> label_set, OutOfSetPolicy policy) {
  if (label_set.empty()) throw ConfigError("label set is empty");
  std::set<std::string> unique(label_set.begin(), label_set.end());
  if (unique.size() != label_set.size()) throw ConfigError("label set has duplicate names");

  Corpus c;
  c.train = std::move(train);
  c.val = std::move(val);
  c.test = std::move(test);
  c.label_set = std::move(label_set);
  for (auto* split : {&c.train, &c.val, &c.test}) {
    apply_policy(*split, c.label_set, policy);
    for (const auto& d : *split) {
      if (d.utterances.empty()) throw SchemaError("dialog has no utterances");
      c.s_max = std::max(c.s_max, distinct_speakers(d));
    }
  }
  return c;
}

Corpus load_corpus(const CorpusPaths& paths, std::vector<std::string> label_set,
                   OutOfSetPolicy policy) {
  auto read = [](const std::string& p) {
    return p.empty() ? std::vector<Dialog>{} : load_dialogs(p);
  };
  return make_corpus(read(paths.train), read(paths.val), read(paths.test), std::move(label_set),
                     policy);
}

SplitStats split_stats(std::span<const Dialog> dialogs, std::span<const std::string> label_set) {
  SplitStats s;
  s.per_class.assign(label_set.size(), 0);
  s.dialogs = dialogs.size();
  for (const auto& d : dialogs) {
    for (const auto& u : d.utterances) {
      ++s.utterances;
      if (auto c = label_index(u.label, label_set)) {
        ++s.per_class[*c];
      } else {
        ++s.masked;
      }
    }
  }
  return s;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats st;
  st.label_set = corpus.label_set;
  st.train = split_stats(corpus.train, corpus.label_set);
  st.val = split_stats(corpus.val, corpus.label_set);
  st.test = split_stats(corpus.test, corpus.label_set);
  return st;
}

std::string format_stats(const CorpusStats& stats) {
  std::ostringstream os;
  auto cell = [](const SplitStats& s) {
    return std::to_string(s.dialogs) + "(" + std::to_string(s.utterances) + ")";
  };
  os << std::left << std::setw(8) << "split" << std::setw(22) << "#dialog(#utterance)";
  for (const auto& l : stats.label_set) os << std::setw(10) << l;
  os << "masked\n";
  const std::pair<const char*, const SplitStats*> rows[] = {
      {"train", &stats.train}, {"val", &stats.val}, {"test", &stats.test}};
  for (const auto& [name, s] : rows) {
    os << std::setw(8) << name << std::setw(22) << cell(*s);
    for (auto n : s->per_class) os << std::setw(10) << n;
    os << s->masked << '\n';
  }
  return os.str();
}

// ---- synthetic corpora -------------------------------------------------------

namespace {

const std::vector<std::vector<std::string>>& class_keywords() {
  static const std::vector<std::vector<std::string>> words = {
      {"angry", "furious", "mad", "hate", "annoyed", "rage", "yell", "stupid", "awful", "damn"},
      {"happy", "great", "love", "wonderful", "awesome", "yay", "fun", "smile", "excited", "glad"},
      {"sad", "cry", "miss", "sorry", "lonely", "tears", "hurt", "lost", "gloomy", "sigh"},
      {"okay", "table", "today", "coffee", "street", "time", "paper", "door", "monday", "car"},
  };
  return words;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {"i",   "you",  "the",  "a",    "is",
                                                 "it",  "that", "we",   "so",   "really",
                                                 "this", "and", "oh",   "well", "just",
                                                 "my",  "to",   "was",  "at",   "very"};
  return words;
}

const std::vector<std::string>& speaker_pool() {
  static const std::vector<std::string> names = {"Ross", "Rachel", "Monica",
                                                 "Chandler", "Joey", "Phoebe"};
  return names;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

Dialog overfit_dialog(Rng& rng, const OverfitCorpusOptions& opt,
                      const std::vector<std::string>& labels, std::size_t& label_cursor) {
  const auto& keywords = class_keywords();
  const auto& fillers = filler_words();
  const auto& pool = speaker_pool();
  Dialog d;
  const std::size_t len =
      std::uniform_int_distribution<std::size_t>(opt.min_utterances, opt.max_utterances)(rng);
  const std::size_t n_people = 2 + uniform_index(rng, 2);
  std::vector<std::string> people(pool);
  std::shuffle(people.begin(), people.end(), rng);
  people.resize(n_people);
  for (std::size_t j = 0; j < len; ++j) {
    // The first utterances of the corpus cycle through the classes so none is absent.
    const std::size_t cls =
        label_cursor < labels.size() ? label_cursor++ : uniform_index(rng, labels.size());
    std::vector<std::string> words;
    const std::size_t n_fill = 2 + uniform_index(rng, 4);
    for (std::size_t w = 0; w < n_fill; ++w) words.push_back(fillers[uniform_index(rng, fillers.size())]);
    const auto& kw = keywords[cls];
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, words.size() + 1)),
                 kw[uniform_index(rng, kw.size())]);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    text += uniform_index(rng, 2) ? "." : "!";
    text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    d.utterances.push_back({text, people[uniform_index(rng, people.size())], labels[cls]});
  }
  return d;
}

}  // namespace

Corpus make_overfit_corpus(std::uint64_t seed, const OverfitCorpusOptions& options) {
  if (options.dialogs < 1 || options.min_utterances < 1 ||
      options.max_utterances < options.min_utterances) {
    throw ConfigError("invalid overfit corpus options");
  }
  Rng rng(seed);
  const auto labels = label_preset("friends4");
  std::size_t cursor = 0;
  std::vector<Dialog> train, val, test;
  for (std::size_t i = 0; i < options.dialogs; ++i) train.push_back(overfit_dialog(rng, options, labels, cursor));
  const std::size_t held_out = std::max<std::size_t>(1, options.dialogs / 4);
  for (std::size_t i = 0; i < held_out; ++i) val.push_back(overfit_dialog(rng, options, labels, cursor));
  for (std::size_t i = 0; i < held_out; ++i) test.push_back(overfit_dialog(rng, options, labels, cursor));
  return make_corpus(std::move(train), std::move(val), std::move(test), labels);
}

Corpus make_speaker_parity_corpus(std::uint64_t seed, const SpeakerParityOptions& options) {
  if (options.min_utterances < 2 || options.max_utterances < options.min_utterances ||
      options.train_pairs < 1) {
    throw ConfigError("invalid speaker-parity corpus options");
  }
  Rng rng(seed);
  const std::vector<std::string> labels = {"same", "switch"};
  const auto& pool = speaker_pool();

  auto realise = [&](const std::vector<bool>& same) {
    std::vector<std::string> people(pool);
    std::shuffle(people.begin(), people.end(), rng);
    Dialog d;
    std::size_t who = 0;
    d.utterances.push_back({kParityText, people[who], std::nullopt});
    for (bool s : same) {
      if (!s) who = 1 - who;
      d.utterances.push_back({kParityText, people[who], labels[s ? 0 : 1]});
    }
    return d;
  };
  auto make_pairs = [&](std::size_t pairs) {
    std::vector<Dialog> out;
    for (std::size_t i = 0; i < pairs; ++i) {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(
          options.min_utterances, options.max_utterances)(rng);
      std::vector<bool> same(len - 1);
      for (std::size_t j = 0; j < same.size(); ++j) same[j] = uniform_index(rng, 2) == 0;
      std::vector<bool> twin(same.size());
      for (std::size_t j = 0; j < same.size(); ++j) twin[j] = !same[j];
      out.push_back(realise(same));
      out.push_back(realise(twin));
    }
    return out;
  };
  auto train = make_pairs(options.train_pairs);
  auto val = make_pairs(options.val_pairs);
  auto test = make_pairs(options.test_pairs);
  return make_corpus(std::move(train), std::move(val), std::move(test), labels);
}

}  // namespace hitrans
