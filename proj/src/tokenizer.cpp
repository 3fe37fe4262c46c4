#include "hitrans/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "hitrans/errors.hpp"

namespace hitrans {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

// Byte length of the UTF-8 sequence starting at s[i]; malformed lead bytes count as 1.
std::size_t utf8_len(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if (c >= 0xF0) n = 4;
  else if (c >= 0xE0) n = 3;
  else if (c >= 0xC0) n = 2;
  return std::min(n, s.size() - i);
}

char32_t decode(std::string_view s, std::size_t i, std::size_t len) {
  const auto b = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k])); };
  switch (len) {
    case 2: return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
    case 3: return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
    case 4: return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) | ((b(2) & 0x3F) << 6) | (b(3) & 0x3F);
    default: return b(0);
  }
}

bool is_whitespace(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\r': case U'\v': case U'\f':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
    case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

bool is_ascii_punct(char32_t c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

// Code point boundaries of a word, as byte offsets (first 0, last word.size()).
std::vector<std::size_t> char_boundaries(std::string_view word) {
  std::vector<std::size_t> cuts{0};
  for (std::size_t i = 0; i < word.size();) {
    i += utf8_len(word, i);
    cuts.push_back(i);
  }
  return cuts;
}

void write_tokens(std::ostream& out, const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) out << t << '\n';
}

}  // namespace

// ---- Vocab ---------------------------------------------------------------

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const std::string_view specials[] = {kPadToken, kUnkToken, kClsToken, kSepToken};
  if (tokens.size() < 4) throw SchemaError("vocab must start with [PAD],[UNK],[CLS],[SEP]");
  for (std::size_t i = 0; i < 4; ++i) {
    if (tokens[i] != specials[i]) {
      throw SchemaError("vocab line " + std::to_string(i + 1) + " must be " +
                        std::string(specials[i]) + ", found '" + tokens[i] + "'");
    }
  }
  Vocab v;
  v.index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw SchemaError("empty token at vocab line " + std::to_string(i + 1));
    if (!v.index_.emplace(tokens[i], static_cast<std::int32_t>(i)).second) {
      throw SchemaError("duplicate vocab token '" + tokens[i] + "' at line " + std::to_string(i + 1));
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

Vocab Vocab::read(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file " + path);
  return read(in);
}

void Vocab::write(std::ostream& out) const { write_tokens(out, tokens_); }

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file " + path);
  write(out);
  if (!out) throw IoError("failed writing vocab file " + path);
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocab id " + std::to_string(id) + " out of range for size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

void TokenizerConfig::validate() const {
  if (max_len < 3) {
    throw ConfigError("tokenizer max_len must be at least 3, got " + std::to_string(max_len));
  }
}

// ---- splitting and WordPiece ---------------------------------------------

std::vector<std::string> basic_split(std::string_view text, bool lowercase) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t len = utf8_len(text, i);
    const char32_t cp = decode(text, i, len);
    if (is_whitespace(cp)) {
      flush();
    } else if (is_ascii_punct(cp)) {
      flush();
      words.emplace_back(1, text[i]);
    } else if (len == 1) {
      char c = text[i];
      if (lowercase && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      current.push_back(c);
    } else {
      current.append(text.substr(i, len));
    }
    i += len;
  }
  flush();
  return words;
}

std::vector<std::string> wordpiece_tokenize(std::string_view word, const Vocab& vocab) {
  const auto cuts = char_boundaries(word);
  const std::size_t n_chars = cuts.size() - 1;
  if (n_chars == 0 || n_chars > kMaxCharsPerWord) return {std::string(kUnkToken)};

  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < n_chars) {
    std::size_t end = n_chars;
    std::string match;
    while (end > start) {
      std::string candidate(word.substr(cuts[start], cuts[end] - cuts[start]));
      if (start > 0) candidate.insert(0, kContinuationPrefix);
      if (vocab.find(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) return {std::string(kUnkToken)};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

Encoding encode(std::string_view text, const Vocab& vocab, const TokenizerConfig& cfg) {
  cfg.validate();
  Encoding enc;
  enc.ids.push_back(kClsId);
  const std::size_t budget = cfg.max_len - 2;
  for (const auto& word : basic_split(text, cfg.lowercase)) {
    for (const auto& piece : wordpiece_tokenize(word, vocab)) {
      if (enc.ids.size() - 1 >= budget) break;
      enc.ids.push_back(vocab.find(piece).value_or(kUnkId));
    }
    if (enc.ids.size() - 1 >= budget) break;
  }
  enc.ids.push_back(kSepId);
  enc.pool_mask.assign(enc.ids.size(), 1);
  return enc;
}

// ---- vocabulary construction -----------------------------------------------

Vocab build_vocab(std::span<const std::string> texts, std::size_t target_size, std::size_t min_freq,
                  bool lowercase) {
  if (target_size <= 4) {
    throw ConfigError("vocab target_size must exceed the 4 special tokens, got " +
                      std::to_string(target_size));
  }
  std::map<std::string, std::size_t> freq;
  for (const auto& text : texts) {
    for (auto& w : basic_split(text, lowercase)) ++freq[std::move(w)];
  }
  if (freq.empty()) throw ContractError("cannot build a vocab from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::size_t frequent = 0;
  while (frequent < ranked.size() && ranked[frequent].second >= std::max<std::size_t>(min_freq, 1)) {
    ++frequent;
  }

  // Character pieces for every word that is not kept whole.
  std::map<std::string, std::size_t> piece_freq;
  auto add_pieces = [&](const std::string& word) {
    const auto cuts = char_boundaries(word);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      std::string piece = word.substr(cuts[c], cuts[c + 1] - cuts[c]);
      if (c > 0) piece.insert(0, kContinuationPrefix);
      piece_freq[std::move(piece)] += freq[word];
    }
  };
  for (std::size_t i = frequent; i < ranked.size(); ++i) add_pieces(ranked[i].first);

  // Shrink the whole-word list until whole words + pieces fit the target.
  std::size_t kept = frequent;
  while (4 + kept + piece_freq.size() > target_size) {
    if (kept == 0) {
      throw ConfigError("vocab target_size " + std::to_string(target_size) +
                        " cannot hold the " + std::to_string(piece_freq.size()) +
                        " character pieces this corpus needs");
    }
    --kept;
    add_pieces(ranked[kept].first);
  }

  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken),
                                  std::string(kClsToken), std::string(kSepToken)};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < kept; ++i) {
    if (seen.insert(ranked[i].first).second) tokens.push_back(ranked[i].first);
  }
  std::vector<std::pair<std::string, std::size_t>> pieces(piece_freq.begin(), piece_freq.end());
  std::stable_sort(pieces.begin(), pieces.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [piece, count] : pieces) {
    if (seen.insert(piece).second) tokens.push_back(piece);
  }
  return Vocab::from_tokens(std::move(tokens));
}

}  // namespace hitrans
