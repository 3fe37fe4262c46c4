#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hitrans {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kContinuationPrefix = "##";

// Token inventory with dense ids. The four specials always sit at ids 0..3.
class Vocab {
public:
  // Throws SchemaError on duplicates or misplaced specials.
  static Vocab from_tokens(std::vector<std::string> tokens);
  // One token per line, line number = id (vocab.txt convention).
  static Vocab read(std::istream& in);
  static Vocab load(const std::string& path);
  void write(std::ostream& out) const;
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the serialized vocab; used to match checkpoints to vocab files.
  std::uint64_t hash() const;

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct TokenizerConfig {
  std::size_t max_len = 512;
  bool lowercase = true;

  void validate() const;
};

// Whitespace split with ASCII punctuation emitted as standalone tokens.
std::vector<std::string> basic_split(std::string_view text, bool lowercase);

// Greedy longest-match-first WordPiece; a word with no full decomposition
// becomes a single [UNK].
std::vector<std::string> wordpiece_tokenize(std::string_view word, const Vocab& vocab);

struct Encoding {
  std::vector<std::int32_t> ids;
  // 1 for every pooling-eligible (non-[PAD]) position.
  std::vector<std::uint8_t> pool_mask;
};

// [CLS] pieces... [SEP], keeping the earliest pieces when longer than max_len.
Encoding encode(std::string_view text, const Vocab& vocab, const TokenizerConfig& cfg);

// Specials, then frequent whole words (frequency desc, then lexicographic), then
// the character pieces needed so every remaining word decomposes without [UNK].
// Character coverage wins over whole words when target_size is tight.
Vocab build_vocab(std::span<const std::string> texts, std::size_t target_size, std::size_t min_freq,
                  bool lowercase = true);

}  // namespace hitrans
