#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spamdet {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kContinuationPrefix = "##";

// Words longer than this many code points map straight to [UNK].
inline constexpr std::size_t kMaxCharsPerWord = 100;

/// WordPiece vocabulary. Token IDs are zero-based positions in the token list;
/// the four reserved tokens must each appear exactly once.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::int32_t pad_id() const { return pad_id_; }
  std::int32_t unk_id() const { return unk_id_; }
  std::int32_t cls_id() const { return cls_id_; }
  std::int32_t sep_id() const { return sep_id_; }

  // Longest token length in bytes; bounds the greedy match window.
  std::size_t max_token_bytes() const { return max_token_bytes_; }

  // Canonical file contents: one token per line, LF-terminated.
  std::string serialize() const;
  // SHA-256 of serialize(); identifies the vocabulary in checkpoints.
  std::string digest() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::int32_t pad_id_ = -1, unk_id_ = -1, cls_id_ = -1, sep_id_ = -1;
  std::size_t max_token_bytes_ = 0;
};

Vocab parse_vocab(std::string_view contents);
Vocab load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);

/// Model input for one message: [CLS] pieces... [SEP] [PAD]...
struct Encoding {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;  // 1 for real positions, 0 for padding
  std::size_t real_len = 0;

  std::size_t max_len() const { return ids.size(); }
};

// Whitespace split with ASCII lowercasing.
std::vector<std::string> split_words(std::string_view text);

// Greedy longest-match-first WordPiece over each word of `text`.
std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab);

// Head-truncates to max_len - 2 pieces. Throws ConfigError if max_len < 3.
Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len);
Encoding encode_pieces(std::span<const std::string> pieces, const Vocab& vocab,
                       std::size_t max_len);

/// Induces a vocabulary from cleaned texts.
///
/// Every character seen at the start of a word, and every character seen
/// inside a word (as a "##" piece), is always included so that no corpus
/// word decomposes to [UNK]. Remaining slots go to whole words and "##"
/// suffixes ranked by the number of word occurrences they appear in, ties
/// broken lexicographically. Throws ConfigError when target_size cannot hold
/// the reserved tokens plus the single-character pieces.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size);

}  // namespace spamdet
