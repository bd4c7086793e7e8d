#include "spamdet/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "spamdet/digest.hpp"
#include "spamdet/errors.hpp"
#include "spamdet/utf8.hpp"

namespace spamdet {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

char lower_ascii(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& tok = tokens_[i];
    if (tok.empty()) {
      throw VocabError("empty token on line " + std::to_string(i + 1));
    }
    if (tok.find_first_of("\n\r") != std::string::npos) {
      throw VocabError("token on line " + std::to_string(i + 1) + " contains a line break");
    }
    const auto [it, inserted] = index_.emplace(tok, static_cast<std::int32_t>(i));
    if (!inserted) {
      throw VocabError("duplicate token '" + tok + "' on lines " +
                       std::to_string(it->second + 1) + " and " + std::to_string(i + 1));
    }
    max_token_bytes_ = std::max(max_token_bytes_, tok.size());
  }
  auto reserved = [&](std::string_view name) {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw VocabError("vocabulary is missing reserved token " + std::string(name));
    }
    return it->second;
  };
  pad_id_ = reserved(kPadToken);
  unk_id_ = reserved(kUnkToken);
  cls_id_ = reserved(kClsToken);
  sep_id_ = reserved(kSepToken);
}

std::optional<std::int32_t> Vocab::find(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) throw VocabError("token not in vocabulary: '" + token + "'");
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

std::string Vocab::digest() const { return sha256_hex(serialize()); }

Vocab parse_vocab(std::string_view contents) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    tokens.emplace_back(line);
    pos = end + 1;
  }
  return Vocab(std::move(tokens));
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabError("cannot open vocabulary file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_vocab(buffer.str());
  } catch (const VocabError& e) {
    throw VocabError(path.string() + ": " + e.what());
  }
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  const std::string text = vocab.serialize();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("failed writing vocabulary file " + path.string());
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (is_space(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current += lower_ascii(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  const std::string unk(kUnkToken);
  for (const auto& word : split_words(text)) {
    const auto bounds = utf8::boundaries(word);
    const std::size_t chars = bounds.size() - 1;
    if (chars > kMaxCharsPerWord) {
      out.push_back(unk);
      continue;
    }
    std::vector<std::string> pieces;
    std::size_t start = 0;  // index into bounds
    bool ok = true;
    while (start < chars) {
      const std::size_t prefix = start > 0 ? kContinuationPrefix.size() : 0;
      std::size_t end = chars;
      // Skip candidates longer than any vocabulary entry.
      while (end > start && bounds[end] - bounds[start] + prefix > vocab.max_token_bytes()) --end;
      std::string match;
      for (; end > start; --end) {
        std::string candidate = start > 0 ? std::string(kContinuationPrefix) : std::string();
        candidate.append(word, bounds[start], bounds[end] - bounds[start]);
        if (vocab.contains(candidate)) {
          match = std::move(candidate);
          break;
        }
      }
      if (match.empty()) {
        ok = false;
        break;
      }
      pieces.push_back(std::move(match));
      start = end;
    }
    if (ok) {
      for (auto& p : pieces) out.push_back(std::move(p));
    } else {
      out.push_back(unk);
    }
  }
  return out;
}

Encoding encode_pieces(std::span<const std::string> pieces, const Vocab& vocab,
                       std::size_t max_len) {
  if (max_len < 3) {
    throw ConfigError("max_len must be at least 3 (CLS, content, SEP), got " +
                      std::to_string(max_len));
  }
  const std::size_t kept = std::min(pieces.size(), max_len - 2);
  Encoding enc;
  enc.ids.reserve(max_len);
  enc.ids.push_back(vocab.cls_id());
  for (std::size_t i = 0; i < kept; ++i) {
    const auto id = vocab.find(pieces[i]);
    enc.ids.push_back(id ? *id : vocab.unk_id());
  }
  enc.ids.push_back(vocab.sep_id());
  enc.real_len = enc.ids.size();
  enc.ids.resize(max_len, vocab.pad_id());
  enc.mask.assign(max_len, 0);
  std::fill_n(enc.mask.begin(), enc.real_len, std::uint8_t{1});
  return enc;
}

Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) {
    throw ConfigError("max_len must be at least 3 (CLS, content, SEP), got " +
                      std::to_string(max_len));
  }
  const auto pieces = wordpiece_tokenize(text, vocab);
  return encode_pieces(pieces, vocab, max_len);
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, std::size_t> word_counts;
  for (const auto& text : corpus)
    for (auto& w : split_words(text)) ++word_counts[std::move(w)];

  // Occurrence count per piece, and the pieces that must be present.
  std::map<std::string, std::size_t> frequency;
  std::set<std::string> required;
  const std::string cont(kContinuationPrefix);
  for (const auto& [word, count] : word_counts) {
    const auto bounds = utf8::boundaries(word);
    const std::size_t chars = bounds.size() - 1;
    if (chars > kMaxCharsPerWord) continue;
    std::set<std::string> pieces;
    pieces.insert(word);
    const std::string first = word.substr(0, bounds[1]);
    pieces.insert(first);
    required.insert(first);
    for (std::size_t i = 1; i < chars; ++i) {
      pieces.insert(cont + word.substr(bounds[i]));
      std::string ch = cont + word.substr(bounds[i], bounds[i + 1] - bounds[i]);
      required.insert(ch);
      pieces.insert(std::move(ch));
    }
    for (const auto& p : pieces) frequency[p] += count;
  }

  constexpr std::size_t kReserved = 4;
  if (target_size < kReserved + required.size()) {
    throw ConfigError("target vocabulary size " + std::to_string(target_size) +
                      " cannot hold the 4 reserved tokens and " +
                      std::to_string(required.size()) + " single-character pieces");
  }

  auto by_rank = [&](const std::string& a, const std::string& b) {
    const auto fa = frequency.at(a), fb = frequency.at(b);
    return fa != fb ? fa > fb : a < b;
  };

  std::vector<std::string> optional;
  for (const auto& [piece, _] : frequency)
    if (!required.contains(piece)) optional.push_back(piece);
  std::sort(optional.begin(), optional.end(), by_rank);

  std::vector<std::string> chosen(required.begin(), required.end());
  const std::size_t room = target_size - kReserved - required.size();
  const std::size_t extra = std::min(room, optional.size());
  chosen.insert(chosen.end(), optional.begin(), optional.begin() + static_cast<std::ptrdiff_t>(extra));
  std::sort(chosen.begin(), chosen.end(), by_rank);

  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken),
                                  std::string(kClsToken), std::string(kSepToken)};
  tokens.insert(tokens.end(), chosen.begin(), chosen.end());
  return Vocab(std::move(tokens));
}

}  // namespace spamdet
