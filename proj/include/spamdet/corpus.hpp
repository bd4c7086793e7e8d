#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spamdet {

enum class Label : int { ham = 0, spam = 1 };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view name);
inline int to_index(Label label) { return static_cast<int>(label); }

struct LabeledMessage {
  std::string text;  // cleaned
  Label label = Label::ham;
  std::string source;     // corpus identifier, e.g. "sms"
  std::string origin_id;  // stable per message: line number or relative path

  friend bool operator==(const LabeledMessage&, const LabeledMessage&) = default;
};

struct CorpusCounts {
  std::size_t total = 0;
  std::size_t spam = 0;
  std::size_t ham = 0;
};

CorpusCounts count_labels(std::span<const LabeledMessage> messages);

struct LoadResult {
  std::vector<LabeledMessage> messages;
  CorpusCounts counts;
  std::size_t skipped = 0;  // malformed lines or undecodable files
};

struct CorpusSplit {
  std::vector<LabeledMessage> train;
  std::vector<LabeledMessage> eval;
  std::uint64_t seed = 0;
  double eval_fraction = 0.1;
};

/// Strips HTML tags (script/style bodies included), URLs, and control
/// characters other than LF and TAB, then collapses whitespace runs to one
/// space and trims. Idempotent.
std::string clean_text(std::string_view raw);

// True if `text` contains an http://, https://, ftp:// or www. run.
bool contains_url(std::string_view text);

/// Tab-separated `<ham|spam>\t<text>` per line. Lines without a tab are
/// skipped and counted; an unknown label throws LoadError naming the line.
LoadResult load_sms_collection(const std::filesystem::path& path, std::string source = "sms");

enum class MailFormat { raw_email, plain_text };

std::optional<MailFormat> parse_mail_format(std::string_view name);

/// Every regular file below spam_dir / ham_dir (recursively, sorted) is one
/// message labelled by its directory. Undecodable files are skipped and
/// counted; a directory without files throws LoadError.
LoadResult load_mail_dirs(const std::filesystem::path& spam_dir,
                          const std::filesystem::path& ham_dir, MailFormat format,
                          std::string source);

// ceil(eval_fraction * n), robust to representation error in the product.
std::size_t eval_count(std::size_t n, double eval_fraction);

/// Canonical order by origin_id, seeded Fisher-Yates shuffle, then the first
/// eval_count(N) messages form the evaluation set. Unstratified.
CorpusSplit split_train_eval(std::vector<LabeledMessage> messages, double eval_fraction,
                             std::uint64_t seed);

// Prepared-data format: one {"id","label","text","source"} object per line.
void write_jsonl(std::span<const LabeledMessage> messages, std::ostream& out);
std::vector<LabeledMessage> read_jsonl(std::istream& in);
std::vector<LabeledMessage> read_jsonl(const std::filesystem::path& path);

}  // namespace spamdet
