#include "spamdet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spamdet/errors.hpp"
#include "spamdet/fileio.hpp"
#include "spamdet/mail.hpp"
#include "spamdet/random.hpp"
#include "spamdet/utf8.hpp"

namespace spamdet {

namespace fs = std::filesystem;

namespace {

char lower_ascii(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > s.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (lower_ascii(s[pos + i]) != prefix[i]) return false;
  return true;
}

std::size_t find_ci(std::string_view s, std::string_view needle, std::size_t from) {
  for (std::size_t i = from; i + needle.size() <= s.size(); ++i)
    if (starts_with_ci(s, i, needle)) return i;
  return std::string_view::npos;
}

std::string strip_controls(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == '\t' || c == '\n') {
      out += static_cast<char>(c);
    } else if (c < 0x20 || c == 0x7F) {
      continue;
    } else if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) >= 0x80 &&
               static_cast<unsigned char>(s[i + 1]) <= 0x9F) {
      ++i;  // C1 control, U+0080..U+009F
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

bool opens_tag(std::string_view s, std::size_t i) {
  if (s[i] != '<' || i + 1 >= s.size()) return false;
  const char n = s[i + 1];
  return is_ascii_letter(n) || n == '/' || n == '!' || n == '?';
}

// One left-to-right pass of the tag state machine. Tags become a single
// space; an unterminated '<' is dropped; script and style bodies vanish.
std::string strip_tags_once(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (!opens_tag(s, i)) {
      out += s[i++];
      continue;
    }
    if (s.substr(i, 4) == "<!--") {
      const auto end = s.find("-->", i + 4);
      if (end == std::string_view::npos) {
        ++i;
      } else {
        out += ' ';
        i = end + 3;
      }
      continue;
    }
    const auto close = s.find('>', i + 1);
    if (close == std::string_view::npos) {
      ++i;
      continue;
    }
    std::size_t next = close + 1;
    for (std::string_view raw_element : {"script", "style"}) {
      if (starts_with_ci(s, i + 1, raw_element)) {
        const std::string closing = "</" + std::string(raw_element);
        const auto end_tag = find_ci(s, closing, close + 1);
        if (end_tag != std::string_view::npos) {
          const auto end_close = s.find('>', end_tag);
          next = end_close == std::string_view::npos ? s.size() : end_close + 1;
        }
      }
    }
    out += ' ';
    i = next;
  }
  return out;
}

constexpr std::string_view kUrlStarts[] = {"http://", "https://", "ftp://", "www."};

std::size_t find_url(std::string_view s, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i)
    for (auto prefix : kUrlStarts)
      if (starts_with_ci(s, i, prefix)) return i;
  return std::string_view::npos;
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n'; }

std::string strip_urls(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = find_url(s, pos);
    if (start == std::string_view::npos) {
      out.append(s.substr(pos));
      break;
    }
    out.append(s.substr(pos, start - pos));
    std::size_t end = start;
    while (end < s.size() && !is_ws(s[end])) ++end;
    pos = end;
  }
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_ws(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

std::vector<fs::path> list_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  if (files.empty()) throw LoadError("no message files in " + dir.string());
  std::sort(files.begin(), files.end());
  return files;
}

std::optional<std::string> message_text(const std::string& bytes, MailFormat format) {
  if (format == MailFormat::raw_email) {
    const auto email = mail::parse_raw_email(bytes);
    if (!email) return std::nullopt;
    return email->subject + " " + email->body;
  }
  std::string text = utf8::decode_lossy(bytes);
  std::string_view view = text;
  if (starts_with_ci(view, 0, "subject:")) view.remove_prefix(8);
  std::string joined(view);
  std::replace(joined.begin(), joined.end(), '\n', ' ');
  return joined;
}

}  // namespace

std::string_view to_string(Label label) { return label == Label::spam ? "spam" : "ham"; }

std::optional<Label> parse_label(std::string_view name) {
  if (name == "ham") return Label::ham;
  if (name == "spam") return Label::spam;
  return std::nullopt;
}

CorpusCounts count_labels(std::span<const LabeledMessage> messages) {
  CorpusCounts c;
  c.total = messages.size();
  for (const auto& m : messages) (m.label == Label::spam ? c.spam : c.ham) += 1;
  return c;
}

std::string clean_text(std::string_view raw) {
  std::string text = strip_controls(raw);
  for (;;) {
    std::string next = strip_tags_once(text);
    if (next == text) break;
    text = std::move(next);
  }
  return collapse_whitespace(strip_urls(text));
}

bool contains_url(std::string_view text) { return find_url(text, 0) != std::string_view::npos; }

LoadResult load_sms_collection(const fs::path& path, std::string source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open SMS collection " + path.string());
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ++result.skipped;
      continue;
    }
    const auto label = parse_label(line.substr(0, tab));
    if (!label) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": unknown label '" +
                      line.substr(0, tab) + "'");
    }
    char id[32];
    std::snprintf(id, sizeof id, "line-%07zu", line_no);
    result.messages.push_back(
        {clean_text(utf8::decode_lossy(std::string_view(line).substr(tab + 1))), *label, source, id});
  }
  result.counts = count_labels(result.messages);
  return result;
}

std::optional<MailFormat> parse_mail_format(std::string_view name) {
  if (name == "raw-email") return MailFormat::raw_email;
  if (name == "plain-text") return MailFormat::plain_text;
  return std::nullopt;
}

LoadResult load_mail_dirs(const fs::path& spam_dir, const fs::path& ham_dir, MailFormat format,
                          std::string source) {
  LoadResult result;
  for (const auto& [dir, label] : {std::pair{spam_dir, Label::spam}, std::pair{ham_dir, Label::ham}}) {
    for (const auto& file : list_files(dir)) {
      std::string bytes;
      try {
        bytes = read_file(file);
      } catch (const LoadError&) {
        ++result.skipped;
        continue;
      }
      const auto text = message_text(bytes, format);
      if (!text) {
        ++result.skipped;
        continue;
      }
      const std::string origin =
          std::string(to_string(label)) + "/" + fs::relative(file, dir).generic_string();
      result.messages.push_back({clean_text(*text), label, source, origin});
    }
  }
  result.counts = count_labels(result.messages);
  return result;
}

std::size_t eval_count(std::size_t n, double eval_fraction) {
  // 0.1 * 30 evaluates to 3.0000000000000004; the tolerance keeps exact
  // products from rounding up.
  const double raw = eval_fraction * static_cast<double>(n);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

CorpusSplit split_train_eval(std::vector<LabeledMessage> messages, double eval_fraction,
                             std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("eval_fraction must lie strictly between 0 and 1, got " +
                      std::to_string(eval_fraction));
  }
  if (messages.empty()) throw ConfigError("cannot split an empty corpus");
  const std::size_t n = messages.size();
  const std::size_t n_eval = eval_count(n, eval_fraction);
  if (n_eval == 0 || n_eval >= n) {
    throw ConfigError("eval_fraction " + std::to_string(eval_fraction) + " over " +
                      std::to_string(n) + " messages leaves an empty train or eval set");
  }
  std::stable_sort(messages.begin(), messages.end(),
                   [](const auto& a, const auto& b) { return a.origin_id < b.origin_id; });
  for (std::size_t i = 1; i < n; ++i) {
    if (messages[i].origin_id == messages[i - 1].origin_id) {
      throw InputError("duplicate origin_id '" + messages[i].origin_id + "'");
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<LabeledMessage>(messages));
  CorpusSplit split;
  split.seed = seed;
  split.eval_fraction = eval_fraction;
  split.eval.assign(std::make_move_iterator(messages.begin()),
                    std::make_move_iterator(messages.begin() + static_cast<std::ptrdiff_t>(n_eval)));
  split.train.assign(std::make_move_iterator(messages.begin() + static_cast<std::ptrdiff_t>(n_eval)),
                     std::make_move_iterator(messages.end()));
  return split;
}

void write_jsonl(std::span<const LabeledMessage> messages, std::ostream& out) {
  for (const auto& m : messages) {
    nlohmann::ordered_json j;
    j["id"] = m.origin_id;
    j["label"] = to_index(m.label);
    j["text"] = m.text;
    j["source"] = m.source;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

std::vector<LabeledMessage> read_jsonl(std::istream& in) {
  std::vector<LabeledMessage> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int label = j.at("label").get<int>();
      if (label != 0 && label != 1) {
        throw InputError("label " + std::to_string(label) + " not in {0,1}");
      }
      out.push_back({j.at("text").get<std::string>(), static_cast<Label>(label),
                     j.at("source").get<std::string>(), j.at("id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError("prepared data line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("prepared data line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabeledMessage> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open prepared data " + path.string());
  return read_jsonl(in);
}

}  // namespace spamdet
