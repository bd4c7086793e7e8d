#include "spamdet/mail.hpp"

#include <algorithm>
#include <cctype>
#include <utility>
#include <vector>

#include "spamdet/utf8.hpp"

namespace spamdet::mail {

namespace {

constexpr int kMaxMimeDepth = 16;

struct Entity {
  std::vector<std::pair<std::string, std::string>> headers;  // lowercase names
  std::string body;

  std::string header(std::string_view name) const {
    for (const auto& [k, v] : headers)
      if (k == name) return v;
    return {};
  }
};

struct ContentType {
  std::string type = "text/plain";
  std::string boundary;
  std::string charset;
};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_header_line(std::string_view line) {
  const auto colon = line.find(':');
  if (colon == 0 || colon == std::string_view::npos) return false;
  return std::all_of(line.begin(), line.begin() + static_cast<std::ptrdiff_t>(colon),
                     [](char c) { return c > 32 && c < 127; });
}

std::string normalize_newlines(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == '\r' && i + 1 < in.size() && in[i + 1] == '\n') continue;
    out += in[i];
  }
  return out;
}

// Splits a header block from its body. With `strict`, the first line must be
// a header. A line that is neither header, continuation nor blank ends the
// header block leniently (some corpora omit the blank separator).
std::optional<Entity> parse_entity(std::string_view text, bool strict) {
  Entity entity;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    if (line.empty()) {
      pos = end + 1;
      break;
    }
    if ((line.front() == ' ' || line.front() == '\t') && !entity.headers.empty()) {
      entity.headers.back().second += ' ';
      entity.headers.back().second += trim(line);
    } else if (is_header_line(line)) {
      const auto colon = line.find(':');
      entity.headers.emplace_back(lower(line.substr(0, colon)),
                                  std::string(trim(line.substr(colon + 1))));
    } else {
      if (first && strict) return std::nullopt;
      break;
    }
    first = false;
    pos = end + 1;
  }
  if (first && strict) return std::nullopt;
  if (pos < text.size()) entity.body = std::string(text.substr(pos));
  return entity;
}

ContentType parse_content_type(std::string_view value) {
  ContentType ct;
  if (trim(value).empty()) return ct;
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= value.size(); ++i) {
    if (i < value.size() && value[i] == '"') quoted = !quoted;
    if (i == value.size() || (value[i] == ';' && !quoted)) {
      fields.push_back(value.substr(start, i - start));
      start = i + 1;
    }
  }
  ct.type = lower(trim(fields.front()));
  for (std::size_t f = 1; f < fields.size(); ++f) {
    const auto eq = fields[f].find('=');
    if (eq == std::string_view::npos) continue;
    const std::string key = lower(trim(fields[f].substr(0, eq)));
    std::string_view val = trim(fields[f].substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    if (key == "boundary") ct.boundary = std::string(val);
    if (key == "charset") ct.charset = lower(val);
  }
  return ct;
}

std::string latin1_to_utf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (char c : bytes) out += utf8::encode_codepoint(static_cast<unsigned char>(c));
  return out;
}

std::string to_utf8(std::string_view bytes, std::string_view charset) {
  if (charset.find("8859-1") != std::string_view::npos || charset.find("latin1") != std::string_view::npos ||
      charset.find("1252") != std::string_view::npos) {
    return latin1_to_utf8(bytes);
  }
  return utf8::decode_lossy(bytes);
}

std::string decode_transfer(const Entity& e, std::string_view charset) {
  const std::string encoding = lower(trim(e.header("content-transfer-encoding")));
  std::string raw;
  if (encoding == "base64") {
    raw = decode_base64(e.body);
  } else if (encoding == "quoted-printable") {
    raw = decode_quoted_printable(e.body);
  } else {
    raw = e.body;
  }
  return to_utf8(raw, charset);
}

std::vector<std::string_view> split_multipart(std::string_view body, const std::string& boundary) {
  std::vector<std::string_view> parts;
  const std::string delimiter = "--" + boundary;
  std::size_t pos = 0;
  std::optional<std::size_t> part_start;
  while (pos <= body.size()) {
    std::size_t end = body.find('\n', pos);
    if (end == std::string_view::npos) end = body.size();
    const std::string_view line = body.substr(pos, end - pos);
    if (line.substr(0, delimiter.size()) == delimiter) {
      if (part_start) {
        const std::size_t stop = pos > *part_start ? pos - 1 : pos;  // drop the line break
        parts.push_back(body.substr(*part_start, stop - *part_start));
      }
      if (trim(line.substr(delimiter.size())).substr(0, 2) == "--") return parts;
      part_start = end + 1 <= body.size() ? end + 1 : body.size();
    }
    if (end == body.size()) break;
    pos = end + 1;
  }
  if (part_start && *part_start < body.size()) parts.push_back(body.substr(*part_start));
  return parts;
}

void collect_text(const Entity& e, int depth, std::optional<std::string>& plain,
                  std::optional<std::string>& html) {
  if (depth > kMaxMimeDepth || plain) return;
  const ContentType ct = parse_content_type(e.header("content-type"));
  if (ct.type.rfind("multipart/", 0) == 0) {
    if (ct.boundary.empty()) return;
    for (const auto part_text : split_multipart(e.body, ct.boundary)) {
      const auto part = parse_entity(part_text, false);
      if (part) collect_text(*part, depth + 1, plain, html);
      if (plain) return;
    }
    return;
  }
  if (ct.type == "text/plain") {
    plain = decode_transfer(e, ct.charset);
  } else if (ct.type == "text/html" && !html) {
    html = decode_transfer(e, ct.charset);
  }
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

}  // namespace

std::string decode_quoted_printable(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != '=') {
      out += in[i];
      continue;
    }
    if (i + 1 < in.size() && in[i + 1] == '\n') {  // soft line break
      ++i;
    } else if (i + 2 < in.size() && in[i + 1] == '\r' && in[i + 2] == '\n') {
      i += 2;
    } else if (i + 2 < in.size() && hex_value(in[i + 1]) >= 0 && hex_value(in[i + 2]) >= 0) {
      out += static_cast<char>(hex_value(in[i + 1]) * 16 + hex_value(in[i + 2]));
      i += 2;
    } else {
      out += '=';
    }
  }
  return out;
}

std::string decode_base64(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  unsigned buffer = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) continue;
    buffer = (buffer << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((buffer >> bits) & 0xFF);
    }
  }
  return out;
}

std::string decode_header_value(std::string_view value) {
  std::string out;
  std::size_t pos = 0;
  bool last_was_encoded = false;
  while (pos < value.size()) {
    const std::size_t start = value.find("=?", pos);
    std::size_t q1 = std::string_view::npos, q2 = std::string_view::npos, end = std::string_view::npos;
    if (start != std::string_view::npos) {
      q1 = value.find('?', start + 2);
      if (q1 != std::string_view::npos) q2 = value.find('?', q1 + 1);
      if (q2 != std::string_view::npos) end = value.find("?=", q2 + 1);
    }
    if (end == std::string_view::npos || q2 != q1 + 2) {
      out.append(value.substr(pos));
      break;
    }
    const std::string_view between = value.substr(pos, start - pos);
    // Whitespace separating two encoded words is not part of the text.
    if (!(last_was_encoded && trim(between).empty())) out.append(between);
    const std::string charset = lower(value.substr(start + 2, q1 - start - 2));
    const char enc = static_cast<char>(std::toupper(static_cast<unsigned char>(value[q1 + 1])));
    std::string payload(value.substr(q2 + 1, end - q2 - 1));
    std::string raw;
    if (enc == 'B') {
      raw = decode_base64(payload);
    } else {
      std::replace(payload.begin(), payload.end(), '_', ' ');
      raw = decode_quoted_printable(payload);
    }
    out += to_utf8(raw, charset);
    last_was_encoded = true;
    pos = end + 2;
  }
  return out;
}

std::optional<ParsedEmail> parse_raw_email(std::string_view bytes) {
  std::string text = normalize_newlines(bytes);
  std::string_view view = text;
  if (view.substr(0, 5) == "From ") {  // mbox envelope line
    const auto nl = view.find('\n');
    view = nl == std::string_view::npos ? std::string_view{} : view.substr(nl + 1);
  }
  const auto entity = parse_entity(view, true);
  if (!entity) return std::nullopt;

  ParsedEmail email;
  email.subject = decode_header_value(entity->header("subject"));
  std::optional<std::string> plain, html;
  collect_text(*entity, 0, plain, html);
  if (plain) {
    email.body = std::move(*plain);
  } else if (html) {
    email.body = std::move(*html);  // tags are stripped by clean_text
  }
  return email;
}

}  // namespace spamdet::mail
