#pragma once

#include <optional>
#include <string>
#include <string_view>

// RFC-822 / MIME decoding for the mail corpora.
namespace spamdet::mail {

struct ParsedEmail {
  std::string subject;
  std::string body;  // decoded text: first text/plain part, else first text/html part
};

// nullopt when the bytes do not start with a header block.
std::optional<ParsedEmail> parse_raw_email(std::string_view bytes);

std::string decode_quoted_printable(std::string_view encoded);
std::string decode_base64(std::string_view encoded);

// Decodes RFC 2047 encoded-words (=?charset?B|Q?...?=) in a header value.
std::string decode_header_value(std::string_view value);

}  // namespace spamdet::mail
