#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace spamdet::utf8 {

// Length in bytes of the well-formed UTF-8 sequence starting at text[pos],
// or 0 if the bytes there are not a valid sequence.
std::size_t sequence_length(std::string_view text, std::size_t pos);

// Byte offsets of every code point start plus text.size() as the final
// entry. Ill-formed bytes count as one unit each.
std::vector<std::size_t> boundaries(std::string_view text);

// Re-encodes arbitrary bytes as valid UTF-8: well-formed sequences pass
// through, every other byte is read as Latin-1.
std::string decode_lossy(std::string_view bytes);

std::string encode_codepoint(char32_t cp);

}  // namespace spamdet::utf8
