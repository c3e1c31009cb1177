// Small UTF-8 helpers backed by ICU.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mg2p {
namespace unicode {

// Returns true if `text` is well-formed UTF-8.
bool IsValidUtf8(std::string_view text);

// NFC-normalizes `text`. Throws std::invalid_argument on malformed UTF-8.
std::string Nfc(std::string_view text);

// Splits `text` into one string per Unicode codepoint. No normalization is
// applied here; callers normalize first.
std::vector<std::string> SplitCodepoints(std::string_view text);

// True if any codepoint of `text` is Unicode whitespace.
bool ContainsWhitespace(std::string_view text);

// Name of the Unicode script of the first codepoint ("Latin", "Cyrillic",
// ...). Common and Inherited characters return an empty string.
std::string ScriptOf(std::string_view codepoint);

}  // namespace unicode
}  // namespace mg2p
