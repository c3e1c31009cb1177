#include "mg2p/unicode.hpp"

#include <stdexcept>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace mg2p {
namespace unicode {

bool IsValidUtf8(std::string_view text) {
  int32_t i = 0;
  const auto length = static_cast<int32_t>(text.size());
  while (i < length) {
    UChar32 c;
    U8_NEXT(text.data(), i, length, c);
    if (c < 0) return false;
  }
  return true;
}

std::string Nfc(std::string_view text) {
  if (!IsValidUtf8(text)) throw std::invalid_argument("malformed UTF-8");
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = normalizer->normalize(source, status);
  if (U_FAILURE(status)) throw std::runtime_error("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::vector<std::string> SplitCodepoints(std::string_view text) {
  std::vector<std::string> out;
  int32_t i = 0;
  const auto length = static_cast<int32_t>(text.size());
  while (i < length) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(text.data(), i, length, c);
    if (c < 0) throw std::invalid_argument("malformed UTF-8");
    out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

bool ContainsWhitespace(std::string_view text) {
  int32_t i = 0;
  const auto length = static_cast<int32_t>(text.size());
  while (i < length) {
    UChar32 c;
    U8_NEXT(text.data(), i, length, c);
    if (c < 0) return false;
    if (u_isUWhiteSpace(c)) return true;
  }
  return false;
}

std::string ScriptOf(std::string_view codepoint) {
  if (codepoint.empty()) return {};
  int32_t i = 0;
  UChar32 c;
  U8_NEXT(codepoint.data(), i, static_cast<int32_t>(codepoint.size()), c);
  if (c < 0) return {};
  UErrorCode status = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(c, &status);
  if (U_FAILURE(status) || script == USCRIPT_COMMON ||
      script == USCRIPT_INHERITED || script == USCRIPT_UNKNOWN) {
    return {};
  }
  return uscript_getName(script);
}

}  // namespace unicode
}  // namespace mg2p
