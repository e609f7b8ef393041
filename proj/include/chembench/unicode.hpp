#pragma once

// UTF-8 helpers plus the handful of Unicode properties the pipeline needs.
// Property lookups and case folding are delegated to ICU.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace chembench::unicode {

inline constexpr char32_t kReplacement = 0xFFFD;

// Decodes one scalar value starting at `pos`. Ill-formed sequences consume a
// single byte and yield U+FFFD with `valid` cleared.
struct DecodedChar {
  char32_t cp;
  std::size_t length;
  bool valid;
};

inline DecodedChar decode_at(std::string_view s, std::size_t pos) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  int32_t i = static_cast<int32_t>(pos);
  const int32_t n = static_cast<int32_t>(s.size());
  UChar32 c;
  U8_NEXT(bytes, i, n, c);
  if (c < 0) return {kReplacement, static_cast<std::size_t>(i) - pos, false};
  return {static_cast<char32_t>(c), static_cast<std::size_t>(i) - pos, true};
}

inline std::u32string to_u32(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_at(s, i);
    out.push_back(d.cp);
    i += d.length;
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string to_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

// Replaces every ill-formed byte sequence with U+FFFD.
inline std::string sanitize_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_at(s, i);
    if (d.valid) {
      out.append(s.substr(i, d.length));
    } else {
      append_utf8(out, kReplacement);
    }
    i += d.length;
  }
  return out;
}

inline std::size_t length(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++n) i += decode_at(s, i).length;
  return n;
}

// Full Unicode case folding (e.g. "ß" folds to "ss").
inline std::string casefold(std::string_view s) {
  auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u.foldCase(U_FOLD_CASE_DEFAULT);
  std::string out;
  u.toUTF8String(out);
  return out;
}

inline bool is_letter(char32_t cp) {
  return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_L_MASK) != 0;
}

inline bool is_number(char32_t cp) {
  return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_N_MASK) != 0;
}

inline bool is_whitespace(char32_t cp) {
  if (cp >= 0x1C && cp <= 0x1F) return true;
  return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

// General categories Pc, Pd, Ps, Pe, Pi, Pf, Po.
inline bool is_punctuation_category(char32_t cp) {
  return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_P_MASK) != 0;
}

}  // namespace chembench::unicode
