#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "chembench/unicode.hpp"

namespace gen {

// Code points drawn from a few script blocks, with ASCII over-represented
// so that strings share characters often enough to be interesting.
inline char32_t random_code_point(std::mt19937_64& rng) {
  switch (rng() % 8) {
    case 0:
    case 1:
    case 2: return static_cast<char32_t>(0x20 + rng() % 95);
    case 3: return static_cast<char32_t>(U'a' + rng() % 4);
    case 4: return static_cast<char32_t>(0xA0 + rng() % 0x160);  // Latin-1, Latin Extended-A
    case 5: return static_cast<char32_t>(0x391 + rng() % 0x40);  // Greek
    case 6: return static_cast<char32_t>(0x4E00 + rng() % 64);   // CJK
    default: {
      static constexpr char32_t kMisc[] = {U'\n', U'\t', U'—', U'’', U'₂', U'ß',
                                           U'\U0001F4A7', U'\U0001F600', U'　', U'́'};
      return kMisc[rng() % std::size(kMisc)];
    }
  }
}

inline std::u32string random_u32(std::mt19937_64& rng, std::size_t max_len) {
  const std::size_t len = rng() % (max_len + 1);
  std::u32string s;
  s.reserve(len);
  for (std::size_t i = 0; i < len; ++i) s.push_back(random_code_point(rng));
  return s;
}

inline std::string random_utf8(std::mt19937_64& rng, std::size_t max_len) {
  return chembench::unicode::to_utf8(random_u32(rng, max_len));
}

}  // namespace gen
