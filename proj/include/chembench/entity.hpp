#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "chembench/unicode.hpp"

namespace chembench {

// The seven CHEMDNER mention classes, in their canonical order.
enum class EntityClass { kTrivial, kFamily, kSystematic, kFormula, kAbbreviation, kMultiple, kIdentifier };

inline constexpr std::array<EntityClass, 7> kEntityClasses = {
    EntityClass::kTrivial,      EntityClass::kFamily,   EntityClass::kSystematic, EntityClass::kFormula,
    EntityClass::kAbbreviation, EntityClass::kMultiple, EntityClass::kIdentifier};

inline std::string_view to_string(EntityClass c) {
  switch (c) {
    case EntityClass::kTrivial: return "Trivial";
    case EntityClass::kFamily: return "Family";
    case EntityClass::kSystematic: return "Systematic";
    case EntityClass::kFormula: return "Formula";
    case EntityClass::kAbbreviation: return "Abbreviation";
    case EntityClass::kMultiple: return "Multiple";
    case EntityClass::kIdentifier: return "Identifier";
  }
  return "?";
}

// Case-insensitive; accepts CHEMDNER's upper-case spellings.
inline std::optional<EntityClass> parse_entity_class(std::string_view name) {
  const std::string folded = unicode::casefold(name);
  for (EntityClass c : kEntityClasses)
    if (unicode::casefold(to_string(c)) == folded) return c;
  return std::nullopt;
}

inline std::size_t index_of(EntityClass c) { return static_cast<std::size_t>(c); }

}  // namespace chembench
