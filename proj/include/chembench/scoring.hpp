#pragma once

// Metrics: MUC-style partial-match entity scoring, Levenshtein distance,
// mean percentage edit distance, MAPE, and multiple-choice accuracy/F1.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chembench/entity.hpp"
#include "chembench/error.hpp"
#include "chembench/io.hpp"
#include "chembench/unicode.hpp"

namespace chembench::scoring {

// ---------------------------------------------------------------------------
// Entity matching

enum class Schema { kConstrained, kUnconstrained };

inline std::string_view to_string(Schema s) {
  return s == Schema::kConstrained ? "constrained" : "unconstrained";
}

inline Schema parse_schema(std::string_view s) {
  if (s == "constrained") return Schema::kConstrained;
  if (s == "unconstrained") return Schema::kUnconstrained;
  throw ValidationError("unknown schema: " + std::string(s));
}

struct TypedEntity {
  std::string surface;
  EntityClass entity_class;
};

struct MatchCounts {
  uint64_t cor = 0;
  uint64_t par = 0;
  uint64_t inc = 0;
  uint64_t mis = 0;

  uint64_t possible() const noexcept { return cor + par + mis; }
  uint64_t actual() const noexcept { return cor + par + inc; }

  MatchCounts& operator+=(const MatchCounts& o) noexcept {
    cor += o.cor;
    par += o.par;
    inc += o.inc;
    mis += o.mis;
    return *this;
  }
  friend bool operator==(const MatchCounts&, const MatchCounts&) = default;

  ordered_json to_json() const {
    return ordered_json{{"COR", cor}, {"PAR", par}, {"INC", inc}, {"MIS", mis}, {"POS", possible()}, {"ACT", actual()}};
  }
};

struct PRF {
  double precision = 0;
  double recall = 0;
  double f1 = 0;

  ordered_json to_json() const { return ordered_json{{"precision", precision}, {"recall", recall}, {"f1", f1}}; }
};

// Partial credit counts half. Zero denominators give zero.
inline PRF prf(const MatchCounts& c) {
  const double credit = static_cast<double>(c.cor) + 0.5 * static_cast<double>(c.par);
  PRF r;
  r.precision = c.actual() ? credit / static_cast<double>(c.actual()) : 0.0;
  r.recall = c.possible() ? credit / static_cast<double>(c.possible()) : 0.0;
  r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// Minimum length, in code points, of a contained surface for substring
// overlap to count as partial.
inline constexpr std::size_t kMinSubstringOverlap = 3;

namespace detail {

inline std::vector<std::string_view> whitespace_tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0, start = std::string_view::npos;
  while (i < s.size()) {
    auto d = unicode::decode_at(s, i);
    const bool ws = d.valid && unicode::is_whitespace(d.cp);
    if (ws && start != std::string_view::npos) {
      out.push_back(s.substr(start, i - start));
      start = std::string_view::npos;
    } else if (!ws && start == std::string_view::npos) {
      start = i;
    }
    i += d.length;
  }
  if (start != std::string_view::npos) out.push_back(s.substr(start));
  return out;
}

inline std::string match_key(std::string_view surface) {
  std::string s = unicode::casefold(surface);
  auto toks = whitespace_tokens(s);
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out.append(toks[i]);
  }
  return out;
}

}  // namespace detail

// Both arguments are match keys (casefolded, whitespace-normalized).
// Overlap means a shared whitespace token, or one key containing the other
// with the contained key at least kMinSubstringOverlap code points long.
inline bool partial_overlap(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) return false;
  const auto ta = detail::whitespace_tokens(a);
  const auto tb = detail::whitespace_tokens(b);
  for (auto x : ta)
    for (auto y : tb)
      if (x == y) return true;
  const auto& [shorter, longer] = a.size() <= b.size() ? std::pair{a, b} : std::pair{b, a};
  return unicode::length(shorter) >= kMinSubstringOverlap && longer.find(shorter) != std::string_view::npos;
}

struct PreparedEntity {
  std::string key;
  EntityClass entity_class;
};

inline std::vector<PreparedEntity> prepare(std::span<const TypedEntity> items) {
  std::vector<PreparedEntity> out;
  out.reserve(items.size());
  for (const auto& e : items) out.push_back({detail::match_key(e.surface), e.entity_class});
  return out;
}

// Greedy one-to-one matching in input order: an exact pass, then a
// partial-overlap pass over what is left. Leftover predictions are INC and
// leftover gold entities are MIS. Under the constrained schema both passes
// require equal classes.
inline MatchCounts match_entities(std::span<const TypedEntity> gold, std::span<const TypedEntity> pred,
                                  Schema schema) {
  const auto g = prepare(gold);
  const auto p = prepare(pred);
  std::vector<bool> gold_used(g.size(), false), pred_used(p.size(), false);
  const bool constrained = schema == Schema::kConstrained;
  MatchCounts c;

  // Each pass runs same-class candidates first, then (unconstrained only) any
  // class. Without the first round an early cross-class pick can take a gold
  // mention a later same-class prediction needed, and unconstrained F1 drops
  // below constrained.
  auto run_pass = [&](bool exact, bool any_class) {
    uint64_t n = 0;
    for (std::size_t pi = 0; pi < p.size(); ++pi) {
      if (pred_used[pi]) continue;
      for (std::size_t gi = 0; gi < g.size(); ++gi) {
        if (gold_used[gi]) continue;
        if (!any_class && g[gi].entity_class != p[pi].entity_class) continue;
        if (exact ? g[gi].key != p[pi].key : !partial_overlap(g[gi].key, p[pi].key)) continue;
        gold_used[gi] = pred_used[pi] = true;
        ++n;
        break;
      }
    }
    return n;
  };
  c.cor = run_pass(true, false);
  if (!constrained) c.cor += run_pass(true, true);
  c.par = run_pass(false, false);
  if (!constrained) c.par += run_pass(false, true);
  c.inc = static_cast<uint64_t>(std::count(pred_used.begin(), pred_used.end(), false));
  c.mis = static_cast<uint64_t>(std::count(gold_used.begin(), gold_used.end(), false));
  return c;
}

// ---------------------------------------------------------------------------
// Edit distance

namespace detail {

// Bit masks of the positions at which each pattern character occurs, one
// 64-bit word per block.
class PatternMasks {
 public:
  explicit PatternMasks(std::u32string_view pattern) : words_((pattern.size() + 63) / 64) {
    ascii_.fill(-1);
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      const int slot = slot_for_insert(pattern[i]);
      masks_[static_cast<std::size_t>(slot) * words_ + i / 64] |= uint64_t{1} << (i % 64);
    }
  }

  std::size_t words() const noexcept { return words_; }

  // Pointer to `words()` masks, or nullptr when c is absent from the pattern.
  const uint64_t* get(char32_t c) const noexcept {
    int slot;
    if (c < 128) {
      slot = ascii_[c];
    } else {
      auto it = other_.find(c);
      slot = it == other_.end() ? -1 : it->second;
    }
    return slot < 0 ? nullptr : masks_.data() + static_cast<std::size_t>(slot) * words_;
  }

 private:
  int slot_for_insert(char32_t c) {
    int* slot = nullptr;
    if (c < 128) {
      slot = &ascii_[c];
    } else {
      auto [it, _] = other_.try_emplace(c, -1);
      slot = &it->second;
    }
    if (*slot < 0) {
      *slot = static_cast<int>(masks_.size() / words_);
      masks_.resize(masks_.size() + words_, 0);
    }
    return *slot;
  }

  std::size_t words_;
  std::array<int, 128> ascii_{};
  std::unordered_map<char32_t, int> other_;
  std::vector<uint64_t> masks_;
};

inline std::size_t hyyro_single_word(std::u32string_view pattern, std::u32string_view text) {
  const PatternMasks pm(pattern);
  uint64_t vp = ~uint64_t{0};
  uint64_t vn = 0;
  const uint64_t last = uint64_t{1} << (pattern.size() - 1);
  std::size_t dist = pattern.size();
  for (char32_t c : text) {
    const uint64_t* m = pm.get(c);
    const uint64_t x = m ? m[0] : 0;
    const uint64_t d0 = (((x & vp) + vp) ^ vp) | x | vn;
    uint64_t hp = vn | ~(d0 | vp);
    uint64_t hn = d0 & vp;
    dist += (hp & last) != 0;
    dist -= (hn & last) != 0;
    hp = (hp << 1) | 1;
    hn <<= 1;
    vp = hn | ~(d0 | hp);
    vn = hp & d0;
  }
  return dist;
}

// Blocked variant for patterns longer than one word: horizontal deltas are
// carried from each block into the next.
inline std::size_t hyyro_blocked(std::u32string_view pattern, std::u32string_view text) {
  const PatternMasks pm(pattern);
  const std::size_t words = pm.words();
  std::vector<uint64_t> vp(words, ~uint64_t{0}), vn(words, 0);
  const uint64_t last = uint64_t{1} << ((pattern.size() - 1) % 64);
  std::size_t dist = pattern.size();
  for (char32_t c : text) {
    const uint64_t* m = pm.get(c);
    uint64_t hp_carry = 1, hn_carry = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const uint64_t x = (m ? m[w] : 0) | hn_carry;
      const uint64_t d0 = (((x & vp[w]) + vp[w]) ^ vp[w]) | x | vn[w];
      uint64_t hp = vn[w] | ~(d0 | vp[w]);
      uint64_t hn = d0 & vp[w];
      const uint64_t hp_in = hp_carry, hn_in = hn_carry;
      if (w + 1 < words) {
        hp_carry = hp >> 63;
        hn_carry = hn >> 63;
      } else {
        hp_carry = (hp & last) != 0;
        hn_carry = (hn & last) != 0;
      }
      hp = (hp << 1) | hp_in;
      hn = (hn << 1) | hn_in;
      vp[w] = hn | ~(d0 | hp);
      vn[w] = hp & d0;
    }
    dist += hp_carry;
    dist -= hn_carry;
  }
  return dist;
}

}  // namespace detail

// Unit-cost Levenshtein distance over Unicode scalar values, computed with
// Hyyrö's bit-parallel recurrence.
inline std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  while (!a.empty() && !b.empty() && a.front() == b.front()) {
    a.remove_prefix(1);
    b.remove_prefix(1);
  }
  while (!a.empty() && !b.empty() && a.back() == b.back()) {
    a.remove_suffix(1);
    b.remove_suffix(1);
  }
  if (a.size() > b.size()) std::swap(a, b);
  if (a.empty()) return b.size();
  return a.size() <= 64 ? detail::hyyro_single_word(a, b) : detail::hyyro_blocked(a, b);
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance(unicode::to_u32(a), unicode::to_u32(b));
}

struct GoldPred {
  std::string gold;
  std::string pred;
};

// Mean of edit_distance(gold, pred) / |gold|, lengths in code points.
inline double mean_pct_edit_distance(std::span<const GoldPred> pairs) {
  if (pairs.empty()) throw ValidationError("mean % edit distance needs at least one pair");
  double total = 0;
  for (const auto& [gold, pred] : pairs) {
    const auto g = unicode::to_u32(gold);
    if (g.empty()) throw ValidationError("mean % edit distance is undefined for an empty gold string");
    total += static_cast<double>(edit_distance(g, unicode::to_u32(pred))) / static_cast<double>(g.size());
  }
  return total / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Molecular weight

// First signed decimal (optionally with exponent) found in the text.
inline std::optional<double> parse_number(std::string_view text) {
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool starts = is_digit(text[i]) || (text[i] == '.' && i + 1 < text.size() && is_digit(text[i + 1]));
    if (!starts) continue;
    double v = 0;
    auto [p, ec] = std::from_chars(text.data() + i, text.data() + text.size(), v);
    if (ec != std::errc{} || !std::isfinite(v)) return std::nullopt;
    if (i > 0 && text[i - 1] == '-') v = -v;
    return v;
  }
  return std::nullopt;
}

// Non-numeric predictions count as 0.0.
inline double coerce_prediction(std::string_view text) { return parse_number(text).value_or(0.0); }

inline double mape(std::span<const double> gold, std::span<const std::string> pred_texts) {
  if (gold.size() != pred_texts.size())
    throw ValidationError("MAPE needs equal-length inputs, got " + std::to_string(gold.size()) + " gold and " +
                          std::to_string(pred_texts.size()) + " predictions");
  if (gold.empty()) throw ValidationError("MAPE needs at least one value");
  double total = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!(gold[i] > 0)) throw ValidationError("MAPE gold values must be positive");
    total += std::abs(gold[i] - coerce_prediction(pred_texts[i])) / std::abs(gold[i]);
  }
  return total / static_cast<double>(gold.size());
}

// ---------------------------------------------------------------------------
// Multiple choice

// Prediction value for "no answer extracted"; always scored incorrect.
inline constexpr int kAbstain = -1;

namespace detail {
inline void check_choices(std::span<const int> golds, std::span<const int> preds, int num_choices) {
  if (golds.size() != preds.size())
    throw ValidationError("gold/prediction length mismatch: " + std::to_string(golds.size()) + " vs " +
                          std::to_string(preds.size()));
  if (golds.empty()) throw ValidationError("no multiple-choice items to score");
  for (int g : golds)
    if (g < 0 || g >= num_choices) throw ValidationError("gold choice index out of range: " + std::to_string(g));
  for (int p : preds)
    if (p != kAbstain && (p < 0 || p >= num_choices))
      throw ValidationError("predicted choice index out of range: " + std::to_string(p));
}
}  // namespace detail

inline double mcq_accuracy(std::span<const int> golds, std::span<const int> preds, int num_choices = 4) {
  detail::check_choices(golds, preds, num_choices);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += golds[i] == preds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

// Unweighted mean of per-label F1 over every label in [0, num_choices);
// labels that never occur contribute 0.
inline double mcq_macro_f1(std::span<const int> golds, std::span<const int> preds, int num_choices = 4) {
  detail::check_choices(golds, preds, num_choices);
  std::vector<uint64_t> tp(num_choices), fp(num_choices), fn(num_choices);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] == preds[i]) {
      ++tp[golds[i]];
    } else {
      ++fn[golds[i]];
      if (preds[i] != kAbstain) ++fp[preds[i]];
    }
  }
  double sum = 0;
  for (int c = 0; c < num_choices; ++c) {
    const uint64_t denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom ? 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
  }
  return sum / num_choices;
}

// Percent change of `current` relative to `base`.
inline double relative_improvement(double current, double base) {
  if (!(base > 0)) throw ValidationError("relative improvement needs a positive baseline");
  return 100.0 * (current - base) / base;
}

}  // namespace chembench::scoring
