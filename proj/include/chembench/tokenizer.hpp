#pragma once

// Byte-level BPE: GPT-2 style pretokenization, merge training with
// deterministic tie-breaking, greedy rank-ordered encoding.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <sodium.h>

#include "chembench/error.hpp"
#include "chembench/io.hpp"
#include "chembench/parallel.hpp"
#include "chembench/unicode.hpp"

namespace chembench::tokenizer {

using TokenId = uint32_t;

inline constexpr std::size_t kByteAlphabet = 256;
inline constexpr std::size_t kDefaultVocabSize = 64000;
inline constexpr int kModelVersion = 1;

// ---------------------------------------------------------------------------
// Pretokenization

namespace detail {

enum class CharClass { kLetter, kNumber, kSpace, kOther };

inline CharClass classify(const unicode::DecodedChar& d) {
  if (!d.valid) return CharClass::kOther;
  if (unicode::is_letter(d.cp)) return CharClass::kLetter;
  if (unicode::is_number(d.cp)) return CharClass::kNumber;
  if (unicode::is_whitespace(d.cp)) return CharClass::kSpace;
  return CharClass::kOther;
}

inline std::size_t contraction_length(std::string_view rest) {
  // rest starts with '\''
  static constexpr std::string_view kThree[] = {"'re", "'ve", "'ll"};
  static constexpr std::string_view kTwo[] = {"'s", "'t", "'m", "'d"};
  for (auto c : kTwo)
    if (rest.starts_with(c)) return 2;
  for (auto c : kThree)
    if (rest.starts_with(c)) return 3;
  return 0;
}

}  // namespace detail

// Splits text the way the GPT-2 pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// does. Ill-formed UTF-8 bytes count as symbols. Concatenating the pieces
// reproduces the input exactly.
inline std::vector<std::string_view> pretokenize(std::string_view text) {
  using detail::CharClass;
  std::vector<std::string_view> out;
  const std::size_t n = text.size();
  std::size_t i = 0;

  auto run_end = [&](std::size_t pos, CharClass cls) {
    while (pos < n) {
      auto d = unicode::decode_at(text, pos);
      if (detail::classify(d) != cls) break;
      pos += d.length;
    }
    return pos;
  };

  while (i < n) {
    if (text[i] == '\'') {
      if (std::size_t len = detail::contraction_length(text.substr(i))) {
        out.push_back(text.substr(i, len));
        i += len;
        continue;
      }
    }
    const auto first = unicode::decode_at(text, i);
    CharClass cls = detail::classify(first);
    std::size_t start = i;
    std::size_t body = i;
    if (first.valid && first.cp == U' ' && i + 1 < n) {
      const auto next = unicode::decode_at(text, i + 1);
      const CharClass ncls = detail::classify(next);
      if (ncls != CharClass::kSpace) {
        cls = ncls;
        body = i + 1;
      }
    }
    if (cls != CharClass::kSpace) {
      const std::size_t end = run_end(body, cls);
      out.push_back(text.substr(start, end - start));
      i = end;
      continue;
    }
    // Whitespace run. If more text follows, the last whitespace character is
    // left for the next piece so that " word" stays together.
    std::size_t end = i;
    std::size_t last_start = i;
    std::size_t count = 0;
    while (end < n) {
      auto d = unicode::decode_at(text, end);
      if (detail::classify(d) != CharClass::kSpace) break;
      last_start = end;
      end += d.length;
      ++count;
    }
    if (end < n && count >= 2) end = last_start;
    out.push_back(text.substr(start, end - start));
    i = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

struct MergeRule {
  TokenId left;
  TokenId right;
  friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

inline std::string base64_encode(std::string_view bytes) {
  std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::char_traits<char>::length(out.c_str()));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  std::string out(text.size() / 4 * 3 + 3, '\0');
  std::size_t len = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(), nullptr,
                        &len, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
    throw ValidationError("invalid base64 token in model file");
  out.resize(len);
  return out;
}

// Immutable after construction; safe to share across threads.
class BpeModel {
 public:
  // The 256 single-byte tokens and no merges.
  static BpeModel byte_level() { return BpeModel({}, {}); }

  // `extra_tokens` are the merged tokens in id order (ids 256...).
  BpeModel(std::vector<std::string> extra_tokens, std::vector<MergeRule> merges) : merges_(std::move(merges)) {
    vocab_.reserve(kByteAlphabet + extra_tokens.size());
    for (std::size_t b = 0; b < kByteAlphabet; ++b) vocab_.emplace_back(1, static_cast<char>(b));
    for (auto& t : extra_tokens) vocab_.push_back(std::move(t));
    token_to_id_.reserve(vocab_.size());
    for (std::size_t id = 0; id < vocab_.size(); ++id) {
      if (vocab_[id].empty()) throw ValidationError("empty token at id " + std::to_string(id));
      if (!token_to_id_.emplace(vocab_[id], static_cast<TokenId>(id)).second)
        throw ValidationError("duplicate token at id " + std::to_string(id));
    }
    merge_lookup_.reserve(merges_.size());
    for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
      const auto& m = merges_[rank];
      if (m.left >= vocab_.size() || m.right >= vocab_.size())
        throw ValidationError("merge " + std::to_string(rank) + " references an unknown token id");
      auto it = token_to_id_.find(vocab_[m.left] + vocab_[m.right]);
      if (it == token_to_id_.end())
        throw ValidationError("merge " + std::to_string(rank) + " produces a token missing from the vocabulary");
      merge_lookup_.emplace(pair_key(m.left, m.right), MergeTarget{static_cast<uint32_t>(rank), it->second});
    }
  }

  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  const std::vector<MergeRule>& merges() const noexcept { return merges_; }

  std::optional<TokenId> token_id(std::string_view bytes) const {
    auto it = token_to_id_.find(std::string(bytes));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (auto piece : pretokenize(text)) encode_piece(piece, out);
    return out;
  }

  // Concatenated token bytes; may be ill-formed UTF-8 for arbitrary ids.
  std::string decode_bytes(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id >= vocab_.size()) throw ValidationError("token id out of range: " + std::to_string(id));
      out += vocab_[id];
    }
    return out;
  }

  // Ill-formed UTF-8 in the concatenated bytes is replaced with U+FFFD.
  std::string decode(std::span<const TokenId> ids) const { return unicode::sanitize_utf8(decode_bytes(ids)); }

  ordered_json to_json() const {
    ordered_json j;
    j["version"] = kModelVersion;
    ordered_json v = ordered_json::array();
    for (const auto& t : vocab_) v.push_back(base64_encode(t));
    j["vocab"] = std::move(v);
    ordered_json m = ordered_json::array();
    for (const auto& r : merges_) m.push_back({r.left, r.right});
    j["merges"] = std::move(m);
    return j;
  }

  static BpeModel from_json(const json& j) {
    if (!j.is_object() || !j.contains("vocab") || !j.contains("merges"))
      throw ValidationError("model file needs `vocab` and `merges`");
    if (j.value("version", kModelVersion) != kModelVersion)
      throw ValidationError("unsupported model version");
    const auto& v = j["vocab"];
    if (!v.is_array() || v.size() < kByteAlphabet) throw ValidationError("model vocab is missing byte tokens");
    for (std::size_t b = 0; b < kByteAlphabet; ++b) {
      auto bytes = base64_decode(v[b].get<std::string>());
      if (bytes.size() != 1 || static_cast<unsigned char>(bytes[0]) != b)
        throw ValidationError("model vocab entry " + std::to_string(b) + " is not byte " + std::to_string(b));
    }
    std::vector<std::string> extra;
    for (std::size_t i = kByteAlphabet; i < v.size(); ++i) extra.push_back(base64_decode(v[i].get<std::string>()));
    std::vector<MergeRule> merges;
    for (const auto& m : j["merges"]) {
      if (!m.is_array() || m.size() != 2) throw ValidationError("merge entries must be [left_id, right_id]");
      merges.push_back({m[0].get<TokenId>(), m[1].get<TokenId>()});
    }
    return BpeModel(std::move(extra), std::move(merges));
  }

 private:
  struct MergeTarget {
    uint32_t rank;
    TokenId result;
  };

  static uint64_t pair_key(TokenId l, TokenId r) { return (static_cast<uint64_t>(l) << 32) | r; }

  void encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
    std::vector<TokenId> ids(piece.size());
    for (std::size_t i = 0; i < piece.size(); ++i) ids[i] = static_cast<unsigned char>(piece[i]);
    while (ids.size() > 1) {
      uint32_t best_rank = UINT32_MAX;
      MergeTarget best{};
      TokenId bl = 0, br = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        auto it = merge_lookup_.find(pair_key(ids[i], ids[i + 1]));
        if (it != merge_lookup_.end() && it->second.rank < best_rank) {
          best_rank = it->second.rank;
          best = it->second;
          bl = ids[i];
          br = ids[i + 1];
        }
      }
      if (best_rank == UINT32_MAX) break;
      std::size_t w = 0;
      for (std::size_t i = 0; i < ids.size();) {
        if (i + 1 < ids.size() && ids[i] == bl && ids[i + 1] == br) {
          ids[w++] = best.result;
          i += 2;
        } else {
          ids[w++] = ids[i++];
        }
      }
      ids.resize(w);
    }
    out.insert(out.end(), ids.begin(), ids.end());
  }

  std::vector<std::string> vocab_;
  std::vector<MergeRule> merges_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::unordered_map<uint64_t, MergeTarget> merge_lookup_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  BpeModel model;
  // Pair frequency of each merge at the moment it was learned.
  std::vector<uint64_t> merge_frequencies;
};

inline std::unordered_map<std::string, uint64_t> count_pretokens(std::span<const std::string> corpus,
                                                                 unsigned threads) {
  if (threads == 0) threads = default_threads();
  std::vector<std::unordered_map<std::string, uint64_t>> shards(std::max(1u, threads));
  const std::size_t per = (corpus.size() + shards.size() - 1) / std::max<std::size_t>(1, shards.size());
  parallel_for(shards.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const std::size_t lo = std::min(corpus.size(), s * per);
      const std::size_t hi = std::min(corpus.size(), lo + per);
      for (std::size_t d = lo; d < hi; ++d)
        for (auto piece : pretokenize(corpus[d])) ++shards[s][std::string(piece)];
    }
  });
  auto total = std::move(shards[0]);
  for (std::size_t s = 1; s < shards.size(); ++s)
    for (auto& [k, v] : shards[s]) total[k] += v;
  return total;
}

// Learns merges until the vocabulary reaches vocab_size or no adjacent pair
// occurs at least twice. The most frequent pair wins; ties go to the lowest
// (left id, right id).
inline TrainResult train_bpe(std::span<const std::string> corpus, std::size_t vocab_size, unsigned threads = 0) {
  if (vocab_size < kByteAlphabet + 1)
    throw ConfigError("vocab_size must be >= " + std::to_string(kByteAlphabet + 1) + ", got " +
                      std::to_string(vocab_size));
  const auto counts = count_pretokens(corpus, threads);
  if (counts.empty()) throw ValidationError("cannot train a tokenizer on an empty corpus");

  struct Word {
    std::vector<TokenId> ids;
    uint64_t count;
  };
  std::vector<std::pair<std::string, uint64_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Word> words;
  words.reserve(sorted.size());
  for (auto& [text, c] : sorted) {
    Word w{{}, c};
    w.ids.reserve(text.size());
    for (unsigned char ch : text) w.ids.push_back(ch);
    words.push_back(std::move(w));
  }

  auto key_of = [](TokenId l, TokenId r) { return (static_cast<uint64_t>(l) << 32) | r; };
  std::unordered_map<uint64_t, int64_t> pair_counts;
  std::unordered_map<uint64_t, std::vector<uint32_t>> pair_words;
  for (uint32_t wi = 0; wi < words.size(); ++wi) {
    const auto& ids = words[wi].ids;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const uint64_t k = key_of(ids[i], ids[i + 1]);
      pair_counts[k] += static_cast<int64_t>(words[wi].count);
      pair_words[k].push_back(wi);
    }
  }

  struct Entry {
    int64_t count;
    uint64_t key;
    bool operator<(const Entry& o) const {
      if (count != o.count) return count < o.count;
      return key > o.key;
    }
  };
  std::priority_queue<Entry> heap;
  for (auto& [k, c] : pair_counts) heap.push({c, k});

  std::vector<std::string> vocab;
  vocab.reserve(vocab_size);
  for (std::size_t b = 0; b < kByteAlphabet; ++b) vocab.emplace_back(1, static_cast<char>(b));
  std::unordered_map<std::string, TokenId> token_ids;
  for (std::size_t b = 0; b < kByteAlphabet; ++b) token_ids.emplace(vocab[b], static_cast<TokenId>(b));

  std::vector<MergeRule> merges;
  std::vector<uint64_t> freqs;
  std::unordered_set<uint64_t> touched;
  std::vector<uint32_t> seen_words;

  while (vocab.size() < vocab_size && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    auto pc = pair_counts.find(top.key);
    if (pc == pair_counts.end() || pc->second != top.count) continue;  // stale
    if (top.count < 2) break;

    const TokenId left = static_cast<TokenId>(top.key >> 32);
    const TokenId right = static_cast<TokenId>(top.key & 0xFFFFFFFFu);
    std::string merged = vocab[left] + vocab[right];
    TokenId new_id;
    if (auto it = token_ids.find(merged); it != token_ids.end()) {
      new_id = it->second;
    } else {
      new_id = static_cast<TokenId>(vocab.size());
      token_ids.emplace(merged, new_id);
      vocab.push_back(std::move(merged));
    }
    merges.push_back({left, right});
    freqs.push_back(static_cast<uint64_t>(top.count));

    touched.clear();
    auto word_list = std::move(pair_words[top.key]);
    pair_words.erase(top.key);
    std::sort(word_list.begin(), word_list.end());
    word_list.erase(std::unique(word_list.begin(), word_list.end()), word_list.end());
    for (uint32_t wi : word_list) {
      auto& w = words[wi];
      const auto c = static_cast<int64_t>(w.count);
      bool present = false;
      for (std::size_t i = 0; i + 1 < w.ids.size(); ++i)
        if (w.ids[i] == left && w.ids[i + 1] == right) {
          present = true;
          break;
        }
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) {
        const uint64_t k = key_of(w.ids[i], w.ids[i + 1]);
        pair_counts[k] -= c;
        touched.insert(k);
      }
      std::size_t out = 0;
      for (std::size_t i = 0; i < w.ids.size();) {
        if (i + 1 < w.ids.size() && w.ids[i] == left && w.ids[i + 1] == right) {
          w.ids[out++] = new_id;
          i += 2;
        } else {
          w.ids[out++] = w.ids[i++];
        }
      }
      w.ids.resize(out);
      for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) {
        const uint64_t k = key_of(w.ids[i], w.ids[i + 1]);
        pair_counts[k] += c;
        touched.insert(k);
        if (k != top.key) pair_words[k].push_back(wi);
      }
    }
    for (uint64_t k : touched) {
      auto it = pair_counts.find(k);
      if (it->second <= 0) {
        pair_counts.erase(it);
        pair_words.erase(k);
      } else {
        heap.push({it->second, k});
      }
    }
  }

  std::vector<std::string> extra(std::make_move_iterator(vocab.begin() + kByteAlphabet),
                                 std::make_move_iterator(vocab.end()));
  return {BpeModel(std::move(extra), std::move(merges)), std::move(freqs)};
}

}  // namespace chembench::tokenizer
