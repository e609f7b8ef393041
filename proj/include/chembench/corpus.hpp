#pragma once

// Publication-record ingestion: title normalization, exact-title
// deduplication and fixed-length packing of token streams.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
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

namespace chembench::corpus {

inline constexpr std::size_t kDefaultMaxSeqLen = 1024;

struct Document {
  std::string id;
  std::string title;
  std::string abstract_text;
  std::string source;
  std::optional<int> year;
};

inline Document document_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("document must be a JSON object");
  Document d;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
    throw ValidationError("document is missing a non-empty string `id`");
  d.id = j["id"].get<std::string>();
  auto text_field = [&](const char* key) -> std::string {
    if (!j.contains(key) || j[key].is_null()) return {};
    if (!j[key].is_string()) throw ValidationError(std::string("document `") + key + "` must be a string: " + d.id);
    return j[key].get<std::string>();
  };
  d.title = text_field("title");
  d.abstract_text = text_field("abstract");
  d.source = text_field("source");
  if (j.contains("year") && !j["year"].is_null()) {
    if (!j["year"].is_number_integer()) throw ValidationError("document `year` must be an integer: " + d.id);
    d.year = j["year"].get<int>();
  }
  return d;
}

inline ordered_json document_to_json(const Document& d) {
  ordered_json j;
  j["id"] = d.id;
  j["title"] = d.title;
  j["abstract"] = d.abstract_text;
  if (!d.source.empty()) j["source"] = d.source;
  if (d.year) j["year"] = *d.year;
  return j;
}

// Text fed to the tokenizer for one document: title and abstract on
// separate lines, empty parts omitted.
inline std::string document_text(const Document& d) {
  if (d.title.empty()) return d.abstract_text;
  if (d.abstract_text.empty()) return d.title;
  return d.title + "\n" + d.abstract_text;
}

// ---------------------------------------------------------------------------
// Title normalization

// Casefolded, punctuation-free, single-spaced title. Only constructible via
// normalize_title().
class NormalizedTitle {
 public:
  const std::string& value() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }
  friend bool operator==(const NormalizedTitle&, const NormalizedTitle&) = default;

 private:
  explicit NormalizedTitle(std::string v) : value_(std::move(v)) {}
  friend NormalizedTitle normalize_title(std::string_view title);
  std::string value_;
};

inline constexpr std::string_view kAsciiPunctuation = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

inline bool is_title_punctuation(char32_t cp) {
  if (cp < 0x80 && kAsciiPunctuation.find(static_cast<char>(cp)) != std::string_view::npos) return true;
  return unicode::is_punctuation_category(cp);
}

inline NormalizedTitle normalize_title(std::string_view title) {
  const std::string folded = unicode::casefold(title);
  std::string out;
  out.reserve(folded.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < folded.size();) {
    const auto d = unicode::decode_at(folded, i);
    if (is_title_punctuation(d.cp) || unicode::is_whitespace(d.cp)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.append(folded, i, d.length);
    }
    i += d.length;
  }
  return NormalizedTitle(std::move(out));
}

// ---------------------------------------------------------------------------
// Deduplication

struct Hash128 {
  uint64_t hi = 0;
  uint64_t lo = 0;
  friend bool operator==(const Hash128&, const Hash128&) = default;
};

struct Hash128Hasher {
  std::size_t operator()(const Hash128& h) const noexcept { return static_cast<std::size_t>(h.lo ^ (h.hi * 0x9E3779B97F4A7C15ULL)); }
};

// BLAKE2b with a 16-byte digest.
inline Hash128 hash_title(const NormalizedTitle& t) {
  static const int init = sodium_init();
  (void)init;
  std::array<unsigned char, 16> digest{};
  crypto_generichash(digest.data(), digest.size(),
                     reinterpret_cast<const unsigned char*>(t.value().data()), t.value().size(), nullptr, 0);
  Hash128 h;
  std::memcpy(&h.hi, digest.data(), 8);
  std::memcpy(&h.lo, digest.data() + 8, 8);
  return h;
}

struct DedupPair {
  std::string survivor_id;
  std::string dropped_id;
  friend bool operator==(const DedupPair&, const DedupPair&) = default;
};

struct DedupReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<DedupPair> pairs;

  ordered_json to_json() const {
    ordered_json j;
    j["kept"] = kept;
    j["dropped"] = dropped;
    ordered_json arr = ordered_json::array();
    for (const auto& p : pairs) arr.push_back({p.survivor_id, p.dropped_id});
    j["pairs"] = std::move(arr);
    return j;
  }
};

// Keep-first exact-title deduplicator. Only 128-bit digests and survivor
// handles are held in memory; on a digest hit the survivor's normalized
// title is fetched through `lookup` and compared in full, so a true hash
// collision never drops a document.
class TitleDeduplicator {
 public:
  using Handle = std::size_t;
  using TitleLookup = std::function<NormalizedTitle(Handle)>;

  explicit TitleDeduplicator(TitleLookup lookup) : lookup_(std::move(lookup)) {}

  // Returns the survivor's handle when `title` duplicates an earlier
  // document, otherwise registers `handle` as a survivor.
  std::optional<Handle> offer(const NormalizedTitle& title, Handle handle) {
    if (title.empty()) return std::nullopt;
    auto& bucket = buckets_[hash_title(title)];
    for (Handle h : bucket) {
      if (lookup_(h) == title) return h;
      ++collisions_;
    }
    bucket.push_back(handle);
    return std::nullopt;
  }

  std::size_t hash_collisions() const noexcept { return collisions_; }

 private:
  TitleLookup lookup_;
  std::unordered_map<Hash128, std::vector<Handle>, Hash128Hasher> buckets_;
  std::size_t collisions_ = 0;
};

struct DedupResult {
  std::vector<Document> kept;
  DedupReport report;
};

inline std::vector<NormalizedTitle> normalize_titles(std::span<const Document> docs, unsigned threads) {
  std::vector<std::optional<NormalizedTitle>> tmp(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) tmp[i] = normalize_title(docs[i].title);
  });
  std::vector<NormalizedTitle> out;
  out.reserve(docs.size());
  for (auto& t : tmp) out.push_back(std::move(*t));
  return out;
}

inline DedupResult deduplicate(std::span<const Document> docs, unsigned threads = 0) {
  std::unordered_set<std::string_view> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) {
    if (!ids.insert(d.id).second) throw ValidationError("duplicate document id: " + d.id);
  }
  const auto titles = normalize_titles(docs, threads);
  TitleDeduplicator dedup([&](std::size_t h) { return titles[h]; });
  DedupResult result;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (auto survivor = dedup.offer(titles[i], i)) {
      result.report.pairs.push_back({docs[*survivor].id, docs[i].id});
      ++result.report.dropped;
    } else {
      result.kept.push_back(docs[i]);
      ++result.report.kept;
    }
  }
  return result;
}

// Streams a JSONL corpus from `in_path` to `out_path`. Surviving lines are
// copied verbatim. Survivor titles are re-read from the input by byte offset
// when a digest hit needs confirmation, so memory stays proportional to the
// number of distinct titles rather than their text.
inline DedupReport deduplicate_jsonl(const std::string& in_path, const std::string& out_path,
                                     unsigned threads = 0, std::size_t chunk_size = 1 << 16) {
  std::ifstream in(in_path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input file: " + in_path);
  std::ifstream reread(in_path, std::ios::binary);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open output file: " + out_path);

  struct Survivor {
    std::streamoff offset;
    std::string id;
  };
  std::vector<Survivor> survivors;
  auto lookup = [&](std::size_t h) {
    reread.clear();
    reread.seekg(survivors[h].offset);
    std::string line;
    std::getline(reread, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return normalize_title(document_from_json(json::parse(line)).title);
  };
  TitleDeduplicator dedup(lookup);
  std::unordered_set<std::string> ids;
  DedupReport report;

  struct Row {
    std::streamoff offset;
    std::size_t lineno;
    std::string line;
  };
  std::vector<Row> rows;
  std::size_t lineno = 0;
  auto flush = [&] {
    std::vector<std::optional<Document>> docs(rows.size());
    std::vector<std::optional<NormalizedTitle>> titles(rows.size());
    parallel_for(rows.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        try {
          docs[i] = document_from_json(json::parse(rows[i].line));
        } catch (const json::parse_error& err) {
          throw ValidationError(in_path + ":" + std::to_string(rows[i].lineno) + ": malformed JSON: " + err.what());
        } catch (const ValidationError& err) {
          throw ValidationError(in_path + ":" + std::to_string(rows[i].lineno) + ": " + err.what());
        }
        titles[i] = normalize_title(docs[i]->title);
      }
    });
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& doc = *docs[i];
      if (!ids.insert(doc.id).second) throw ValidationError("duplicate document id: " + doc.id);
      if (auto s = dedup.offer(*titles[i], survivors.size())) {
        report.pairs.push_back({survivors[*s].id, doc.id});
        ++report.dropped;
      } else {
        survivors.push_back({rows[i].offset, doc.id});
        out << rows[i].line << '\n';
        ++report.kept;
      }
    }
    rows.clear();
  };

  std::string line;
  for (;;) {
    const std::streamoff offset = in.tellg();
    if (!std::getline(in, line)) break;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    rows.push_back({offset, lineno, line});
    if (rows.size() >= chunk_size) flush();
  }
  flush();
  if (!out) throw RuntimeFailure("write failed: " + out_path);
  return report;
}

// ---------------------------------------------------------------------------
// Segmentation

using TokenId = uint32_t;

struct TokenBatch {
  std::vector<TokenId> tokens;
  std::size_t length() const noexcept { return tokens.size(); }
};

// Concatenates token streams and cuts them into batches of exactly
// max_seq_len tokens; only the final batch may be shorter. Nothing is
// truncated and no separators are inserted.
class Segmenter {
 public:
  using Sink = std::function<void(TokenBatch&&)>;

  Segmenter(std::size_t max_seq_len, Sink sink) : max_seq_len_(max_seq_len), sink_(std::move(sink)) {
    if (max_seq_len_ < 1) throw ConfigError("max_seq_len must be >= 1");
    current_.tokens.reserve(max_seq_len_);
  }

  void push(std::span<const TokenId> stream) {
    while (!stream.empty()) {
      const std::size_t room = max_seq_len_ - current_.tokens.size();
      const std::size_t take = std::min(room, stream.size());
      current_.tokens.insert(current_.tokens.end(), stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(take));
      stream = stream.subspan(take);
      if (current_.tokens.size() == max_seq_len_) emit();
    }
  }

  void finish() {
    if (!current_.tokens.empty()) emit();
  }

 private:
  void emit() {
    sink_(std::move(current_));
    current_ = TokenBatch{};
    current_.tokens.reserve(max_seq_len_);
  }

  std::size_t max_seq_len_;
  Sink sink_;
  TokenBatch current_;
};

inline std::vector<TokenBatch> segment(std::span<const std::vector<TokenId>> streams,
                                       std::size_t max_seq_len = kDefaultMaxSeqLen) {
  std::vector<TokenBatch> batches;
  Segmenter seg(max_seq_len, [&](TokenBatch&& b) { batches.push_back(std::move(b)); });
  for (const auto& s : streams) seg.push(s);
  seg.finish();
  return batches;
}

// Binary batch file: per batch a little-endian u32 length followed by that
// many little-endian u32 token ids.
class BatchWriter {
 public:
  explicit BatchWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw RuntimeFailure("cannot open output file: " + path);
  }

  void write(const TokenBatch& b) {
    put(static_cast<uint32_t>(b.tokens.size()));
    for (TokenId t : b.tokens) put(t);
    ++num_batches_;
    total_tokens_ += b.tokens.size();
  }

  void close() {
    out_.flush();
    if (!out_) throw RuntimeFailure("write failed: " + path_);
    out_.close();
  }

  std::size_t num_batches() const noexcept { return num_batches_; }
  std::size_t total_tokens() const noexcept { return total_tokens_; }

 private:
  void put(uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out_.write(reinterpret_cast<const char*>(buf), 4);
  }

  std::ofstream out_;
  std::string path_;
  std::size_t num_batches_ = 0;
  std::size_t total_tokens_ = 0;
};

inline std::vector<TokenBatch> read_batches(const std::string& path) {
  const std::string data = read_file(path);
  auto get = [&](std::size_t pos) {
    const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  };
  std::vector<TokenBatch> out;
  std::size_t pos = 0;
  while (pos < data.size()) {
    if (pos + 4 > data.size()) throw ValidationError("truncated batch header in " + path);
    const uint32_t len = get(pos);
    pos += 4;
    if (pos + 4ull * len > data.size()) throw ValidationError("truncated batch body in " + path);
    TokenBatch b;
    b.tokens.reserve(len);
    for (uint32_t i = 0; i < len; ++i, pos += 4) b.tokens.push_back(get(pos));
    out.push_back(std::move(b));
  }
  return out;
}

inline ordered_json batch_sidecar(std::size_t max_seq_len, std::size_t total_tokens, std::size_t num_batches) {
  ordered_json j;
  j["max_seq_len"] = max_seq_len;
  j["total_tokens"] = total_tokens;
  j["num_batches"] = num_batches;
  return j;
}

}  // namespace chembench::corpus
