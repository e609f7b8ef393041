#pragma once

// Instruction datasets for the five chemistry tasks: prompt templates,
// example construction from CHEMDNER-style and PubChem-style records,
// record-disjoint splitting, and parsing of list-shaped responses.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "chembench/entity.hpp"
#include "chembench/error.hpp"
#include "chembench/io.hpp"
#include "chembench/unicode.hpp"

namespace chembench::instruct {

enum class Task { kCEE, kCER, kMFG, kISG, kMWE };

inline constexpr std::array<Task, 5> kTasks = {Task::kCEE, Task::kCER, Task::kMFG, Task::kISG, Task::kMWE};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::kCEE: return "CEE";
    case Task::kCER: return "CER";
    case Task::kMFG: return "MFG";
    case Task::kISG: return "ISG";
    case Task::kMWE: return "MWE";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  for (Task t : kTasks)
    if (to_string(t) == name) return t;
  throw ValidationError("unknown task: " + std::string(name));
}

inline bool is_chemdner_task(Task t) { return t == Task::kCEE || t == Task::kCER; }

// ---------------------------------------------------------------------------
// Templates

inline constexpr std::string_view kPreamble =
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.";
inline constexpr std::string_view kListDelimiter = ", ";

inline constexpr std::string_view kEntityTypeField = "ENTITY TYPE";
inline constexpr std::string_view kInputTextField = "INPUT TEXT";
inline constexpr std::string_view kIupacNameField = "IUPAC NAME";

using PromptFields = std::map<std::string, std::string, std::less<>>;

inline std::vector<std::string_view> required_fields(Task t) {
  switch (t) {
    case Task::kCEE: return {kEntityTypeField, kInputTextField};
    case Task::kCER: return {kInputTextField};
    default: return {kIupacNameField};
  }
}

// Renders the task's template up to and including "### Response:".
inline std::string render_prompt(Task task, const PromptFields& fields) {
  const auto needed = required_fields(task);
  for (auto name : needed) {
    auto it = fields.find(name);
    if (it == fields.end())
      throw TemplateError(std::string(to_string(task)) + " template needs <" + std::string(name) + ">");
    if (it->second.empty())
      throw TemplateError(std::string(to_string(task)) + " template got an empty <" + std::string(name) + ">");
  }
  for (const auto& [name, value] : fields) {
    if (std::find(needed.begin(), needed.end(), name) == needed.end())
      throw TemplateError(std::string(to_string(task)) + " template has no <" + name + "> placeholder");
  }
  auto field = [&](std::string_view n) -> const std::string& { return fields.find(n)->second; };

  std::string out(kPreamble);
  out += "\n### Instruction: ";
  switch (task) {
    case Task::kCEE:
      out += "Identify all " + field(kEntityTypeField) + " entities in the given text as written.";
      break;
    case Task::kCER:
      out += "What are the types of entities in the given text?";
      break;
    case Task::kMFG:
      out += "Give the molecular formula for " + field(kIupacNameField) + ".";
      break;
    case Task::kISG:
      out += "Give the SELFIE string for " + field(kIupacNameField) + ".";
      break;
    case Task::kMWE:
      out += "Give the molecular weight for " + field(kIupacNameField) + ".";
      break;
  }
  if (is_chemdner_task(task)) out += "\n### Text: " + field(kInputTextField);
  out += "\n### Response:";
  return out;
}

// ---------------------------------------------------------------------------
// Records

struct Mention {
  std::string surface;
  EntityClass entity_class;
  // Code-point offsets [start, end) into the record text.
  std::optional<std::pair<std::size_t, std::size_t>> span;
};

struct ChemdnerRecord {
  std::string id;
  std::string text;
  std::vector<Mention> mentions;

  void validate() const {
    if (text.empty()) throw ValidationError("CHEMDNER record " + id + " has empty text");
    std::u32string cps;
    for (const auto& m : mentions) {
      if (m.surface.empty()) throw ValidationError("CHEMDNER record " + id + " has an empty mention");
      if (!m.span) continue;
      if (cps.empty()) cps = unicode::to_u32(text);
      const auto [b, e] = *m.span;
      if (b > e || e > cps.size() || unicode::to_utf8(std::u32string_view(cps).substr(b, e - b)) != m.surface)
        throw ValidationError("CHEMDNER record " + id + ": span [" + std::to_string(b) + "," + std::to_string(e) +
                              ") does not match mention `" + m.surface + "`");
    }
  }
};

struct PubchemRecord {
  std::string cid;
  std::string iupac_name;
  std::string molecular_formula;
  std::string isomeric_selfies;
  double molecular_weight = 0.0;

  void validate() const {
    if (cid.empty() || iupac_name.empty() || molecular_formula.empty() || isomeric_selfies.empty())
      throw ValidationError("PubChem record " + cid + " has an empty field");
    if (!(molecular_weight > 0.0) || !std::isfinite(molecular_weight))
      throw ValidationError("PubChem record " + cid + " needs a positive molecular weight");
  }
};

// Shortest decimal that round-trips to the same double.
inline std::string format_weight(double w) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, w);
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Examples

struct InstructionExample {
  std::string id;
  Task task;
  std::string prompt;
  std::string response;
  std::string record_id;
  std::optional<EntityClass> entity_class;

  ordered_json to_json() const {
    ordered_json j;
    j["id"] = id;
    j["task"] = to_string(task);
    j["prompt"] = prompt;
    j["response"] = response;
    ordered_json meta;
    meta["record_id"] = record_id;
    if (entity_class) meta["entity_class"] = chembench::to_string(*entity_class);
    j["meta"] = std::move(meta);
    return j;
  }

  static InstructionExample from_json(const json& j) {
    InstructionExample ex;
    try {
      ex.id = j.at("id").get<std::string>();
      ex.task = parse_task(j.at("task").get<std::string>());
      ex.prompt = j.at("prompt").get<std::string>();
      ex.response = j.at("response").get<std::string>();
      const auto& meta = j.at("meta");
      ex.record_id = meta.at("record_id").get<std::string>();
      if (meta.contains("entity_class")) {
        auto name = meta["entity_class"].get<std::string>();
        ex.entity_class = parse_entity_class(name);
        if (!ex.entity_class) throw ValidationError("unknown entity class: " + name);
      }
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed instruction example: ") + e.what());
    }
    if (ex.task == Task::kCEE && !ex.entity_class)
      throw ValidationError("CEE example " + ex.id + " lacks meta.entity_class");
    return ex;
  }
};

inline std::string serialize_list(std::span<const std::string> items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += kListDelimiter;
    out += items[i];
  }
  return out;
}

struct ChemdnerBuild {
  std::vector<InstructionExample> examples;
  std::size_t skipped_records = 0;  // records with no mentions
};

// CEE: one example per class present in a record, listing that class's
// distinct surfaces in order of first appearance. CER: one example per
// record listing the classes present in enumeration order.
inline ChemdnerBuild build_chemdner_examples(std::span<const ChemdnerRecord> records) {
  ChemdnerBuild out;
  for (const auto& rec : records) {
    rec.validate();
    if (rec.mentions.empty()) {
      ++out.skipped_records;
      continue;
    }
    std::vector<const Mention*> ordered;
    for (const auto& m : rec.mentions) ordered.push_back(&m);
    const bool all_spans = std::all_of(ordered.begin(), ordered.end(), [](auto* m) { return m->span.has_value(); });
    if (all_spans)
      std::stable_sort(ordered.begin(), ordered.end(),
                       [](auto* a, auto* b) { return a->span->first < b->span->first; });

    std::array<std::vector<std::string>, kEntityClasses.size()> by_class;
    for (const Mention* m : ordered) {
      auto& list = by_class[index_of(m->entity_class)];
      if (std::find(list.begin(), list.end(), m->surface) == list.end()) list.push_back(m->surface);
    }
    std::vector<std::string> classes_present;
    for (EntityClass c : kEntityClasses) {
      const auto& surfaces = by_class[index_of(c)];
      if (surfaces.empty()) continue;
      classes_present.emplace_back(chembench::to_string(c));
      InstructionExample ex;
      ex.task = Task::kCEE;
      ex.id = rec.id + "/CEE/" + std::string(chembench::to_string(c));
      ex.prompt = render_prompt(Task::kCEE, {{std::string(kEntityTypeField), std::string(chembench::to_string(c))},
                                             {std::string(kInputTextField), rec.text}});
      ex.response = serialize_list(surfaces);
      ex.record_id = rec.id;
      ex.entity_class = c;
      out.examples.push_back(std::move(ex));
    }
    InstructionExample cer;
    cer.task = Task::kCER;
    cer.id = rec.id + "/CER";
    cer.prompt = render_prompt(Task::kCER, {{std::string(kInputTextField), rec.text}});
    cer.response = serialize_list(classes_present);
    cer.record_id = rec.id;
    out.examples.push_back(std::move(cer));
  }
  return out;
}

inline std::vector<InstructionExample> build_pubchem_examples(std::span<const PubchemRecord> records) {
  std::vector<InstructionExample> out;
  out.reserve(records.size() * 3);
  for (const auto& rec : records) {
    rec.validate();
    const PromptFields fields{{std::string(kIupacNameField), rec.iupac_name}};
    auto add = [&](Task t, std::string response) {
      out.push_back({rec.cid + "/" + std::string(to_string(t)), t, render_prompt(t, fields), std::move(response),
                     rec.cid, std::nullopt});
    };
    add(Task::kMFG, rec.molecular_formula);
    add(Task::kISG, rec.isomeric_selfies);
    add(Task::kMWE, format_weight(rec.molecular_weight));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

// Targets are in units of source records. For PubChem and CER every record
// yields exactly one example per task, so record counts equal per-task
// example counts.
struct SplitSpec {
  enum class Mode { kCounts, kRatios };
  Mode mode = Mode::kRatios;
  double train = 1.0;
  double val = 0.0;
  double test = 0.0;

  static SplitSpec counts(std::size_t train, std::size_t val, std::size_t test) {
    return {Mode::kCounts, static_cast<double>(train), static_cast<double>(val), static_cast<double>(test)};
  }
  static SplitSpec ratios(double train, double val, double test) { return {Mode::kRatios, train, val, test}; }
};

// Per-record train/val/test counts from the published split table, scaled.
// CHEMDNER uses the CER row since each record yields one CER example.
inline SplitSpec published_split(std::string_view source, double scale = 1.0) {
  auto scaled = [&](double v) { return static_cast<std::size_t>(std::llround(v * scale)); };
  if (source == "pubchem") return SplitSpec::counts(scaled(50000), scaled(20000), scaled(5000));
  if (source == "chemdner") return SplitSpec::counts(scaled(4500), scaled(2000), scaled(4200));
  throw ConfigError("unknown split preset: " + std::string(source));
}

struct DatasetSplit {
  std::vector<InstructionExample> train;
  std::vector<InstructionExample> val;
  std::vector<InstructionExample> test;
  std::size_t unassigned_records = 0;
  std::array<std::size_t, 3> records{};  // train, val, test
};

// Unbiased draw from [0, n) using only the raw 64-bit engine output, so
// results do not depend on the standard library's distributions.
inline uint64_t uniform_below(std::mt19937_64& rng, uint64_t n) {
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

inline DatasetSplit split_dataset(std::span<const InstructionExample> examples, const SplitSpec& spec,
                                  uint64_t seed) {
  std::vector<std::string> record_ids;
  {
    std::set<std::string> seen;
    for (const auto& ex : examples)
      if (seen.insert(ex.record_id).second) record_ids.push_back(ex.record_id);
  }
  std::sort(record_ids.begin(), record_ids.end());
  seeded_shuffle(record_ids, seed);
  const std::size_t total = record_ids.size();

  std::array<std::size_t, 3> want{};
  const std::array<double, 3> targets = {spec.train, spec.val, spec.test};
  if (spec.mode == SplitSpec::Mode::kCounts) {
    std::size_t sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (targets[k] < 0) throw ConfigError("split counts must be non-negative");
      want[k] = static_cast<std::size_t>(targets[k]);
      sum += want[k];
    }
    if (sum > total)
      throw ValidationError("split requests " + std::to_string(want[0]) + "/" + std::to_string(want[1]) + "/" +
                            std::to_string(want[2]) + " records but only " + std::to_string(total) +
                            " are available");
  } else {
    double sum = 0;
    for (double r : targets) {
      if (r < 0 || r > 1) throw ConfigError("split ratios must lie in [0, 1]");
      sum += r;
    }
    if (sum > 1.0 + 1e-9) throw ConfigError("split ratios sum to more than 1");
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double exact = targets[k] * static_cast<double>(total);
      want[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      frac[k] = exact - static_cast<double>(want[k]);
      assigned += want[k];
    }
    // Largest remainder when the ratios cover everything.
    if (std::abs(sum - 1.0) <= 1e-9) {
      std::array<std::size_t, 3> order = {0, 1, 2};
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
      for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++want[order[i % 3]];
    }
  }

  std::unordered_map<std::string, int> bucket;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < want[k]; ++i) bucket.emplace(record_ids[pos++], k);

  DatasetSplit out;
  out.records = want;
  out.unassigned_records = total - pos;
  for (const auto& ex : examples) {
    auto it = bucket.find(ex.record_id);
    if (it == bucket.end()) continue;
    (it->second == 0 ? out.train : it->second == 1 ? out.val : out.test).push_back(ex);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Response parsing

inline std::string_view trim(std::string_view s) {
  auto is_space_at = [&](std::size_t pos, std::size_t& len) {
    auto d = unicode::decode_at(s, pos);
    len = d.length;
    return d.valid && unicode::is_whitespace(d.cp);
  };
  std::size_t b = 0, len = 0;
  while (b < s.size() && is_space_at(b, len)) b += len;
  std::size_t e = s.size();
  while (e > b) {
    std::size_t p = e - 1;
    while (p > b && (static_cast<unsigned char>(s[p]) & 0xC0) == 0x80) --p;
    if (!is_space_at(p, len)) break;
    e = p;
  }
  return s.substr(b, e - b);
}

inline std::vector<std::string> parse_list_response(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t next = text.find(kListDelimiter, pos);
    auto item = trim(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (!item.empty()) out.emplace_back(item);
    if (next == std::string_view::npos) break;
    pos = next + kListDelimiter.size();
  }
  return out;
}

struct ClassListParse {
  std::vector<EntityClass> classes;
  std::vector<std::string> rejects;
};

inline ClassListParse parse_class_list(std::string_view text) {
  ClassListParse out;
  for (auto& item : parse_list_response(text)) {
    if (auto c = parse_entity_class(item))
      out.classes.push_back(*c);
    else
      out.rejects.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loaders

inline std::string json_id(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError("record id must be a string or integer");
}

inline std::vector<ChemdnerRecord> load_chemdner_jsonl(const std::string& path) {
  std::vector<ChemdnerRecord> out;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    const auto j = parse_json_line(line, path, lineno);
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      ChemdnerRecord rec;
      rec.id = j.contains("id") ? json_id(j["id"]) : "chemdner-" + std::to_string(lineno);
      rec.text = j.at("text").get<std::string>();
      for (const auto& m : j.value("mentions", json::array())) {
        Mention mention;
        mention.surface = m.at("surface").get<std::string>();
        const auto cls_name = m.at("class").get<std::string>();
        auto cls = parse_entity_class(cls_name);
        if (!cls) throw ValidationError("unknown entity class `" + cls_name + "`");
        mention.entity_class = *cls;
        if (m.contains("start") && m.contains("end"))
          mention.span = std::pair{m["start"].get<std::size_t>(), m["end"].get<std::size_t>()};
        rec.mentions.push_back(std::move(mention));
      }
      rec.validate();
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  });
  return out;
}

namespace detail {
inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t pos = 0;
  for (;;) {
    auto next = line.find('\t', pos);
    cols.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return cols;
}
}  // namespace detail

// The CHEMDNER distribution layout: an abstracts file (PMID, title,
// abstract) and an annotations file (PMID, T|A, start, end, surface,
// class). Titles and abstracts become separate records "<PMID>:T" and
// "<PMID>:A". Mentions labelled with a class outside the seven (e.g.
// "NO CLASS") are ignored.
inline std::vector<ChemdnerRecord> load_chemdner_tsv(const std::string& abstracts_path,
                                                     const std::string& annotations_path) {
  std::vector<ChemdnerRecord> out;
  std::unordered_map<std::string, std::size_t> index;
  for_each_line(abstracts_path, [&](std::size_t lineno, std::string_view line) {
    auto cols = detail::split_tabs(line);
    if (cols.size() < 3)
      throw ValidationError(abstracts_path + ":" + std::to_string(lineno) + ": expected PMID, title, abstract");
    const std::string pmid(cols[0]);
    for (auto [part, text] : {std::pair{"T", cols[1]}, std::pair{"A", cols[2]}}) {
      if (text.empty()) continue;
      const std::string id = pmid + ":" + part;
      index[id] = out.size();
      out.push_back({id, std::string(text), {}});
    }
  });
  for_each_line(annotations_path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = annotations_path + ":" + std::to_string(lineno);
    auto cols = detail::split_tabs(line);
    if (cols.size() < 6) throw ValidationError(where + ": expected PMID, T|A, start, end, text, class");
    auto it = index.find(std::string(cols[0]) + ":" + std::string(cols[1]));
    if (it == index.end()) throw ValidationError(where + ": annotation for unknown text " + std::string(cols[0]));
    auto cls = parse_entity_class(cols[5]);
    if (!cls) return;
    std::size_t b = 0, e = 0;
    if (std::from_chars(cols[2].data(), cols[2].data() + cols[2].size(), b).ec != std::errc{} ||
        std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), e).ec != std::errc{})
      throw ValidationError(where + ": bad offsets");
    out[it->second].mentions.push_back({std::string(cols[4]), *cls, std::pair{b, e}});
  });
  for (const auto& r : out) r.validate();
  return out;
}

inline std::vector<PubchemRecord> load_pubchem_jsonl(const std::string& path) {
  std::vector<PubchemRecord> out;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    const auto j = parse_json_line(line, path, lineno);
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      PubchemRecord rec;
      rec.cid = json_id(j.at("cid"));
      rec.iupac_name = j.at("iupac_name").get<std::string>();
      rec.molecular_formula = j.at("molecular_formula").get<std::string>();
      rec.isomeric_selfies = j.at("isomeric_selfies").get<std::string>();
      const auto& w = j.at("molecular_weight");
      if (w.is_number()) {
        rec.molecular_weight = w.get<double>();
      } else {
        const auto s = w.get<std::string>();
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), rec.molecular_weight);
        if (ec != std::errc{} || p != s.data() + s.size()) throw ValidationError("molecular_weight is not a number");
      }
      rec.validate();
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  });
  return out;
}

inline std::vector<InstructionExample> load_examples_jsonl(const std::string& path) {
  std::vector<InstructionExample> out;
  std::unordered_set<std::string> ids;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    try {
      auto ex = InstructionExample::from_json(parse_json_line(line, path, lineno));
      if (!ids.insert(ex.id).second) throw ValidationError("duplicate example id: " + ex.id);
      out.push_back(std::move(ex));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace chembench::instruct
