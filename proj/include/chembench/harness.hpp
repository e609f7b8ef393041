#pragma once

// Benchmark harness: multiple-choice prompting, answer extraction,
// bounded-concurrency dispatch against a generation endpoint, crash-safe
// raw logs, and per-task / per-subset reports.

#include <algorithm>
#include <cctype>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chembench/csv.hpp"
#include "chembench/error.hpp"
#include "chembench/instruct.hpp"
#include "chembench/io.hpp"
#include "chembench/scoring.hpp"

namespace chembench::harness {

inline constexpr int kNumChoices = 4;
inline constexpr std::string_view kChoiceLetters = "ABCD";

// ---------------------------------------------------------------------------
// Items and prompts

struct McqItem {
  std::string id;
  std::string task_name;
  std::string question;
  std::array<std::string, kNumChoices> choices;
  int answer = 0;

  void validate() const {
    if (answer < 0 || answer >= kNumChoices)
      throw ValidationError("item " + id + ": answer index out of range: " + std::to_string(answer));
    if (question.empty()) throw ValidationError("item " + id + " has an empty question");
  }
};

// "high_school_chemistry" and "High School Chemistry" name the same task.
inline std::string canonical_task_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    char ch = c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ch == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(ch);
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline int parse_answer_letter(std::string_view s) {
  const auto t = instruct::trim(s);
  if (t.size() == 1) {
    const auto pos = kChoiceLetters.find(static_cast<char>(std::toupper(static_cast<unsigned char>(t[0]))));
    if (pos != std::string_view::npos) return static_cast<int>(pos);
  }
  throw ValidationError("answer must be one of A-D, got `" + std::string(s) + "`");
}

namespace detail {
inline void append_block(std::string& out, const McqItem& item) {
  out += item.question;
  for (int k = 0; k < kNumChoices; ++k) {
    out += '\n';
    out += kChoiceLetters[k];
    out += ". ";
    out += item.choices[k];
  }
  out += "\nAnswer:";
}

// Ids are per-file row numbers in MMLU dumps, so compare content.
inline bool same_item(const McqItem& a, const McqItem& b) {
  return a.question == b.question && a.choices == b.choices;
}
}  // namespace detail

// Header line, then each shot as question, lettered choices and its answer,
// then the target item ending at "Answer:".
inline std::string build_mcq_prompt(const McqItem& item, std::span<const McqItem> shots) {
  std::string out = "The following are multiple choice questions (with answers) about " +
                    canonical_task_name(item.task_name) + ".\n\n";
  for (const auto& shot : shots) {
    if (detail::same_item(shot, item)) throw ValidationError("item " + item.id + " appears in its own few-shot examples");
    detail::append_block(out, shot);
    out += ' ';
    out += kChoiceLetters[shot.answer];
    out += "\n\n";
  }
  detail::append_block(out, item);
  return out;
}

// Few-shot exemplars for one task: a seeded draw from that task's dev items.
inline std::vector<McqItem> select_shots(std::span<const McqItem> dev, std::string_view task, std::size_t count,
                                         uint64_t seed) {
  if (count == 0) return {};
  std::vector<McqItem> pool;
  const auto key = canonical_task_name(task);
  for (const auto& d : dev)
    if (canonical_task_name(d.task_name) == key) pool.push_back(d);
  if (pool.size() < count)
    throw ValidationError("task `" + std::string(task) + "` has " + std::to_string(pool.size()) +
                          " dev items, need " + std::to_string(count) + " few-shot examples");
  std::sort(pool.begin(), pool.end(), [](const McqItem& a, const McqItem& b) { return a.id < b.id; });
  uint64_t task_seed = seed;
  for (unsigned char c : key) task_seed = (task_seed ^ c) * 0x100000001B3ULL;
  instruct::seeded_shuffle(pool, task_seed);
  pool.resize(count);
  return pool;
}

// ---------------------------------------------------------------------------
// Answer extraction

// Highest summed log-probability wins; ties go to the lower index.
inline int select_answer(std::span<const double> choice_logprobs) {
  if (choice_logprobs.size() != static_cast<std::size_t>(kNumChoices)) return scoring::kAbstain;
  return static_cast<int>(std::max_element(choice_logprobs.begin(), choice_logprobs.end()) - choice_logprobs.begin());
}

// First standalone letter A-D (not part of a longer alphanumeric run).
inline int select_answer(std::string_view generated) {
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto pos = kChoiceLetters.find(generated[i]);
    if (pos == std::string_view::npos) continue;
    if (i > 0 && is_word(generated[i - 1])) continue;
    if (i + 1 < generated.size() && is_word(generated[i + 1])) continue;
    return static_cast<int>(pos);
  }
  return scoring::kAbstain;
}

// ---------------------------------------------------------------------------
// Wire types

struct GenerationRequest {
  std::string prompt;
  int max_new_tokens = 16;
  double temperature = 0.0;
  std::vector<std::string> stop;
  // When set, the endpoint scores these continuations instead of generating.
  std::optional<std::vector<std::string>> choices;

  void validate() const {
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["prompt"] = prompt;
    j["max_new_tokens"] = max_new_tokens;
    j["temperature"] = temperature;
    j["stop"] = stop;
    if (choices) j["logprobs"] = ordered_json{{"choices", *choices}};
    return j;
  }

  static GenerationRequest from_json(const json& j) {
    GenerationRequest r;
    try {
      r.prompt = j.at("prompt").get<std::string>();
      r.max_new_tokens = j.value("max_new_tokens", 16);
      r.temperature = j.value("temperature", 0.0);
      r.stop = j.value("stop", std::vector<std::string>{});
      if (j.contains("logprobs") && !j["logprobs"].is_null())
        r.choices = j["logprobs"].at("choices").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed generation request: ") + e.what());
    }
    r.validate();
    return r;
  }
};

struct GenerationResponse {
  std::optional<std::string> text;
  std::optional<std::vector<double>> choice_logprobs;
  std::optional<std::string> error;

  bool ok() const noexcept { return !error && (text || choice_logprobs); }

  ordered_json to_json() const {
    ordered_json j = ordered_json::object();
    if (error) {
      j["error"] = *error;
      return j;
    }
    if (text) j["text"] = *text;
    if (choice_logprobs) j["choice_logprobs"] = *choice_logprobs;
    return j;
  }

  static GenerationResponse from_json(const json& j) {
    GenerationResponse r;
    if (!j.is_object()) return {std::nullopt, std::nullopt, "response is not a JSON object"};
    if (j.contains("error") && !j["error"].is_null()) {
      r.error = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
      return r;
    }
    try {
      if (j.contains("text")) r.text = j["text"].get<std::string>();
      if (j.contains("choice_logprobs")) r.choice_logprobs = j["choice_logprobs"].get<std::vector<double>>();
    } catch (const json::exception& e) {
      r.error = std::string("malformed response: ") + e.what();
    }
    if (!r.text && !r.choice_logprobs && !r.error) r.error = "response has neither `text` nor `choice_logprobs`";
    return r;
  }
};

// Anything that turns a request into a response. Implementations must be
// safe to call from several threads at once; thrown exceptions count as
// failed attempts.
class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic mock endpoint

inline uint64_t fnv1a(std::string_view s, uint64_t seed = 0xcbf29ce484222325ULL) {
  uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct MockAnswer {
  std::string text;
  std::optional<int> choice;  // for scored-continuation requests
};

class MockEndpoint : public GenerationClient {
 public:
  enum class Mode { kEcho, kEmpty, kRandom };

  explicit MockEndpoint(Mode mode, uint64_t seed = 0) : mode_(mode), seed_(seed) {}

  static Mode parse_mode(std::string_view s) {
    if (s == "echo") return Mode::kEcho;
    if (s == "empty") return Mode::kEmpty;
    if (s == "random") return Mode::kRandom;
    throw ValidationError("unknown mock mode: " + std::string(s));
  }

  void set_answer(std::string prompt, MockAnswer answer) { answers_[std::move(prompt)] = std::move(answer); }

  // Every prompt fails this many times before it is answered.
  void set_failures_per_prompt(int n) { failures_per_prompt_ = n; }

  // {"prompt": ..., "text": ..., "choice"?: int} per line.
  void load_answers(const std::string& path) {
    for (const auto& j : read_jsonl(path)) {
      MockAnswer a{j.at("text").get<std::string>(), std::nullopt};
      if (j.contains("choice")) a.choice = j["choice"].get<int>();
      set_answer(j.at("prompt").get<std::string>(), std::move(a));
    }
  }

  GenerationResponse generate(const GenerationRequest& req) override {
    calls_.fetch_add(1);
    const int in_flight = ++in_flight_;
    int seen = max_in_flight_.load();
    while (in_flight > seen && !max_in_flight_.compare_exchange_weak(seen, in_flight)) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};

    if (failures_per_prompt_ > 0) {
      std::lock_guard lock(mu_);
      if (failures_[req.prompt]++ < failures_per_prompt_) return {std::nullopt, std::nullopt, "injected failure"};
    }
    const uint64_t h = fnv1a(req.prompt, 0xcbf29ce484222325ULL ^ seed_);
    if (req.choices) {
      const std::size_t n = req.choices->size();
      std::vector<double> lp(n, -10.0);
      switch (mode_) {
        case Mode::kEcho: {
          auto it = answers_.find(req.prompt);
          if (it == answers_.end()) return {std::nullopt, std::nullopt, "no answer for prompt"};
          int pick = it->second.choice.value_or(-1);
          for (std::size_t k = 0; pick < 0 && k < n; ++k)
            if ((*req.choices)[k] == it->second.text) pick = static_cast<int>(k);
          if (pick >= 0 && static_cast<std::size_t>(pick) < n) lp[pick] = 0.0;
          break;
        }
        case Mode::kEmpty: break;
        case Mode::kRandom:
          if (n) lp[h % n] = 0.0;
          break;
      }
      return {std::nullopt, std::move(lp), std::nullopt};
    }
    switch (mode_) {
      case Mode::kEcho: {
        auto it = answers_.find(req.prompt);
        if (it == answers_.end()) return {std::nullopt, std::nullopt, "no answer for prompt"};
        return {" " + it->second.text, std::nullopt, std::nullopt};
      }
      case Mode::kEmpty: return {std::string(), std::nullopt, std::nullopt};
      case Mode::kRandom: return {std::string(" ") + kChoiceLetters[h % kNumChoices], std::nullopt, std::nullopt};
    }
    return {std::nullopt, std::nullopt, "unreachable"};
  }

  uint64_t calls() const noexcept { return calls_.load(); }
  int max_in_flight() const noexcept { return max_in_flight_.load(); }

 private:
  Mode mode_;
  uint64_t seed_;
  std::unordered_map<std::string, MockAnswer> answers_;
  int failures_per_prompt_ = 0;
  std::mutex mu_;
  std::unordered_map<std::string, int> failures_;
  std::atomic<uint64_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

// ---------------------------------------------------------------------------
// Dispatch

// Append-only JSONL of raw generations keyed by example id. Lines are
// flushed as they are written so an interrupted run can resume.
class RawLog {
 public:
  RawLog() = default;
  explicit RawLog(std::string path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      std::ifstream in(path_, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::parse_error&) {
          continue;  // torn final line from an interrupted write
        }
        auto resp = GenerationResponse::from_json(j);
        if (j.contains("example_id") && resp.ok()) done_[j["example_id"].get<std::string>()] = std::move(resp);
      }
    }
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw RuntimeFailure("cannot open raw generation log: " + path_);
  }

  bool enabled() const noexcept { return !path_.empty(); }

  const GenerationResponse* find(const std::string& id) const {
    auto it = done_.find(id);
    return it == done_.end() ? nullptr : &it->second;
  }

  void append(const std::string& id, const GenerationResponse& r) {
    if (!enabled()) return;
    ordered_json j;
    j["example_id"] = id;
    const auto body = r.to_json();
    for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = *it;
    std::lock_guard lock(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw RuntimeFailure("write failed: " + path_);
  }

 private:
  std::string path_;
  std::unordered_map<std::string, GenerationResponse> done_;
  std::ofstream out_;
  std::mutex mu_;
};

struct DispatchOptions {
  unsigned concurrency = 4;
  int retries = 2;
};

struct DispatchResult {
  std::vector<std::optional<GenerationResponse>> responses;  // nullopt = failed
  std::size_t failures = 0;
  std::size_t resumed = 0;
};

// Sends every request with at most `concurrency` in flight, retrying each up
// to `retries` extra times. Results come back in input order.
inline DispatchResult dispatch(std::span<const std::string> ids, std::span<const GenerationRequest> requests,
                               GenerationClient& client, const DispatchOptions& opts, RawLog& log) {
  if (opts.concurrency < 1) throw ConfigError("concurrency limit must be >= 1");
  if (opts.retries < 0) throw ConfigError("retry budget must be >= 0");
  DispatchResult out;
  out.responses.resize(requests.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (const auto* prior = log.find(ids[i])) {
      out.responses[i] = *prior;
      ++out.resumed;
    } else {
      pending.push_back(i);
    }
  }
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      std::optional<GenerationResponse> got;
      for (int attempt = 0; attempt <= opts.retries && !got; ++attempt) {
        try {
          auto r = client.generate(requests[i]);
          if (r.ok() && (!requests[i].choices || (r.choice_logprobs && r.choice_logprobs->size() == requests[i].choices->size())))
            got = std::move(r);
        } catch (const std::exception&) {
        }
      }
      if (got) {
        try {
          log.append(ids[i], *got);
        } catch (...) {
          std::lock_guard lock(fatal_mu);
          if (!fatal) fatal = std::current_exception();
          return;
        }
        out.responses[i] = std::move(got);
      } else {
        failures.fetch_add(1);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const unsigned n = static_cast<unsigned>(std::min<std::size_t>(opts.concurrency, std::max<std::size_t>(1, pending.size())));
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  out.failures = failures.load();
  return out;
}

// ---------------------------------------------------------------------------
// Subsets

struct SubsetDef {
  std::string name;
  std::vector<std::string> task_names;
};

inline constexpr std::string_view kAverageSubset = "Avg";

// Topic groupings over MMLU task names.
inline std::vector<SubsetDef> default_subsets() {
  return {
      {"Chem", {"college chemistry", "high school chemistry"}},
      {"ChemBioMed",
       {"college chemistry", "high school chemistry", "college biology", "high school biology", "clinical knowledge",
        "college medicine", "medical genetics", "professional medicine", "virology"}},
      {"Health",
       {"anatomy", "clinical knowledge", "college medicine", "human aging", "medical genetics", "nutrition",
        "professional medicine", "virology"}},
      {"Math",
       {"abstract algebra", "college mathematics", "elementary mathematics", "high school mathematics",
        "high school statistics"}},
      {"STEM",
       {"college chemistry", "high school chemistry", "astronomy", "college physics", "high school physics",
        "conceptual physics", "college biology", "high school biology", "college computer science",
        "high school computer science", "computer security", "machine learning", "electrical engineering",
        "abstract algebra", "college mathematics", "high school mathematics", "high school statistics",
        "elementary mathematics"}},
      {"Humanities",
       {"high school european history", "high school us history", "high school world history", "prehistory",
        "formal logic", "logical fallacies", "moral disputes", "moral scenarios", "philosophy", "world religions",
        "international law", "jurisprudence", "professional law"}},
      {"Social Sci.",
       {"high school government and politics", "public relations", "security studies", "us foreign policy",
        "human sexuality", "sociology", "econometrics", "high school macroeconomics", "high school microeconomics",
        "high school geography", "high school psychology", "professional psychology"}},
      {"Other",
       {"global facts", "miscellaneous", "business ethics", "professional accounting", "management", "marketing",
        "anatomy", "clinical knowledge", "college medicine", "human aging", "medical genetics", "nutrition",
        "professional medicine", "virology"}},
  };
}

using MetricMap = std::map<std::string, double>;

// Unweighted mean of member-task values for each subset.
inline MetricMap aggregate_subsets(const MetricMap& per_task, std::span<const SubsetDef> subsets) {
  std::map<std::string, double> canon;
  for (const auto& [task, v] : per_task) canon[canonical_task_name(task)] = v;
  MetricMap out;
  for (const auto& s : subsets) {
    if (s.task_names.empty()) throw ConfigError("subset `" + s.name + "` has no tasks");
    double sum = 0;
    for (const auto& t : s.task_names) {
      auto it = canon.find(canonical_task_name(t));
      if (it == canon.end()) throw ValidationError("subset `" + s.name + "` needs task `" + t + "`, which has no result");
      sum += it->second;
    }
    out[s.name] = sum / static_cast<double>(s.task_names.size());
  }
  return out;
}

inline double average_all(const MetricMap& per_task) {
  if (per_task.empty()) throw ValidationError("no task results to average");
  double sum = 0;
  for (const auto& [_, v] : per_task) sum += v;
  return sum / static_cast<double>(per_task.size());
}

// Subsets whose tasks are all present, plus "Avg" over every task.
inline MetricMap resolvable_subsets(const MetricMap& per_task, std::span<const SubsetDef> subsets,
                                    std::vector<std::string>* unresolved = nullptr) {
  std::set<std::string> have;
  for (const auto& [t, _] : per_task) have.insert(canonical_task_name(t));
  std::vector<SubsetDef> usable;
  for (const auto& s : subsets) {
    const bool ok = std::all_of(s.task_names.begin(), s.task_names.end(),
                                [&](const std::string& t) { return have.count(canonical_task_name(t)) > 0; });
    if (ok)
      usable.push_back(s);
    else if (unresolved)
      unresolved->push_back(s.name);
  }
  auto out = aggregate_subsets(per_task, usable);
  if (!per_task.empty()) out[std::string(kAverageSubset)] = average_all(per_task);
  return out;
}

// ---------------------------------------------------------------------------
// Multiple-choice evaluation

enum class McqMode { kLogprob, kText };

inline McqMode parse_mcq_mode(std::string_view s) {
  if (s == "logprob") return McqMode::kLogprob;
  if (s == "text") return McqMode::kText;
  throw ValidationError("unknown answer mode: " + std::string(s));
}

inline std::string_view to_string(McqMode m) { return m == McqMode::kLogprob ? "logprob" : "text"; }

struct EvalConfig {
  std::string model_id = "unknown";
  int shots = 0;
  uint64_t seed = 0;
  unsigned concurrency = 4;
  int retries = 2;
  McqMode mode = McqMode::kText;
  int max_new_tokens = 16;
  double temperature = 0.0;
  std::vector<std::string> stop = {"\n\n"};
  std::string raw_path;  // empty: do not persist
  bool record_timing = false;
  double max_failure_rate = 0.10;

  void validate() const {
    if (shots != 0 && shots != 3) throw ConfigError("shots must be 0 or 3, got " + std::to_string(shots));
    if (concurrency < 1) throw ConfigError("concurrency limit must be >= 1");
    if (retries < 0) throw ConfigError("retry budget must be >= 0");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["model_id"] = model_id;
    j["shots"] = shots;
    j["seed"] = seed;
    j["mode"] = to_string(mode);
    j["max_new_tokens"] = max_new_tokens;
    j["temperature"] = temperature;
    j["stop"] = stop;
    j["retries"] = retries;
    return j;
  }
};

struct TaskResult {
  double accuracy = 0;
  double macro_f1 = 0;
  std::size_t n = 0;
  std::size_t abstains = 0;
  std::size_t failed = 0;
};

struct EvalReport {
  ordered_json config;
  std::map<std::string, TaskResult> per_task;
  MetricMap subset_accuracy;
  MetricMap subset_macro_f1;
  std::vector<std::string> unresolved_subsets;
  std::size_t items = 0;
  std::size_t failures = 0;
  bool invalid = false;
  std::optional<double> wall_seconds;

  MetricMap accuracy_by_task() const {
    MetricMap m;
    for (const auto& [t, r] : per_task) m[t] = r.accuracy;
    return m;
  }
  MetricMap macro_f1_by_task() const {
    MetricMap m;
    for (const auto& [t, r] : per_task) m[t] = r.macro_f1;
    return m;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["kind"] = "mmlu";
    j["config"] = config;
    ordered_json tasks = ordered_json::object();
    for (const auto& [t, r] : per_task)
      tasks[t] = ordered_json{{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"n", r.n},
                              {"abstains", r.abstains}, {"failed", r.failed}};
    j["per_task"] = std::move(tasks);
    j["per_subset"] = ordered_json{{"accuracy", subset_accuracy}, {"macro_f1", subset_macro_f1}};
    j["unresolved_subsets"] = unresolved_subsets;
    j["items"] = items;
    j["failures"] = failures;
    j["invalid"] = invalid;
    if (wall_seconds) j["timing"] = ordered_json{{"wall_seconds", *wall_seconds}};
    return j;
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    try {
      r.config = j.at("config");
      for (auto& [t, v] : j.at("per_task").items())
        r.per_task[t] = {v.at("accuracy").get<double>(), v.at("macro_f1").get<double>(), v.at("n").get<std::size_t>(),
                         v.value("abstains", std::size_t{0}), v.value("failed", std::size_t{0})};
      r.items = j.value("items", std::size_t{0});
      r.failures = j.value("failures", std::size_t{0});
      r.invalid = j.value("invalid", false);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed run report: ") + e.what());
    }
    return r;
  }
};

inline std::string mcq_example_id(const McqItem& item) { return canonical_task_name(item.task_name) + "/" + item.id; }

inline GenerationRequest mcq_request(const McqItem& item, std::span<const McqItem> shots, const EvalConfig& cfg) {
  GenerationRequest req;
  req.prompt = build_mcq_prompt(item, shots);
  req.max_new_tokens = cfg.max_new_tokens;
  req.temperature = cfg.temperature;
  req.stop = cfg.stop;
  if (cfg.mode == McqMode::kLogprob) {
    std::vector<std::string> conts;
    for (const auto& c : item.choices) conts.push_back(" " + c);
    req.choices = std::move(conts);
  }
  req.validate();
  return req;
}

// Builds every prompt up front (so prompts depend only on config and data),
// dispatches, then scores each task.
inline EvalReport run_eval(const EvalConfig& cfg, std::span<const McqItem> items, std::span<const McqItem> dev,
                           GenerationClient& client,
                           std::span<const SubsetDef> subsets = {}) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> ids;
  std::vector<GenerationRequest> requests;
  std::map<std::string, std::vector<McqItem>> shot_cache;
  {
    std::set<std::string> seen;
    for (const auto& item : items) {
      item.validate();
      const auto id = mcq_example_id(item);
      if (!seen.insert(id).second) throw ValidationError("duplicate item id: " + id);
      const auto task = canonical_task_name(item.task_name);
      auto it = shot_cache.find(task);
      if (it == shot_cache.end())
        it = shot_cache.emplace(task, select_shots(dev, task, static_cast<std::size_t>(cfg.shots), cfg.seed)).first;
      ids.push_back(id);
      requests.push_back(mcq_request(item, it->second, cfg));
    }
  }
  RawLog log = cfg.raw_path.empty() ? RawLog() : RawLog(cfg.raw_path);
  auto result = dispatch(ids, requests, client, {cfg.concurrency, cfg.retries}, log);

  struct Acc {
    std::vector<int> golds, preds;
    std::size_t abstains = 0, failed = 0;
  };
  std::map<std::string, Acc> by_task;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& acc = by_task[canonical_task_name(items[i].task_name)];
    const auto& r = result.responses[i];
    if (!r) {
      ++acc.failed;
      continue;
    }
    const int pred = r->choice_logprobs ? select_answer(std::span<const double>(*r->choice_logprobs))
                                        : select_answer(std::string_view(r->text.value_or("")));
    acc.abstains += pred == scoring::kAbstain;
    acc.golds.push_back(items[i].answer);
    acc.preds.push_back(pred);
  }

  EvalReport rep;
  rep.config = cfg.to_json();
  rep.items = items.size();
  rep.failures = result.failures;
  rep.invalid = !items.empty() && static_cast<double>(result.failures) > cfg.max_failure_rate * static_cast<double>(items.size());
  for (auto& [task, acc] : by_task) {
    if (acc.golds.empty()) continue;
    TaskResult tr;
    tr.accuracy = scoring::mcq_accuracy(acc.golds, acc.preds, kNumChoices);
    tr.macro_f1 = scoring::mcq_macro_f1(acc.golds, acc.preds, kNumChoices);
    tr.n = acc.golds.size();
    tr.abstains = acc.abstains;
    tr.failed = acc.failed;
    rep.per_task[task] = tr;
  }
  const auto defaults = default_subsets();
  const std::span<const SubsetDef> defs = subsets.empty() ? std::span<const SubsetDef>(defaults) : subsets;
  rep.subset_accuracy = resolvable_subsets(rep.accuracy_by_task(), defs, &rep.unresolved_subsets);
  rep.subset_macro_f1 = resolvable_subsets(rep.macro_f1_by_task(), defs);
  if (cfg.record_timing)
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

// Gold answers for an echo mock, keyed by the exact prompts run_eval sends.
inline std::vector<std::pair<std::string, MockAnswer>> mcq_answer_key(const EvalConfig& cfg,
                                                                      std::span<const McqItem> items,
                                                                      std::span<const McqItem> dev) {
  std::vector<std::pair<std::string, MockAnswer>> out;
  std::map<std::string, std::vector<McqItem>> shot_cache;
  for (const auto& item : items) {
    const auto task = canonical_task_name(item.task_name);
    auto it = shot_cache.find(task);
    if (it == shot_cache.end())
      it = shot_cache.emplace(task, select_shots(dev, task, static_cast<std::size_t>(cfg.shots), cfg.seed)).first;
    out.push_back({build_mcq_prompt(item, it->second),
                   {std::string(1, kChoiceLetters[item.answer]), item.answer}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// MMLU loading

// JSONL rows: {"task"|"subject", "question", "choices": [4], "answer": "B"|1,
// "id"?}. Missing ids become the row's position within its task.
inline std::vector<McqItem> load_mmlu_jsonl(const std::string& path) {
  std::vector<McqItem> out;
  std::map<std::string, std::size_t> per_task;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    const auto j = parse_json_line(line, path, lineno);
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      McqItem item;
      item.task_name = j.contains("task") ? j["task"].get<std::string>() : j.at("subject").get<std::string>();
      item.question = j.at("question").get<std::string>();
      const auto choices = j.at("choices").get<std::vector<std::string>>();
      if (choices.size() != kNumChoices) throw ValidationError("expected 4 choices");
      std::copy(choices.begin(), choices.end(), item.choices.begin());
      const auto& a = j.at("answer");
      item.answer = a.is_number_integer() ? a.get<int>() : parse_answer_letter(a.get<std::string>());
      const auto n = per_task[canonical_task_name(item.task_name)]++;
      item.id = j.contains("id") ? instruct::json_id(j["id"]) : std::to_string(n);
      item.validate();
      out.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  });
  return out;
}

// Headerless rows: question, A, B, C, D, answer letter.
inline std::vector<McqItem> load_mmlu_csv(const std::string& path, const std::string& task_name) {
  std::vector<McqItem> out;
  const auto rows = csv::parse(read_file(path));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 6)
      throw ValidationError(path + ": row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                            " fields, expected 6");
    McqItem item;
    item.id = std::to_string(r);
    item.task_name = task_name;
    item.question = row[0];
    for (int k = 0; k < kNumChoices; ++k) item.choices[k] = row[1 + k];
    try {
      item.answer = parse_answer_letter(row[5]);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": row " + std::to_string(r + 1) + ": " + e.what());
    }
    out.push_back(std::move(item));
  }
  return out;
}

// A .jsonl file, a single .csv file, or a directory of "<task>_<split>.csv"
// files in the original MMLU layout.
inline std::vector<McqItem> load_mmlu(const std::string& path) {
  namespace fs = std::filesystem;
  auto task_from_file = [](const fs::path& p) {
    std::string stem = p.stem().string();
    for (std::string_view suffix : {"_test", "_dev", "_val"})
      if (stem.ends_with(suffix)) stem.resize(stem.size() - suffix.size());
    return stem;
  };
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<McqItem> out;
    for (const auto& f : files) {
      auto part = load_mmlu_csv(f.string(), task_from_file(f));
      out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
  }
  if (fs::path(path).extension() == ".csv") return load_mmlu_csv(path, task_from_file(path));
  return load_mmlu_jsonl(path);
}

// ---------------------------------------------------------------------------
// Instruction-task evaluation

struct InstructionReport {
  instruct::Task task = instruct::Task::kCEE;
  std::size_t n = 0;
  std::size_t failed = 0;
  bool invalid = false;
  std::optional<scoring::MatchCounts> constrained;
  std::optional<scoring::MatchCounts> unconstrained;
  std::map<std::string, scoring::MatchCounts> per_class;  // constrained, CEE only
  std::size_t rejected_classes = 0;                        // CER only
  std::optional<double> mean_pct_edit_distance;
  std::optional<double> mape;
  ordered_json config;

  ordered_json to_json() const {
    ordered_json j;
    j["kind"] = "instruction";
    j["task"] = instruct::to_string(task);
    if (!config.is_null()) j["config"] = config;
    j["n"] = n;
    j["failed"] = failed;
    j["invalid"] = invalid;
    auto ner = [](const scoring::MatchCounts& c) {
      ordered_json o = scoring::prf(c).to_json();
      o["counts"] = c.to_json();
      return o;
    };
    if (constrained) j["constrained"] = ner(*constrained);
    if (unconstrained) j["unconstrained"] = ner(*unconstrained);
    if (!per_class.empty()) {
      ordered_json pc = ordered_json::object();
      for (const auto& [cls, c] : per_class) pc[cls] = ner(c);
      j["per_class"] = std::move(pc);
    }
    if (task == instruct::Task::kCER) j["rejected_classes"] = rejected_classes;
    if (mean_pct_edit_distance) j["mean_pct_edit_distance"] = *mean_pct_edit_distance;
    if (mape) j["mape"] = *mape;
    return j;
  }
};

// Scores raw predictions (keyed by example id) against gold examples of one
// task. Examples without a prediction are counted as failed and excluded.
//   CEE: predictions and gold entities are pooled per source record, each
//        typed with the class its prompt asked for; scored under both schemas.
//   CER: class lists; unmappable predicted names count as INC.
//   MFG/ISG: mean percentage edit distance. MWE: MAPE.
inline InstructionReport score_instruction_predictions(std::span<const instruct::InstructionExample> examples,
                                                       const std::map<std::string, std::string>& predictions,
                                                       instruct::Task task) {
  using instruct::Task;
  InstructionReport rep;
  rep.task = task;
  std::vector<const instruct::InstructionExample*> scored;
  std::vector<const std::string*> preds;
  for (const auto& ex : examples) {
    if (ex.task != task)
      throw ValidationError("example " + ex.id + " is " + std::string(instruct::to_string(ex.task)) + ", not " +
                            std::string(instruct::to_string(task)));
    auto it = predictions.find(ex.id);
    if (it == predictions.end()) {
      ++rep.failed;
      continue;
    }
    scored.push_back(&ex);
    preds.push_back(&it->second);
  }
  rep.n = scored.size();
  rep.invalid = !examples.empty() && static_cast<double>(rep.failed) > 0.10 * static_cast<double>(examples.size());
  if (scored.empty()) return rep;

  switch (task) {
    case Task::kCEE: {
      struct Pool {
        std::vector<scoring::TypedEntity> gold, pred;
      };
      std::map<std::string, Pool> by_record;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        const auto cls = *scored[i]->entity_class;
        auto& pool = by_record[scored[i]->record_id];
        std::vector<scoring::TypedEntity> g, p;
        for (auto& s : instruct::parse_list_response(scored[i]->response)) g.push_back({std::move(s), cls});
        for (auto& s : instruct::parse_list_response(*preds[i])) p.push_back({std::move(s), cls});
        rep.per_class[std::string(chembench::to_string(cls))] += scoring::match_entities(g, p, scoring::Schema::kConstrained);
        pool.gold.insert(pool.gold.end(), g.begin(), g.end());
        pool.pred.insert(pool.pred.end(), p.begin(), p.end());
      }
      scoring::MatchCounts con, uncon;
      for (const auto& [_, pool] : by_record) {
        con += scoring::match_entities(pool.gold, pool.pred, scoring::Schema::kConstrained);
        uncon += scoring::match_entities(pool.gold, pool.pred, scoring::Schema::kUnconstrained);
      }
      rep.constrained = con;
      rep.unconstrained = uncon;
      break;
    }
    case Task::kCER: {
      scoring::MatchCounts total;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        auto to_entities = [](const std::vector<EntityClass>& cs) {
          std::vector<scoring::TypedEntity> out;
          for (auto c : cs) out.push_back({std::string(chembench::to_string(c)), c});
          return out;
        };
        const auto gold = instruct::parse_class_list(scored[i]->response);
        if (!gold.rejects.empty())
          throw ValidationError("gold response of " + scored[i]->id + " has unknown class `" + gold.rejects[0] + "`");
        const auto pred = instruct::parse_class_list(*preds[i]);
        auto c = scoring::match_entities(to_entities(gold.classes), to_entities(pred.classes),
                                         scoring::Schema::kConstrained);
        c.inc += pred.rejects.size();
        rep.rejected_classes += pred.rejects.size();
        total += c;
      }
      rep.constrained = total;
      break;
    }
    case Task::kMFG:
    case Task::kISG: {
      std::vector<scoring::GoldPred> pairs;
      for (std::size_t i = 0; i < scored.size(); ++i)
        pairs.push_back({scored[i]->response, std::string(instruct::trim(*preds[i]))});
      rep.mean_pct_edit_distance = scoring::mean_pct_edit_distance(pairs);
      break;
    }
    case Task::kMWE: {
      std::vector<double> gold;
      std::vector<std::string> texts;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        auto g = scoring::parse_number(scored[i]->response);
        if (!g) throw ValidationError("gold weight of " + scored[i]->id + " is not numeric");
        gold.push_back(*g);
        texts.push_back(*preds[i]);
      }
      rep.mape = scoring::mape(gold, texts);
      break;
    }
  }
  return rep;
}

struct InstructionEvalConfig {
  std::string model_id = "unknown";
  unsigned concurrency = 4;
  int retries = 2;
  std::optional<int> max_new_tokens;  // default depends on the task
  double temperature = 0.0;
  std::vector<std::string> stop = {"\n\n"};
  std::string raw_path;

  int tokens_for(instruct::Task t) const {
    if (max_new_tokens) return *max_new_tokens;
    return t == instruct::Task::kISG ? 256 : 64;
  }
};

// Generated text for each example, keyed by example id; failed examples are
// absent.
inline std::map<std::string, std::string> generate_instruction_predictions(
    std::span<const instruct::InstructionExample> examples, GenerationClient& client,
    const InstructionEvalConfig& cfg) {
  std::vector<std::string> ids;
  std::vector<GenerationRequest> reqs;
  for (const auto& ex : examples) {
    ids.push_back(ex.id);
    GenerationRequest r;
    r.prompt = ex.prompt;
    r.max_new_tokens = cfg.tokens_for(ex.task);
    r.temperature = cfg.temperature;
    r.stop = cfg.stop;
    r.validate();
    reqs.push_back(std::move(r));
  }
  RawLog log = cfg.raw_path.empty() ? RawLog() : RawLog(cfg.raw_path);
  auto result = dispatch(ids, reqs, client, {cfg.concurrency, cfg.retries}, log);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (result.responses[i]) out[ids[i]] = result.responses[i]->text.value_or("");
  return out;
}

inline InstructionReport instruction_eval(std::span<const instruct::InstructionExample> examples,
                                          GenerationClient& client, instruct::Task task,
                                          const InstructionEvalConfig& cfg = {}) {
  for (const auto& ex : examples)
    if (ex.task != task) throw ValidationError("example " + ex.id + " does not belong to task " + std::string(instruct::to_string(task)));
  const auto preds = generate_instruction_predictions(examples, client, cfg);
  auto rep = score_instruction_predictions(examples, preds, task);
  rep.config = ordered_json{{"model_id", cfg.model_id}, {"temperature", cfg.temperature},
                            {"max_new_tokens", cfg.tokens_for(task)}, {"stop", cfg.stop}};
  return rep;
}

// Relative improvement (percent) of `current` over `baseline` for every task
// and subset the two reports share.
inline ordered_json compare_reports(const EvalReport& current, const EvalReport& baseline) {
  ordered_json out;
  ordered_json tasks = ordered_json::object();
  for (const auto& [t, r] : current.per_task) {
    auto it = baseline.per_task.find(t);
    if (it == baseline.per_task.end() || !(it->second.accuracy > 0)) continue;
    tasks[t] = scoring::relative_improvement(r.accuracy, it->second.accuracy);
  }
  out["accuracy_pct_improvement"] = std::move(tasks);
  return out;
}

}  // namespace chembench::harness
