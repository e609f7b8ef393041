#pragma once

// Command-line front end. dispatch() parses argv, runs one pipeline, and
// maps errors to exit codes: 0 ok, 1 invalid input or usage, 2 runtime
// failure. Logs go to stderr; data goes to files only.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "chembench/corpus.hpp"
#include "chembench/error.hpp"
#include "chembench/harness.hpp"
#include "chembench/http.hpp"
#include "chembench/instruct.hpp"
#include "chembench/io.hpp"
#include "chembench/parallel.hpp"
#include "chembench/scoring.hpp"
#include "chembench/tokenizer.hpp"

namespace chembench::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Flat `key = value` lines; `#` starts a comment. Keys are long option
// names without the leading dashes.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  auto strip = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = strip(line.substr(0, eq));
    auto value = strip(line.substr(eq + 1));
    if (key.starts_with("--")) key = key.substr(2);
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace detail {

struct Globals {
  uint64_t seed = 0;
  unsigned threads = 0;
  std::string log_level = "info";
  std::string config;
};

inline void setup_logging(const std::string& level) {
  auto logger = std::make_shared<spdlog::logger>("chembench", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  logger->set_pattern("[%l] %v");
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError("unknown log level: " + level);
  logger->set_level(lvl);
  spdlog::set_default_logger(std::move(logger));
}

inline std::string option_key(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return names.empty() ? opt->get_name() : names.front();
}

// Config values fill options that were not given on the command line.
inline void apply_config(CLI::App& root, CLI::App& leaf, const std::string& path) {
  for (const auto& [key, value] : parse_config_file(path)) {
    CLI::Option* opt = leaf.get_option_no_throw("--" + key);
    if (!opt) opt = root.get_option_no_throw("--" + key);
    if (!opt || key == "config" || key == "help")
      throw ConfigError("unknown config key `" + key + "` for `" + leaf.get_name() + "`");
    if (opt->count() > 0) continue;
    if (opt->get_expected_max() > 1) {
      std::istringstream ss(value);
      std::string tok;
      while (ss >> tok) opt->add_result(tok);
    } else {
      opt->add_result(value);
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key `" + key + "`: " + e.what());
    }
  }
}

inline std::string joined(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

// Every option of the leaf command and the seed, as given or defaulted.
inline RunConfig run_config(const CLI::App& leaf, const std::string& command, uint64_t seed) {
  RunConfig rc;
  rc.command = command;
  rc.seed = seed;
  for (const CLI::Option* opt : leaf.get_options()) {
    const auto key = option_key(opt);
    if (key == "help" || key.empty()) continue;
    if (opt->count() > 0)
      rc.params[key] = joined(opt->results());
    else if (!opt->get_default_str().empty())
      rc.params[key] = opt->get_default_str();
  }
  return rc;
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
}

inline void write_json(const std::string& path, const ordered_json& j) { write_file(path, j.dump(2) + "\n"); }

inline std::string sidecar_path(const std::string& out) { return out + ".run.json"; }

inline std::vector<std::string> corpus_texts(const std::string& path) {
  std::vector<std::string> texts;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    const auto j = parse_json_line(line, path, lineno);
    if (j.is_object() && j.contains("text") && j["text"].is_string())
      texts.push_back(j["text"].get<std::string>());
    else
      texts.push_back(corpus::document_text(corpus::document_from_json(j)));
  });
  return texts;
}

inline std::vector<tokenizer::TokenId> read_ids(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
  const json& arr = j.is_object() ? j.value("ids", json()) : j;
  if (!arr.is_array()) throw ValidationError(path + ": expected an array of token ids or {\"ids\": [...]}");
  std::vector<tokenizer::TokenId> ids;
  for (const auto& v : arr) {
    if (!v.is_number_integer() || v.get<int64_t>() < 0 || v.get<int64_t>() > UINT32_MAX)
      throw ValidationError(path + ": token ids must be non-negative integers");
    ids.push_back(v.get<tokenizer::TokenId>());
  }
  return ids;
}

// Predictions: {"id"|"example_id": ..., "text"|"prediction": ...} per line.
inline std::map<std::string, std::string> load_predictions(const std::string& path) {
  std::map<std::string, std::string> out;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    const auto j = parse_json_line(line, path, lineno);
    const std::string where = path + ":" + std::to_string(lineno);
    if (!j.is_object()) throw ValidationError(where + ": prediction must be a JSON object");
    const json* id = j.contains("example_id") ? &j["example_id"] : j.contains("id") ? &j["id"] : nullptr;
    const json* text = j.contains("text") ? &j["text"] : j.contains("prediction") ? &j["prediction"] : nullptr;
    if (!id || !text || !text->is_string()) throw ValidationError(where + ": prediction needs `id` and `text`");
    const auto key = instruct::json_id(*id);
    if (!out.emplace(key, text->get<std::string>()).second) throw ValidationError(where + ": duplicate prediction id " + key);
  });
  return out;
}

}  // namespace detail

struct Context {
  detail::Globals globals;
  CLI::App* leaf = nullptr;
  std::string command;

  RunConfig run_config() const { return detail::run_config(*leaf, command, globals.seed); }
};

// ---------------------------------------------------------------------------
// corpus

struct CorpusDedupArgs {
  std::string in, out, report;
};

inline void corpus_dedup(const Context& ctx, const CorpusDedupArgs& a) {
  detail::require(a.in, "--in");
  detail::require(a.out, "--out");
  spdlog::info("deduplicating {}", a.in);
  const auto rep = corpus::deduplicate_jsonl(a.in, a.out, ctx.globals.threads);
  auto j = rep.to_json();
  j["config"] = ctx.run_config().to_json();
  detail::write_json(a.report.empty() ? a.out + ".report.json" : a.report, j);
  detail::write_json(detail::sidecar_path(a.out), ctx.run_config().to_json());
  spdlog::info("kept {}, dropped {}", rep.kept, rep.dropped);
}

struct CorpusSegmentArgs {
  std::string in, out, model;
  std::size_t max_seq_len = corpus::kDefaultMaxSeqLen;
};

inline void corpus_segment(const Context& ctx, const CorpusSegmentArgs& a) {
  detail::require(a.in, "--in");
  detail::require(a.out, "--out");
  const auto model = a.model.empty() ? tokenizer::BpeModel::byte_level()
                                     : tokenizer::BpeModel::from_json(json::parse(read_file(a.model)));
  const auto texts = detail::corpus_texts(a.in);
  std::vector<std::vector<tokenizer::TokenId>> encoded(texts.size());
  parallel_for(texts.size(), ctx.globals.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) encoded[i] = model.encode(texts[i]);
  });
  corpus::BatchWriter writer(a.out);
  corpus::Segmenter seg(a.max_seq_len, [&](corpus::TokenBatch&& batch) { writer.write(batch); });
  for (const auto& ids : encoded) seg.push(ids);
  seg.finish();
  writer.close();
  auto side = corpus::batch_sidecar(a.max_seq_len, writer.total_tokens(), writer.num_batches());
  side["config"] = ctx.run_config().to_json();
  detail::write_json(a.out + ".json", side);
  spdlog::info("{} tokens in {} batches", writer.total_tokens(), writer.num_batches());
}

// ---------------------------------------------------------------------------
// tokenizer

struct TokenizerArgs {
  std::string input, out, model, text;
  std::size_t vocab_size = tokenizer::kDefaultVocabSize;
};

inline void tokenizer_train(const Context& ctx, const TokenizerArgs& a) {
  detail::require(a.input, "--input");
  detail::require(a.out, "--out");
  if (a.vocab_size <= tokenizer::kByteAlphabet)
    throw ConfigError("vocab size must be >= 257, got " + std::to_string(a.vocab_size));
  const auto texts = detail::corpus_texts(a.input);
  spdlog::info("training on {} documents, vocab size {}", texts.size(), a.vocab_size);
  auto result = tokenizer::train_bpe(texts, a.vocab_size, ctx.globals.threads);
  auto j = result.model.to_json();
  j["config"] = ctx.run_config().to_json();
  write_file(a.out, j.dump() + "\n");
  spdlog::info("learned {} merges", result.model.merges().size());
}

inline void tokenizer_encode(const Context& ctx, const TokenizerArgs& a) {
  detail::require(a.model, "--model");
  detail::require(a.out, "--out");
  if (a.input.empty() == a.text.empty()) throw ValidationError("give exactly one of --input or --text");
  const auto model = tokenizer::BpeModel::from_json(json::parse(read_file(a.model)));
  const auto text = a.text.empty() ? read_file(a.input) : a.text;
  ordered_json j;
  j["ids"] = model.encode(text);
  j["config"] = ctx.run_config().to_json();
  write_file(a.out, j.dump() + "\n");
}

inline void tokenizer_decode(const Context& ctx, const TokenizerArgs& a) {
  detail::require(a.model, "--model");
  detail::require(a.input, "--input");
  detail::require(a.out, "--out");
  const auto model = tokenizer::BpeModel::from_json(json::parse(read_file(a.model)));
  write_file(a.out, model.decode(detail::read_ids(a.input)));
  detail::write_json(detail::sidecar_path(a.out), ctx.run_config().to_json());
}

// ---------------------------------------------------------------------------
// instruct

struct InstructBuildArgs {
  std::string source, in, abstracts, annotations, out;
};

inline void instruct_build(const Context& ctx, const InstructBuildArgs& a) {
  detail::require(a.source, "--source");
  detail::require(a.out, "--out");
  std::vector<instruct::InstructionExample> examples;
  if (a.source == "pubchem") {
    detail::require(a.in, "--in");
    const auto recs = instruct::load_pubchem_jsonl(a.in);
    examples = instruct::build_pubchem_examples(recs);
    spdlog::info("{} PubChem records", recs.size());
  } else if (a.source == "chemdner") {
    std::vector<instruct::ChemdnerRecord> recs;
    if (!a.in.empty())
      recs = instruct::load_chemdner_jsonl(a.in);
    else if (!a.abstracts.empty() && !a.annotations.empty())
      recs = instruct::load_chemdner_tsv(a.abstracts, a.annotations);
    else
      throw ValidationError("chemdner needs --in (JSONL) or --abstracts and --annotations (TSV)");
    auto built = instruct::build_chemdner_examples(recs);
    if (built.skipped_records) spdlog::warn("{} records without mentions skipped", built.skipped_records);
    examples = std::move(built.examples);
  } else {
    throw ConfigError("unknown --source: " + a.source + " (pubchem or chemdner)");
  }
  std::vector<ordered_json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) rows.push_back(e.to_json());
  write_jsonl(a.out, rows);
  detail::write_json(detail::sidecar_path(a.out), ctx.run_config().to_json());
  spdlog::info("wrote {} examples", examples.size());
}

struct InstructSplitArgs {
  std::string in, out_dir, preset;
  double scale = 1.0;
  std::vector<double> counts, ratios;
};

inline void instruct_split(const Context& ctx, const InstructSplitArgs& a) {
  detail::require(a.in, "--in");
  detail::require(a.out_dir, "--out-dir");
  const int given = !a.preset.empty() + !a.counts.empty() + !a.ratios.empty();
  if (given != 1) throw ValidationError("give exactly one of --preset, --counts or --ratios");
  instruct::SplitSpec spec;
  if (!a.preset.empty()) {
    spec = instruct::published_split(a.preset, a.scale);
  } else {
    const auto& v = a.counts.empty() ? a.ratios : a.counts;
    if (v.size() != 3) throw ValidationError("split needs three values: train val test");
    for (double x : v)
      if (x < 0) throw ValidationError("split values must be non-negative");
    if (!a.counts.empty()) {
      for (double x : v)
        if (x != std::floor(x)) throw ValidationError("--counts must be whole numbers");
      spec = instruct::SplitSpec::counts(static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]),
                                         static_cast<std::size_t>(v[2]));
    } else {
      spec = instruct::SplitSpec::ratios(v[0], v[1], v[2]);
    }
  }
  const auto examples = instruct::load_examples_jsonl(a.in);
  const auto split = instruct::split_dataset(examples, spec, ctx.globals.seed);
  fs::create_directories(a.out_dir);
  auto dump = [&](const std::vector<instruct::InstructionExample>& xs, const char* name) {
    std::vector<ordered_json> rows;
    for (const auto& e : xs) rows.push_back(e.to_json());
    write_jsonl((fs::path(a.out_dir) / name).string(), rows);
  };
  dump(split.train, "train.jsonl");
  dump(split.val, "val.jsonl");
  dump(split.test, "test.jsonl");
  ordered_json summary;
  summary["records"] = {{"train", split.records[0]}, {"val", split.records[1]}, {"test", split.records[2]}};
  summary["examples"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  summary["unassigned_records"] = split.unassigned_records;
  summary["config"] = ctx.run_config().to_json();
  detail::write_json((fs::path(a.out_dir) / "split.json").string(), summary);
  if (split.unassigned_records) spdlog::info("{} records left unassigned", split.unassigned_records);
}

// ---------------------------------------------------------------------------
// bench

struct BenchRunArgs {
  std::string task = "mmlu";
  std::string data, dev, endpoint, mock, mock_answers, out, raw, model_id = "unknown";
  std::string mode = "text";
  int shots = 0;
  unsigned concurrency = 4;
  int retries = 2;
  int timeout = 60;
  std::optional<int> max_new_tokens;
  double temperature = 0.0;
  uint64_t mock_seed = 0;
  bool timing = false;
};

inline void bench_run(const Context& ctx, const BenchRunArgs& a) {
  detail::require(a.data, "--data");
  detail::require(a.out, "--out");
  if (a.endpoint.empty() == a.mock.empty()) throw ValidationError("give exactly one of --endpoint or --mock");
  const bool mmlu = a.task == "mmlu";
  std::optional<instruct::Task> itask;
  if (!mmlu) itask = instruct::parse_task(a.task);

  std::unique_ptr<harness::GenerationClient> client;
  harness::MockEndpoint* mock = nullptr;
  if (!a.endpoint.empty()) {
    client = std::make_unique<http::HttpGenerationClient>(http::parse_endpoint(a.endpoint), a.timeout);
  } else {
    auto m = std::make_unique<harness::MockEndpoint>(harness::MockEndpoint::parse_mode(a.mock), a.mock_seed);
    if (!a.mock_answers.empty()) m->load_answers(a.mock_answers);
    mock = m.get();
    client = std::move(m);
  }
  const std::string raw = a.raw.empty() ? a.out + ".raw.jsonl" : a.raw;
  ordered_json report;

  if (mmlu) {
    const auto items = harness::load_mmlu(a.data);
    const auto dev = a.dev.empty() ? std::vector<harness::McqItem>{} : harness::load_mmlu(a.dev);
    harness::EvalConfig cfg;
    cfg.model_id = a.model_id;
    cfg.shots = a.shots;
    cfg.seed = ctx.globals.seed;
    cfg.concurrency = a.concurrency;
    cfg.retries = a.retries;
    cfg.mode = harness::parse_mcq_mode(a.mode);
    cfg.max_new_tokens = a.max_new_tokens.value_or(16);
    cfg.temperature = a.temperature;
    cfg.raw_path = raw;
    cfg.record_timing = a.timing;
    cfg.validate();
    if (mock && a.mock == "echo" && a.mock_answers.empty())
      for (auto& [prompt, ans] : harness::mcq_answer_key(cfg, items, dev)) mock->set_answer(prompt, ans);
    spdlog::info("running {} items", items.size());
    const auto rep = harness::run_eval(cfg, items, dev, *client);
    report = rep.to_json();
    if (rep.failures) spdlog::warn("{} items failed after retries", rep.failures);
    if (rep.invalid) spdlog::error("more than 10% of items failed; run marked invalid");
  } else {
    const auto all = instruct::load_examples_jsonl(a.data);
    std::vector<instruct::InstructionExample> examples;
    for (const auto& e : all)
      if (e.task == *itask) examples.push_back(e);
    if (examples.empty()) throw ValidationError("no " + a.task + " examples in " + a.data);
    if (mock && a.mock == "echo" && a.mock_answers.empty())
      for (const auto& e : examples) mock->set_answer(e.prompt, {e.response, std::nullopt});
    harness::InstructionEvalConfig cfg;
    cfg.model_id = a.model_id;
    cfg.concurrency = a.concurrency;
    cfg.retries = a.retries;
    cfg.max_new_tokens = a.max_new_tokens;
    cfg.temperature = a.temperature;
    cfg.raw_path = raw;
    const auto rep = harness::instruction_eval(examples, *client, *itask, cfg);
    report = rep.to_json();
    if (rep.failed) spdlog::warn("{} examples failed after retries", rep.failed);
  }
  report["run_config"] = ctx.run_config().to_json();
  detail::write_json(a.out, report);
}

struct BenchScoreArgs {
  std::string pred, gold, task, schema = "both", out;
};

inline void bench_score(const Context& ctx, const BenchScoreArgs& a) {
  detail::require(a.pred, "--pred");
  detail::require(a.gold, "--gold");
  detail::require(a.task, "--task");
  detail::require(a.out, "--out");
  const auto task = instruct::parse_task(a.task);
  std::optional<scoring::Schema> schema;
  if (a.schema != "both") schema = scoring::parse_schema(a.schema);
  std::vector<instruct::InstructionExample> gold;
  for (auto& e : instruct::load_examples_jsonl(a.gold))
    if (e.task == task) gold.push_back(std::move(e));
  const auto preds = detail::load_predictions(a.pred);
  std::set<std::string> gold_ids;
  for (const auto& g : gold) gold_ids.insert(g.id);
  for (const auto& [id, _] : preds)
    if (!gold_ids.count(id)) throw ValidationError("prediction id " + id + " has no " + a.task + " gold example");
  for (const auto& id : gold_ids)
    if (!preds.count(id)) throw ValidationError("gold example " + id + " has no prediction");
  auto rep = harness::score_instruction_predictions(gold, preds, task).to_json();
  if (schema == scoring::Schema::kConstrained) rep.erase("unconstrained");
  if (schema == scoring::Schema::kUnconstrained) {
    rep.erase("constrained");
    rep.erase("per_class");
  }
  rep["config"] = ctx.run_config().to_json();
  detail::write_json(a.out, rep);
}

struct BenchReportArgs {
  std::vector<std::string> runs;
  std::string subsets = "default";
  std::string out;
};

inline std::vector<harness::SubsetDef> load_subsets(const std::string& spec) {
  if (spec == "default") return harness::default_subsets();
  json j;
  try {
    j = json::parse(read_file(spec));
  } catch (const json::parse_error& e) {
    throw ValidationError(spec + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(spec + ": subsets file must map names to task lists");
  std::vector<harness::SubsetDef> out;
  for (auto& [name, tasks] : j.items()) out.push_back({name, tasks.get<std::vector<std::string>>()});
  return out;
}

// Per-run task and subset tables recomputed from persisted per-task values,
// plus relative improvement of every later run over the first.
inline void bench_report(const Context& ctx, const BenchReportArgs& a) {
  if (a.runs.empty()) throw ValidationError("missing required option --runs");
  detail::require(a.out, "--out");
  const auto subsets = load_subsets(a.subsets);
  std::vector<harness::EvalReport> reps;
  ordered_json runs = ordered_json::array();
  for (const auto& path : a.runs) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ": malformed JSON: " + e.what());
    }
    if (j.value("kind", "") != "mmlu") throw ValidationError(path + " is not a multiple-choice run report");
    auto rep = harness::EvalReport::from_json(j);
    ordered_json r;
    r["path"] = path;
    r["model_id"] = rep.config.value("model_id", "unknown");
    r["shots"] = rep.config.value("shots", 0);
    r["invalid"] = rep.invalid;
    r["accuracy"] = rep.accuracy_by_task();
    r["macro_f1"] = rep.macro_f1_by_task();
    std::vector<std::string> unresolved;
    r["subset_accuracy"] = harness::resolvable_subsets(rep.accuracy_by_task(), subsets, &unresolved);
    r["subset_macro_f1"] = harness::resolvable_subsets(rep.macro_f1_by_task(), subsets);
    r["unresolved_subsets"] = unresolved;
    runs.push_back(std::move(r));
    reps.push_back(std::move(rep));
  }
  ordered_json out;
  out["runs"] = std::move(runs);
  ordered_json cmp = ordered_json::array();
  for (std::size_t i = 1; i < reps.size(); ++i) {
    auto c = harness::compare_reports(reps[i], reps[0]);
    c["run"] = a.runs[i];
    c["baseline"] = a.runs[0];
    cmp.push_back(std::move(c));
  }
  out["relative_to_first"] = std::move(cmp);
  out["config"] = ctx.run_config().to_json();
  detail::write_json(a.out, out);
}

// ---------------------------------------------------------------------------
// dispatch

inline int dispatch(const std::vector<std::string>& argv_in) {
  CLI::App app{"chembench: corpus preparation, tokenizer training, instruction datasets and evaluation", "chembench"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Context ctx;
  auto& g = ctx.globals;
  app.add_option("--seed", g.seed, "global RNG seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")->capture_default_str();
  app.add_option("--config", g.config, "key = value file; command-line flags take precedence");

  CorpusDedupArgs dedup;
  CorpusSegmentArgs segment;
  TokenizerArgs tok;
  InstructBuildArgs ibuild;
  InstructSplitArgs isplit;
  BenchRunArgs brun;
  BenchScoreArgs bscore;
  BenchReportArgs breport;
  std::map<CLI::App*, std::function<void()>> actions;

  auto* corpus_cmd = app.add_subcommand("corpus", "deduplicate and segment a document corpus")->require_subcommand(1);
  {
    auto* c = corpus_cmd->add_subcommand("dedup", "drop documents whose normalized title was seen before");
    c->add_option("--in", dedup.in, "input JSONL");
    c->add_option("--out", dedup.out, "output JSONL");
    c->add_option("--report", dedup.report, "report JSON (default <out>.report.json)");
    actions[c] = [&] { corpus_dedup(ctx, dedup); };
  }
  {
    auto* c = corpus_cmd->add_subcommand("segment", "tokenize and pack into fixed-length batches");
    c->add_option("--in", segment.in, "input JSONL");
    c->add_option("--out", segment.out, "binary batch file");
    c->add_option("--model", segment.model, "tokenizer model (default: raw bytes)");
    c->add_option("--max-seq-len", segment.max_seq_len, "batch length")->capture_default_str();
    actions[c] = [&] { corpus_segment(ctx, segment); };
  }

  auto* tok_cmd = app.add_subcommand("tokenizer", "train and apply a byte-level BPE tokenizer")->require_subcommand(1);
  {
    auto* c = tok_cmd->add_subcommand("train", "learn merges from a corpus");
    c->add_option("--input", tok.input, "corpus JSONL");
    c->add_option("--out", tok.out, "model JSON");
    c->add_option("--vocab-size", tok.vocab_size, "target vocabulary size")->capture_default_str();
    actions[c] = [&] { tokenizer_train(ctx, tok); };
  }
  {
    auto* c = tok_cmd->add_subcommand("encode", "text to token ids");
    c->add_option("--model", tok.model, "model JSON");
    c->add_option("--input", tok.input, "UTF-8 text file");
    c->add_option("--text", tok.text, "inline text");
    c->add_option("--out", tok.out, "output JSON");
    actions[c] = [&] { tokenizer_encode(ctx, tok); };
  }
  {
    auto* c = tok_cmd->add_subcommand("decode", "token ids to text");
    c->add_option("--model", tok.model, "model JSON");
    c->add_option("--input", tok.input, "JSON array of ids or {\"ids\": [...]}");
    c->add_option("--out", tok.out, "output text file");
    actions[c] = [&] { tokenizer_decode(ctx, tok); };
  }

  auto* inst_cmd = app.add_subcommand("instruct", "build and split instruction datasets")->require_subcommand(1);
  {
    auto* c = inst_cmd->add_subcommand("build", "render prompts and responses from source records");
    c->add_option("--source", ibuild.source, "pubchem or chemdner");
    c->add_option("--in", ibuild.in, "records JSONL");
    c->add_option("--abstracts", ibuild.abstracts, "CHEMDNER abstracts TSV");
    c->add_option("--annotations", ibuild.annotations, "CHEMDNER annotations TSV");
    c->add_option("--out", ibuild.out, "examples JSONL");
    actions[c] = [&] { instruct_build(ctx, ibuild); };
  }
  {
    auto* c = inst_cmd->add_subcommand("split", "record-disjoint train/val/test split");
    c->add_option("--in", isplit.in, "examples JSONL");
    c->add_option("--out-dir", isplit.out_dir, "directory for train/val/test JSONL");
    c->add_option("--preset", isplit.preset, "pubchem or chemdner published sizes");
    c->add_option("--scale", isplit.scale, "multiplier for --preset sizes")->capture_default_str();
    c->add_option("--counts", isplit.counts, "train val test record counts")->expected(3);
    c->add_option("--ratios", isplit.ratios, "train val test record fractions")->expected(3);
    actions[c] = [&] { instruct_split(ctx, isplit); };
  }

  auto* bench_cmd = app.add_subcommand("bench", "run, score and report evaluations")->require_subcommand(1);
  {
    auto* c = bench_cmd->add_subcommand("run", "query a generation endpoint and score the answers");
    c->add_option("--task", brun.task, "mmlu, CEE, CER, MFG, ISG or MWE")->capture_default_str();
    c->add_option("--data", brun.data, "MMLU JSONL/CSV/directory, or instruction examples JSONL");
    c->add_option("--dev", brun.dev, "MMLU dev items for few-shot examples");
    c->add_option("--shots", brun.shots, "0 or 3")->capture_default_str();
    c->add_option("--endpoint", brun.endpoint, "http://host:port[/v1/generate]");
    c->add_option("--mock", brun.mock, "in-process mock instead of an endpoint: echo, empty or random");
    c->add_option("--mock-answers", brun.mock_answers, "JSONL of {prompt, text} for the echo mock");
    c->add_option("--mock-seed", brun.mock_seed, "seed for the random mock")->capture_default_str();
    c->add_option("--mode", brun.mode, "logprob or text answer extraction")->capture_default_str();
    c->add_option("--concurrency", brun.concurrency, "max requests in flight")->capture_default_str();
    c->add_option("--retries", brun.retries, "extra attempts per request")->capture_default_str();
    c->add_option("--timeout", brun.timeout, "per-request timeout in seconds")->capture_default_str();
    c->add_option("--max-new-tokens", brun.max_new_tokens, "default 16 for mmlu, 64 for list tasks, 256 for ISG");
    c->add_option("--temperature", brun.temperature, "sampling temperature")->capture_default_str();
    c->add_option("--model-id", brun.model_id, "label recorded in the report")->capture_default_str();
    c->add_option("--raw", brun.raw, "raw generation log (default <out>.raw.jsonl)");
    c->add_flag("--timing", brun.timing, "record wall time in the report");
    c->add_option("--out", brun.out, "report JSON");
    actions[c] = [&] { bench_run(ctx, brun); };
  }
  {
    auto* c = bench_cmd->add_subcommand("score", "score saved predictions against gold examples");
    c->add_option("--pred", bscore.pred, "predictions JSONL");
    c->add_option("--gold", bscore.gold, "gold examples JSONL");
    c->add_option("--task", bscore.task, "CEE, CER, MFG, ISG or MWE");
    c->add_option("--schema", bscore.schema, "constrained, unconstrained or both")->capture_default_str();
    c->add_option("--out", bscore.out, "score JSON");
    actions[c] = [&] { bench_score(ctx, bscore); };
  }
  {
    auto* c = bench_cmd->add_subcommand("report", "compare run reports by task and subset");
    c->add_option("--runs", breport.runs, "run report JSON files; the first is the baseline");
    c->add_option("--subsets", breport.subsets, "default or a JSON file {name: [tasks]}")->capture_default_str();
    c->add_option("--out", breport.out, "report JSON");
    actions[c] = [&] { bench_report(ctx, breport); };
  }
  for (auto* group : {corpus_cmd, tok_cmd, inst_cmd, bench_cmd}) {
    group->fallthrough();
    for (auto* sub : group->get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();
  }

  std::vector<std::string> args(argv_in.begin() + (argv_in.empty() ? 0 : 1), argv_in.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return kExitValidation;
  }

  try {
    CLI::App* group = app.get_subcommands().front();
    ctx.leaf = group->get_subcommands().front();
    ctx.command = group->get_name() + " " + ctx.leaf->get_name();
    if (!g.config.empty()) detail::apply_config(app, *ctx.leaf, g.config);
    detail::setup_logging(g.log_level);
    actions.at(ctx.leaf)();
    return kExitOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

inline int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace chembench::cli
