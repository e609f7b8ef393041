#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "chembench/instruct.hpp"

using namespace chembench;
using namespace chembench::instruct;

namespace {

const std::string kText = "Acetone (C3H6O) was mixed with benzene.";

std::string golden(std::string_view task) {
  return read_file(std::string(CHEMBENCH_TEST_DATA) + "/golden/" + std::string(task) + ".txt");
}

PubchemRecord pubchem(std::string cid, double weight = 46.07) {
  return {std::move(cid), "ethanol", "C2H6O", "[C][C][O]", weight};
}

std::set<std::string> record_ids(const std::vector<InstructionExample>& xs) {
  std::set<std::string> out;
  for (const auto& x : xs) out.insert(x.record_id);
  return out;
}

}  // namespace

TEST(RenderPrompt, MatchesGoldenFiles) {
  EXPECT_EQ(render_prompt(Task::kCEE, {{"ENTITY TYPE", "Trivial"}, {"INPUT TEXT", kText}}), golden("CEE"));
  EXPECT_EQ(render_prompt(Task::kCER, {{"INPUT TEXT", kText}}), golden("CER"));
  EXPECT_EQ(render_prompt(Task::kMFG, {{"IUPAC NAME", "ethanol"}}), golden("MFG"));
  EXPECT_EQ(render_prompt(Task::kISG, {{"IUPAC NAME", "ethanol"}}), golden("ISG"));
  EXPECT_EQ(render_prompt(Task::kMWE, {{"IUPAC NAME", "ethanol"}}), golden("MWE"));
}

TEST(RenderPrompt, MfgLiteral) {
  EXPECT_EQ(render_prompt(Task::kMFG, {{"IUPAC NAME", "ethanol"}}),
            "Below is an instruction that describes a task. Write a response that appropriately completes the "
            "request.\n### Instruction: Give the molecular formula for ethanol.\n### Response:");
}

TEST(RenderPrompt, PlaceholderErrors) {
  EXPECT_THROW(render_prompt(Task::kISG, {{"IUPAC NAME", ""}}), TemplateError);
  EXPECT_THROW(render_prompt(Task::kISG, {}), TemplateError);
  EXPECT_THROW(render_prompt(Task::kCER, {{"INPUT TEXT", "x"}, {"ENTITY TYPE", "Trivial"}}), TemplateError);
  EXPECT_THROW(render_prompt(Task::kCEE, {{"INPUT TEXT", "x"}}), TemplateError);
}

TEST(BuildChemdner, OneCeePerClassPlusOneCer) {
  std::vector<ChemdnerRecord> recs = {{"r1", kText, {{"acetone", EntityClass::kTrivial, {}}, {"C3H6O", EntityClass::kFormula, {}}}}};
  auto built = build_chemdner_examples(recs);
  ASSERT_EQ(built.examples.size(), 3u);
  EXPECT_EQ(built.examples[0].task, Task::kCEE);
  EXPECT_EQ(built.examples[0].entity_class, EntityClass::kTrivial);
  EXPECT_EQ(built.examples[0].response, "acetone");
  EXPECT_EQ(built.examples[1].entity_class, EntityClass::kFormula);
  EXPECT_EQ(built.examples[1].response, "C3H6O");
  EXPECT_EQ(built.examples[2].task, Task::kCER);
  EXPECT_EQ(built.examples[2].response, "Trivial, Formula");
  EXPECT_EQ(built.examples[0].prompt, golden("CEE"));
  EXPECT_EQ(built.examples[2].prompt, golden("CER"));
}

TEST(BuildChemdner, SameClassMentionsShareOneExample) {
  std::vector<ChemdnerRecord> recs = {
      {"r", kText, {{"benzene", EntityClass::kTrivial, std::pair<std::size_t, std::size_t>{31, 38}},
                    {"Acetone", EntityClass::kTrivial, std::pair<std::size_t, std::size_t>{0, 7}},
                    {"benzene", EntityClass::kTrivial, {}}}}};
  auto built = build_chemdner_examples(recs);
  ASSERT_EQ(built.examples.size(), 2u);
  // Mixed span availability keeps list order.
  EXPECT_EQ(built.examples[0].response, "benzene, Acetone");
  recs[0].mentions.pop_back();
  built = build_chemdner_examples(recs);
  EXPECT_EQ(built.examples[0].response, "Acetone, benzene");
}

TEST(BuildChemdner, SkipsRecordsWithoutMentions) {
  std::vector<ChemdnerRecord> recs = {{"empty", "No chemicals here.", {}}};
  auto built = build_chemdner_examples(recs);
  EXPECT_TRUE(built.examples.empty());
  EXPECT_EQ(built.skipped_records, 1u);
}

TEST(BuildChemdner, CountsPerRecord) {
  std::mt19937_64 rng(2);
  std::vector<ChemdnerRecord> recs;
  for (int i = 0; i < 100; ++i) {
    ChemdnerRecord r{"r" + std::to_string(i), "text", {}};
    for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k)
      r.mentions.push_back({"m" + std::to_string(rng() % 4), kEntityClasses[rng() % 7], {}});
    recs.push_back(r);
  }
  auto built = build_chemdner_examples(recs);
  for (const auto& r : recs) {
    std::set<EntityClass> present;
    for (const auto& m : r.mentions) present.insert(m.entity_class);
    std::size_t cee = 0, cer = 0;
    for (const auto& ex : built.examples)
      if (ex.record_id == r.id) (ex.task == Task::kCEE ? cee : cer)++;
    EXPECT_EQ(cee, present.size());
    EXPECT_EQ(cer, r.mentions.empty() ? 0u : 1u);
  }
}

TEST(BuildChemdner, RejectsBadSpans) {
  std::vector<ChemdnerRecord> recs = {{"r", kText, {{"acetone", EntityClass::kTrivial, std::pair<std::size_t, std::size_t>{0, 7}}}}};
  EXPECT_THROW(build_chemdner_examples(recs), ValidationError);  // text has "Acetone"
}

TEST(BuildPubchem, ThreeExamplesPerRecord) {
  std::vector<PubchemRecord> recs = {pubchem("702"), pubchem("887", 32.042)};
  auto xs = build_pubchem_examples(recs);
  ASSERT_EQ(xs.size(), 6u);
  EXPECT_EQ(xs[0].task, Task::kMFG);
  EXPECT_EQ(xs[1].task, Task::kISG);
  EXPECT_EQ(xs[2].task, Task::kMWE);
  EXPECT_EQ(xs[0].response, "C2H6O");
  EXPECT_EQ(xs[1].response, "[C][C][O]");
  EXPECT_EQ(xs[2].response, "46.07");
  EXPECT_EQ(xs[5].response, "32.042");
  for (int i = 0; i < 3; ++i) EXPECT_EQ(xs[i].record_id, "702");
  EXPECT_EQ(xs[0].prompt, golden("MFG"));
  EXPECT_EQ(xs[1].prompt, golden("ISG"));
  EXPECT_EQ(xs[2].prompt, golden("MWE"));
  recs[0].molecular_weight = 0;
  EXPECT_THROW(build_pubchem_examples(recs), ValidationError);
}

TEST(SplitDataset, PublishedPubchemCounts) {
  std::vector<PubchemRecord> recs;
  for (int i = 0; i < 75000; ++i) recs.push_back(pubchem("cid" + std::to_string(i)));
  auto xs = build_pubchem_examples(recs);
  auto split = split_dataset(xs, published_split("pubchem"), 42);
  EXPECT_EQ(split.train.size(), 150000u);
  EXPECT_EQ(split.val.size(), 60000u);
  EXPECT_EQ(split.test.size(), 15000u);
  EXPECT_EQ(split.unassigned_records, 0u);
}

TEST(SplitDataset, DisjointDeterministicAndRatios) {
  std::vector<PubchemRecord> recs;
  for (int i = 0; i < 101; ++i) recs.push_back(pubchem("c" + std::to_string(i)));
  auto xs = build_pubchem_examples(recs);
  auto all_train = split_dataset(xs, SplitSpec::ratios(1, 0, 0), 1);
  EXPECT_EQ(all_train.train.size(), xs.size());
  EXPECT_TRUE(all_train.val.empty() && all_train.test.empty());

  auto a = split_dataset(xs, SplitSpec::ratios(0.8, 0.1, 0.1), 9);
  auto b = split_dataset(xs, SplitSpec::ratios(0.8, 0.1, 0.1), 9);
  auto ids = [](const std::vector<InstructionExample>& v) {
    std::vector<std::string> out;
    for (const auto& x : v) out.push_back(x.id);
    return out;
  };
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.test), ids(b.test));
  EXPECT_EQ(a.records[0] + a.records[1] + a.records[2], 101u);
  const auto tr = record_ids(a.train), va = record_ids(a.val), te = record_ids(a.test);
  for (const auto& r : va) EXPECT_FALSE(tr.count(r));
  for (const auto& r : te) EXPECT_FALSE(tr.count(r) || va.count(r));

  auto c = split_dataset(xs, SplitSpec::ratios(0.8, 0.1, 0.1), 10);
  EXPECT_NE(ids(a.test), ids(c.test));
}

TEST(SplitDataset, TooManyRequested) {
  std::vector<PubchemRecord> recs = {pubchem("1"), pubchem("2")};
  auto xs = build_pubchem_examples(recs);
  try {
    split_dataset(xs, SplitSpec::counts(2, 1, 0), 0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("only 2"), std::string::npos);
  }
}

TEST(ParseList, Basics) {
  EXPECT_EQ(parse_list_response("acetone, benzene"), (std::vector<std::string>{"acetone", "benzene"}));
  EXPECT_TRUE(parse_list_response("").empty());
  EXPECT_TRUE(parse_list_response("  ,  ").empty());
  EXPECT_EQ(parse_list_response(" 1,2-dichloroethane ,  x "), (std::vector<std::string>{"1,2-dichloroethane", "x"}));
  auto classes = parse_class_list("Trivial, banana, FORMULA");
  EXPECT_EQ(classes.classes, (std::vector<EntityClass>{EntityClass::kTrivial, EntityClass::kFormula}));
  EXPECT_EQ(classes.rejects, (std::vector<std::string>{"banana"}));
}

TEST(ParseList, SerializeRoundTrip) {
  std::mt19937_64 rng(4);
  const std::string alphabet = "abcXYZ019-()[],. ";
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> items(rng() % 6);
    for (auto& s : items) {
      do {
        s.clear();
        for (std::size_t k = 0, n = 1 + rng() % 8; k < n; ++k) s += alphabet[rng() % alphabet.size()];
      } while (s.find(", ") != std::string::npos || std::string(trim(s)) != s || s.back() == ',');
    }
    ASSERT_EQ(parse_list_response(serialize_list(items)), items);
  }
}

TEST(Loaders, ChemdnerTsvAndPubchemJsonl) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "chembench_instruct_test";
  fs::create_directories(dir);
  const auto abs = (dir / "abs.tsv").string(), ann = (dir / "ann.tsv").string(), pc = (dir / "pc.jsonl").string();
  write_file(abs, "123\tAcetone study\tBenzene and C3H6O.\n");
  write_file(ann, "123\tT\t0\t7\tAcetone\tTRIVIAL\n123\tA\t12\t17\tC3H6O\tFORMULA\n123\tA\t0\t7\tBenzene\tNO CLASS\n");
  auto recs = load_chemdner_tsv(abs, ann);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].id, "123:T");
  EXPECT_EQ(recs[1].mentions.size(), 1u);
  write_file(pc, "{\"cid\": 702, \"iupac_name\": \"ethanol\", \"molecular_formula\": \"C2H6O\", "
                 "\"isomeric_selfies\": \"[C][C][O]\", \"molecular_weight\": \"46.07\"}\n");
  auto pcs = load_pubchem_jsonl(pc);
  ASSERT_EQ(pcs.size(), 1u);
  EXPECT_EQ(pcs[0].cid, "702");
  EXPECT_DOUBLE_EQ(pcs[0].molecular_weight, 46.07);
  fs::remove_all(dir);
}

TEST(Examples, JsonRoundTrip) {
  std::vector<ChemdnerRecord> recs = {{"r1", kText, {{"acetone", EntityClass::kTrivial, {}}}}};
  const auto ex = build_chemdner_examples(recs).examples[0];
  const auto back = InstructionExample::from_json(json::parse(ex.to_json().dump()));
  EXPECT_EQ(back.id, ex.id);
  EXPECT_EQ(back.prompt, ex.prompt);
  EXPECT_EQ(back.entity_class, ex.entity_class);
}
