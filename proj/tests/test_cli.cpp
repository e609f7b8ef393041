#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "chembench/cli.hpp"

using namespace chembench;

namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("chembench_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string sample(const std::string& name) {
    return (fs::path(CHEMBENCH_TEST_DATA) / ".." / "data" / "samples" / name).lexically_normal().string();
  }

  Result run(const std::string& args) const {
    const auto err = path("stderr.txt");
    const std::string cmd = std::string(CHEMBENCH_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " + err;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(err)};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, DedupOnDuplicateFreeInputIsIdentity) {
  write_file(path("a.jsonl"),
             "{\"id\":\"1\",\"title\":\"Alpha\",\"abstract\":\"x\"}\n{\"id\":\"2\",\"title\":\"Beta\",\"abstract\":\"y\"}\n");
  auto r = run("corpus dedup --in " + path("a.jsonl") + " --out " + path("b.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("a.jsonl")), read_file(path("b.jsonl")));
  auto rep = json::parse(read_file(path("b.jsonl.report.json")));
  EXPECT_EQ(rep["dropped"], 0);
  EXPECT_EQ(rep["config"]["command"], "corpus dedup");
}

TEST_F(Cli, DedupSampleCorpus) {
  auto r = run("corpus dedup --in " + sample("corpus.jsonl") + " --out " + path("b.jsonl") + " --report " + path("rep.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = json::parse(read_file(path("rep.json")));
  EXPECT_EQ(rep["kept"], 5);
  EXPECT_EQ(rep["dropped"], 2);
  EXPECT_EQ(rep["pairs"][0], json::array({"s2orc:1", "wos:3"}));
}

TEST_F(Cli, DuplicateIdIsValidationError) {
  write_file(path("a.jsonl"), "{\"id\":\"1\",\"title\":\"A\"}\n{\"id\":\"1\",\"title\":\"B\"}\n");
  auto r = run("corpus dedup --in " + path("a.jsonl") + " --out " + path("b.jsonl"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("1"), std::string::npos);
}

TEST_F(Cli, VocabBelow257Rejected) {
  auto r = run("tokenizer train --vocab-size 100 --input " + sample("corpus.jsonl") + " --out " + path("m.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("257"), std::string::npos);
}

TEST_F(Cli, UnknownFlagPrintsUsage) {
  auto r = run("corpus dedup --frobnicate 3");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run("").code, 1);
}

TEST_F(Cli, MissingInputFileIsValidationError) {
  EXPECT_EQ(run("corpus dedup --in " + path("nope.jsonl") + " --out " + path("b.jsonl")).code, 1);
}

TEST_F(Cli, UnwritableOutputIsRuntimeFailure) {
  auto r = run("corpus dedup --in " + sample("corpus.jsonl") + " --out " + path("missing/dir/b.jsonl"));
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(Cli, TokenizerTrainIsReproducibleAndRoundTrips) {
  const auto train = "tokenizer train --vocab-size 300 --input " + sample("corpus.jsonl") + " --out ";
  ASSERT_EQ(run(train + path("m1.json")).code, 0);
  const auto first = read_file(path("m1.json"));
  ASSERT_EQ(run(train + path("m1.json")).code, 0);
  EXPECT_EQ(read_file(path("m1.json")), first);
  auto model = json::parse(read_file(path("m1.json")));
  EXPECT_LE(model["vocab"].size(), 300u);
  EXPECT_EQ(model["config"]["params"]["vocab-size"], "300");

  write_file(path("in.txt"), "CH\xe2\x82\x83\xe2\x80\x93OH and graphene oxide");
  ASSERT_EQ(run("tokenizer encode --model " + path("m1.json") + " --input " + path("in.txt") + " --out " + path("ids.json")).code, 0);
  ASSERT_EQ(run("tokenizer decode --model " + path("m1.json") + " --input " + path("ids.json") + " --out " + path("out.txt")).code, 0);
  EXPECT_EQ(read_file(path("out.txt")), read_file(path("in.txt")));

  write_file(path("bad.json"), "[1, 99999]");
  auto r = run("tokenizer decode --model " + path("m1.json") + " --input " + path("bad.json") + " --out " + path("o.txt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("99999"), std::string::npos);
}

TEST_F(Cli, SegmentWritesFramedBatches) {
  auto r = run("corpus segment --in " + sample("corpus.jsonl") + " --max-seq-len 32 --out " + path("b.bin"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto batches = corpus::read_batches(path("b.bin"));
  const auto side = json::parse(read_file(path("b.bin.json")));
  EXPECT_EQ(side["num_batches"], batches.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    total += batches[i].length();
    if (i + 1 < batches.size()) EXPECT_EQ(batches[i].length(), 32u);
  }
  EXPECT_EQ(side["total_tokens"], total);
  EXPECT_EQ(run("corpus segment --in " + sample("corpus.jsonl") + " --max-seq-len 0 --out " + path("c.bin")).code, 1);
}

TEST_F(Cli, ConfigFilePrecedence) {
  write_file(path("c.conf"), "# test\nvocab-size = 280\nseed = 9\n");
  const auto base = "--config " + path("c.conf") + " tokenizer train --input " + sample("corpus.jsonl") + " --out ";
  ASSERT_EQ(run(base + path("m1.json")).code, 0);
  auto m1 = json::parse(read_file(path("m1.json")));
  EXPECT_EQ(m1["config"]["params"]["vocab-size"], "280");
  EXPECT_EQ(m1["config"]["seed"], 9);
  ASSERT_EQ(run(base + path("m2.json") + " --vocab-size 260").code, 0);
  auto m2 = json::parse(read_file(path("m2.json")));
  EXPECT_EQ(m2["config"]["params"]["vocab-size"], "260");
  EXPECT_LE(m2["vocab"].size(), 260u);

  write_file(path("bad.conf"), "colour = blue\n");
  auto r = run("--config " + path("bad.conf") + " tokenizer train --input " + sample("corpus.jsonl") + " --out " + path("m3.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
}

TEST_F(Cli, InstructBuildAndSplit) {
  ASSERT_EQ(run("instruct build --source pubchem --in " + sample("pubchem.jsonl") + " --out " + path("pc.jsonl")).code, 0);
  EXPECT_EQ(read_jsonl(path("pc.jsonl")).size(), 18u);
  ASSERT_EQ(run("instruct build --source chemdner --in " + sample("chemdner.jsonl") + " --out " + path("cd.jsonl")).code, 0);
  EXPECT_EQ(read_jsonl(path("cd.jsonl")).size(), 7u);

  const auto split = "--seed 4 instruct split --in " + path("pc.jsonl") + " --counts 3 2 1 --out-dir ";
  ASSERT_EQ(run(split + path("s1")).code, 0);
  std::map<std::string, std::string> first;
  for (auto f : {"train.jsonl", "val.jsonl", "test.jsonl", "split.json"}) first[f] = read_file(path("s1/") + f);
  ASSERT_EQ(run(split + path("s1")).code, 0);
  for (const auto& [f, content] : first) EXPECT_EQ(read_file(path("s1/") + f), content) << f;
  EXPECT_EQ(read_jsonl(path("s1/train.jsonl")).size(), 9u);
  EXPECT_EQ(read_jsonl(path("s1/test.jsonl")).size(), 3u);

  auto r = run("instruct split --in " + path("pc.jsonl") + " --counts 5 2 1 --out-dir " + path("s3"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("only"), std::string::npos);
}

TEST_F(Cli, BenchRunWithMockAndReport) {
  const auto mmlu = sample("mmlu/test.jsonl");
  const auto dev = sample("mmlu/dev.jsonl");
  ASSERT_EQ(run("bench run --data " + mmlu + " --dev " + dev + " --shots 3 --mock echo --out " + path("echo.json")).code, 0);
  auto echo = json::parse(read_file(path("echo.json")));
  EXPECT_EQ(echo["per_task"]["college chemistry"]["accuracy"], 1.0);
  EXPECT_EQ(echo["per_subset"]["accuracy"]["Chem"], 1.0);

  ASSERT_EQ(run("bench run --data " + mmlu + " --mock empty --out " + path("empty.json")).code, 0);
  auto empty = json::parse(read_file(path("empty.json")));
  EXPECT_EQ(empty["per_task"]["college chemistry"]["abstains"], 2);

  ASSERT_EQ(run("bench run --data " + mmlu + " --mock echo --mode logprob --out " + path("lp.json")).code, 0);
  EXPECT_EQ(json::parse(read_file(path("lp.json")))["per_task"]["high school chemistry"]["accuracy"], 1.0);

  EXPECT_EQ(run("bench run --data " + mmlu + " --mock echo --shots 2 --out " + path("x.json")).code, 1);

  ASSERT_EQ(run("bench report --runs " + path("lp.json") + " " + path("echo.json") + " --out " + path("rep.json")).code, 0);
  auto rep = json::parse(read_file(path("rep.json")));
  EXPECT_EQ(rep["runs"].size(), 2u);
  EXPECT_EQ(rep["runs"][1]["subset_accuracy"]["Chem"], 1.0);
  EXPECT_DOUBLE_EQ(rep["relative_to_first"][0]["accuracy_pct_improvement"]["college chemistry"].get<double>(), 0.0);
}

TEST_F(Cli, BenchRunOverHttp) {
  harness::MockEndpoint mock(harness::MockEndpoint::Mode::kRandom, 1);
  http::MockServer server(mock);
  const auto url = "http://127.0.0.1:" + std::to_string(server.port()) + "/v1/generate";
  auto r = run("bench run --data " + sample("mmlu/test.jsonl") + " --endpoint " + url + " --out " + path("run.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = json::parse(read_file(path("run.json")));
  EXPECT_EQ(rep["failures"], 0);
  EXPECT_EQ(mock.calls(), 4u);
  EXPECT_EQ(read_jsonl(path("run.json.raw.jsonl")).size(), 4u);
}

TEST_F(Cli, BenchScoreInstructionTasks) {
  ASSERT_EQ(run("instruct build --source pubchem --in " + sample("pubchem.jsonl") + " --out " + path("pc.jsonl")).code, 0);
  ASSERT_EQ(run("bench run --task MWE --data " + path("pc.jsonl") + " --mock echo --out " + path("mwe.json")).code, 0);
  EXPECT_EQ(json::parse(read_file(path("mwe.json")))["mape"], 0.0);
  ASSERT_EQ(run("bench score --pred " + path("mwe.json.raw.jsonl") + " --gold " + path("pc.jsonl") + " --task MWE --out " +
                path("s.json")).code, 0);
  EXPECT_EQ(json::parse(read_file(path("s.json")))["mape"], 0.0);

  write_file(path("bad.jsonl"), "{\"id\":\"999/MWE\",\"text\":\"12\"}\n");
  auto r = run("bench score --pred " + path("bad.jsonl") + " --gold " + path("pc.jsonl") + " --task MWE --out " + path("s2.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("999/MWE"), std::string::npos);

  ASSERT_EQ(run("instruct build --source chemdner --in " + sample("chemdner.jsonl") + " --out " + path("cd.jsonl")).code, 0);
  ASSERT_EQ(run("bench run --task CER --data " + path("cd.jsonl") + " --mock echo --out " + path("cer.json")).code, 0);
  EXPECT_EQ(json::parse(read_file(path("cer.json")))["constrained"]["f1"], 1.0);
  ASSERT_EQ(run("bench score --pred " + path("cer.json.raw.jsonl") + " --gold " + path("cd.jsonl") +
                " --task CER --schema constrained --out " + path("s3.json")).code, 0);
  auto s3 = json::parse(read_file(path("s3.json")));
  EXPECT_EQ(s3["constrained"]["f1"], 1.0);
  EXPECT_FALSE(s3.contains("unconstrained"));
}

TEST(CliConfig, ParseFlatFile) {
  const auto p = (fs::temp_directory_path() / "chembench_cfg_parse.conf").string();
  write_file(p, "# comment\n\n seed = 5 \n--threads=2\nname = \"a b\"\n");
  auto kv = cli::parse_config_file(p);
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"seed", "5"}));
  EXPECT_EQ(kv[1].first, "threads");
  EXPECT_EQ(kv[2].second, "a b");
  write_file(p, "novalue\n");
  EXPECT_THROW(cli::parse_config_file(p), ConfigError);
}
