#include <random>

#include <gtest/gtest.h>

#include "chembench/scoring.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace chembench;
using namespace chembench::scoring;

namespace {

TypedEntity te(std::string s, EntityClass c = EntityClass::kTrivial) { return {std::move(s), c}; }

MatchCounts counts(uint64_t cor, uint64_t par, uint64_t inc, uint64_t mis) { return {cor, par, inc, mis}; }

}  // namespace

TEST(MatchEntities, ExactAndPartial) {
  std::vector<TypedEntity> gold = {te("acetone"), te("benzene")};
  std::vector<TypedEntity> pred = {te("acetone"), te("benzen")};
  const auto oracle = oracle::optimal_match(gold, pred, Schema::kConstrained);
  EXPECT_EQ(oracle, counts(1, 1, 0, 0));
  EXPECT_EQ(match_entities(gold, pred, Schema::kConstrained), counts(1, 1, 0, 0));
}

TEST(MatchEntities, Identity) {
  std::vector<TypedEntity> gold = {te("a"), te("b", EntityClass::kFormula), te("a")};
  for (auto schema : {Schema::kConstrained, Schema::kUnconstrained})
    EXPECT_EQ(match_entities(gold, gold, schema), counts(3, 0, 0, 0));
}

TEST(MatchEntities, SchemaControlsClassCheck) {
  std::vector<TypedEntity> gold = {te("acetone", EntityClass::kTrivial)};
  std::vector<TypedEntity> pred = {te("acetone", EntityClass::kFormula)};
  EXPECT_EQ(match_entities(gold, pred, Schema::kConstrained), counts(0, 0, 1, 1));
  EXPECT_EQ(match_entities(gold, pred, Schema::kUnconstrained), counts(1, 0, 0, 0));
}

TEST(MatchEntities, SameClassPartialBeforeCrossClass) {
  // An early cross-class pick must not steal the only gold a later same-class
  // prediction overlaps.
  const auto S = EntityClass::kSystematic, F = EntityClass::kFormula;
  std::vector<TypedEntity> gold = {te("zinc acetone methyl", F), te("ester oxide benzene", S)};
  std::vector<TypedEntity> pred = {te("zin methyl benzene", S), te("ethanol methyl methyl", F)};
  const auto c = match_entities(gold, pred, Schema::kConstrained);
  const auto u = match_entities(gold, pred, Schema::kUnconstrained);
  EXPECT_EQ(c.par, 2u);
  EXPECT_EQ(u.par, 2u);
  EXPECT_GE(prf(u).f1, prf(c).f1);
}

TEST(MatchEntities, CaseAndWhitespaceInsensitiveExact) {
  std::vector<TypedEntity> gold = {te("Sodium  Chloride")};
  std::vector<TypedEntity> pred = {te("sodium chloride ")};
  EXPECT_EQ(match_entities(gold, pred, Schema::kConstrained), counts(1, 0, 0, 0));
}

TEST(MatchEntities, EmptyInputs) {
  std::vector<TypedEntity> none;
  std::vector<TypedEntity> two = {te("x"), te("y")};
  EXPECT_EQ(match_entities(none, none, Schema::kConstrained), counts(0, 0, 0, 0));
  EXPECT_EQ(match_entities(two, none, Schema::kConstrained), counts(0, 0, 0, 2));
  EXPECT_EQ(match_entities(none, two, Schema::kConstrained), counts(0, 0, 2, 0));
}

TEST(PartialOverlap, Rule) {
  EXPECT_TRUE(partial_overlap("sodium chloride", "sodium"));
  EXPECT_TRUE(partial_overlap("benzene", "benzen"));
  EXPECT_TRUE(partial_overlap("ab", "ab cd"));  // shared token
  EXPECT_FALSE(partial_overlap("ab", "abc"));   // substring too short
  EXPECT_TRUE(partial_overlap("abc", "xabcx"));
  EXPECT_FALSE(partial_overlap("", "abc"));
}

TEST(Prf, Formulas) {
  auto r = prf(counts(1, 1, 0, 0));
  EXPECT_EQ(r.precision, 0.75);
  EXPECT_EQ(r.recall, 0.75);
  EXPECT_EQ(r.f1, 0.75);
  r = prf(counts(0, 0, 0, 0));
  EXPECT_EQ(r.precision, 0);
  EXPECT_EQ(r.recall, 0);
  EXPECT_EQ(r.f1, 0);
  r = prf(counts(2, 0, 2, 2));
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
}

TEST(Prf, BoundsAndZeroF1) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5000; ++i) {
    const auto c = counts(rng() % 5, rng() % 5, rng() % 5, rng() % 5);
    const auto r = prf(c);
    for (double v : {r.precision, r.recall, r.f1}) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
    }
    EXPECT_EQ(r.f1 == 0, c.cor + c.par == 0);
  }
}

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(oracle::levenshtein_dp(U"kitten", U"sitting"), 3u);
  EXPECT_EQ(edit_distance("", "abc"), 3u);
  EXPECT_EQ(edit_distance("abc", ""), 3u);
  EXPECT_EQ(edit_distance("C₆H₆", "C₆H₅"), 1u);  // counts code points, not bytes
  EXPECT_EQ(edit_distance("same", "same"), 0u);
}

TEST(EditDistance, MatchesDpOracleAcrossBlockSizes) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 3000; ++i) {
    const std::size_t max_len = i % 3 == 0 ? 300 : 70;
    const auto a = gen::random_u32(rng, max_len);
    auto b = a;
    // Perturb a copy so distances are small as well as large.
    for (std::size_t k = 0, n = rng() % 10; k < n && !b.empty(); ++k) b[rng() % b.size()] = gen::random_code_point(rng);
    if (rng() % 2) b = gen::random_u32(rng, max_len);
    ASSERT_EQ(edit_distance(a, b), oracle::levenshtein_dp(a, b)) << a.size() << " " << b.size();
  }
}

TEST(EditDistance, ExactWordBoundaries) {
  std::mt19937_64 rng(8);
  for (std::size_t len : {63u, 64u, 65u, 127u, 128u, 129u}) {
    for (int i = 0; i < 50; ++i) {
      std::u32string a, b;
      for (std::size_t k = 0; k < len; ++k) a.push_back(U'a' + rng() % 3);
      for (std::size_t k = 0, n = len + rng() % 5 - 2; k < n; ++k) b.push_back(U'a' + rng() % 3);
      ASSERT_EQ(edit_distance(a, b), oracle::levenshtein_dp(a, b));
    }
  }
}

TEST(EditDistance, MetricAxioms) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    const auto a = gen::random_u32(rng, 30), b = gen::random_u32(rng, 30), c = gen::random_u32(rng, 30);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, b) == 0, a == b);
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST(MeanPctEditDistance, Examples) {
  EXPECT_EQ(mean_pct_edit_distance(std::vector<GoldPred>{{"CH4", "CH4"}}), 0.0);
  EXPECT_EQ(mean_pct_edit_distance(std::vector<GoldPred>{{"C2H6O", ""}}), 1.0);
  EXPECT_DOUBLE_EQ(mean_pct_edit_distance(std::vector<GoldPred>{{"C6H6", "C6H5"}, {"H2O", "H2O"}}), 0.125);
  EXPECT_GT(mean_pct_edit_distance(std::vector<GoldPred>{{"C", "CCCC"}}), 1.0);
  EXPECT_THROW(mean_pct_edit_distance(std::vector<GoldPred>{}), ValidationError);
  EXPECT_THROW(mean_pct_edit_distance(std::vector<GoldPred>{{"", "x"}}), ValidationError);
}

TEST(ParseNumber, FirstNumericToken) {
  EXPECT_EQ(parse_number("46.07"), 46.07);
  EXPECT_EQ(parse_number("  46.07 g/mol"), 46.07);
  EXPECT_EQ(parse_number("about -3.5e2 units"), -350.0);
  EXPECT_EQ(parse_number("+12"), 12.0);
  EXPECT_EQ(parse_number(".5"), 0.5);
  EXPECT_EQ(parse_number("weight: 18"), 18.0);
  EXPECT_FALSE(parse_number("not a number"));
  EXPECT_FALSE(parse_number(""));
  EXPECT_FALSE(parse_number("inf"));
  EXPECT_FALSE(parse_number("1e999"));
}

TEST(Mape, Examples) {
  EXPECT_NEAR(mape(std::vector<double>{100.0}, std::vector<std::string>{"90"}), 0.10, 1e-12);
  EXPECT_EQ(mape(std::vector<double>{46.07}, std::vector<std::string>{"46.07"}), 0.0);
  EXPECT_EQ(mape(std::vector<double>{46.07}, std::vector<std::string>{"not a number"}), 1.0);
  EXPECT_THROW(mape(std::vector<double>{0.0}, std::vector<std::string>{"1"}), ValidationError);
  EXPECT_THROW(mape(std::vector<double>{1.0, 2.0}, std::vector<std::string>{"1"}), ValidationError);
  EXPECT_THROW(mape(std::vector<double>{}, std::vector<std::string>{}), ValidationError);
}

TEST(Mcq, AccuracyAndMacroF1) {
  std::vector<int> g = {0, 1, 2, 3}, p = {0, 1, 0, 0};
  EXPECT_EQ(mcq_accuracy(g, g), 1.0);
  EXPECT_EQ(mcq_accuracy(g, p), 0.5);
  EXPECT_EQ(mcq_macro_f1(g, g), 1.0);
  EXPECT_DOUBLE_EQ(mcq_macro_f1(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}, 2), 0.5);
  EXPECT_DOUBLE_EQ(mcq_macro_f1(std::vector<int>{0, 0, 0}, std::vector<int>{0, 0, 0}, 4), 0.25);
  EXPECT_EQ(mcq_accuracy(std::vector<int>{1}, std::vector<int>{kAbstain}), 0.0);
  EXPECT_THROW(mcq_accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), ValidationError);
  EXPECT_THROW(mcq_accuracy(std::vector<int>{4}, std::vector<int>{1}), ValidationError);
}

TEST(Mcq, UniformRandomNearQuarter) {
  std::mt19937_64 rng(5);
  std::vector<int> g(100000), p(100000);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<int>(rng() % 4);
    p[i] = static_cast<int>(rng() % 4);
  }
  EXPECT_NEAR(mcq_accuracy(g, p), 0.25, 0.01);
}

TEST(RelativeImprovement, Values) {
  EXPECT_NEAR(relative_improvement(0.27, 0.18), 50.0, 0.01);
  EXPECT_NEAR(relative_improvement(0.31, 0.26), 19.23, 0.01);
  EXPECT_EQ(relative_improvement(0.3, 0.3), 0.0);
  EXPECT_THROW(relative_improvement(0.3, 0.0), ValidationError);
}
