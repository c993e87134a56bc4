#include <gtest/gtest.h>

#include <memory>
#include <set>

#include "oracles.hpp"
#include "readmit/explain.hpp"

using namespace readmit;

namespace {

using Doc = std::vector<std::string>;

std::vector<ExplainSample> random_corpus(std::uint64_t seed, std::size_t n_docs) {
  Pcg32 rng(seed);
  std::vector<ExplainSample> out(n_docs);
  for (auto& s : out) {
    s.label = rng.below(2) == 1;
    std::size_t len = rng.below(30);
    for (std::size_t i = 0; i < len; ++i) {
      // skew vocabulary by class so scores spread out
      std::uint32_t id = rng.below(60) + (s.label && rng.below(3) == 0 ? 40 : 0);
      s.tokens.push_back("w" + std::to_string(id));
    }
  }
  out[0].label = true;
  out[1].label = false;
  return out;
}

}  // namespace

TEST(Chi2, HandCase) {
  ContingencyTable t{30, 10, 70, 90};
  auto e = t.expected();
  EXPECT_EQ(e, (std::array<double, 4>{20, 20, 80, 80}));
  EXPECT_NEAR(t.chi2(), 12.5, 1e-9);

  std::vector<ExplainSample> samples;
  for (int i = 0; i < 100; ++i) samples.push_back({i < 30 ? Doc{"t", "x"} : Doc{"x"}, true});
  for (int i = 0; i < 100; ++i) samples.push_back({i < 10 ? Doc{"t"} : Doc{}, false});
  auto s = chi2_score("t", samples);
  EXPECT_EQ(s.table, t);
  EXPECT_NEAR(s.chi2, 12.5, 1e-9);
}

TEST(Chi2, ZeroCases) {
  std::vector<ExplainSample> samples = {{{"a"}, true}, {{"b"}, true}, {{"a"}, false}, {{"c"}, false}};
  EXPECT_EQ(chi2_score("a", samples).chi2, 0.0);  // equal proportions
  EXPECT_EQ(chi2_score("never", samples).chi2, 0.0);
  EXPECT_THROW(chi2_score("a", std::vector<ExplainSample>{}), ArgumentError);
  EXPECT_THROW(chi2_score("a", std::vector<ExplainSample>{{{"a"}, true}}), ArgumentError);
}

TEST(Chi2, MatchesBruteForceOnRandomCorpora) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    auto samples = random_corpus(seed, 50 + 40 * seed);
    std::vector<Doc> docs;
    std::vector<bool> labels;
    std::set<std::string> vocab;
    for (const auto& s : samples) {
      docs.push_back(s.tokens);
      labels.push_back(s.label);
      vocab.insert(s.tokens.begin(), s.tokens.end());
    }
    auto ranked = top_k_features(samples, vocab.size() + 10);
    ASSERT_EQ(ranked.size(), vocab.size());
    for (const auto& term : vocab) {
      double expected = oracle::brute_force_chi2(term, docs, labels);
      EXPECT_EQ(chi2_score(term, samples).chi2, expected) << term;
    }
    for (const auto& f : ranked) {
      EXPECT_EQ(f.chi2, oracle::brute_force_chi2(f.term, docs, labels)) << f.term;
      EXPECT_EQ(f.table.total(), samples.size());
    }
  }
}

TEST(Chi2, SymmetricUnderLabelSwap) {
  auto samples = random_corpus(99, 200);
  auto swapped = samples;
  for (auto& s : swapped) s.label = !s.label;
  for (const auto& f : top_k_features(samples, 30)) {
    EXPECT_NEAR(chi2_score(f.term, swapped).chi2, f.chi2, 1e-9 * std::max(1.0, f.chi2));
  }
}

TEST(TopK, OrderAndTies) {
  std::vector<ExplainSample> samples = {
      {{"b", "a", "sig"}, true}, {{"a", "b", "sig"}, true}, {{"c"}, false}, {{"c", "d"}, false}};
  auto top = top_k_features(samples, 3);
  ASSERT_EQ(top.size(), 3u);
  // a, b, c and sig all split the classes perfectly
  EXPECT_EQ(top[0].term, "a");
  EXPECT_EQ(top[1].term, "b");
  EXPECT_EQ(top[2].term, "c");
  EXPECT_EQ(top[0].chi2, 4.0);
  auto all = top_k_features(samples, 100);
  EXPECT_EQ(all.size(), 5u);
  EXPECT_EQ(all.back().term, "d");
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i - 1].chi2, all[i].chi2);
}

TEST(TopK, PlantedTokenRanksFirst) {
  Pcg32 rng(4);
  std::vector<ExplainSample> samples(400);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].label = i % 2 == 0;
    for (int j = 0; j < 20; ++j) samples[i].tokens.push_back("bg" + std::to_string(rng.below(50)));
    if (samples[i].label && rng.uniform01() < 0.9) samples[i].tokens.push_back("planted");
  }
  EXPECT_EQ(top_k_features(samples, 20).front().term, "planted");
}

TEST(FilterCorrect, KeepsMatches) {
  std::vector<ExplainSample> samples = {{{"a"}, true}, {{"b"}, false}, {{"c"}, true}};
  std::unique_ptr<bool[]> pred(new bool[3]{true, true, false});
  auto kept = filter_correct(samples, std::span<const bool>(pred.get(), 3));
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].tokens, Doc{"a"});
  std::unique_ptr<bool[]> inverted(new bool[3]{false, true, false});
  EXPECT_TRUE(filter_correct(samples, std::span<const bool>(inverted.get(), 3)).empty());
  EXPECT_THROW(filter_correct(samples, std::span<const bool>(pred.get(), 2)), ArgumentError);
}

TEST(Frequency, TokenCountsAndMasking) {
  std::vector<ExplainSample> samples = {{{"rare", "rare", "rare", "x"}, true}, {{"x", "y"}, true}, {{"x", "y", "y"}, false}};
  std::vector<std::string> terms = {"rare", "y"};
  auto rows = frequency_report(terms, samples, std::nullopt);
  EXPECT_EQ(rows[0].count_pos, 3u);
  EXPECT_EQ(rows[0].count_neg, 0u);
  EXPECT_EQ(rows[0].n_pos, 2u);
  EXPECT_EQ(rows[0].n_neg, 1u);
  EXPECT_EQ(rows[1].count_pos, 1u);
  EXPECT_EQ(rows[1].count_neg, 2u);

  // positive ranking: rare 3, x 2, y 1; negative: y 2, x 1
  auto masked = frequency_report(terms, samples, 1);
  EXPECT_EQ(masked[0].count_pos, 3u);
  EXPECT_EQ(masked[0].count_neg, std::nullopt);
  EXPECT_EQ(masked[1].count_pos, std::nullopt);
  EXPECT_EQ(masked[1].count_neg, 2u);
  EXPECT_TRUE(frequency_report({}, samples).empty());

  auto csv = frequency_csv(masked, 1);
  EXPECT_EQ(csv, "term,count_pos,count_neg,n_pos,n_neg\nrare,3,non-top1,2,1\ny,non-top1,2,2,1\n");
  auto big = frequency_csv(frequency_report(terms, samples, 2000), 2000, "c");
  EXPECT_EQ(big.substr(0, 4), "# c\n");
  EXPECT_NE(big.find("rare,3,non-top2000,2,1"), std::string::npos);
}

TEST(Frequency, ConservesTokenCounts) {
  auto samples = random_corpus(7, 300);
  std::set<std::string> vocab;
  for (const auto& s : samples) vocab.insert(s.tokens.begin(), s.tokens.end());
  std::vector<std::string> terms(vocab.begin(), vocab.end());
  auto rows = frequency_report(terms, samples, std::nullopt);
  for (const auto& r : rows) {
    std::uint64_t pos = 0, neg = 0;
    for (const auto& s : samples) {
      for (const auto& t : s.tokens) (s.label ? pos : neg) += t == r.term;
    }
    EXPECT_EQ(r.count_pos, pos);
    EXPECT_EQ(r.count_neg, neg);
  }
}

TEST(Csv, FeatureColumnsAndQuoting) {
  std::vector<FeatureScore> scores = {{"a,b", 12.5, {30, 10, 70, 90}}, {"q\"t", 0, {}}};
  auto csv = feature_csv(scores, "provenance seed=1");
  EXPECT_EQ(csv,
            "# provenance seed=1\n"
            "term,chi2,o_yes_pos,o_yes_neg,o_no_pos,o_no_neg\n"
            "\"a,b\",12.5,30,10,70,90\n"
            "\"q\"\"t\",0,0,0,0,0\n");
}
