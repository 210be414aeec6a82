#include <gtest/gtest.h>

#include <random>
#include <stdexcept>

#include "dvb/error.hpp"
#include "dvb/metrics.hpp"
#include "oracles.hpp"

using namespace dvb::metrics;
using dvb::corpus::Dimension;
using dvb::corpus::Domain;
using dvb::text::split_sentences;
using dvb::text::tokenize;

TEST(IndexSetTest, SortsAndDeduplicates) {
  const IndexSet s{4, 1, 4, 2};
  EXPECT_EQ(s.values(), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_TRUE(s.contains(2));
  EXPECT_FALSE(s.contains(3));
  EXPECT_EQ(s.intersection_size(IndexSet{2, 3, 4}), 2u);
  EXPECT_TRUE(s.intersects_range(3, 5));
  EXPECT_FALSE(s.intersects_range(5, 9));
  EXPECT_EQ(IndexSet::from_spans({{0, 2}, {5, 6}}), (IndexSet{0, 1, 5}));
}

TEST(TokenMetrics, Examples) {
  EXPECT_EQ(token_metrics({2, 3}, {3, 4}, 10), (Prf{0.5, 0.5, 0.5}));
  EXPECT_EQ(token_metrics({1, 2}, {1, 2}, 5), (Prf{1, 1, 1}));
  EXPECT_EQ(token_metrics({1}, {}, 5), (Prf{0, 0, 0}));
  EXPECT_EQ(token_metrics({}, {}, 5), (Prf{1, 1, 1}));
  EXPECT_EQ(token_metrics({}, {3}, 5), (Prf{0, 0, 0}));
  EXPECT_THROW(token_metrics({5}, {}, 5), std::out_of_range);
  EXPECT_THROW(token_metrics({}, {9}, 5), std::out_of_range);
}

TEST(TokenMetricsProperty, MatchesSetOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(0, 20);
  std::uniform_int_distribution<int> density(0, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = len(rng);
    const auto g = oracle::random_subset(rng, n, density(rng));
    const auto p = oracle::random_subset(rng, n, density(rng));
    const auto got = token_metrics(IndexSet(g), IndexSet(p), n);
    const auto want = oracle::set_prf(g, p, n);
    ASSERT_EQ(got.precision, want.p);
    ASSERT_EQ(got.recall, want.r);
    ASSERT_EQ(got.f1, want.f1);
  }
}

TEST(SentenceMetrics, Examples) {
  const auto idx = split_sentences(tokenize("It rains here. She left now."));  // [0,4) [4,8)
  auto r = sentence_metrics({1}, {5}, idx);
  EXPECT_EQ(r.scores, (Prf{0, 0, 0}));
  r = sentence_metrics({1, 5}, {1, 5}, idx);
  EXPECT_EQ(r.scores, (Prf{1, 1, 1}));
  r = sentence_metrics({1}, {2, 6}, idx);
  EXPECT_EQ(r.scores.precision, 0.5);
  EXPECT_EQ(r.scores.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.scores.f1, 2.0 / 3.0);
  EXPECT_EQ(r.labels, (std::vector<SentenceLabel>{{true, true}, {false, true}}));
  EXPECT_EQ(r.counts, (Counts{1, 2, 1}));
  EXPECT_THROW(sentence_metrics({8}, {}, idx), std::out_of_range);
}

TEST(SentenceMetricsProperty, LabelsFollowContainmentRule) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const auto tc = tokenize(oracle::random_caption(rng, 1 + trial % 60));
    const auto idx = split_sentences(tc);
    const auto g = oracle::random_subset(rng, tc.size(), 10);
    const auto p = oracle::random_subset(rng, tc.size(), 10);
    const auto r = sentence_metrics(IndexSet(g), IndexSet(p), idx);
    ASSERT_EQ(r.labels.size(), idx.size());
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const auto& sen = idx.sentences[s];
      ASSERT_EQ(r.labels[s].gold, oracle::hits(g, sen.first_token, sen.end_token));
      ASSERT_EQ(r.labels[s].predicted, oracle::hits(p, sen.first_token, sen.end_token));
    }
    if (g == p) ASSERT_EQ(sentence_metrics(IndexSet(g), IndexSet(g), idx).scores, (Prf{1, 1, 1}));
  }
}

TEST(DimensionRecall, Examples) {
  EXPECT_EQ(dimension_recall({{1, 2, Dimension::color}}, {1}),
            (std::map<Dimension, double>{{Dimension::color, 1.0}}));
  EXPECT_EQ(dimension_recall({{1, 3, Dimension::color}}, {1}),
            (std::map<Dimension, double>{{Dimension::color, 0.5}}));
  EXPECT_TRUE(dimension_recall({}, {1, 2}).empty());
  const auto counts = dimension_counts({{0, 2, Dimension::ocr}, {4, 5, Dimension::ocr}, {6, 7, Dimension::number}},
                                       {1, 4});
  EXPECT_EQ(counts.at(Dimension::ocr), (DimensionCount{2, 3}));
  EXPECT_EQ(counts.at(Dimension::number), (DimensionCount{0, 1}));
  EXPECT_FALSE(counts.contains(Dimension::color));
}

TEST(DimensionProperty, TotalsDecomposeGold) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 40;
    const auto spans = oracle::random_spans(rng, n);
    const auto pred = IndexSet(oracle::random_subset(rng, n, 30));
    std::size_t total = 0, hit = 0;
    for (const auto& [d, c] : dimension_counts(spans, pred)) {
      total += c.total;
      hit += c.hit;
    }
    const auto gold = IndexSet::from_spans(spans);
    ASSERT_EQ(total, gold.size());
    ASSERT_EQ(hit, gold.intersection_size(pred));
  }
}

namespace {
SampleCounts sc(Counts tok, Domain d = Domain::gui, bool faithful = true) {
  SampleCounts s;
  s.domain = d;
  s.token = tok;
  s.sentence = tok;
  s.faithful = faithful;
  return s;
}
}  // namespace

TEST(Aggregate, MicroSumsCounts) {
  const auto card = aggregate({sc({1, 2, 2}), sc({1, 2, 2})});
  EXPECT_EQ(card.overall.token.precision, 0.5);
  EXPECT_EQ(card.overall.token_counts, (Counts{2, 4, 4}));
  EXPECT_EQ(card.overall.samples, 2u);
}

TEST(Aggregate, SingleSampleIsIdentity) {
  const auto card = aggregate({sc({1, 3, 2})});
  EXPECT_EQ(card.overall.token, prf({1, 3, 2}));
  EXPECT_EQ(card.overall.token_macro, prf({1, 3, 2}));
}

TEST(Aggregate, AllEmptySetsScoreOne) {
  const auto card = aggregate({sc({0, 0, 0}), sc({0, 0, 0})});
  EXPECT_EQ(card.overall.token, (Prf{1, 1, 1}));
}

TEST(Aggregate, MicroDiffersFromMacroAndDomainsSplit) {
  // (1,1,1) -> P=1; (0,3,1) -> P=0. Micro P = 1/4, macro P = 0.5.
  const auto card = aggregate({sc({1, 1, 1}, Domain::gui), sc({0, 3, 1}, Domain::chart, false)});
  EXPECT_EQ(card.overall.token.precision, 0.25);
  EXPECT_EQ(card.overall.token_macro.precision, 0.5);
  EXPECT_EQ(card.overall.faithfulness_violation_rate, 0.5);
  ASSERT_EQ(card.domains.size(), 2u);
  EXPECT_EQ(card.domains.at(Domain::gui).token.precision, 1.0);
  EXPECT_EQ(card.domains.at(Domain::chart).token.precision, 0.0);
  EXPECT_THROW(aggregate({}), dvb::Error);
}

TEST(AggregateProperty, OrderIndependent) {
  std::mt19937_64 rng(4);
  std::vector<SampleCounts> rows;
  std::uniform_int_distribution<std::size_t> c(0, 6);
  for (int i = 0; i < 60; ++i) {
    const auto pred = c(rng), gold = c(rng);
    const auto inter = std::min({pred, gold, c(rng)});
    auto row = sc({inter, pred, gold}, dvb::corpus::kAllDomains[static_cast<std::size_t>(i) % 5], i % 7 != 0);
    if (gold) row.dimensions[Dimension::color] = {inter, gold};
    rows.push_back(row);
  }
  const auto a = aggregate(rows);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto b = aggregate(rows);
  EXPECT_EQ(a.overall.token, b.overall.token);
  EXPECT_EQ(a.overall.token_counts, b.overall.token_counts);
  EXPECT_EQ(a.overall.dimension_recall, b.overall.dimension_recall);
  EXPECT_EQ(a.domains.size(), b.domains.size());
}

TEST(Spearman, FixedCases) {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> rev{4, 3, 2, 1};
  const std::vector<double> b{1, 3, 2, 4};
  EXPECT_EQ(spearman(a, a), 1.0);
  EXPECT_EQ(spearman(a, rev), -1.0);
  EXPECT_DOUBLE_EQ(*spearman(a, b), 0.8);
  EXPECT_FALSE(spearman(a, std::vector<double>{2, 2, 2, 2}));
  EXPECT_THROW(spearman(a, std::vector<double>{1, 2}), dvb::Error);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), dvb::Error);
}

TEST(Spearman, AverageRanks) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(SpearmanProperty, MatchesCountingOracle) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> len(2, 15), val(0, 5);
  std::uniform_real_distribution<double> real(-1, 1);
  for (int trial = 0; trial < 400; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = trial % 2 ? val(rng) : real(rng);  // odd trials have ties
      y[i] = trial % 3 ? val(rng) : real(rng);
    }
    const auto got = spearman(x, y);
    const auto want = oracle::rank_correlation(x, y);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      ASSERT_NEAR(*got, *want, 1e-12);
      ASSERT_LE(std::abs(*got), 1.0);
    }
  }
}
