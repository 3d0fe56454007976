#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace dora;

namespace {

const std::vector<std::string> kBinary{"H", "N"};

std::vector<std::string> random_labels(Rng& rng, std::size_t n, const std::vector<std::string>& set) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(set[index_below(rng, set.size())]);
  return out;
}

}  // namespace

TEST(CohensKappa, HandExample) {
  const std::vector<std::string> a{"H", "H", "N", "N", "H"}, b{"H", "N", "N", "N", "H"};
  EXPECT_NEAR(cohens_kappa(a, b, kBinary), 8.0 / 13.0, 1e-12);
}

TEST(CohensKappa, PerfectAgreement) {
  const std::vector<std::string> a{"H", "N", "N", "H"};
  EXPECT_EQ(cohens_kappa(a, a, kBinary), 1.0);
}

TEST(CohensKappa, DegenerateChanceAgreement) {
  const std::vector<std::string> all_h{"H", "H", "H"};
  EXPECT_EQ(cohens_kappa(all_h, all_h, kBinary), 1.0);
}

TEST(CohensKappa, Errors) {
  const std::vector<std::string> a{"H", "N"}, b{"H"}, empty, other{"H", "X"};
  EXPECT_THROW(cohens_kappa(a, b, kBinary), InputError);
  EXPECT_THROW(cohens_kappa(empty, empty, kBinary), InputError);
  EXPECT_THROW(cohens_kappa(a, other, kBinary), InputError);
}

TEST(CohensKappa, MatchesContingencyOracleAndIsSymmetric) {
  Rng rng(1);
  const std::vector<std::string> pool{"TI", "TO", "TC", "TS"};
  int compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + index_below(rng, 4);
    const std::vector<std::string> set(pool.begin(), pool.begin() + static_cast<long>(k));
    const std::size_t n = 1 + index_below(rng, 12);
    const auto a = random_labels(rng, n, set), b = random_labels(rng, n, set);
    double kappa = 0;
    try {
      kappa = cohens_kappa(a, b, set);
    } catch (const NumericError&) {
      // p_e = 1 with disagreement cannot happen: p_e = 1 forces a == b
      FAIL() << "unexpected degenerate case";
    }
    ASSERT_NEAR(kappa, synth::contingency_kappa(a, b, set), 1e-12);
    ASSERT_EQ(kappa, cohens_kappa(b, a, set));
    ASSERT_GE(kappa, -1.0);
    ASSERT_LE(kappa, 1.0);
    ++compared;
  }
  EXPECT_EQ(compared, 1000);
}

TEST(CohensKappa, InvariantUnderLabelRenaming) {
  Rng rng(2);
  const std::vector<std::string> set{"a", "b", "c"};
  const std::map<std::string, std::string> rename{{"a", "c"}, {"b", "a"}, {"c", "b"}};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + index_below(rng, 10);
    auto a = random_labels(rng, n, set), b = random_labels(rng, n, set);
    const double k = cohens_kappa(a, b, set);
    for (auto& x : a) x = rename.at(x);
    for (auto& x : b) x = rename.at(x);
    ASSERT_EQ(cohens_kappa(a, b, set), k);
  }
}

TEST(CohensKappa, OneOnlyForIdenticalSequences) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + index_below(rng, 8);
    auto a = random_labels(rng, n, kBinary), b = random_labels(rng, n, kBinary);
    if (a == b) continue;
    ASSERT_LT(cohens_kappa(a, b, kBinary), 1.0);
  }
}

TEST(PerLabelKappa, BinaryCaseEqualsOverall) {
  const std::vector<std::string> a{"H", "H", "N", "N", "H"}, b{"H", "N", "N", "N", "H"};
  auto r = per_label_kappa(a, b, kBinary);
  ASSERT_EQ(r.kappas.size(), 2u);
  EXPECT_NEAR(r.kappas[0], 8.0 / 13.0, 1e-12);
  EXPECT_NEAR(r.kappas[1], 8.0 / 13.0, 1e-12);
  EXPECT_NEAR(r.average, 8.0 / 13.0, 1e-12);
}

TEST(PerLabelKappa, IdenticalAndSingleLabel) {
  const std::vector<std::string> a{"TI", "TO", "TC", "TS", "TI"};
  auto r = per_label_kappa(a, a, {"TI", "TO", "TC", "TS"});
  for (double k : r.kappas) EXPECT_EQ(k, 1.0);
  EXPECT_EQ(r.average, 1.0);
  const std::vector<std::string> only{"H", "H"};
  auto single = per_label_kappa(only, only, {"H"});
  EXPECT_EQ(single.kappas[0], 1.0);
}

TEST(PerLabelKappa, TableHasLabelRowsAndAverage) {
  const std::vector<std::string> a{"H", "H", "N", "N", "H"}, b{"H", "N", "N", "N", "H"};
  auto table = format_agreement_table(per_label_kappa(a, b, kBinary), "Task 1");
  EXPECT_NE(table.find("Average"), std::string::npos);
  EXPECT_NE(table.find("0.6154"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
  EXPECT_EQ(to_json(per_label_kappa(a, b, kBinary))["labels"].size(), 2u);
}

TEST(ReadAnnotations, ParsesAndValidates) {
  auto dir = synth::fresh_dir("annotations");
  std::ofstream(dir / "ok.tsv") << "id\ta\tb\nm1\tH\tH\nm2\tN\tH\r\n";
  auto pair = read_annotations(dir / "ok.tsv");
  EXPECT_EQ(pair.ids, (std::vector<std::string>{"m1", "m2"}));
  EXPECT_EQ(pair.labels_b[1], "H");
  std::ofstream(dir / "dup.tsv") << "m1\tH\tH\nm1\tN\tN\n";
  EXPECT_THROW(read_annotations(dir / "dup.tsv"), InputError);
  std::ofstream(dir / "cols.tsv") << "m1\tH\n";
  EXPECT_THROW(read_annotations(dir / "cols.tsv"), InputError);
}

TEST(JaccardTopWords, HandCases) {
  EXPECT_EQ(jaccard_top_words({"a b c", "a"}, {"a b c", "a"}, 3), 1.0);
  EXPECT_EQ(jaccard_top_words({"a b"}, {"c d"}, 5), 0.0);
  EXPECT_EQ(jaccard_top_words({"a a b b c c x"}, {"b b c c d d y"}, 3), 0.5);
  EXPECT_THROW(jaccard_top_words({}, {"a"}, 3), InputError);
  EXPECT_THROW(jaccard_top_words({"a"}, {"a"}, 0), InputError);
}

TEST(JaccardTopWords, TiesBrokenByFirstOccurrence) {
  EXPECT_EQ(top_words({"z y x y z"}, 2), (std::vector<std::string>{"z", "y"}));
  EXPECT_EQ(top_words({"বাংলা, ভাষা। বাংলা"}, 1), std::vector<std::string>{"বাংলা"});
  EXPECT_EQ(top_words({"বাংলা, ভাষা। বাংলা"}, 3, false).size(), 3u);
}

TEST(JaccardTopWords, SymmetricAndBounded) {
  Rng rng(4);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f", "g"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ca, cb;
    for (int i = 0; i < 3; ++i) {
      std::string x, y;
      for (int w = 0; w < 4; ++w) {
        x += vocab[index_below(rng, vocab.size())] + " ";
        y += vocab[index_below(rng, vocab.size())] + " ";
      }
      ca.push_back(x);
      cb.push_back(y);
    }
    const std::size_t n = 1 + index_below(rng, 5);
    const double j = jaccard_top_words(ca, cb, n);
    ASSERT_EQ(j, jaccard_top_words(cb, ca, n));
    ASSERT_GE(j, 0.0);
    ASSERT_LE(j, 1.0);
  }
}

TEST(LexicalStats, HandCounts) {
  auto s = lexical_stats({"a b", "a c d"});
  EXPECT_EQ(s.total_words, 5u);
  EXPECT_EQ(s.unique_words, 4u);
  EXPECT_EQ(s.mean_words, 2.5);
  auto one = lexical_stats({"শব্দ"});
  EXPECT_EQ(one.total_words, 1u);
  EXPECT_EQ(one.unique_words, 1u);
  EXPECT_EQ(one.mean_words, 1.0);
  EXPECT_THROW(lexical_stats({}), InputError);
}

TEST(LengthHistogram, HandBinning) {
  auto h = length_histogram({"a b", "a b c d e f g", "1 2 3 4 5 6 7 8 9 10 11 12"}, 5);
  EXPECT_EQ(h, (std::map<std::size_t, std::size_t>{{0, 1}, {1, 1}, {2, 1}}));
  auto same = length_histogram({"a b", "c d", "e f"}, 1);
  EXPECT_EQ(same, (std::map<std::size_t, std::size_t>{{2, 3}}));
  EXPECT_TRUE(length_histogram({}, 3).empty());
  EXPECT_THROW(length_histogram({"a"}, 0), InputError);
}

TEST(LengthHistogram, TotalsEqualCaptionCount) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> caps;
    const std::size_t n = index_below(rng, 20);
    for (std::size_t i = 0; i < n; ++i) caps.push_back(std::string(index_below(rng, 10), 'w') + " x y");
    std::size_t total = 0;
    for (auto [bin, count] : length_histogram(caps, 1 + index_below(rng, 4))) total += count;
    ASSERT_EQ(total, n);
  }
}
