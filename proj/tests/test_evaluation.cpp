#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "eacnet/evaluation.hpp"

using namespace eacnet;
using namespace eacnet::evaluation;

namespace {

BinaryRows random_rows(std::size_t n, std::size_t k, std::mt19937_64& rng, double p = 0.4) {
  std::bernoulli_distribution b(p);
  BinaryRows r(n, std::vector<int>(k));
  for (auto& row : r)
    for (auto& v : row) v = b(rng);
  return r;
}

BinaryRows negate(BinaryRows r) {
  for (auto& row : r)
    for (auto& v : row) v = 1 - v;
  return r;
}

}  // namespace

TEST(Confusion, IdentityAndNegation) {
  std::mt19937_64 rng(1);
  const auto labels = random_rows(50, 12, rng);
  for (const auto& c : confusion(labels, labels).per_label) {
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
    EXPECT_EQ(c.total(), 50u);
  }
  for (const auto& c : confusion(negate(labels), labels).per_label) {
    EXPECT_EQ(c.tp, 0u);
    EXPECT_EQ(c.tn, 0u);
  }
}

TEST(Confusion, HandCase) {
  const BinaryRows preds = {{1}, {1}, {1}, {0}};
  const BinaryRows labels = {{1}, {1}, {0}, {1}};
  EXPECT_EQ(confusion(preds, labels).per_label[0], (Counts{2, 1, 0, 1}));
}

TEST(Confusion, RejectsNonBinaryAndRagged) {
  EXPECT_THROW(confusion({{2}}, {{1}}), DomainError);
  EXPECT_THROW(confusion({{1, 0}}, {{1}}), ShapeError);
  EXPECT_THROW(confusion({{1}, {0}}, {{1}}), ShapeError);
}

TEST(F1, SpotValues) {
  EXPECT_EQ(f1_score({2, 1, 0, 1}), 2.0 / 3.0);
  EXPECT_EQ(f1_score({5, 0, 3, 0}), 1.0);
  EXPECT_EQ(f1_score({0, 4, 3, 2}), 0.0);
  EXPECT_EQ(f1_score({0, 0, 7, 0}), 0.0);
  EXPECT_EQ(accuracy({0, 0, 0, 0}), 0.0);
  EXPECT_EQ(accuracy({2, 1, 3, 2}), 5.0 / 8.0);
}

TEST(F1, TrueNegativesDoNotMatter) {
  EXPECT_EQ(f1_score({3, 2, 0, 1}), f1_score({3, 2, 40, 1}));
  EXPECT_NE(accuracy({3, 2, 0, 1}), accuracy({3, 2, 40, 1}));
}

TEST(F1, MatchesBruteForceRecount) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const auto labels = random_rows(n, 12, rng, 0.3);
    const auto preds = random_rows(n, 12, rng, 0.5);
    const auto t = f1_accuracy(confusion(preds, labels));
    double mean = 0;
    for (std::size_t j = 0; j < 12; ++j) {
      double tp = 0, fp = 0, fn = 0, hit = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += preds[i][j] && labels[i][j];
        fp += preds[i][j] && !labels[i][j];
        fn += !preds[i][j] && labels[i][j];
        hit += preds[i][j] == labels[i][j];
      }
      const double p = tp + fp > 0 ? tp / (tp + fp) : 0;
      const double r = tp + fn > 0 ? tp / (tp + fn) : 0;
      const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0;
      EXPECT_EQ(t.f1[j], f1);
      EXPECT_EQ(t.accuracy[j], hit / double(n));
      mean += t.f1[j];
    }
    EXPECT_NEAR(t.mean_f1, mean / 12, 1e-12);
  }
}

TEST(OccurrenceRates, Examples) {
  EXPECT_EQ(occurrence_rates(BinaryRows(5, std::vector<int>(12, 0))), std::vector<double>(12, 0.0));
  BinaryRows rows(100, std::vector<int>(12, 0));
  for (std::size_t i = 0; i < 24; ++i) rows[i * 4][0] = 1;
  EXPECT_DOUBLE_EQ(occurrence_rates(rows)[0], 0.24);
  std::mt19937_64 rng(3);
  std::shuffle(rows.begin(), rows.end(), rng);
  EXPECT_DOUBLE_EQ(occurrence_rates(rows)[0], 0.24);
  EXPECT_THROW(occurrence_rates({}), ValidationError);
}

TEST(SubjectFolds, TwentySevenSubjectsSplitNineNineNine) {
  std::vector<std::string> ids;
  for (int s = 0; s < 27; ++s)
    for (int k = 0; k <= s % 4; ++k) ids.push_back("S" + std::to_string(s));
  const auto folds = subject_folds(ids, 3, 7);
  std::map<int, std::set<std::string>> per_fold;
  std::map<std::string, std::set<int>> per_subject;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    per_fold[folds[i]].insert(ids[i]);
    per_subject[ids[i]].insert(folds[i]);
  }
  ASSERT_EQ(per_fold.size(), 3u);
  for (const auto& [f, subjects] : per_fold) EXPECT_EQ(subjects.size(), 9u) << f;
  for (const auto& [s, f] : per_subject) EXPECT_EQ(f.size(), 1u) << s;
  EXPECT_EQ(subject_folds(ids, 3, 7), folds);
}

TEST(SubjectFolds, NeverSplitsSubjectAndBalances) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int subjects = 3 + int(rng() % 20);
    const int k = 2 + int(rng() % 3);
    if (subjects < k) continue;
    std::vector<std::string> ids;
    for (int i = 0; i < 200; ++i) ids.push_back("p" + std::to_string(rng() % subjects));
    std::set<std::string> distinct(ids.begin(), ids.end());
    if (distinct.size() < std::size_t(k)) continue;
    const auto folds = subject_folds(ids, k, rng());
    std::map<std::string, int> fold_of;
    std::map<int, int> count;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto [it, fresh] = fold_of.emplace(ids[i], folds[i]);
      if (fresh) ++count[folds[i]];
      EXPECT_EQ(it->second, folds[i]);
    }
    int lo = 1 << 30, hi = 0;
    for (const auto& [f, c] : count) lo = std::min(lo, c), hi = std::max(hi, c);
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(SubjectFolds, TooFewSubjects) {
  EXPECT_THROW(subject_folds({"a", "b", "a"}, 3, 1), ValidationError);
  EXPECT_THROW(subject_folds({"a", "b"}, 1, 1), ValidationError);
}

TEST(Reporting, CsvAndAverage) {
  const auto a = f1_accuracy(confusion({{1, 0}}, {{1, 1}}), {"1", "2"});
  const auto b = f1_accuracy(confusion({{1, 1}}, {{1, 1}}), {"1", "2"});
  const auto m = average_tables({a, b});
  EXPECT_EQ(m.f1[1], 0.5);
  EXPECT_EQ(m.mean_f1, 0.75);
  const std::string csv = metrics_csv({"fold1", "fold2"}, {a, b});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "AU,fold1_F1,fold2_F1,fold1_Acc,fold2_Acc");
  EXPECT_NE(csv.find("\nAvg,0.500000,1.000000,0.500000,1.000000\n"), std::string::npos);
  EXPECT_THROW(metrics_csv({"x"}, {a, b}), ValidationError);
  EXPECT_NE(metrics_text("t", a).find("Avg"), std::string::npos);
}
