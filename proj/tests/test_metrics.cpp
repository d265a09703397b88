#include <gtest/gtest.h>

#include <cmath>

#include "weakstrong/metrics.hpp"
#include "weakstrong/rng.hpp"
#include "weakstrong/verify.hpp"

using namespace weakstrong;

TEST(SlideScore, WorkedRatio) {
  EXPECT_DOUBLE_EQ(slide_score({1, 1, 1, 0}), 0.75);
  EXPECT_DOUBLE_EQ(slide_score({0, 0, 0}), 0.0);
  EXPECT_THROW(slide_score({}), ValueError);
}

TEST(SlideScore, CountingOracle) {
  Rng rng(3);
  std::vector<int> preds(1000);
  std::size_t high = 0;
  for (auto& p : preds) {
    p = static_cast<int>(rng.uniform_index(2));
    if (p == 1) ++high;
  }
  EXPECT_DOUBLE_EQ(slide_score(preds), static_cast<double>(high) / 1000.0);
}

TEST(RocAuc, WorkedExample) {
  EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
}

TEST(RocAuc, PerfectSeparation) {
  EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
}

TEST(RocAuc, AllTies) {
  EXPECT_DOUBLE_EQ(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
}

TEST(RocAuc, SingleClassUndefined) {
  EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 1}), ValueError);
}

TEST(RocAuc, MatchesPairOracleExactlyWithTies) {
  Rng rng(17);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> scores(50);
    std::vector<int> labels(50);
    for (std::size_t i = 0; i < 50; ++i) {
      scores[i] = std::floor(rng.uniform() * 10.0) / 10.0;  // heavy ties
      labels[i] = static_cast<int>(rng.uniform_index(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    EXPECT_EQ(roc_auc(scores, labels), oracle::auc_pairs(scores, labels));
  }
}

TEST(RocAuc, MonotoneTransformInvariance) {
  Rng rng(23);
  std::vector<double> scores(40);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) {
    scores[i] = rng.uniform();
    labels[i] = static_cast<int>(rng.uniform_index(2));
  }
  labels[0] = 0;
  labels[1] = 1;
  std::vector<double> transformed(40);
  for (std::size_t i = 0; i < 40; ++i) transformed[i] = std::exp(3.0 * scores[i]) - 2.0;
  EXPECT_DOUBLE_EQ(roc_auc(scores, labels), roc_auc(transformed, labels));
}

TEST(Accuracy, Basic) {
  EXPECT_DOUBLE_EQ(accuracy({0.0, 1.0, 0.0, 1.0}, {0, 1, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy({1.0, 0.0}, {0, 1}), 0.0);
  EXPECT_THROW(accuracy({}, {}), ValueError);
}

TEST(Accuracy, CountingOracle) {
  Rng rng(29);
  std::vector<double> scores(100);
  std::vector<int> labels(100);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    scores[i] = rng.uniform();
    labels[i] = static_cast<int>(rng.uniform_index(2));
    if ((scores[i] >= 0.5) == (labels[i] == 1)) ++correct;
  }
  EXPECT_DOUBLE_EQ(accuracy(scores, labels), static_cast<double>(correct) / 100.0);
}

TEST(KendallTau, MonotoneExtremes) {
  const std::vector<double> inc{0.1, 0.2, 0.3, 0.5, 0.9};
  const std::vector<int> groups{0, 1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(kendall_tau(inc, groups), 1.0);
  std::vector<double> dec(inc.rbegin(), inc.rend());
  EXPECT_DOUBLE_EQ(kendall_tau(dec, groups), -1.0);
}

TEST(KendallTau, TwelveSlidesFiveGroupsWithTiesMatchesOracle) {
  const std::vector<double> scores{0.1, 0.1, 0.3, 0.3, 0.3, 0.5, 0.5, 0.6, 0.7, 0.7, 0.9, 0.9};
  const std::vector<int> groups{0, 1, 0, 2, 1, 3, 2, 4, 3, 4, 4, 0};
  EXPECT_EQ(kendall_tau(scores, groups), oracle::tau_pairs(scores, groups));
}

TEST(KendallTau, MatchesPairOracleExactlyRandom) {
  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> scores(50);
    std::vector<int> groups(50);
    for (std::size_t i = 0; i < 50; ++i) {
      scores[i] = std::floor(rng.uniform() * 12.0) / 12.0;
      groups[i] = static_cast<int>(rng.uniform_index(5));
    }
    groups[0] = 0;
    groups[1] = 4;
    EXPECT_EQ(kendall_tau(scores, groups), oracle::tau_pairs(scores, groups));
    EXPECT_EQ(kendall_tau(scores, groups, TauVariant::a),
              oracle::tau_pairs(scores, groups, TauVariant::a));
  }
}

TEST(KendallTau, Antisymmetry) {
  Rng rng(37);
  std::vector<double> scores(30);
  std::vector<int> groups(30);
  for (std::size_t i = 0; i < 30; ++i) {
    scores[i] = rng.uniform();
    groups[i] = static_cast<int>(rng.uniform_index(5));
  }
  groups[0] = 0;
  groups[1] = 4;
  std::vector<double> negated(30);
  for (std::size_t i = 0; i < 30; ++i) negated[i] = -scores[i];
  EXPECT_EQ(kendall_tau(scores, groups), -kendall_tau(negated, groups));
}

TEST(KendallTau, Errors) {
  EXPECT_THROW(kendall_tau({0.5}, {1}), ValueError);               // fewer than 2 items
  EXPECT_THROW(kendall_tau({0.5, 0.6}, {2, 2}), ValueError);       // one group
  EXPECT_DOUBLE_EQ(kendall_tau({0.5, 0.5}, {0, 1}), 0.0);          // all scores tied
}

TEST(ArgmaxRows, FirstMaxWinsOnTies) {
  const Tensor2D probs(2, 3, {0.2, 0.5, 0.3, 0.4, 0.4, 0.2});
  const std::vector<int> preds = argmax_rows(probs);
  EXPECT_EQ(preds[0], 1);
  EXPECT_EQ(preds[1], 0);
}
