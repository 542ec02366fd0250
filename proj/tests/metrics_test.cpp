#include <gtest/gtest.h>

#include <cmath>

#include "optlab/metrics.hpp"
#include "optlab/rng.hpp"

using namespace optlab;

namespace {

LossSeries constant_series(int64_t n, double c) {
  LossSeries s;
  for (int64_t i = 0; i < n; ++i) s.push_back({(i + 1) * 100, c});
  return s;
}

}  // namespace

TEST(FinalWindow, ConstantSeries) {
  EXPECT_DOUBLE_EQ(final_window_loss(constant_series(40, 3.25)), 3.25);
}

TEST(FinalWindow, HundredPointsFivePercent) {
  LossSeries s;
  for (int64_t i = 0; i < 100; ++i) s.push_back({i + 1, static_cast<double>(i)});
  const double expect = (95.0 + 96.0 + 97.0 + 98.0 + 99.0) / 5.0;
  EXPECT_DOUBLE_EQ(final_window_loss(s, 0.05), expect);
}

TEST(FinalWindow, FullWindowIsGlobalMean) {
  LossSeries s;
  double sum = 0.0;
  Rng rng(3);
  for (int64_t i = 0; i < 37; ++i) {
    const double v = rng.next_double();
    s.push_back({i + 1, v});
    sum += v;
  }
  EXPECT_NEAR(final_window_loss(s, 1.0), sum / 37.0, 1e-15);
}

TEST(FinalWindow, CeilRoundingNeverEmpty) {
  LossSeries s = constant_series(3, 1.0);
  s[2].loss = 7.0;
  // ceil(0.05 * 3) = 1 -> just the last point
  EXPECT_DOUBLE_EQ(final_window_loss(s, 0.05), 7.0);
  EXPECT_THROW(final_window_loss({}, 0.05), ContractError);
  EXPECT_THROW(final_window_loss(s, 0.0), ContractError);
}

TEST(FinalWindow, MonotoneDecreasingBelowGlobalMean) {
  Rng rng(9);
  LossSeries s;
  double v = 10.0, sum = 0.0;
  for (int64_t i = 0; i < 50; ++i) {
    v -= rng.next_double() * 0.2;
    s.push_back({i + 1, v});
    sum += v;
  }
  EXPECT_LE(final_window_loss(s, 0.05), sum / 50.0);
}

TEST(Aulc, ConstantAndLinear) {
  EXPECT_DOUBLE_EQ(aulc(constant_series(10, 2.5)), 2.5);
  LossSeries lin = {{0, 1.0}, {1000, 0.0}};
  EXPECT_DOUBLE_EQ(aulc(lin), 0.5);
  EXPECT_THROW(aulc({{0, 1.0}}), ContractError);
}

TEST(Aulc, QuadraticOracle) {
  // loss(x) = x^2 sampled at 1001 points on [0, 1]; the exact integral is 1/3
  LossSeries s;
  for (int64_t i = 0; i <= 1000; ++i) {
    const double x = static_cast<double>(i) / 1000.0;
    s.push_back({i, x * x});
  }
  EXPECT_NEAR(aulc(s), 1.0 / 3.0, 1e-5);
}

TEST(Aulc, CollinearInsertionInvariant) {
  LossSeries s = {{0, 4.0}, {200, 2.0}, {600, 1.0}};
  const double before = aulc(s);
  // insert the midpoint of each segment; the trapezoid sums are unchanged
  LossSeries dense = {{0, 4.0}, {100, 3.0}, {200, 2.0}, {400, 1.5}, {600, 1.0}};
  EXPECT_NEAR(aulc(dense), before, 1e-12);
}

TEST(Aulc, RejectsNonIncreasingTokens) {
  LossSeries bad = {{10, 1.0}, {10, 2.0}};
  EXPECT_THROW(aulc(bad), ContractError);
  LossSeries reversed = {{20, 1.0}, {10, 2.0}};
  EXPECT_THROW(final_window_loss(reversed), ContractError);
}

TEST(GradNormSummary, SingleBucketIsOverallMean) {
  RunRecord rec;
  rec.steps = {{100, 0, 0, 1.0}, {200, 0, 0, 2.0}, {300, 0, 0, 6.0}};
  auto buckets = grad_norm_summary(rec, 1000);
  ASSERT_EQ(buckets.size(), 1u);
  EXPECT_DOUBLE_EQ(buckets[0].mean_norm, 3.0);
}

TEST(GradNormSummary, ConstantNormsGiveConstantSeries) {
  RunRecord rec;
  for (int64_t i = 1; i <= 12; ++i) rec.steps.push_back({i * 50, 0, 0, 0.7});
  auto buckets = grad_norm_summary(rec, 200);
  ASSERT_EQ(buckets.size(), 3u);
  for (const auto& b : buckets) EXPECT_DOUBLE_EQ(b.mean_norm, 0.7);
}

TEST(GradNormSummary, HandComputedBuckets) {
  RunRecord rec;
  rec.steps = {{100, 0, 0, 1.0}, {200, 0, 0, 3.0}, {300, 0, 0, 5.0}, {400, 0, 0, 7.0}};
  auto buckets = grad_norm_summary(rec, 200);
  ASSERT_EQ(buckets.size(), 2u);
  EXPECT_EQ(buckets[0].tokens_end, 200);
  EXPECT_DOUBLE_EQ(buckets[0].mean_norm, 2.0);  // (1 + 3) / 2
  EXPECT_EQ(buckets[1].tokens_end, 400);
  EXPECT_DOUBLE_EQ(buckets[1].mean_norm, 6.0);  // (5 + 7) / 2
}

TEST(Metrics, PureFunctions) {
  LossSeries s = constant_series(20, 1.5);
  const double a1 = aulc(s), a2 = aulc(s);
  const double f1 = final_window_loss(s), f2 = final_window_loss(s);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(f1, f2);
}
