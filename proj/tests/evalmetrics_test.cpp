#include <gtest/gtest.h>

#include <random>

#include "selfdepth/evalmetrics.hpp"

namespace sd = selfdepth;
using TD = sd::Tensor<double>;
using DM = sd::DepthMap<double>;

namespace {

DM map(std::vector<double> v) {
  std::size_t n = v.size();
  return DM::all_valid(TD({1, n}, std::move(v)));
}

sd::EvalConfig no_align() {
  sd::EvalConfig c;
  c.align = false;
  return c;
}

}  // namespace

TEST(Metrics, HandDerivedFixtures) {
  DM ref = map({1, 2, 4}), pred = map({2, 2, 2});
  EXPECT_NEAR(sd::abs_rel(pred, ref), 0.5, 1e-12);
  EXPECT_NEAR(sd::sq_rel(pred, ref), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(sd::rmse(pred, ref), std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 1.25), 1.0 / 3.0, 1e-12);
  // Ratios are exactly 2 at two pixels; the threshold test is strict.
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 2.0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 2.0 + 1e-9), 1.0, 1e-12);
}

TEST(Metrics, SecondFixture) {
  DM ref = map({10, 20}), pred = map({11, 15});
  EXPECT_NEAR(sd::abs_rel(pred, ref), (0.1 + 0.25) / 2, 1e-12);
  EXPECT_NEAR(sd::sq_rel(pred, ref), (1.0 / 10 + 25.0 / 20) / 2, 1e-12);
  EXPECT_NEAR(sd::rmse(pred, ref), std::sqrt((1.0 + 25.0) / 2), 1e-12);
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 1.25), 0.5, 1e-12);
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 1.4), 1.0, 1e-12);
  EXPECT_NEAR(sd::delta_accuracy(pred, ref, 1.05), 0.0, 1e-12);
}

TEST(Metrics, PerfectPredictionAndInvalidPixels) {
  DM ref = map({3, 5, 7, 9});
  ref.valid.values[1] = 0;
  DM pred = map({3, 100, 7, 9});
  auto r = sd::evaluate(pred, ref, no_align());
  EXPECT_EQ(r.abs_rel, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.delta_at(1.05), 1.0);
  EXPECT_EQ(r.pixel_count, 3u);
  DM none = map({1, 1});
  none.valid = sd::Mask(1, 2, false);
  EXPECT_THROW(sd::abs_rel(map({1, 1}), none), std::invalid_argument);
}

TEST(Metrics, MedianAlignmentRemovesScale) {
  DM ref = map({1, 2, 4}), pred = map({20, 20, 20});
  auto r = sd::evaluate(pred, ref, sd::EvalConfig{});
  EXPECT_NEAR(r.abs_rel, 0.5, 1e-12);
  EXPECT_NEAR(r.rmse, std::sqrt(5.0 / 3.0), 1e-12);
  auto raw = sd::evaluate(pred, ref, no_align());
  EXPECT_GT(raw.abs_rel, 5.0);
}

TEST(Metrics, DepthCapExcludesFarReference) {
  sd::EvalConfig c = no_align();
  c.depth_cap = 3.0;
  auto r = sd::evaluate(map({2, 2, 2}), map({1, 2, 4}), c);
  EXPECT_EQ(r.pixel_count, 2u);
  EXPECT_NEAR(r.abs_rel, 0.5, 1e-12);
  c.depth_cap = 0.5;
  EXPECT_THROW(sd::evaluate(map({2, 2, 2}), map({1, 2, 4}), c), std::invalid_argument);
}

TEST(Metrics, DeltaMonotoneOnRandomMaps) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> d(0.5, 50), noise(0.7, 1.4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(64), p(64);
    for (std::size_t i = 0; i < 64; ++i) {
      r[i] = d(rng);
      p[i] = r[i] * noise(rng);
    }
    DM ref = map(r), pred = map(p);
    double a = sd::delta_accuracy(pred, ref, 1.05);
    double b = sd::delta_accuracy(pred, ref, 1.15);
    double c = sd::delta_accuracy(pred, ref, 1.25);
    ASSERT_LE(a, b);
    ASSERT_LE(b, c);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(c, 1.0);
  }
}

TEST(Metrics, PairwiseSumIsExactOnIntegers) {
  std::vector<double> v(1001);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  EXPECT_EQ(sd::pairwise_sum(v.data(), v.size()), 500500.0);
  EXPECT_EQ(sd::pairwise_mean(v), 500.0);
  EXPECT_THROW(sd::pairwise_mean({}), std::invalid_argument);
}

TEST(Metrics, DisparityEvaluation) {
  // Sigmoid 0.5 maps to disparity (1/100 + 10)/2 -> depth 1/5.005.
  TD s = TD::full({1, 3}, 0.5);
  DM ref = map({0.2, 0.2, 0.2});
  auto r = sd::evaluate_disparity(s, ref, no_align(), 0.1, 100);
  EXPECT_NEAR(r.abs_rel, std::abs(0.2 - 1 / 5.005) / 0.2, 1e-12);
  sd::EvalConfig mm;
  mm.alignment = sd::AlignMode::kMinMax;
  mm.align = false;
  TD ends({1, 2}, {0.0, 1.0});
  auto e = sd::evaluate_disparity(ends, map({8, 2}), mm, 0.1, 100);
  EXPECT_NEAR(e.abs_rel, 0.0, 1e-12);
}

TEST(Metrics, MeanReportAndTables) {
  sd::MetricReport a, b;
  a.abs_rel = 0.1;
  b.abs_rel = 0.3;
  a.rmse = 1;
  b.rmse = 2;
  a.delta = {{1.25, 0.8}, {1.15, 0.6}, {1.05, 0.2}};
  b.delta = {{1.25, 1.0}, {1.15, 0.8}, {1.05, 0.4}};
  a.pixel_count = 5;
  b.pixel_count = 7;
  auto m = sd::mean_report({a, b});
  EXPECT_NEAR(m.abs_rel, 0.2, 1e-15);
  EXPECT_NEAR(m.rmse, 1.5, 1e-15);
  EXPECT_NEAR(m.delta_at(1.15), 0.7, 1e-15);
  EXPECT_EQ(m.pixel_count, 12u);

  std::string table = sd::report_table({{"variant", m}});
  EXPECT_NE(table.find("Abs Rel"), std::string::npos);
  EXPECT_NE(table.find("d<1.05"), std::string::npos);
  EXPECT_NE(table.find("variant"), std::string::npos);
  std::string csv = sd::report_csv({{"variant", m}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), sd::kReportCsvHeader);
  EXPECT_NE(csv.find("variant,0.2,"), std::string::npos);
}
