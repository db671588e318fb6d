#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "pode/baselines.hpp"
#include "pode/random.hpp"

using namespace pode;

namespace {

std::vector<double> ar1(double phi, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> y(n);
  double prev = 0.0;
  for (std::size_t i = 0; i < 200 + n; ++i) {  // burn-in
    prev = phi * prev + rng.normal();
    if (i >= 200) y[i - 200] = prev;
  }
  return y;
}

}  // namespace

TEST(Static, ConstantHistory) {
  const std::vector<double> h(10, 4.5);
  EXPECT_EQ(static_predict(StaticModel{3}, h, 5), std::vector<double>(5, 4.5));
}

TEST(Static, PeriodicLagIsExact) {
  std::vector<double> h;
  for (int i = 0; i < 40; ++i) h.push_back(static_cast<double>(i % 8) * 0.5);
  const auto f = static_predict(StaticModel{8}, h, 20);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)], static_cast<double>((40 + i) % 8) * 0.5);
}

TEST(Static, LastValueCarry) {
  EXPECT_EQ(static_predict(StaticModel{1}, std::vector<double>{1, 2, 3}, 2), (std::vector<double>{3, 3}));
  EXPECT_THROW(static_predict(StaticModel{5}, std::vector<double>{1, 2}, 1), BaselineError);
}

TEST(HistoricalAverage, OneSeasonRepeats) {
  const std::vector<double> h{1, 5, 2};
  EXPECT_EQ(ha_predict(HistoricalAverage{3, 0.9}, h, 6), (std::vector<double>{1, 5, 2, 1, 5, 2}));
}

TEST(HistoricalAverage, PeriodicIsExact) {
  std::vector<double> h;
  for (int i = 0; i < 30; ++i) h.push_back(std::sin(i * 2.0 * std::numbers::pi / 6.0));
  const auto f = ha_predict(HistoricalAverage{6, 0.7}, h, 12);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(f[static_cast<std::size_t>(i)], std::sin((30 + i) * 2.0 * std::numbers::pi / 6.0), 1e-12);
}

TEST(HistoricalAverage, UnweightedMeanOfTwoSeasons) {
  const std::vector<double> h{0, 0, 0, 2, 2, 2};
  EXPECT_EQ(ha_predict(HistoricalAverage{3, 1.0}, h, 3), (std::vector<double>{1, 1, 1}));
}

TEST(HistoricalAverage, RecentSeasonWeighsMore) {
  const std::vector<double> h{0, 0, 2, 2};
  const double w = 0.5;
  // season j back has weight w^(j-1)
  EXPECT_DOUBLE_EQ(ha_predict(HistoricalAverage{2, w}, h, 1)[0], (2.0 * 1.0 + 0.0 * w) / (1.0 + w));
  EXPECT_THROW(ha_predict(HistoricalAverage{5, 0.9}, h, 1), BaselineError);
}

TEST(Arima, RecoversAr1Coefficient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ArimaModel m = arima_fit(ar1(0.7, 2000, seed), ArimaOrder{1, 0, 0});
    ASSERT_TRUE(m.fitted);
    EXPECT_GE(m.phi[0], 0.6) << seed;
    EXPECT_LE(m.phi[0], 0.8) << seed;
  }
}

TEST(Arima, RandomWalkRepeatsLastValue) {
  const std::vector<double> y{1.0, 1.4, 0.9, 1.7, 2.2, 2.0, 2.5, 2.1, 2.9, 3.3, 3.0, 3.6};
  const ArimaModel m = arima_fit(y, ArimaOrder{0, 1, 0});
  EXPECT_EQ(arima_predict(m, 4), std::vector<double>(4, 3.6));
}

TEST(Arima, WhiteNoiseForecastsMean) {
  Rng rng(2);
  std::vector<double> y(500);
  double mean = 0.0;
  for (double& v : y) {
    v = rng.normal();
    mean += v;
  }
  mean /= 500.0;
  const auto f = arima_predict(arima_fit(y, ArimaOrder{0, 0, 0}), 3);
  for (double v : f) EXPECT_NEAR(v, mean, 1e-9);
}

TEST(Arima, Ma1IsEstimated) {
  Rng rng(4);
  std::vector<double> y;
  double e_prev = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double e = rng.normal();
    y.push_back(e + 0.5 * e_prev);
    e_prev = e;
  }
  const ArimaModel m = arima_fit(y, ArimaOrder{0, 0, 1});
  EXPECT_NEAR(m.theta[0], 0.5, 0.1);
}

TEST(Arima, Errors) {
  EXPECT_THROW(arima_fit(std::vector<double>(15, 1.0), ArimaOrder{1, 0, 1}), BaselineError);
  // a constant series leaves the AR regression singular
  EXPECT_THROW(arima_fit(std::vector<double>(100, 1.0), ArimaOrder{1, 1, 0}), BaselineError);
  ArimaModel unfitted;
  EXPECT_THROW(arima_predict(unfitted, 2), std::logic_error);
}

TEST(Arima, AutoPicksAModelAndIsDeterministic) {
  const auto y = ar1(0.6, 400, 9);
  const ArimaModel a = arima_auto(y), b = arima_auto(y);
  EXPECT_TRUE(a.fitted);
  EXPECT_EQ(a.order, b.order);
  EXPECT_EQ(arima_predict(a, 5), arima_predict(b, 5));
}

TEST(DominantPeriod, FindsSinusoidPeriod) {
  std::vector<double> y;
  for (int i = 0; i < 120; ++i) y.push_back(0.02 * i + std::sin(2.0 * std::numbers::pi * i / 24.0));
  EXPECT_EQ(dominant_period(y), 24u);
}
