#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "pode/model.hpp"
#include "pode/optim.hpp"

using namespace pode;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.d_latent = 4;
  c.encoder_width = 6;
  c.hidden_width = 5;
  c.seed = seed;
  return c;
}

ForecastRequest request() {
  ForecastRequest r;
  r.obs_times = {0.0, 0.13, 0.3, 0.42, 0.6};
  r.obs_values = {0.2, 0.5, -0.1, 0.3, 0.8};
  r.query_times = {0.7, 0.85, 1.0};
  return r;
}

void zero_all(LatentOdeModel& m) {
  for (Parameter* p : m.parameters()) p->value.fill(0.0);
}

}  // namespace

TEST(Model, SingleObservationZeroWeightsGivesProjectionBias) {
  LatentOdeModel m(small_config());
  zero_all(m);
  m.z0_proj().bias().value = Tensor::vector({0.1, -0.2, 0.3, 0.4});
  const std::vector<double> t{0.5}, v{1.0};
  SeriesView view{t, v, 1};
  Tape tape;
  Var z0 = m.encode(tape, std::span<const SeriesView>(&view, 1));
  EXPECT_EQ(z0.value().vec(), (std::vector<double>{0.1, -0.2, 0.3, 0.4}));
}

TEST(Model, EncoderIsOrderSensitive) {
  LatentOdeModel m(small_config());
  const std::vector<double> t{0.0, 0.1, 0.2, 0.3};
  const std::vector<double> a{0.1, 0.9, -0.4, 0.3}, b{0.3, -0.4, 0.9, 0.1};
  std::vector<SeriesView> views{{t, a, 4}, {t, b, 4}};
  Tape tape;
  Var z0 = m.encode(tape, views);
  bool differs = false;
  for (std::size_t c = 0; c < 4; ++c) differs = differs || z0.value().at(0, c) != z0.value().at(1, c);
  EXPECT_TRUE(differs);
}

TEST(Model, IdenticalRowsEncodeIdentically) {
  LatentOdeModel m(small_config());
  ForecastRequest r = request();
  std::vector<ForecastRequest> batch{r, r};
  auto out = m.forecast(batch);
  EXPECT_EQ(out[0], out[1]);
}

TEST(Model, EmptyObservationsRejected) {
  LatentOdeModel m(small_config());
  SeriesView view{{}, {}, 0};
  Tape tape;
  EXPECT_THROW(m.encode(tape, std::span<const SeriesView>(&view, 1)), std::invalid_argument);
}

TEST(Model, ZeroDynamicsGiveConstantForecast) {
  LatentOdeModel m(small_config());
  for (Parameter* p : m.dynamics_out().parameters()) p->value.fill(0.0);
  ForecastRequest r = request();
  auto out = m.forecast(std::span<const ForecastRequest>(&r, 1));
  for (double v : out[0]) EXPECT_EQ(v, out[0][0]);
}

TEST(Model, QueryAtLastObservationIsDecodedLatent) {
  LatentOdeModel m(small_config());
  ForecastRequest r = request();
  r.query_times = {r.obs_times.back()};
  const double got = m.forecast(std::span<const ForecastRequest>(&r, 1))[0][0];
  SeriesView view{r.obs_times, r.obs_values, r.obs_times.size()};
  Tape tape;
  const double expect = m.decode(m.encode(tape, std::span<const SeriesView>(&view, 1))).value()[0];
  EXPECT_EQ(got, expect);
}

TEST(Model, LossGradientMatchesFiniteDifferences) {
  LatentOdeModel m(small_config());
  m.grow_stage();
  m.set_alpha(1, 0.6);
  const std::vector<double> t{0.0, 0.1, 0.25, 0.4, 0.5, 0.62, 0.75, 0.83, 0.9, 1.0};
  const std::vector<double> v{0.1, 0.4, 0.2, -0.3, 0.0, 0.5, 0.7, 0.2, -0.1, 0.3};
  SeriesView view{t, v, 5};
  auto f = [&](Tape& tape) { return m.loss(tape, std::span<const SeriesView>(&view, 1)); };
  for (Parameter* p : m.parameters()) EXPECT_LT(finite_diff_check(f, *p, 1e-6), 1e-3) << p->name;
}

TEST(Model, LossOfPerfectPredictionIsZero) {
  LatentOdeModel m(small_config());
  zero_all(m);
  m.head().bias().value = Tensor::vector({2.0});
  const std::vector<double> t{0.0, 0.2, 0.4, 0.6};
  const std::vector<double> twos{2, 2, 2, 2}, zeros{0, 0, 0, 0};
  Tape a, b;
  SeriesView hit{t, twos, 2}, miss{t, zeros, 2};
  EXPECT_EQ(m.loss(a, std::span<const SeriesView>(&hit, 1)).value().item(), 0.0);
  // constant 2 against truth 0
  EXPECT_EQ(m.loss(b, std::span<const SeriesView>(&miss, 1)).value().item(), 4.0);
}

TEST(Model, LossDecreasesOnEasySample) {
  ModelConfig c = small_config(1);
  LatentOdeModel m(c);
  std::vector<double> t, v;
  for (int i = 0; i < 20; ++i) {
    t.push_back(0.1 * i);
    v.push_back(std::sin(2.0 * 0.1 * i));
  }
  SeriesView view{t, v, 10};
  Adam opt;
  auto loss_now = [&] {
    Tape tape;
    return m.loss(tape, std::span<const SeriesView>(&view, 1)).value().item();
  };
  const double before = loss_now();
  for (int i = 0; i < 50; ++i) {
    Tape tape;
    tape.backward(m.loss(tape, std::span<const SeriesView>(&view, 1)));
    auto ps = m.parameters();
    opt.step(ps, 1e-2);
  }
  EXPECT_LT(loss_now(), 0.5 * before);
}

TEST(Model, GrowthIsTransparent) {
  LatentOdeModel m(small_config());
  ForecastRequest r = request();
  const auto before = m.forecast(std::span<const ForecastRequest>(&r, 1));
  std::vector<Tensor> weights;
  for (Parameter* p : m.parameters()) weights.push_back(p->value);
  const std::size_t count = m.parameter_count();
  m.grow_stage();
  EXPECT_EQ(m.stage(), 2);
  EXPECT_GT(m.parameter_count(), count);
  EXPECT_EQ(m.forecast(std::span<const ForecastRequest>(&r, 1)), before);
  auto ps = m.parameters();
  std::size_t k = 0;
  for (Parameter* p : ps)
    if (p->stage_of_birth == 1) EXPECT_EQ(p->value, weights[k++]) << p->name;
  m.grow_stage();
  EXPECT_THROW(m.grow_stage(), StageError);
}

TEST(Model, SameSeedSameForecasts) {
  LatentOdeModel a(small_config(9)), b(small_config(9)), c(small_config(10));
  ForecastRequest r = request();
  const auto fa = a.forecast(std::span<const ForecastRequest>(&r, 1));
  EXPECT_EQ(fa, b.forecast(std::span<const ForecastRequest>(&r, 1)));
  EXPECT_NE(fa, c.forecast(std::span<const ForecastRequest>(&r, 1)));
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  LatentOdeModel m(small_config());
  m.grow_stage();
  m.set_alpha(1, 0.37);
  const auto path = std::filesystem::temp_directory_path() / "pode_model_roundtrip.json";
  m.save(path);
  LatentOdeModel back = LatentOdeModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.stage(), 2);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.encoder().alpha(1), 0.37);
  auto pa = m.parameters(), pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_EQ(pa[i]->stage_of_birth, pb[i]->stage_of_birth);
  }
  ForecastRequest r = request();
  EXPECT_EQ(m.forecast(std::span<const ForecastRequest>(&r, 1)), back.forecast(std::span<const ForecastRequest>(&r, 1)));
}

TEST(Model, ForecastMseIgnoresReconstruction) {
  // perfect on the observed half, off by one everywhere in the forecast half
  const std::vector<std::vector<double>> pred{{1.0, 2.0}}, truth{{2.0, 3.0}};
  EXPECT_EQ(forecast_mse(pred, truth), 1.0);
}
