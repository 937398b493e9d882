#include "addiff/categorical.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace addiff {
namespace {

Schedule half_schedule() { return Schedule::from_alpha_bars(ScheduleKind::kLinear, 0.5, 0.5, {1.0, 0.5, 0.25}); }

TEST(OneHot, Rendering) {
  EXPECT_EQ(one_hot(1, 3).dense(), (Vector(3) << 0, 1, 0).finished());
  EXPECT_EQ(one_hot(0, 1).dense(), Vector::Ones(1));
  NoiseSource n(1);
  for (int i = 0; i < 200; ++i) {
    const int K = n.uniform_int(1, 50);
    const Vector v = one_hot(n.uniform_int(0, K - 1), K).dense();
    EXPECT_EQ(v.sum(), 1.0);
    EXPECT_EQ((v.array() == 0.0).count(), K - 1);
  }
  EXPECT_THROW(one_hot(3, 3), std::out_of_range);
  EXPECT_THROW(one_hot(-1, 3), std::out_of_range);
  EXPECT_THROW(one_hot(0, 0), std::invalid_argument);
}

TEST(Corrupt, CleanEndpointIsExact) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 100, 1e-4, 0.02);
  NoiseSource n(2);
  const NoisyLabel y = corrupt(one_hot(2, 5), 0, s, n);
  EXPECT_EQ(y.values, one_hot(2, 5).dense());
  EXPECT_EQ(y.t, 0);
  EXPECT_THROW(corrupt(one_hot(2, 5), 101, s, n), std::out_of_range);
}

TEST(Corrupt, ZeroCoefficientIgnoresLabel) {
  NoiseSource a(3), b(3);
  EXPECT_EQ(gaussian_mix(one_hot(0, 4), 0.0, a), gaussian_mix(one_hot(3, 4), 0.0, b));
}

TEST(Corrupt, ReturnsTheNoiseItDrew) {
  const Schedule s = half_schedule();
  NoiseSource n(4);
  Vector eps;
  const NoisyLabel y = corrupt(one_hot(1, 3), 1, s, n, &eps);
  EXPECT_TRUE(y.values.isApprox(std::sqrt(0.5) * one_hot(1, 3).dense() + std::sqrt(0.5) * eps, 1e-15));
}

TEST(Corrupt, MomentsAtHalf) {
  const Schedule s = half_schedule();
  NoiseSource n(5);
  const int draws = 100000;
  Vector sum = Vector::Zero(3), sq = Vector::Zero(3);
  for (int i = 0; i < draws; ++i) {
    const Vector v = corrupt(one_hot(0, 3), 1, s, n).values;
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const Vector mean = sum / draws;
  const Vector var = sq / draws - mean.cwiseProduct(mean);
  EXPECT_NEAR(mean(0), 0.70711, 0.01);
  EXPECT_NEAR(mean(1), 0.0, 0.01);
  EXPECT_NEAR(mean(2), 0.0, 0.01);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(var(k), 0.5, 0.01);
}

TEST(Renoise, Moments) {
  NoiseSource n(6);
  const int draws = 100000;
  Vector sum = Vector::Zero(4), sq = Vector::Zero(4);
  for (int i = 0; i < draws; ++i) {
    const Vector v = gaussian_mix(one_hot(2, 4), 0.72, n);
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const Vector mean = sum / draws;
  const Vector var = sq / draws - mean.cwiseProduct(mean);
  EXPECT_NEAR(mean(2), std::sqrt(0.72), 0.01);
  for (int k : {0, 1, 3}) EXPECT_NEAR(mean(k), 0.0, 0.01);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(var(k), 0.28, 0.01);
}

TEST(Renoise, UnitCoefficientIsExactAndDrawsNothing) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 10, 1e-4, 0.02);
  NoiseSource a(7), b(7);
  const NoisyLabel y = renoise(one_hot(1, 3), 0, s, RenoiseVariant::kAlphaBar, a);
  EXPECT_EQ(y.values, one_hot(1, 3).dense());
  EXPECT_EQ(a.normal(), b.normal());
  // alpha(0) is defined as 1 as well
  EXPECT_EQ(renoise(one_hot(1, 3), 0, s, RenoiseVariant::kAlpha, a).values, one_hot(1, 3).dense());
}

TEST(Renoise, VariantsUseDifferentCoefficients) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 100, 1e-4, 0.02);
  NoiseSource a(8), b(8), ref(8);
  const Vector bar = renoise(one_hot(0, 2), 60, s, RenoiseVariant::kAlphaBar, a).values;
  const Vector lit = renoise(one_hot(0, 2), 60, s, RenoiseVariant::kAlpha, b).values;
  Vector eps(2);
  eps << ref.normal(), ref.normal();
  EXPECT_NEAR(bar(0), std::sqrt(s.alpha_bar(60)) + std::sqrt(1 - s.alpha_bar(60)) * eps(0), 1e-14);
  EXPECT_NEAR(lit(0), std::sqrt(s.alpha(60)) + std::sqrt(1 - s.alpha(60)) * eps(0), 1e-14);
  EXPECT_THROW(renoise(one_hot(0, 2), 101, s, RenoiseVariant::kAlpha, a), std::out_of_range);
  EXPECT_EQ(parse_renoise_variant("alpha"), RenoiseVariant::kAlpha);
  EXPECT_EQ(parse_renoise_variant("alpha_bar"), RenoiseVariant::kAlphaBar);
  EXPECT_THROW(parse_renoise_variant("beta"), std::invalid_argument);
}

TEST(Discretize, ArgmaxAndTies) {
  const std::vector<double> a{0.1, 0.7, 0.2};
  EXPECT_EQ(discretize(a).index, 1);
  const std::vector<double> tie{0.5, 0.5};
  EXPECT_EQ(discretize(tie).index, 0);
  const std::vector<double> neg{-3.0, -1.0, -1.0};
  EXPECT_EQ(discretize(neg).index, 1);
  const std::vector<double> nan{0.1, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(discretize(nan), std::invalid_argument);
  for (int K = 1; K < 20; ++K) {
    for (int k = 0; k < K; ++k) {
      const Vector v = one_hot(k, K).dense();
      EXPECT_EQ(discretize(std::span<const double>(v.data(), K)), one_hot(k, K));
    }
  }
}

TEST(Softmax, ClosedForms) {
  const std::vector<double> eq{2.0, 2.0, 2.0, 2.0};
  for (double tau : {0.1, 1.0, 7.0}) {
    const CategoricalDistribution d = softmax(eq, tau);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(d.probs()(k), 0.25, 1e-15);
  }
  const std::vector<double> l{0.0, std::log(3.0)};
  const CategoricalDistribution d = softmax(l);
  EXPECT_NEAR(d.probs()(0), 0.25, 1e-15);
  EXPECT_NEAR(d.probs()(1), 0.75, 1e-15);
  EXPECT_THROW(softmax(l, 0.0), std::invalid_argument);
  const std::vector<double> nan{0.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(softmax(nan), std::invalid_argument);
}

TEST(Softmax, ShiftInvariantAndValid) {
  NoiseSource n(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(8), shifted(8);
    const double c = 1000.0 * (n.uniform() - 0.5);
    for (int k = 0; k < 8; ++k) {
      l[k] = 50.0 * n.normal();
      shifted[k] = l[k] + c;
    }
    const Vector p = softmax(l).probs();
    const Vector q = softmax(shifted).probs();
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.array() >= 0.0).all());
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(CategoricalDistribution, Validation) {
  EXPECT_THROW(CategoricalDistribution{Vector()}, std::invalid_argument);
  EXPECT_THROW(CategoricalDistribution((Vector(2) << 0.5, 0.6).finished()), std::invalid_argument);
  EXPECT_THROW(CategoricalDistribution((Vector(2) << -0.1, 1.1).finished()), std::invalid_argument);
  EXPECT_THROW(CategoricalDistribution((Vector(2) << std::nan(""), 1.0).finished()), std::invalid_argument);
  EXPECT_NO_THROW(CategoricalDistribution((Vector(2) << 0.3, 0.7 + 5e-7).finished()));
}

TEST(SampleCategorical, PointMassAndFrequency) {
  NoiseSource n(10);
  const CategoricalDistribution point((Vector(3) << 0, 0, 1).finished());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_categorical(point, n).index, 2);
  const CategoricalDistribution fair((Vector(2) << 0.5, 0.5).finished());
  int zeros = 0;
  for (int i = 0; i < 100000; ++i) zeros += sample_categorical(fair, n).index == 0;
  EXPECT_GE(zeros / 100000.0, 0.49);
  EXPECT_LE(zeros / 100000.0, 0.51);
}

TEST(SampleCategorical, SeededSequenceRepeats) {
  const CategoricalDistribution d((Vector(4) << 0.1, 0.2, 0.3, 0.4).finished());
  NoiseSource a(11), b(11);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_categorical(d, a).index, sample_categorical(d, b).index);
}

}  // namespace
}  // namespace addiff
