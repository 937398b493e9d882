#include "addiff/encoder.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "addiff/tasks.hpp"
#include "addiff/training.hpp"
#include "gradcheck.hpp"

namespace addiff {
namespace {

using testing::check_gradient;
using testing::random_matrix;

EncoderSpec small_spec(Pooling pooling) {
  EncoderSpec s;
  s.feature_dim = 4;
  s.model_dim = 4;
  s.layers = 2;
  s.ffn_dim = 6;
  s.heads = 2;
  s.pooling = pooling;
  return s;
}

// Input projection is the identity and every residual branch writes zero.
EncoderParams passthrough(const EncoderSpec& spec) {
  NoiseSource n(1);
  EncoderParams p = init_encoder(spec, n);
  p.tensors.at("in.w") = Matrix::Identity(spec.feature_dim, spec.model_dim);
  for (int i = 0; i < spec.layers; ++i) {
    const std::string l = "layer" + std::to_string(i) + ".";
    p.tensors.at(l + "attn.o").setZero();
    p.tensors.at(l + "fc2.w").setZero();
    p.tensors.at(l + "fc2.b").setZero();
  }
  return p;
}

TEST(Encoder, PassthroughMeanOfIdenticalTokensIsTheToken) {
  const EncoderSpec spec = small_spec(Pooling::kMean);
  const EncoderParams p = passthrough(spec);
  RowVector token(4);
  token << 0.5, -1.25, 2.0, 0.0;
  const Matrix tokens = token.replicate(3, 1);
  const Condition c = encode(p, tokens);
  EXPECT_FALSE(c.is_null);
  EXPECT_LT((c.vector - token).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Encoder, PassthroughClassTokenPoolingReturnsTheClassToken) {
  const EncoderSpec spec = small_spec(Pooling::kClassToken);
  const EncoderParams p = passthrough(spec);
  NoiseSource n(2);
  const Condition c = encode(p, random_matrix(3, 4, n));
  EXPECT_LT((c.vector - p.tensors.at("cls")).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Encoder, MeanPoolingIsPermutationInvariant) {
  NoiseSource n(3);
  const EncoderSpec spec = small_spec(Pooling::kMean);
  const EncoderParams p = init_encoder(spec, n);
  const Matrix tokens = random_matrix(5, 4, n);
  std::vector<int> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), n.engine());
    Matrix shuffled(5, 4);
    for (int r = 0; r < 5; ++r) shuffled.row(r) = tokens.row(perm[r]);
    EXPECT_LT((encode(p, tokens).vector - encode(p, shuffled).vector).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Encoder, ClassTokenPoolingIsPermutationInvariant) {
  NoiseSource n(4);
  const EncoderParams p = init_encoder(small_spec(Pooling::kClassToken), n);
  const Matrix tokens = random_matrix(4, 4, n);
  Matrix reversed = tokens.colwise().reverse();
  EXPECT_LT((encode(p, tokens).vector - encode(p, reversed).vector).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, BatchMatchesSingleItems) {
  NoiseSource n(5);
  const EncoderParams p = init_encoder(small_spec(Pooling::kMean), n);
  const Matrix tokens = random_matrix(3 * 2, 4, n);
  const Matrix batch = encode_batch(p, tokens, 2);
  ASSERT_EQ(batch.rows(), 3);
  for (int b = 0; b < 3; ++b) {
    EXPECT_LT((batch.row(b) - encode(p, tokens.middleRows(2 * b, 2)).vector).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  NoiseSource n(6);
  for (Pooling pooling : {Pooling::kMean, Pooling::kClassToken}) {
    EncoderParams p = init_encoder(small_spec(pooling), n);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) p.tensors[i] += random_matrix(p.tensors[i].rows(), p.tensors[i].cols(), n, 0.1);
    const Matrix tokens = random_matrix(2 * 3, 4, n);
    const Matrix weight = random_matrix(2, 4, n);
    auto loss = [&] { return (encode_batch(p, tokens, 3).array() * weight.array()).sum(); };
    EncoderPass pass = encoder_forward(p, tokens, 3);
    const std::vector<Matrix> g = encoder_backward(pass, weight);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      EXPECT_LT(check_gradient(p.tensors[i], g[i], loss, 20, n).max_rel_error, 1e-6) << p.tensors.name(i);
    }
  }
}

TEST(Encoder, ShapeErrors) {
  NoiseSource n(7);
  const EncoderParams p = init_encoder(small_spec(Pooling::kMean), n);
  EXPECT_THROW(encode_batch(p, Matrix::Zero(3, 5), 1), std::invalid_argument);
  EXPECT_THROW(encode_batch(p, Matrix::Zero(3, 4), 2), std::invalid_argument);
  EXPECT_THROW(encode_batch(p, Matrix::Zero(3, 4), 0), std::invalid_argument);
  EncoderSpec bad = small_spec(Pooling::kMean);
  bad.heads = 3;
  EXPECT_THROW(init_encoder(bad, n), std::invalid_argument);
  bad = small_spec(Pooling::kMean);
  bad.layers = 0;
  EXPECT_THROW(init_encoder(bad, n), std::invalid_argument);
}

TEST(Encoder, PoolingNames) {
  EXPECT_EQ(parse_pooling(to_string(Pooling::kMean)), Pooling::kMean);
  EXPECT_EQ(parse_pooling(to_string(Pooling::kClassToken)), Pooling::kClassToken);
  EXPECT_THROW(parse_pooling("max"), std::invalid_argument);
}

// Logistic regression by plain gradient descent on frozen conditions.
double probe_accuracy(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& test_x,
                      const std::vector<int>& test_y) {
  const Vector mu = train_x.colwise().mean();
  Vector sd = ((train_x.rowwise() - mu.transpose()).array().square().colwise().mean()).sqrt();
  sd = sd.cwiseMax(1e-9);
  auto standardise = [&](const Matrix& x) {
    return Matrix(((x.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array()).matrix());
  };
  const Matrix xs = standardise(train_x);
  Vector w = Vector::Zero(xs.cols());
  double b = 0.0;
  for (int it = 0; it < 500; ++it) {
    const Vector z = (xs * w).array() + b;
    Vector r(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) r[i] = 1.0 / (1.0 + std::exp(-z[i])) - train_y[i];
    w -= 0.5 * xs.transpose() * r / static_cast<double>(r.size());
    b -= 0.5 * r.mean();
  }
  const Vector z = (standardise(test_x) * w).array() + b;
  int correct = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) correct += (z[i] > 0.0) == (test_y[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(z.size());
}

TEST(Encoder, TrainedClassTokenSeparatesTwoBlobClasses) {
  const BlobTask task = make_blob_task(2, 16, 8);
  const Dataset train_set = gen_blobs(task, 1000, 11);
  const Dataset test_set = gen_blobs(task, 1000, 12);
  NoiseSource init(13);
  DenoiserSpec ds;
  ds.classes = 2;
  EncoderSpec es;
  es.feature_dim = 16;
  es.pooling = Pooling::kClassToken;
  Model model{init_denoiser(ds, init), init_encoder(es, init)};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.warmup_epochs = 1;
  cfg.seed = 14;
  const Schedule schedule = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  train(model, TrainingSet{train_set.features, 8, train_set.targets, 1}, cfg, schedule);
  const double acc = probe_accuracy(encode_batch(model.encoder, train_set.features, 8), train_set.targets,
                                    encode_batch(model.encoder, test_set.features, 8), test_set.targets);
  EXPECT_GT(acc, 0.95);
}

}  // namespace
}  // namespace addiff
