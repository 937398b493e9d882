#pragma once

#include <cstring>
#include <vector>

#include "addiff/tasks.hpp"
#include "addiff/training.hpp"

namespace addiff::testing {

/// Gradients for an expanded batch computed the naive way: every tuple gets
/// its own copy of its instance's condition row, and the per-copy condition
/// gradients are summed back before the encoder backward pass. One shard.
inline Gradients duplicated_gradients(const Model& model, const TrainingSet& data,
                                      std::span<const int> instances, const ExpandedBatch& batch,
                                      const Schedule& schedule, bool weighted) {
  const int items = static_cast<int>(instances.size());
  const int tuples = batch.tuples();
  const int kfold = tuples / items;
  const int n = batch.seq_len;
  const int per_item = data.tokens_per_item;
  const double inv_tuples = 1.0 / tuples;

  Matrix tokens(static_cast<Eigen::Index>(items) * per_item, data.features.cols());
  for (int i = 0; i < items; ++i) {
    tokens.middleRows(static_cast<Eigen::Index>(i) * per_item, per_item) =
        data.features.middleRows(static_cast<Eigen::Index>(instances[i]) * per_item, per_item);
  }
  EncoderPass enc = encoder_forward(model.encoder, tokens, per_item);
  const Matrix& encoded = enc.tape.value(enc.output);

  Matrix copies(tuples, encoded.cols());
  DenoiserBatch db{batch.noisy, batch.timesteps, std::vector<int>(tuples)};
  for (int r = 0; r < tuples; ++r) {
    copies.row(r) = encoded.row(r / kfold);
    db.condition_index[r] = batch.source[r] < 0 ? -1 : r;
  }
  DenoiserPass pass = denoiser_forward(model.denoiser, db, copies);
  const Matrix& out = pass.tape.value(pass.output);
  Matrix grad_out(out.rows(), out.cols());
  double loss_sum = 0.0;
  for (int r = 0; r < tuples; ++r) {
    const Eigen::Index row = static_cast<Eigen::Index>(r) * n;
    const std::span<const int> targets(batch.targets.data() + static_cast<std::size_t>(r) * n, n);
    LossResult lr = ce_loss(out.middleRows(row, n), targets, schedule.alpha_bar(batch.timesteps[r]), weighted);
    loss_sum += lr.loss;
    grad_out.middleRows(row, n) = lr.grad * inv_tuples;
  }
  DenoiserGrads dg = denoiser_backward(pass, grad_out);
  Matrix summed = Matrix::Zero(items, encoded.cols());
  for (int r = 0; r < tuples; ++r) {
    if (batch.source[r] >= 0) summed.row(r / kfold) += dg.conditions.row(r);
  }
  Gradients g{model.denoiser.tensors.zeros_like(), model.encoder.tensors.zeros_like(), 0.0};
  for (std::size_t i = 0; i < g.denoiser.size(); ++i) g.denoiser[i] += dg.params[i];
  const std::vector<Matrix> eg = encoder_backward(enc, summed);
  for (std::size_t i = 0; i < g.encoder.size(); ++i) g.encoder[i] += eg[i];
  g.loss = loss_sum * inv_tuples;
  return g;
}

inline bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

inline bool same_bits(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

struct KfoldComparison {
  bool gradients_identical = false;
  bool parameters_identical = false;
  double loss = 0.0;
};

/// One optimisation step with kfold reuse against the duplication oracle,
/// starting from the same model, batch and noise.
inline KfoldComparison compare_kfold_step(int kfold, std::uint64_t seed) {
  const BlobTask task = make_blob_task();
  const Dataset d = gen_blobs(task, 16, seed);
  NoiseSource init(seed + 1);
  DenoiserSpec ds;
  ds.classes = 10;
  EncoderSpec es;
  es.feature_dim = 16;
  Model model{init_denoiser(ds, init), init_encoder(es, init)};
  // Non-zero head so every parameter gets gradient.
  Matrix& head = model.denoiser.tensors.at("head.w");
  for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = 0.1 * init.normal();
  const TrainingSet data{d.features, d.tokens_per_item, d.targets, 1};
  const Schedule schedule = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  TrainConfig cfg;
  cfg.kfold = kfold;
  cfg.shard_size = 16;
  std::vector<int> instances(16);
  for (int i = 0; i < 16; ++i) instances[i] = 15 - i;

  NoiseSource noise(seed + 2);
  std::vector<int> targets;
  for (int idx : instances) targets.push_back(data.targets[idx]);
  ExpandedBatch batch = kfold_expand(16, targets, 1, ds.classes, kfold, schedule, noise);
  const int nulled = cfg_dropout(batch.source, cfg.cfg_dropout_prob, noise);

  const Gradients reuse = compute_gradients(model, data, instances, batch, Objective::kWeightedCe,
                                            schedule, cfg.shard_size);
  const Gradients naive = duplicated_gradients(model, data, instances, batch, schedule, true);

  KfoldComparison out;
  out.loss = reuse.loss;
  out.gradients_identical = reuse.loss == naive.loss;
  for (std::size_t i = 0; i < reuse.denoiser.size(); ++i) {
    out.gradients_identical = out.gradients_identical && same_bits(reuse.denoiser[i], naive.denoiser[i]);
  }
  for (std::size_t i = 0; i < reuse.encoder.size(); ++i) {
    out.gradients_identical = out.gradients_identical && same_bits(reuse.encoder[i], naive.encoder[i]);
  }

  Model a = model, b = model;
  Optimizer oa(a), ob(b);
  const StepClock clock{1, 10, 1};
  apply_step(a, oa, reuse, cfg, clock, batch.tuples(), nulled);
  apply_step(b, ob, naive, cfg, clock, batch.tuples(), nulled);
  out.parameters_identical = same_bits(a.denoiser.tensors, b.denoiser.tensors) &&
                             same_bits(a.encoder.tensors, b.encoder.tensors);
  return out;
}

}  // namespace addiff::testing
