#include "addiff/pdd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "addiff/categorical.hpp"
#include "addiff/sampler.hpp"

namespace addiff {

MaskedSequence mask_corrupt(std::span<const int> tokens, double rate, int mask_id,
                            NoiseSource& noise) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("mask rate outside [0, 1]");
  MaskedSequence out{std::vector<int>(tokens.begin(), tokens.end()), {}, mask_id};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (noise.bernoulli(rate)) {
      out.tokens[i] = mask_id;
      out.mask_positions.push_back(static_cast<int>(i));
    }
  }
  return out;
}

ExpandedBatch pdd_expand(int instances, std::span<const int> targets, int seq_len, int vocab,
                         int kfold, NoiseSource& noise) {
  if (kfold < 1) throw std::invalid_argument("kfold must be >= 1");
  if (static_cast<long>(targets.size()) != static_cast<long>(instances) * seq_len) {
    throw std::invalid_argument("pdd_expand: targets must hold instances * seq_len entries");
  }
  const int classes = vocab + 1;
  const int tuples = instances * kfold;
  ExpandedBatch out;
  out.seq_len = seq_len;
  out.source.resize(tuples);
  out.timesteps.assign(tuples, kPddTimestep);
  out.noisy = Matrix::Zero(static_cast<Eigen::Index>(tuples) * seq_len, classes);
  out.noise = Matrix::Zero(0, classes);
  out.targets.resize(static_cast<std::size_t>(tuples) * seq_len);
  out.scored.assign(out.targets.size(), 0);

  for (int i = 0; i < instances; ++i) {
    const std::span<const int> seq = targets.subspan(static_cast<std::size_t>(i) * seq_len, seq_len);
    for (int j = 0; j < kfold; ++j) {
      const int r = i * kfold + j;
      out.source[r] = i;
      // rate in (0, 1]
      const double rate = 1.0 - noise.uniform();
      MaskedSequence m = mask_corrupt(seq, rate, vocab, noise);
      for (int p = 0; p < seq_len; ++p) {
        const std::size_t row = static_cast<std::size_t>(r) * seq_len + p;
        out.noisy(static_cast<Eigen::Index>(row), m.tokens[p]) = 1.0;
        out.targets[row] = seq[p];
      }
      for (int p : m.mask_positions) out.scored[static_cast<std::size_t>(r) * seq_len + p] = 1;
    }
  }
  return out;
}

StepMetrics pdd_train_step(Model& model, Optimizer& optimizer, const TrainingSet& data,
                           std::span<const int> instances, const TrainConfig& config,
                           const StepClock& clock, NoiseSource& noise) {
  const int n = data.seq_len;
  std::vector<int> targets;
  targets.reserve(instances.size() * n);
  for (int idx : instances) {
    for (int j = 0; j < n; ++j) targets.push_back(data.targets[static_cast<std::size_t>(idx) * n + j]);
  }
  const int vocab = model.denoiser.spec.classes - 1;
  ExpandedBatch batch = pdd_expand(static_cast<int>(instances.size()), targets, n, vocab,
                                   config.kfold, noise);
  const int nulled = cfg_dropout(batch.source, config.cfg_dropout_prob, noise);
  // The schedule is unused by the masked objective; a one-step table
  // satisfies the interface.
  static const Schedule unused = Schedule::build(ScheduleKind::kLinear, 1, 0.5, 0.5);
  Gradients grads = compute_gradients(model, data, instances, batch, Objective::kMaskedCe, unused,
                                      config.shard_size);
  return apply_step(model, optimizer, std::move(grads), config, clock, batch.tuples(), nulled);
}

std::vector<EpochRecord> pdd_train(Model& model, const TrainingSet& data,
                                   const TrainConfig& config, const TrainHooks& hooks) {
  StepFunction step = [&](Model& m, Optimizer& opt, std::span<const int> batch,
                          const StepClock& clock, NoiseSource& noise) {
    return pdd_train_step(m, opt, data, batch, config, clock, noise);
  };
  return run_epochs(model, data, config, step, hooks);
}

std::vector<PddResult> pdd_generate_batch(const DenoiserParams& params, const Matrix& conditions,
                                          int rounds, double guidance_scale) {
  if (rounds < 1) throw std::invalid_argument("pdd_generate: rounds must be >= 1");
  const int n = params.spec.seq_len;
  const int classes = params.spec.classes;
  const int mask_id = classes - 1;
  const auto items = static_cast<int>(conditions.rows());
  const int per_round = (n + rounds - 1) / rounds;

  std::vector<PddResult> results(items);
  for (PddResult& r : results) r.tokens.assign(n, mask_id);
  std::vector<int> cond_index(items), null_index(items, -1);
  for (int b = 0; b < items; ++b) cond_index[b] = b;

  for (int round = 0; round < rounds; ++round) {
    bool any_masked = false;
    for (const PddResult& r : results) {
      any_masked = any_masked || std::find(r.tokens.begin(), r.tokens.end(), mask_id) != r.tokens.end();
    }
    if (!any_masked) break;

    Matrix input = Matrix::Zero(static_cast<Eigen::Index>(items) * n, classes);
    for (int b = 0; b < items; ++b) {
      for (int p = 0; p < n; ++p) input(static_cast<Eigen::Index>(b) * n + p, results[b].tokens[p]) = 1.0;
    }
    DenoiserBatch batch{input, std::vector<int>(items, kPddTimestep), cond_index};
    DenoiserPass cond = denoiser_forward(params, batch, conditions, false);
    Matrix logits = cond.tape.value(cond.output);
    if (guidance_scale != 1.0) {
      batch.condition_index = null_index;
      DenoiserPass uncond = denoiser_forward(params, batch, conditions, false);
      logits = guided_logits(logits, uncond.tape.value(uncond.output), guidance_scale);
    }

    for (int b = 0; b < items; ++b) {
      PddResult& res = results[b];
      struct Candidate {
        double confidence;
        int position;
        int token;
      };
      std::vector<Candidate> candidates;
      for (int p = 0; p < n; ++p) {
        if (res.tokens[p] != mask_id) continue;
        const RowVector row = logits.row(static_cast<Eigen::Index>(b) * n + p).head(mask_id);
        const CategoricalDistribution d = softmax(std::span<const double>(row.data(), mask_id));
        const OneHot best = discretize(d);
        candidates.push_back({d.probs()[best.index], p, best.index});
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const Candidate& a, const Candidate& c) { return a.confidence > c.confidence; });
      const int commit = std::min<int>(per_round, static_cast<int>(candidates.size()));
      for (int c = 0; c < commit; ++c) res.tokens[candidates[c].position] = candidates[c].token;
      const int committed = static_cast<int>(
          std::count_if(res.tokens.begin(), res.tokens.end(), [&](int t) { return t != mask_id; }));
      res.unmasked_after_round.push_back(committed);
    }
  }
  return results;
}

PddResult pdd_generate(const DenoiserParams& params, const Condition& c, int rounds,
                       double guidance_scale) {
  if (c.is_null) throw std::invalid_argument("pdd_generate: a concrete condition is required");
  std::vector<PddResult> r = pdd_generate_batch(params, Matrix(c.vector), rounds, guidance_scale);
  return std::move(r.front());
}

}  // namespace addiff
