#pragma once

#include <span>
#include <vector>

#include "addiff/denoiser.hpp"
#include "addiff/training.hpp"

namespace addiff {

/// Masked-token-recovery baseline. Uses the same denoiser architecture with
/// one extra vocabulary entry for MASK (index V, so classes = V + 1) and the
/// timestep pinned to the sentinel 0.
inline constexpr int kPddTimestep = 0;

struct MaskedSequence {
  std::vector<int> tokens;          // values in [0, V) or the mask id
  std::vector<int> mask_positions;  // ascending, exactly the positions holding the mask id
  int mask_id = 0;
};

/// Each position independently becomes MASK with probability `rate`.
MaskedSequence mask_corrupt(std::span<const int> tokens, double rate, int mask_id,
                            NoiseSource& noise);

/// K-fold expansion for the masked objective: each copy draws its own mask
/// rate uniformly from (0, 1] and masks positions independently. Only masked
/// positions are scored.
ExpandedBatch pdd_expand(int instances, std::span<const int> targets, int seq_len, int vocab,
                         int kfold, NoiseSource& noise);

/// One optimisation step on masked positions, same optimizer stack as ADD.
StepMetrics pdd_train_step(Model& model, Optimizer& optimizer, const TrainingSet& data,
                           std::span<const int> instances, const TrainConfig& config,
                           const StepClock& clock, NoiseSource& noise);

std::vector<EpochRecord> pdd_train(Model& model, const TrainingSet& data,
                                   const TrainConfig& config, const TrainHooks& hooks = {});

/// Confidence-ordered iterative unmasking from a fully masked sequence.
/// Each round predicts every masked position and commits the ceil(N / rounds)
/// most confident ones (ties to the lower position). MASK is never emitted.
struct PddResult {
  std::vector<int> tokens;
  std::vector<int> unmasked_after_round;  // cumulative committed count per round
};

PddResult pdd_generate(const DenoiserParams& params, const Condition& c, int rounds,
                       double guidance_scale = 1.0);

/// Batched form; item b uses conditions.row(b).
std::vector<PddResult> pdd_generate_batch(const DenoiserParams& params, const Matrix& conditions,
                                          int rounds, double guidance_scale = 1.0);

}  // namespace addiff
