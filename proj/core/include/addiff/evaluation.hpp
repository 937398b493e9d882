#pragma once

#include <optional>
#include <vector>

#include "addiff/checkpoint.hpp"
#include "addiff/sampler.hpp"
#include "addiff/tasks.hpp"

namespace addiff {

/// Items are sampled in fixed chunks of this size; item i always draws from
/// NoiseSource(mix_seed(seed, i)), so any single item can be replayed.
inline constexpr int kEvalChunk = 128;

struct EvalOptions {
  SampleConfig sample;
  int pdd_rounds = 4;
  int limit = -1;  // evaluate only the first `limit` items when >= 0
};

struct EvalReport {
  int count = 0;
  int forward_calls = 0;
  double accuracy = 0.0;        // blobs: Top-1
  double validity = 0.0;        // grammar
  double semantic_match = 0.0;  // grammar
  std::vector<double> sharpness;     // mean per sampling step (empty for the masked baseline)
  double final_sharpness = 0.0;      // mean over the final min(5, S) steps
  double argmax_stability = 0.0;     // fraction stable over the final min(3, S) steps
  std::vector<std::vector<int>> predictions;
};

/// Checks that the checkpoint can consume the dataset; throws on mismatch.
void check_compatible(const Checkpoint& ckpt, const Dataset& data);

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data, const EvalOptions& options);

/// Full sampler output for dataset item `index`, bitwise identical to what
/// evaluate() computes for that item.
SampleResult trace_item(const Checkpoint& ckpt, const Dataset& data, int index,
                        const SampleConfig& config);

/// Fraction of items whose argmax is unchanged over the last `window` steps.
double argmax_stability(const std::vector<Trajectory>& trajectories, int window = 3);

/// Task score of one predicted item.
bool item_correct(const Dataset& data, int index, std::span<const int> prediction);

}  // namespace addiff
