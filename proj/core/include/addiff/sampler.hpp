#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "addiff/categorical.hpp"
#include "addiff/denoiser.hpp"
#include "addiff/schedule.hpp"

namespace addiff {

/// The "to one" operation applied to each step's prediction.
enum class ToOne { kArgmaxOneHot, kSoftmaxSample };

std::string to_string(ToOne t);
ToOne parse_to_one(const std::string& name);

struct SampleConfig {
  int steps = 20;
  ToOne to_one = ToOne::kArgmaxOneHot;
  double guidance_scale = 1.0;  // 1 = conditional only, 0 = unconditional only
  RenoiseVariant renoise_variant = RenoiseVariant::kAlphaBar;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate(const Schedule& schedule) const;
};

struct TrajectoryStep {
  int t = 0;
  Matrix input;             // N x K noisy input fed to the denoiser
  Matrix logits;            // N x K scores the to-one operation acted on
  Matrix probs;             // N x K softmax(logits / temperature)
  std::vector<int> argmax;  // N
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // one per sampling step, t decreasing
  std::vector<OneHot> final;          // N
};

/// uncond + w (cond - uncond).
Matrix guided_logits(const Matrix& cond, const Matrix& uncond, double w);

/// Per-step mean (over tokens) of the largest predicted probability.
std::vector<double> onehot_sharpness(const Trajectory& trajectory);

struct SampleResult {
  std::vector<OneHot> tokens;  // N
  Trajectory trajectory;
  int forward_calls = 0;  // denoiser evaluations spent on this item
};

/// Argmax-and-re-noise reverse loop from pure N(0, I) noise.
SampleResult sample(const DenoiserParams& params, const Condition& c, const SampleConfig& config,
                    const Schedule& schedule, NoiseSource& noise);

/// Batched form: item b uses conditions.row(b) and noises[b] exclusively, so
/// its result matches sample() with the same source up to rounding in the
/// batched matrix products. Rerunning the same batch is bitwise identical.
std::vector<SampleResult> sample_batch(const DenoiserParams& params, const Matrix& conditions,
                                       const SampleConfig& config, const Schedule& schedule,
                                       std::span<NoiseSource> noises, bool keep_trajectory = true);

}  // namespace addiff
