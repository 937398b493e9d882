#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "addiff/categorical.hpp"
#include "addiff/denoiser.hpp"
#include "addiff/encoder.hpp"
#include "addiff/schedule.hpp"

namespace addiff {

enum class LossKind { kWeightedCe, kUnweightedCe, kMseNoise };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  int warmup_epochs = 2;
  double grad_clip_norm = 3.0;
  LossKind loss_kind = LossKind::kWeightedCe;
  double cfg_dropout_prob = 0.1;
  int kfold = 4;
  std::uint64_t seed = 0;
  /// Instances per gradient shard. Fixes the floating-point summation
  /// order, so results do not depend on how shards are scheduled.
  int shard_size = 32;

  void validate() const;
};

/// Denoiser plus the encoder that produces its conditions.
struct Model {
  DenoiserParams denoiser;
  EncoderParams encoder;
};

/// Conditioning features and clean targets for n instances.
struct TrainingSet {
  Matrix features;           // (n * tokens_per_item) x feature_dim
  int tokens_per_item = 1;
  std::vector<int> targets;  // n * seq_len class indices
  int seq_len = 1;

  int size() const { return seq_len > 0 ? static_cast<int>(targets.size()) / seq_len : 0; }
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d input, same shape as the scored matrix
};

/// Sum over the N tokens of -log softmax(logits_i)[target_i], scaled by
/// abar_t when weighted. grad = w * (softmax(logits_i) - onehot(target_i)).
LossResult ce_loss(const Matrix& logits, std::span<const int> targets, double abar_t,
                   bool weighted);

/// Mean squared error over every coordinate; grad = 2 (pred - target) / count.
LossResult mse_loss(const Matrix& prediction, const Matrix& target);

/// Training tuples after K-fold expansion. Tuples are ordered instance
/// major: instance i owns rows [i * kfold, (i + 1) * kfold). Conditions are
/// referenced through `source`, never copied.
struct ExpandedBatch {
  int seq_len = 1;
  std::vector<int> source;     // per tuple: condition row, or -1 for null
  std::vector<int> timesteps;  // per tuple
  Matrix noisy;                // (tuples * seq_len) x classes
  Matrix noise;                // eps drawn by the corruption, same shape
  std::vector<int> targets;    // tuples * seq_len
  std::vector<unsigned char> scored;  // per token; empty means every token is scored

  int tuples() const { return static_cast<int>(timesteps.size()); }
};

/// Pairs every instance with `kfold` distinct timesteps drawn uniformly from
/// [1, T] and an independent corruption of its targets per timestep.
/// `targets` holds instances * seq_len class indices over `classes`.
ExpandedBatch kfold_expand(int instances, std::span<const int> targets, int seq_len, int classes,
                           int kfold, const Schedule& schedule, NoiseSource& noise);

/// Returns the null condition with probability p, else c.
Condition cfg_dropout(const Condition& c, double p, NoiseSource& noise);

/// Batch form: replaces each tuple's source with -1 with probability p.
/// Returns the number of nulled tuples.
int cfg_dropout(std::vector<int>& source, double p, NoiseSource& noise);

/// Linear warmup to base_lr, then cosine decay to 0 at total_steps.
double lr_at(long step, long total_steps, long warmup_steps, double base_lr);

enum class Objective { kWeightedCe, kUnweightedCe, kMseNoise, kMaskedCe };
Objective objective_for(LossKind kind);

struct Gradients {
  std::vector<Matrix> denoiser;
  std::vector<Matrix> encoder;
  double loss = 0.0;  // mean over tuples

  double global_norm() const;
  void scale(double factor);
};

/// Loss and exact gradients for one expanded batch. `instances` lists the
/// TrainingSet rows behind condition rows 0..B-1 of `batch.source`.
/// Work proceeds in shards of config.shard_size instances; each shard
/// encodes its instances once and shares the conditions across its tuples.
Gradients compute_gradients(const Model& model, const TrainingSet& data,
                            std::span<const int> instances, const ExpandedBatch& batch,
                            Objective objective, const Schedule& schedule, int shard_size);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// Decoupled-weight-decay Adam state for a Model.
class Optimizer {
 public:
  explicit Optimizer(const Model& model);
  /// Applies one update; weight decay touches only 2-D weight matrices and
  /// is scaled by lr, so lr == 0 leaves parameters unchanged.
  void update(Model& model, const Gradients& grads, double lr, double weight_decay);
  long steps() const { return steps_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  AdamState denoiser_;
  AdamState encoder_;
  long steps_ = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  double null_fraction = 0.0;
  int tuples = 0;
};

/// Schedule position for lr_at.
struct StepClock {
  long step = 0;
  long total_steps = 1;
  long warmup_steps = 0;
};

/// One ADD optimisation step: K-fold expansion, guidance dropout, gradients,
/// global-norm clipping, AdamW. Throws NumericalError (parameters untouched)
/// when the loss is not finite.
StepMetrics train_step(Model& model, Optimizer& optimizer, const TrainingSet& data,
                       std::span<const int> instances, const TrainConfig& config,
                       const Schedule& schedule, const StepClock& clock, NoiseSource& noise);

/// Shared tail of every objective: clip, check, update.
StepMetrics apply_step(Model& model, Optimizer& optimizer, Gradients grads,
                       const TrainConfig& config, const StepClock& clock, int tuples,
                       int nulled);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  StepMetrics metrics;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&, const Model&)> on_epoch;
};

using StepFunction = std::function<StepMetrics(Model&, Optimizer&, std::span<const int>,
                                               const StepClock&, NoiseSource&)>;

/// Epoch loop shared by ADD and the masked baseline: shuffles instances,
/// cuts batches, and calls `step` per batch. Returns the epoch records.
std::vector<EpochRecord> run_epochs(Model& model, const TrainingSet& data,
                                    const TrainConfig& config, const StepFunction& step,
                                    const TrainHooks& hooks = {});

/// ADD training end to end.
std::vector<EpochRecord> train(Model& model, const TrainingSet& data, const TrainConfig& config,
                               const Schedule& schedule, const TrainHooks& hooks = {});

}  // namespace addiff
