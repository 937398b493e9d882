#include "addiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "addiff/errors.hpp"

namespace addiff {

namespace {

void add_into(std::vector<Matrix>& dst, const std::vector<Matrix>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double squared_norm(const std::vector<Matrix>& ms) {
  double s = 0.0;
  for (const Matrix& m : ms) s += m.squaredNorm();
  return s;
}

// Unweighted cross-entropy of one token row; writes w * (softmax - onehot)
// into grad.
double token_ce(const Eigen::Ref<const RowVector>& logits, int target, double w,
                Eigen::Ref<RowVector> grad) {
  const double top = logits.maxCoeff();
  const RowVector shifted = logits.array() - top;
  const double log_z = std::log(shifted.array().exp().sum());
  grad = (shifted.array() - log_z).exp() * w;
  grad[target] -= w;
  return log_z - shifted[target];
}

}  // namespace

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kWeightedCe: return "weighted_ce";
    case LossKind::kUnweightedCe: return "unweighted_ce";
    case LossKind::kMseNoise: return "mse_noise";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "weighted_ce") return LossKind::kWeightedCe;
  if (name == "unweighted_ce") return LossKind::kUnweightedCe;
  if (name == "mse_noise") return LossKind::kMseNoise;
  throw std::invalid_argument("unknown loss_kind '" + name +
                              "' (expected weighted_ce, unweighted_ce or mse_noise)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw std::invalid_argument("warmup_epochs must lie in [0, epochs]");
  }
  if (!(cfg_dropout_prob >= 0.0 && cfg_dropout_prob <= 1.0)) {
    throw std::invalid_argument("cfg_dropout_prob must lie in [0, 1]");
  }
  if (kfold < 1) throw std::invalid_argument("kfold must be >= 1");
  if (shard_size < 1) throw std::invalid_argument("shard_size must be >= 1");
}

LossResult ce_loss(const Matrix& logits, std::span<const int> targets, double abar_t,
                   bool weighted) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("ce_loss: one target per logit row required");
  }
  if (!(abar_t > 0.0 && abar_t <= 1.0)) throw std::invalid_argument("ce_loss: abar_t outside (0, 1]");
  if (!logits.allFinite()) throw NumericalError("ce_loss: non-finite logits");
  const double w = weighted ? abar_t : 1.0;
  LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int target = targets[i];
    if (target < 0 || target >= logits.cols()) throw std::out_of_range("ce_loss: target index");
    sum += token_ce(logits.row(i), target, w, r.grad.row(i));
  }
  // Weight applied once so weighted == abar_t * unweighted exactly.
  r.loss = w * sum;
  return r;
}

LossResult mse_loss(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  if (!prediction.allFinite() || !target.allFinite()) throw NumericalError("mse_loss: non-finite input");
  const double count = static_cast<double>(prediction.size());
  const Matrix diff = prediction - target;
  return LossResult{diff.squaredNorm() / count, diff * (2.0 / count)};
}

ExpandedBatch kfold_expand(int instances, std::span<const int> targets, int seq_len, int classes,
                           int kfold, const Schedule& schedule, NoiseSource& noise) {
  if (kfold < 1) throw std::invalid_argument("kfold must be >= 1");
  if (kfold > schedule.horizon()) {
    throw std::invalid_argument("kfold " + std::to_string(kfold) + " exceeds horizon T = " +
                                std::to_string(schedule.horizon()) +
                                "; cannot draw distinct timesteps");
  }
  if (static_cast<long>(targets.size()) != static_cast<long>(instances) * seq_len) {
    throw std::invalid_argument("kfold_expand: targets must hold instances * seq_len entries");
  }
  const int tuples = instances * kfold;
  ExpandedBatch out;
  out.seq_len = seq_len;
  out.source.resize(tuples);
  out.timesteps.resize(tuples);
  out.noisy.resize(static_cast<Eigen::Index>(tuples) * seq_len, classes);
  out.noise.resize(static_cast<Eigen::Index>(tuples) * seq_len, classes);
  out.targets.resize(static_cast<std::size_t>(tuples) * seq_len);

  std::vector<int> drawn;
  Vector eps;
  for (int i = 0; i < instances; ++i) {
    drawn.clear();
    while (static_cast<int>(drawn.size()) < kfold) {
      const int t = noise.uniform_int(1, schedule.horizon());
      if (std::find(drawn.begin(), drawn.end(), t) == drawn.end()) drawn.push_back(t);
    }
    for (int j = 0; j < kfold; ++j) {
      const int r = i * kfold + j;
      out.source[r] = i;
      out.timesteps[r] = drawn[j];
      for (int n = 0; n < seq_len; ++n) {
        const int target = targets[static_cast<std::size_t>(i) * seq_len + n];
        const Eigen::Index row = static_cast<Eigen::Index>(r) * seq_len + n;
        NoisyLabel y = corrupt(one_hot(target, classes), drawn[j], schedule, noise, &eps);
        out.noisy.row(row) = y.values.transpose();
        out.noise.row(row) = eps.transpose();
        out.targets[row] = target;
      }
    }
  }
  return out;
}

Condition cfg_dropout(const Condition& c, double p, NoiseSource& noise) {
  if (noise.bernoulli(p)) return Condition{RowVector(), true};
  return c;
}

int cfg_dropout(std::vector<int>& source, double p, NoiseSource& noise) {
  int nulled = 0;
  for (int& s : source) {
    if (noise.bernoulli(p)) {
      s = -1;
      ++nulled;
    }
  }
  return nulled;
}

double lr_at(long step, long total_steps, long warmup_steps, double base_lr) {
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw std::invalid_argument("warmup_steps must lie in [0, total_steps]");
  }
  if (step < 0 || step > total_steps) throw std::out_of_range("lr_at: step outside [0, total]");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
  if (total_steps == warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Objective objective_for(LossKind kind) {
  switch (kind) {
    case LossKind::kWeightedCe: return Objective::kWeightedCe;
    case LossKind::kUnweightedCe: return Objective::kUnweightedCe;
    case LossKind::kMseNoise: return Objective::kMseNoise;
  }
  throw std::invalid_argument("bad loss kind");
}

double Gradients::global_norm() const {
  return std::sqrt(squared_norm(denoiser) + squared_norm(encoder));
}

void Gradients::scale(double factor) {
  for (Matrix& m : denoiser) m *= factor;
  for (Matrix& m : encoder) m *= factor;
}

Gradients compute_gradients(const Model& model, const TrainingSet& data,
                            std::span<const int> instances, const ExpandedBatch& batch,
                            Objective objective, const Schedule& schedule, int shard_size) {
  const int items = static_cast<int>(instances.size());
  const int tuples = batch.tuples();
  const int n = batch.seq_len;
  const int per_item = data.tokens_per_item;
  if (items == 0 || tuples % items != 0) {
    throw std::invalid_argument("compute_gradients: tuples must be a multiple of instances");
  }
  if (n != model.denoiser.spec.seq_len) throw std::invalid_argument("compute_gradients: seq_len mismatch");
  const int kfold = tuples / items;
  const double inv_tuples = 1.0 / tuples;

  Gradients g{model.denoiser.tensors.zeros_like(), model.encoder.tensors.zeros_like(), 0.0};
  double loss_sum = 0.0;

  for (int s = 0; s < items; s += shard_size) {
    const int e = std::min(items, s + shard_size);
    Matrix tokens(static_cast<Eigen::Index>(e - s) * per_item, data.features.cols());
    for (int i = s; i < e; ++i) {
      tokens.middleRows(static_cast<Eigen::Index>(i - s) * per_item, per_item) =
          data.features.middleRows(static_cast<Eigen::Index>(instances[i]) * per_item, per_item);
    }
    EncoderPass enc = encoder_forward(model.encoder, tokens, per_item);
    const Matrix& conditions = enc.tape.value(enc.output);

    const int t0 = s * kfold;
    const int t1 = e * kfold;
    DenoiserBatch db;
    db.noisy = batch.noisy.middleRows(static_cast<Eigen::Index>(t0) * n,
                                      static_cast<Eigen::Index>(t1 - t0) * n);
    db.timesteps.assign(batch.timesteps.begin() + t0, batch.timesteps.begin() + t1);
    db.condition_index.resize(t1 - t0);
    for (int r = t0; r < t1; ++r) {
      const int src = batch.source[r];
      if (src >= 0 && (src < s || src >= e)) {
        throw std::invalid_argument("compute_gradients: tuple source outside its shard");
      }
      db.condition_index[r - t0] = src < 0 ? -1 : src - s;
    }
    DenoiserPass pass = denoiser_forward(model.denoiser, db, conditions);
    const Matrix& out = pass.tape.value(pass.output);
    Matrix grad_out = Matrix::Zero(out.rows(), out.cols());

    for (int r = t0; r < t1; ++r) {
      const Eigen::Index row = static_cast<Eigen::Index>(r - t0) * n;
      const std::span<const int> targets(batch.targets.data() + static_cast<std::size_t>(r) * n, n);
      switch (objective) {
        case Objective::kWeightedCe:
        case Objective::kUnweightedCe: {
          LossResult lr = ce_loss(out.middleRows(row, n), targets,
                                  schedule.alpha_bar(batch.timesteps[r]),
                                  objective == Objective::kWeightedCe);
          loss_sum += lr.loss;
          grad_out.middleRows(row, n) = lr.grad * inv_tuples;
          break;
        }
        case Objective::kMseNoise: {
          LossResult lr = mse_loss(out.middleRows(row, n),
                                   batch.noise.middleRows(static_cast<Eigen::Index>(r) * n, n));
          loss_sum += lr.loss;
          grad_out.middleRows(row, n) = lr.grad * inv_tuples;
          break;
        }
        case Objective::kMaskedCe: {
          for (int j = 0; j < n; ++j) {
            const std::size_t token = static_cast<std::size_t>(r) * n + j;
            if (!batch.scored.empty() && !batch.scored[token]) continue;
            loss_sum += token_ce(out.row(row + j), targets[j], 1.0, grad_out.row(row + j));
            grad_out.row(row + j) *= inv_tuples;
          }
          break;
        }
      }
    }

    DenoiserGrads dg = denoiser_backward(pass, grad_out);
    add_into(g.denoiser, dg.params);
    add_into(g.encoder, encoder_backward(enc, dg.conditions));
  }
  g.loss = loss_sum * inv_tuples;
  return g;
}

Optimizer::Optimizer(const Model& model)
    : denoiser_{model.denoiser.tensors.zeros_like(), model.denoiser.tensors.zeros_like()},
      encoder_{model.encoder.tensors.zeros_like(), model.encoder.tensors.zeros_like()} {}

namespace {

void adamw(ParamSet& params, AdamState& state, const std::vector<Matrix>& grads, double lr,
           double weight_decay, long step) {
  const double c1 = 1.0 - std::pow(Optimizer::kBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(Optimizer::kBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i];
    state.m[i] = Optimizer::kBeta1 * state.m[i] + (1.0 - Optimizer::kBeta1) * grads[i];
    state.v[i] = Optimizer::kBeta2 * state.v[i] +
                 (1.0 - Optimizer::kBeta2) * grads[i].cwiseProduct(grads[i]);
    const double decay = (p.rows() > 1 && p.cols() > 1) ? weight_decay : 0.0;
    p.array() -= lr * ((state.m[i].array() / c1) /
                           ((state.v[i].array() / c2).sqrt() + Optimizer::kEps) +
                       decay * p.array());
  }
}

}  // namespace

void Optimizer::update(Model& model, const Gradients& grads, double lr, double weight_decay) {
  ++steps_;
  adamw(model.denoiser.tensors, denoiser_, grads.denoiser, lr, weight_decay, steps_);
  adamw(model.encoder.tensors, encoder_, grads.encoder, lr, weight_decay, steps_);
}

StepMetrics apply_step(Model& model, Optimizer& optimizer, Gradients grads,
                       const TrainConfig& config, const StepClock& clock, int tuples,
                       int nulled) {
  StepMetrics m;
  m.loss = grads.loss;
  m.grad_norm = grads.global_norm();
  m.tuples = tuples;
  m.null_fraction = tuples > 0 ? static_cast<double>(nulled) / tuples : 0.0;
  if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm)) {
    throw NumericalError("non-finite loss or gradient at step " + std::to_string(clock.step));
  }
  if (config.grad_clip_norm > 0.0 && m.grad_norm > config.grad_clip_norm) {
    grads.scale(config.grad_clip_norm / m.grad_norm);
  }
  m.lr = lr_at(clock.step, clock.total_steps, clock.warmup_steps, config.learning_rate);
  optimizer.update(model, grads, m.lr, config.weight_decay);
  return m;
}

StepMetrics train_step(Model& model, Optimizer& optimizer, const TrainingSet& data,
                       std::span<const int> instances, const TrainConfig& config,
                       const Schedule& schedule, const StepClock& clock, NoiseSource& noise) {
  const int n = data.seq_len;
  std::vector<int> targets;
  targets.reserve(instances.size() * n);
  for (int idx : instances) {
    for (int j = 0; j < n; ++j) targets.push_back(data.targets[static_cast<std::size_t>(idx) * n + j]);
  }
  ExpandedBatch batch = kfold_expand(static_cast<int>(instances.size()), targets, n,
                                     model.denoiser.spec.classes, config.kfold, schedule, noise);
  const int nulled = cfg_dropout(batch.source, config.cfg_dropout_prob, noise);
  Gradients grads = compute_gradients(model, data, instances, batch,
                                      objective_for(config.loss_kind), schedule, config.shard_size);
  return apply_step(model, optimizer, std::move(grads), config, clock, batch.tuples(), nulled);
}

std::vector<EpochRecord> run_epochs(Model& model, const TrainingSet& data,
                                    const TrainConfig& config, const StepFunction& step,
                                    const TrainHooks& hooks) {
  config.validate();
  const int count = data.size();
  if (count < 1) throw std::invalid_argument("training set is empty");
  const long per_epoch = (count + config.batch_size - 1) / config.batch_size;
  StepClock clock{0, per_epoch * config.epochs, per_epoch * config.warmup_epochs};

  NoiseSource noise(mix_seed(config.seed, 1));
  Optimizer optimizer(model);
  std::vector<int> order(count);
  std::vector<EpochRecord> epochs;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), noise.engine());
    double loss_sum = 0.0;
    for (long b = 0; b < per_epoch; ++b) {
      const long begin = b * config.batch_size;
      const long end = std::min<long>(count, begin + config.batch_size);
      const std::span<const int> batch(order.data() + begin, static_cast<std::size_t>(end - begin));
      StepMetrics m = step(model, optimizer, batch, clock, noise);
      loss_sum += m.loss;
      if (hooks.on_step) hooks.on_step(StepRecord{clock.step, epoch, m});
      ++clock.step;
    }
    EpochRecord rec{epoch, loss_sum / per_epoch};
    epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, model);
  }
  return epochs;
}

std::vector<EpochRecord> train(Model& model, const TrainingSet& data, const TrainConfig& config,
                               const Schedule& schedule, const TrainHooks& hooks) {
  StepFunction step = [&](Model& m, Optimizer& opt, std::span<const int> batch,
                          const StepClock& clock, NoiseSource& noise) {
    return train_step(m, opt, data, batch, config, schedule, clock, noise);
  };
  return run_epochs(model, data, config, step, hooks);
}

}  // namespace addiff
