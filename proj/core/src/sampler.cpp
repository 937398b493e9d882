#include "addiff/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "addiff/errors.hpp"

namespace addiff {

namespace {

std::vector<SampleResult> run_sampler(const DenoiserParams& params, const Matrix& conditions,
                                      std::vector<int> condition_index, const SampleConfig& config,
                                      const Schedule& schedule, std::span<NoiseSource> noises,
                                      bool keep_trajectory) {
  config.validate(schedule);
  const DenoiserSpec& spec = params.spec;
  const int items = static_cast<int>(condition_index.size());
  const int n = spec.seq_len;
  const int k = spec.classes;
  if (static_cast<int>(noises.size()) != items) {
    throw std::invalid_argument("sample: one noise source per item required");
  }
  const bool guided = config.guidance_scale != 1.0;
  const std::vector<int> timesteps = sampling_timesteps(schedule, config.steps);

  Matrix y(static_cast<Eigen::Index>(items) * n, k);
  for (int b = 0; b < items; ++b) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < k; ++c) y(static_cast<Eigen::Index>(b) * n + r, c) = noises[b].normal();
    }
  }

  std::vector<SampleResult> results(items);
  std::vector<OneHot> picks(static_cast<std::size_t>(items) * n);
  const std::vector<int> null_index(items, -1);

  for (int j = 0; j < config.steps; ++j) {
    const int t = timesteps[j];
    const int t_prev = timesteps[j + 1];
    DenoiserBatch batch{y, std::vector<int>(items, t), condition_index};
    DenoiserPass cond = denoiser_forward(params, batch, conditions, false);
    Matrix scores = cond.tape.value(cond.output);
    if (guided) {
      batch.condition_index = null_index;
      DenoiserPass uncond = denoiser_forward(params, batch, conditions, false);
      scores = guided_logits(scores, uncond.tape.value(uncond.output), config.guidance_scale);
    }
    // The head output is used as class scores whatever it was trained to
    // regress; a noise-regression head gets no special treatment.
    if (!scores.allFinite()) throw NumericalError("sampler: non-finite scores at t = " + std::to_string(t));

    for (int b = 0; b < items; ++b) {
      SampleResult& res = results[b];
      res.forward_calls += guided ? 2 : 1;
      TrajectoryStep step;
      if (keep_trajectory) {
        step.t = t;
        step.input = y.middleRows(static_cast<Eigen::Index>(b) * n, n);
        step.logits = scores.middleRows(static_cast<Eigen::Index>(b) * n, n);
        step.probs.resize(n, k);
        step.argmax.resize(n);
      }
      for (int r = 0; r < n; ++r) {
        const Eigen::Index row = static_cast<Eigen::Index>(b) * n + r;
        const RowVector s = scores.row(row);
        const std::span<const double> sv(s.data(), static_cast<std::size_t>(k));
        OneHot pick;
        if (config.to_one == ToOne::kArgmaxOneHot) {
          pick = discretize(sv);
          if (keep_trajectory) step.probs.row(r) = softmax(sv, config.temperature).probs().transpose();
        } else {
          CategoricalDistribution d = softmax(sv, config.temperature);
          pick = sample_categorical(d, noises[b]);
          if (keep_trajectory) step.probs.row(r) = d.probs().transpose();
        }
        if (keep_trajectory) step.argmax[r] = discretize(sv).index;
        picks[row] = pick;
      }
      if (keep_trajectory) res.trajectory.steps.push_back(std::move(step));
    }

    if (t_prev > 0) {
      for (int b = 0; b < items; ++b) {
        for (int r = 0; r < n; ++r) {
          const Eigen::Index row = static_cast<Eigen::Index>(b) * n + r;
          y.row(row) = renoise(picks[row], t_prev, schedule, config.renoise_variant, noises[b])
                           .values.transpose();
        }
      }
    }
  }

  for (int b = 0; b < items; ++b) {
    results[b].tokens.assign(picks.begin() + static_cast<std::ptrdiff_t>(b) * n,
                             picks.begin() + static_cast<std::ptrdiff_t>(b + 1) * n);
    if (keep_trajectory) results[b].trajectory.final = results[b].tokens;
  }
  return results;
}

}  // namespace

std::string to_string(ToOne t) {
  return t == ToOne::kArgmaxOneHot ? "argmax_onehot" : "softmax_sample";
}

ToOne parse_to_one(const std::string& name) {
  if (name == "argmax_onehot" || name == "argmax") return ToOne::kArgmaxOneHot;
  if (name == "softmax_sample" || name == "softmax") return ToOne::kSoftmaxSample;
  throw std::invalid_argument("unknown to_one '" + name +
                              "' (expected argmax_onehot or softmax_sample)");
}

void SampleConfig::validate(const Schedule& schedule) const {
  if (steps < 1 || steps > schedule.horizon()) {
    throw std::invalid_argument("sampling steps must lie in [1, T]");
  }
  if (!(guidance_scale >= 0.0)) throw std::invalid_argument("guidance_scale must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
}

Matrix guided_logits(const Matrix& cond, const Matrix& uncond, double w) {
  if (cond.rows() != uncond.rows() || cond.cols() != uncond.cols()) {
    throw std::invalid_argument("guided_logits: shape mismatch");
  }
  if (w == 1.0) return cond;
  if (w == 0.0) return uncond;
  return uncond + w * (cond - uncond);
}

std::vector<double> onehot_sharpness(const Trajectory& trajectory) {
  std::vector<double> out;
  out.reserve(trajectory.steps.size());
  for (const TrajectoryStep& s : trajectory.steps) {
    out.push_back(s.probs.rowwise().maxCoeff().mean());
  }
  return out;
}

SampleResult sample(const DenoiserParams& params, const Condition& c, const SampleConfig& config,
                    const Schedule& schedule, NoiseSource& noise) {
  Matrix conditions = c.is_null ? Matrix(0, params.spec.cond_dim) : Matrix(c.vector);
  if (!c.is_null && conditions.cols() != params.spec.cond_dim) {
    throw std::invalid_argument("sample: condition width mismatch");
  }
  std::vector<SampleResult> r = run_sampler(params, conditions, {c.is_null ? -1 : 0}, config,
                                            schedule, std::span<NoiseSource>(&noise, 1), true);
  return std::move(r.front());
}

std::vector<SampleResult> sample_batch(const DenoiserParams& params, const Matrix& conditions,
                                       const SampleConfig& config, const Schedule& schedule,
                                       std::span<NoiseSource> noises, bool keep_trajectory) {
  std::vector<int> index(conditions.rows());
  for (Eigen::Index b = 0; b < conditions.rows(); ++b) index[b] = static_cast<int>(b);
  return run_sampler(params, conditions, std::move(index), config, schedule, noises,
                     keep_trajectory);
}

}  // namespace addiff
