#include "addiff/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

#include "addiff/encoder.hpp"
#include "addiff/pdd.hpp"

namespace addiff {

namespace {

Matrix chunk_features(const Dataset& data, int begin, int end) {
  return data.features.middleRows(static_cast<Eigen::Index>(begin) * data.tokens_per_item,
                                  static_cast<Eigen::Index>(end - begin) * data.tokens_per_item);
}

std::vector<SampleResult> sample_chunk(const Checkpoint& ckpt, const Dataset& data, int begin,
                                       int end, const SampleConfig& config, bool keep) {
  const Matrix conditions =
      encode_batch(ckpt.model.encoder, chunk_features(data, begin, end), data.tokens_per_item);
  std::vector<NoiseSource> noises;
  noises.reserve(end - begin);
  for (int i = begin; i < end; ++i) noises.emplace_back(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
  return sample_batch(ckpt.model.denoiser, conditions, config, ckpt.schedule, noises, keep);
}

bool stable_tail(const Trajectory& t, int window) {
  const int s = static_cast<int>(t.steps.size());
  const int w = std::min(window, s);
  for (int j = s - w + 1; j < s; ++j) {
    if (t.steps[j].argmax != t.steps[s - w].argmax) return false;
  }
  return true;
}

}  // namespace

void check_compatible(const Checkpoint& ckpt, const Dataset& data) {
  if (ckpt.task != data.task) {
    throw std::invalid_argument("checkpoint was trained on " + to_string(ckpt.task) +
                                " but the dataset is " + to_string(data.task));
  }
  const int vocab = ckpt.method == Method::kPdd ? ckpt.model.denoiser.spec.classes - 1
                                                : ckpt.model.denoiser.spec.classes;
  if (vocab != data.classes) {
    throw std::invalid_argument("class count mismatch: checkpoint " + std::to_string(vocab) +
                                ", dataset " + std::to_string(data.classes));
  }
  if (ckpt.model.denoiser.spec.seq_len != data.seq_len) {
    throw std::invalid_argument("sequence length mismatch: checkpoint " +
                                std::to_string(ckpt.model.denoiser.spec.seq_len) + ", dataset " +
                                std::to_string(data.seq_len));
  }
  if (ckpt.model.encoder.spec.feature_dim != data.feature_dim()) {
    throw std::invalid_argument("feature width mismatch: checkpoint " +
                                std::to_string(ckpt.model.encoder.spec.feature_dim) + ", dataset " +
                                std::to_string(data.feature_dim()));
  }
}

bool item_correct(const Dataset& data, int index, std::span<const int> prediction) {
  if (data.task == TaskKind::kBlobs) return prediction.size() == 1 && prediction[0] == data.targets[index];
  const GrammarTask task{data.seq_len};
  const std::optional<Parse> truth = parse(task, data.target(index));
  return truth && semantic_match(task, prediction, truth->scene);
}

double argmax_stability(const std::vector<Trajectory>& trajectories, int window) {
  if (trajectories.empty()) return 0.0;
  long stable = 0;
  for (const Trajectory& t : trajectories) stable += stable_tail(t, window);
  return static_cast<double>(stable) / static_cast<double>(trajectories.size());
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data, const EvalOptions& options) {
  check_compatible(ckpt, data);
  const int n = options.limit >= 0 ? std::min(options.limit, data.size()) : data.size();
  EvalReport r;
  r.count = n;
  r.predictions.reserve(n);
  const bool add = ckpt.method == Method::kAdd;
  if (add) options.sample.validate(ckpt.schedule);

  std::vector<double> sharp_sum;
  long stable = 0;
  for (int begin = 0; begin < n; begin += kEvalChunk) {
    const int end = std::min(n, begin + kEvalChunk);
    if (add) {
      std::vector<SampleResult> chunk = sample_chunk(ckpt, data, begin, end, options.sample, true);
      for (SampleResult& s : chunk) {
        std::vector<int> pred;
        for (const OneHot& o : s.tokens) pred.push_back(o.index);
        r.predictions.push_back(std::move(pred));
        r.forward_calls += s.forward_calls;
        const std::vector<double> sh = onehot_sharpness(s.trajectory);
        if (sharp_sum.empty()) sharp_sum.assign(sh.size(), 0.0);
        for (std::size_t j = 0; j < sh.size(); ++j) sharp_sum[j] += sh[j];
        stable += stable_tail(s.trajectory, 3);
      }
    } else {
      const Matrix conditions = encode_batch(ckpt.model.encoder, chunk_features(data, begin, end),
                                             data.tokens_per_item);
      std::vector<PddResult> chunk = pdd_generate_batch(ckpt.model.denoiser, conditions,
                                                        options.pdd_rounds,
                                                        options.sample.guidance_scale);
      for (PddResult& p : chunk) {
        r.forward_calls += static_cast<int>(p.unmasked_after_round.size());
        r.predictions.push_back(std::move(p.tokens));
      }
    }
  }

  int correct = 0, valid = 0;
  const GrammarTask grammar{data.seq_len};
  for (int i = 0; i < n; ++i) {
    correct += item_correct(data, i, r.predictions[i]);
    if (data.task == TaskKind::kGrammar) valid += validity(grammar, r.predictions[i]);
  }
  const double denom = n > 0 ? n : 1;
  if (data.task == TaskKind::kBlobs) {
    r.accuracy = correct / denom;
  } else {
    r.validity = valid / denom;
    r.semantic_match = correct / denom;
  }
  if (!sharp_sum.empty()) {
    for (double& v : sharp_sum) v /= denom;
    r.sharpness = sharp_sum;
    const int tail = std::min<int>(5, static_cast<int>(sharp_sum.size()));
    double acc = 0.0;
    for (int j = static_cast<int>(sharp_sum.size()) - tail; j < static_cast<int>(sharp_sum.size()); ++j) acc += sharp_sum[j];
    r.final_sharpness = acc / tail;
    r.argmax_stability = stable / denom;
  }
  return r;
}

SampleResult trace_item(const Checkpoint& ckpt, const Dataset& data, int index,
                        const SampleConfig& config) {
  check_compatible(ckpt, data);
  if (ckpt.method != Method::kAdd) throw std::invalid_argument("trace needs a diffusion checkpoint");
  if (index < 0 || index >= data.size()) throw std::out_of_range("trace: item index out of range");
  config.validate(ckpt.schedule);
  const int begin = index / kEvalChunk * kEvalChunk;
  const int end = std::min(data.size(), begin + kEvalChunk);
  std::vector<SampleResult> chunk = sample_chunk(ckpt, data, begin, end, config, true);
  return std::move(chunk[index - begin]);
}

}  // namespace addiff
