#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "addiff/denoiser.hpp"
#include "addiff/encoder.hpp"
#include "addiff/sampler.hpp"
#include "addiff/schedule.hpp"
#include "addiff/tasks.hpp"
#include "addiff/training.hpp"

namespace addiff {

enum class Method { kAdd, kPdd };
std::string to_string(Method m);
Method parse_method(const std::string& name);

/// Thrown for unknown keys, missing required keys and malformed values.
/// The message always names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kLinear;
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  Schedule build() const { return Schedule::build(kind, T, beta_min, beta_max); }
};

struct DataConfig {
  int train_size = 10000;
  int test_size = 2000;
  std::string train_data;  // optional dataset files; generated from seed when empty
  std::string test_data;
  double blob_sigma = 2.55;
  int seq_len = 12;  // grammar sentences
};

struct ModelConfig {
  int hidden_dim = 64;
  int depth = 2;
  int time_embed_dim = 32;
  int heads = 4;
  int cond_dim = 32;
  int encoder_layers = 1;
  int encoder_heads = 2;
  int encoder_ffn_dim = 64;
  Pooling pooling = Pooling::kMean;
};

struct RunConfig {
  TaskKind task = TaskKind::kBlobs;
  std::uint64_t seed = 0;
  Method method = Method::kAdd;
  ScheduleConfig schedule;
  TrainConfig train;
  ModelConfig model;
  DataConfig data;
  SampleConfig sample;
  int pdd_rounds = 4;
  int checkpoint_every = 5;  // epochs; 0 keeps only the final and last-good checkpoints

  /// Consistency across sections; throws ConfigError.
  void validate() const;
};

/// Every recognised key, in documentation order.
const std::vector<std::string>& config_keys();

/// Parses "key = value" lines; '#' starts a comment. Keys may appear once.
/// `task` and `seed` are required. `overrides` are applied on top of the
/// file, as if appended to it.
RunConfig parse_config(const std::string& text,
                       const std::map<std::string, std::string>& overrides = {});

/// Canonical "key = value" listing of every key, reparseable.
std::string render_config(const RunConfig& config);

/// Per-stream seeds derived from the single run seed.
namespace seed_stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTrain = 2;
inline constexpr std::uint64_t kTrainData = 3;
inline constexpr std::uint64_t kTestData = 4;
}  // namespace seed_stream

DenoiserSpec denoiser_spec(const RunConfig& config, int classes, int seq_len);
EncoderSpec encoder_spec(const RunConfig& config, int feature_dim);

}  // namespace addiff
