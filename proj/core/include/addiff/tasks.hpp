#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "addiff/rng.hpp"
#include "addiff/tensor.hpp"

namespace addiff {

// ---------------------------------------------------------------- blobs

/// Isotropic Gaussian clusters: an instance is L feature tokens drawn
/// around the mean of its class.
struct BlobTask {
  int classes = 10;
  int dim = 16;
  int tokens = 8;
  double sigma = 2.55;
  std::uint64_t task_seed = 17;
  Matrix means;  // classes x dim

  void validate() const;
};

/// Means drawn N(0, I) from task_seed.
BlobTask make_blob_task(int classes = 10, int dim = 16, int tokens = 8, double sigma = 2.55,
                        std::uint64_t task_seed = 17);

struct Dataset;

Dataset gen_blobs(const BlobTask& task, int n, std::uint64_t seed);

/// Maximum-likelihood class for one instance (tokens x dim); ties go to the
/// lower class index.
int bayes_predict(const BlobTask& task, const Matrix& tokens);
double bayes_accuracy(const BlobTask& task, const Dataset& data);

// ---------------------------------------------------------------- grammar

/// Token ids of the fixed grammar vocabulary.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kStop = 1;
inline constexpr int kThe = 2;
inline constexpr int kA = 3;
inline constexpr int kWas = 4;
inline constexpr int kBy = 5;
inline constexpr int kFirstAdjective = 6;
inline constexpr int kAdjectives = 12;
inline constexpr int kFirstNoun = kFirstAdjective + kAdjectives;
inline constexpr int kNouns = 24;
inline constexpr int kFirstVerb = kFirstNoun + kNouns;
inline constexpr int kVerbs = 22;
inline constexpr int kSize = kFirstVerb + kVerbs;
}  // namespace vocab

/// Meaning of a sentence. The condition encodes exactly this.
struct Scene {
  int adjective = 0;  // modifier of the subject, [0, 12)
  int subject = 0;    // [0, 24)
  int verb = 0;       // [0, 22)
  int object = 0;     // [0, 24)

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Surface choices left free by the scene.
struct Surface {
  bool passive = false;
  bool subject_definite = true;  // "the" vs "a"
  bool object_definite = true;

  friend bool operator==(const Surface&, const Surface&) = default;
};

struct Parse {
  Scene scene;
  Surface surface;
};

/// Two productions, padded with PAD to seq_len:
///   active:  DET ADJ SUBJ VERB DET OBJ .
///   passive: DET OBJ was VERB by DET ADJ SUBJ .
struct GrammarTask {
  int seq_len = 12;

  static constexpr int vocab_size() { return vocab::kSize; }
  static constexpr int feature_dim() {
    return vocab::kAdjectives + 2 * vocab::kNouns + vocab::kVerbs;
  }
  static constexpr long scene_count() {
    return static_cast<long>(vocab::kAdjectives) * vocab::kNouns * vocab::kVerbs * vocab::kNouns;
  }
  void validate() const;
};

std::vector<int> render(const GrammarTask& task, const Scene& scene, const Surface& surface);
std::optional<Parse> parse(const GrammarTask& task, std::span<const int> tokens);
bool validity(const GrammarTask& task, std::span<const int> tokens);
bool semantic_match(const GrammarTask& task, std::span<const int> tokens, const Scene& scene);

/// Height of each slot one-hot in the scene features, chosen so a feature
/// vector has unit mean square. Plain 0/1 entries reach the condition
/// projection too weakly to be picked up in a short training run.
inline constexpr double kSceneFeatureHeight = 4.527692569068709;  // sqrt(82 / 4)

/// Concatenated slot one-hots: adjective | subject | verb | object.
RowVector scene_features(const Scene& scene);
Scene scene_from_features(std::span<const double> features);
Scene scene_at(long index);  // enumeration order of the scene space
std::string to_text(std::span<const int> tokens);

Dataset gen_grammar(const GrammarTask& task, int n, std::uint64_t seed);

// ---------------------------------------------------------------- storage

enum class TaskKind { kBlobs, kGrammar };
std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& name);

/// n instances: each has tokens_per_item feature rows and seq_len target
/// tokens over `classes` values.
struct Dataset {
  TaskKind task = TaskKind::kBlobs;
  std::uint64_t seed = 0;
  int classes = 0;
  int seq_len = 1;
  int tokens_per_item = 1;
  // Blob task parameters, so the oracle can be rebuilt from the file alone.
  double sigma = 0.0;
  std::uint64_t task_seed = 0;
  Matrix features;  // (n * tokens_per_item) x feature_dim
  std::vector<int> targets;

  int size() const { return seq_len > 0 ? static_cast<int>(targets.size()) / seq_len : 0; }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  Matrix instance(int i) const;
  std::span<const int> target(int i) const;

  friend bool operator==(const Dataset&, const Dataset&);
};

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace addiff
