#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "addiff/checkpoint.hpp"
#include "addiff/config.hpp"
#include "addiff/evaluation.hpp"
#include "addiff/tasks.hpp"

namespace addiff::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,     // bad flags or config
  kFailure = 2,   // I/O, incompatible inputs
  kDiverged = 3,  // non-finite loss or gradients; last good checkpoint kept
  kPartial = 4,   // ablation finished with failed cells
};

/// Split used for training or evaluation: read from the configured file,
/// or generated from (task, seed).
Dataset load_split(const RunConfig& config, bool test);

struct TrainOutcome {
  int exit_code = kOk;
  std::string status;  // completed | diverged | failed
  std::string error;
  fs::path final_checkpoint;
  std::string checksum;
};

/// Trains into out_dir: manifest.json first, then metrics.jsonl, periodic
/// checkpoints/epoch_NNNN.ckpt, checkpoints/last_good.ckpt and final.ckpt.
TrainOutcome train_run(const RunConfig& config, const std::string& config_echo,
                       const Dataset& train, const fs::path& out_dir);

/// Sampling settings stored with a checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

nlohmann::json eval_record(const Checkpoint& ckpt, const Dataset& data, const EvalOptions& options);

/// One line per sampling step.
std::vector<nlohmann::json> trace_records(const Checkpoint& ckpt, const Dataset& data, int index,
                                          const SampleConfig& config);

struct AblationCell {
  std::string name;
  TaskKind task = TaskKind::kBlobs;
  Method method = Method::kAdd;
  LossKind loss_kind = LossKind::kWeightedCe;
  bool cfg = false;
  ToOne to_one = ToOne::kArgmaxOneHot;
};

/// Loss x guidance x to-one on the configured task, then the masked
/// baseline on the grammar task.
std::vector<AblationCell> ablation_grid(TaskKind task);

/// Writes out_dir/table.json and table.tsv; returns the table.
nlohmann::json ablate_run(const RunConfig& config, const std::string& config_echo,
                          const fs::path& out_dir, int workers, std::ostream& log);

/// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace addiff::cli
