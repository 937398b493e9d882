#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "addiff/config.hpp"
#include "addiff/schedule.hpp"
#include "addiff/tasks.hpp"
#include "addiff/training.hpp"

namespace addiff {

/// Everything needed to sample from a trained model without the config.
struct Checkpoint {
  Method method = Method::kAdd;
  TaskKind task = TaskKind::kBlobs;
  Model model;
  Schedule schedule;
  std::string config;  // canonical config listing of the run
  int epoch = 0;       // epochs completed
};

/// Binary layout (all integers and floats little-endian):
///   8 bytes  magic "ADDCKPT\0"
///   u32      format version (1)
///   u64      header length H
///   H bytes  UTF-8 JSON header: specs, schedule parameters, config echo,
///            tensor directory [{name, rows, cols}] in payload order
///   payload  float64 row-major tensors, back to back
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr unsigned kCheckpointVersion = 1;

}  // namespace addiff
