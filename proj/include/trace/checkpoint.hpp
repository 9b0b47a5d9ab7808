#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trace/config.hpp"
#include "trace/model.hpp"
#include "trace/optim.hpp"

namespace trace {

// Versioned binary container ("TRCK"): config snapshot (covering the frozen
// toy-encoder seed), the named trainable parameter blobs, optional optimizer
// moments, persistent non-trainable state (batch-norm running statistics),
// and the epoch counter. Payloads are raw doubles, so a save/load round trip
// reproduces forward passes bit-exactly.
struct CheckpointData {
  RunConfig config;
  std::int64_t epoch = 0;
  double best_iou = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;
  bool has_optimizer = false;
  std::int64_t opt_steps = 0;
  std::vector<Tensor> opt_m, opt_v;  // parallel to params
  std::vector<std::pair<std::string, Tensor>> state;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Snapshot a live model (and optionally its optimizer) into a container.
CheckpointData snapshot_checkpoint(const RunConfig& cfg, TraceModel& model, const AdamW* opt,
                                   std::int64_t epoch, double best_iou);

// Copies parameter values (matched by name, shapes verified) and optimizer
// moments back into a model built from the checkpoint's config.
void restore_checkpoint(const CheckpointData& data, TraceModel& model, AdamW* opt);

}  // namespace trace
