#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "trace/checkpoint.hpp"
#include "trace/config.hpp"
#include "trace/dataset.hpp"
#include "trace/metrics.hpp"
#include "trace/model.hpp"

namespace trace {

struct TrainResult {
  CheckpointData best;  // best-validation-IoU snapshot (optimizer included)
  double best_val_iou = -1.0;
  double final_loss = 0.0;
  std::int64_t steps = 0;
  bool aborted_nan = false;  // non-finite loss hit; best holds the last good state
};

// Per-step sink (epoch, global step, lr, losses); default is silent.
using StepLogFn =
    std::function<void(int epoch, std::int64_t step, double lr, const LossBreakdown&)>;

// Cosine-decayed AdamW over seeded-shuffled minibatches. The encoder exposes
// no trainable parameters, so it stays frozen by construction. Validation
// IoU (train split when val is empty) picks the retained checkpoint once per
// epoch. A non-finite loss aborts immediately.
TrainResult run_train(const RunConfig& cfg, TraceModel& model,
                      const std::vector<PreparedSample>& train,
                      const std::vector<PreparedSample>& val, const StepLogFn& log = {});

// Macro seven-metric report of the model's final masks over the samples.
CorpusReport run_eval(TraceModel& model, const std::vector<PreparedSample>& samples,
                      double threshold, std::vector<MetricValues>* per_image = nullptr);

// Single-image convenience: (3, S, S) -> (S, S) mask probabilities.
Tensor predict_mask_single(TraceModel& model, const Tensor& image);

// Batch assembly: images (N, 3, S, S); targets (N, 1, S, S) matching the
// model's output shapes.
Tensor stack_images(const std::vector<PreparedSample>& samples,
                    const std::vector<std::size_t>& idx);
TargetPair stack_targets(const std::vector<PreparedSample>& samples,
                         const std::vector<std::size_t>& idx);

}  // namespace trace
