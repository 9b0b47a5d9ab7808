#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

// Per-image metric values. `auc` is missing when the target is single-class.
struct MetricValues {
  double iou = 0.0, dice = 0.0, precision = 0.0, recall = 0.0, accuracy = 0.0;
  double mae = 0.0;
  std::optional<double> auc;
};

// Macro-aggregated corpus report: plain means of per-image values; AUC
// averaged over the images where it is defined.
struct CorpusReport {
  MetricValues mean;
  int images = 0;
  int auc_images = 0;
};

// M~_i = 1 iff M_i >= threshold.
Tensor binarize(const Tensor& pred, double threshold);

// IoU/Dice/Precision/Recall/Accuracy on the binarized prediction, MAE on the
// raw probabilities. Empty-denominator cases: 1 when both sets are empty,
// else 0. AUC is not filled here.
MetricValues compute_metrics(const Tensor& pred, const Tensor& target, double threshold = 0.5);

// Rank-based AUC with midrank tie handling (Mann-Whitney); nullopt when the
// target lacks a positive or a negative pixel.
std::optional<double> compute_auc(const Tensor& pred, const Tensor& target);

// compute_metrics plus compute_auc in one call.
MetricValues evaluate_pair(const Tensor& pred, const Tensor& target, double threshold = 0.5);

CorpusReport aggregate_metrics(const std::vector<MetricValues>& per_image);

// Aligned-text and JSON renderings in Table II column order
// (IoU, Dice, Precision, Recall, Accuracy, MAE, AUC).
std::string report_text(const CorpusReport& report, const std::string& title);
std::string report_json(const CorpusReport& report);

}  // namespace trace
