#pragma once

#include "trace/tensor.hpp"

namespace trace {

// Eq.20/22 are sums in the paper; mean reduction is the default here for
// resolution invariance, with the paper-literal sum behind the flag.
enum class Reduction { Mean, Sum };

// Binary mask and edge targets, values in {0, 1}.
struct TargetPair {
  Tensor mask, edge;
};

struct LossBreakdown {
  double bce_mask = 0.0;
  double iou_mask = 0.0;
  double bce_edge = 0.0;
  double total = 0.0;
};

constexpr double kLossClampEps = 1e-7;

// Pixel-wise binary cross-entropy with predictions clamped to
// [eps, 1 - eps]. If dpred is given, the gradient is accumulated into it.
double bce_pixel_loss(const Tensor& pred, const Tensor& target, Reduction reduction,
                      Tensor* dpred = nullptr);

// Soft IoU loss 1 - sum(T*M) / (sum(T) + sum(M) - sum(T*M)); no binarization
// of pred. Both-empty input is the guarded limit 0.
double iou_loss(const Tensor& pred, const Tensor& target, Tensor* dpred = nullptr);

// L = (BCE_mask + IoU_mask) + BCE_edge, unweighted. Gradients accumulate
// into dmask / dedge when given. An empty pred_edge (reasoner bypassed, no
// edge map exists) drops the edge term.
LossBreakdown total_objective(const Tensor& pred_mask, const Tensor& pred_edge,
                              const TargetPair& targets, Reduction reduction,
                              Tensor* dmask = nullptr, Tensor* dedge = nullptr);

}  // namespace trace
