#include "trace/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trace {

double bce_pixel_loss(const Tensor& pred, const Tensor& target, Reduction reduction,
                      Tensor* dpred) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("bce_pixel_loss: shape mismatch, pred " + pred.shape_str() +
                                " vs target " + target.shape_str());
  if (pred.size() == 0) throw std::invalid_argument("bce_pixel_loss: empty input");
  const std::size_t n = pred.size();
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::clamp(pred[i], kLossClampEps, 1.0 - kLossClampEps);
    const double t = target[i];
    loss -= t * std::log(m) + (1.0 - t) * std::log(1.0 - m);
    if (dpred) {
      // Clamped pixels sit on a flat of the loss; their gradient is zero.
      const bool interior = pred[i] >= kLossClampEps && pred[i] <= 1.0 - kLossClampEps;
      if (interior) (*dpred)[i] += scale * (m - t) / (m * (1.0 - m));
    }
  }
  return loss * scale;
}

double iou_loss(const Tensor& pred, const Tensor& target, Tensor* dpred) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("iou_loss: shape mismatch, pred " + pred.shape_str() +
                                " vs target " + target.shape_str());
  if (pred.size() == 0) throw std::invalid_argument("iou_loss: empty input");
  const std::size_t n = pred.size();
  double inter = 0.0, sum_t = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inter += target[i] * pred[i];
    sum_t += target[i];
    sum_m += pred[i];
  }
  const double uni = sum_t + sum_m - inter;
  if (uni <= kLossClampEps) return 0.0;  // both effectively empty
  if (dpred) {
    for (std::size_t i = 0; i < n; ++i) {
      const double t = target[i];
      (*dpred)[i] += -(t * uni - inter * (1.0 - t)) / (uni * uni);
    }
  }
  return 1.0 - inter / uni;
}

LossBreakdown total_objective(const Tensor& pred_mask, const Tensor& pred_edge,
                              const TargetPair& targets, Reduction reduction, Tensor* dmask,
                              Tensor* dedge) {
  LossBreakdown b;
  b.bce_mask = bce_pixel_loss(pred_mask, targets.mask, reduction, dmask);
  b.iou_mask = iou_loss(pred_mask, targets.mask, dmask);
  if (!pred_edge.empty()) b.bce_edge = bce_pixel_loss(pred_edge, targets.edge, reduction, dedge);
  b.total = b.bce_mask + b.iou_mask + b.bce_edge;
  return b;
}

}  // namespace trace
