#pragma once

#include <cstdint>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: applied to the weights, not the moments
};

// Adam with decoupled weight decay and bias-corrected moments:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamRefs& params, const AdamWConfig& cfg);

  void step(double lr);

  // Checkpoint plumbing: moments run parallel to the parameter list.
  std::int64_t steps() const { return t_; }
  const std::vector<Tensor>& moment1() const { return m_; }
  const std::vector<Tensor>& moment2() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

 private:
  ParamRefs params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

// Cosine decay lr_init -> lr_min across steps 0..total_steps-1, both
// endpoints hit exactly; clamps at lr_min past the end.
double cosine_lr(double lr_init, double lr_min, std::int64_t step, std::int64_t total_steps);

}  // namespace trace
