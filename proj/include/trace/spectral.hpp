#pragma once

#include <vector>

#include "trace/encoder.hpp"
#include "trace/layers.hpp"
#include "trace/tensor.hpp"

namespace trace {

// One level of the 2D Haar transform of a single plane. Subbands are
// (ceil(H/2), ceil(W/2)); odd inputs are reflect-padded to even first, and
// orig_h/orig_w record the unpadded size.
struct WaveletSubbands {
  Tensor low, horiz, vert, diag;
  int orig_h = 0, orig_w = 0;
};

WaveletSubbands haar_dwt(const Tensor& plane);

// Per-channel high-frequency stack for a (3, H, W) image: the three detail
// subbands of each channel, 9 planes ordered (c0.h, c0.v, c0.d, c1.h, ...)
// at half resolution. The low band is discarded.
Tensor wavelet_feature(const Tensor& image);

// Fixed high-pass residual bank. Kernels are zero-sum and normalized by the
// magnitude of their central coefficient:
//   0: first-order horizontal difference  [0, -1, 1]
//   1: second-order horizontal difference [1, -2, 1] / 2
//   2: 5x5 "SQUARE" predictor residual    / 12
constexpr int kSrmKernelCount = 3;
const std::vector<Tensor>& srm_kernel_bank();

// (3, H, W) image -> (3 * kSrmKernelCount, H, W) residual planes, ordered
// channel-major: plane index = channel * kSrmKernelCount + kernel.
Tensor srm_residual(const Tensor& image);

// Concatenate the nearest-upsampled wavelet feature (9 planes brought back to
// H x W) with the SRM residuals -> F^p with 9 + 3K channels.
Tensor fuse_perturbation(const Tensor& wavelet_feat, const Tensor& srm_feat, int h, int w);

// Number of F^p channels given the active branches.
int perturbation_channels(bool use_wavelet, bool use_srm);

// Full front end for one (3, H, W) image: wavelet and/or SRM branch, fused
// when both are active. Requires at least one active branch.
Tensor perturbation_map(const Tensor& image, bool use_wavelet, bool use_srm);

// Stage-specific down-projection + shared up-projection mapping the fused
// perturbation map onto prompt tensors, one per encoder stage:
//   P_i = W_up * GELU(W_down_i * avgpool_i(F^p))
class PromptProjector {
 public:
  PromptProjector() = default;
  PromptProjector(int in_channels, int hidden, const std::vector<StageShape>& stages, Rng& rng);

  // fp: one (Cp, H, W) map per sample. Returns one (N, c_i, h_i, w_i) prompt
  // tensor per stage.
  std::vector<Tensor> forward(const std::vector<Tensor>& fp);
  // Single-sample convenience used by tests: prompt for one stage, no cache.
  Tensor project(const Tensor& fp, int stage) const;
  // dprompts: one gradient tensor per stage. Accumulates parameter grads;
  // F^p itself is data, so no input gradient is produced.
  void backward(const std::vector<Tensor>& dprompts);

  void params(ParamRefs& out);
  int in_channels() const { return in_channels_; }

 private:
  Tensor pooled_rows(const Tensor& fp, int stage) const;

  int in_channels_ = 0, hidden_ = 0;
  std::vector<StageShape> stages_;
  std::vector<LinearLayer> down_;
  LinearLayer up_;
  std::vector<Tensor> cache_hidden_pre_;  // per stage (N*hw, hidden)
  int fwd_batch_ = 0;
};

}  // namespace trace
