#pragma once

#include <string>

#include "trace/kernels.hpp"
#include "trace/rng.hpp"
#include "trace/tensor.hpp"

namespace trace {

// Trainable building blocks. Each layer caches what its backward pass needs
// during forward; backward accumulates into param grads and returns the
// input gradient.

class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(const std::string& name, int in, int out, Rng& rng, double scale = -1.0);

  // rows: (M, in) -> (M, out)
  Tensor forward(const Tensor& rows);
  Tensor backward(const Tensor& dout);
  // Forward without caching (inference-only paths).
  Tensor apply(const Tensor& rows) const;

  void params(ParamRefs& out);
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  int in_features() const { return w_.value.dim(0); }
  int out_features() const { return w_.value.dim(1); }

 private:
  Param w_, b_;
  Tensor cache_in_;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int cin, int cout, int k, Rng& rng);

  // x: (N, cin, H, W) -> (N, cout, H, W), stride 1, symmetric padding.
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dout);

  void params(ParamRefs& out);
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Param w_, b_;
  Tensor cache_in_;
};

class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, int channels);

  // x: (N, C, H, W); training uses batch statistics and updates running
  // stats, eval uses the running estimates.
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dout);

  void params(ParamRefs& out);
  // Running statistics: persistent state the optimizer never touches.
  void state(StateRefs& out);
  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  std::string name_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor cache_xc_;       // x - mean
  std::vector<double> cache_invstd_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  bool cached_training_ = false;
};

// Per-token layer norm over the last dimension of (M, C) rows.
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(const std::string& name, int channels);

  Tensor forward(const Tensor& rows);
  Tensor backward(const Tensor& dout);

  void params(ParamRefs& out);
  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }

 private:
  Param gamma_, beta_;
  Tensor cache_xhat_;
  std::vector<double> cache_invstd_;
  double eps_ = 1e-5;
};

// ---- tensor-wise activation helpers (forward caches are the caller's) ----

void gelu_forward(const Tensor& x, Tensor& y);
void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);
void sigmoid_forward(const Tensor& x, Tensor& y);
// dx from the *output* y = sigmoid(x).
void sigmoid_backward_from_output(const Tensor& y, const Tensor& dy, Tensor& dx);

// Reshape helpers between token grids (N, C, h, w) and row matrices
// (N*h*w, C) in row-major token order.
Tensor grid_to_rows(const Tensor& grid);
Tensor rows_to_grid(const Tensor& rows, int n, int c, int h, int w);

}  // namespace trace
