#pragma once

#include <cmath>

#include "trace/tensor.hpp"

namespace trace {
namespace kernels {

// ---- scalar activations -------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Exact (erf-based) GELU.
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Symmetric (edge-inclusive mirror) padding index: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  int j = i % period;
  if (j < 0) j += period;
  return (j < n) ? j : period - 1 - j;
}

// ---- parallel kernels ----------------------------------------------------
// All kernels write each output element from exactly one loop iteration, so
// results are bit-identical regardless of thread count. Backward kernels
// accumulate (+=) into the given gradient tensors.

// 2D convolution, stride 1, 'same' output, symmetric padding.
// in: (N, Cin, H, W); w: (Cout, Cin, kh, kw); bias: (Cout) or null.
void conv2d(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out);
void conv2d_backward(const Tensor& in, const Tensor& w, const Tensor& dout,
                     Tensor* din, Tensor* dw, Tensor* db);

// Row-wise linear map: in (M, In) x w (In, Out) + b -> out (M, Out).
void linear(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out);
void linear_backward(const Tensor& in, const Tensor& w, const Tensor& dout,
                     Tensor* din, Tensor* dw, Tensor* db);

// Adaptive average pooling over (N, C, H, W) -> (N, C, oh, ow).
void adaptive_avg_pool(const Tensor& in, int oh, int ow, Tensor& out);
void adaptive_avg_pool_backward(const Tensor& dout, int h, int w, Tensor& din);

// Nearest-neighbor upsampling: out(y, x) = in(y * ih / oh, x * iw / ow).
void upsample_nearest(const Tensor& in, int oh, int ow, Tensor& out);
void upsample_nearest_backward(const Tensor& dout, int ih, int iw, Tensor& din);

// Bilinear upsampling with half-pixel centers.
void upsample_bilinear(const Tensor& in, int oh, int ow, Tensor& out);
void upsample_bilinear_backward(const Tensor& dout, int ih, int iw, Tensor& din);

}  // namespace kernels

// Serial reference implementations of the parallel kernels above; used by the
// unit tests and the benchmark as the comparison baseline.
namespace ref {

void conv2d(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out);
void linear(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out);
void adaptive_avg_pool(const Tensor& in, int oh, int ow, Tensor& out);
void upsample_bilinear(const Tensor& in, int oh, int ow, Tensor& out);

}  // namespace ref
}  // namespace trace
