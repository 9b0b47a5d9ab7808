#include "trace/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace trace {

LinearLayer::LinearLayer(const std::string& name, int in, int out, Rng& rng, double scale) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("LinearLayer: bad dims for " + name);
  if (scale <= 0.0) scale = 1.0 / std::sqrt(static_cast<double>(in));
  w_ = Param(name + ".w", {in, out});
  b_ = Param(name + ".b", {out});
  for (std::size_t i = 0; i < w_.value.size(); ++i) w_.value[i] = rng.normal() * scale;
}

Tensor LinearLayer::forward(const Tensor& rows) {
  cache_in_ = rows;
  Tensor out;
  kernels::linear(rows, w_.value, &b_.value, out);
  return out;
}

Tensor LinearLayer::apply(const Tensor& rows) const {
  Tensor out;
  kernels::linear(rows, w_.value, &b_.value, out);
  return out;
}

Tensor LinearLayer::backward(const Tensor& dout) {
  Tensor din(cache_in_.shape());
  kernels::linear_backward(cache_in_, w_.value, dout, &din, &w_.grad, &b_.grad);
  return din;
}

void LinearLayer::params(ParamRefs& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

Conv2dLayer::Conv2dLayer(const std::string& name, int cin, int cout, int k, Rng& rng) {
  if (cin <= 0 || cout <= 0 || k <= 0 || k % 2 == 0)
    throw std::invalid_argument("Conv2dLayer: bad dims for " + name);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
  w_ = Param(name + ".w", {cout, cin, k, k});
  b_ = Param(name + ".b", {cout});
  for (std::size_t i = 0; i < w_.value.size(); ++i) w_.value[i] = rng.normal() * scale;
}

Tensor Conv2dLayer::forward(const Tensor& x) {
  cache_in_ = x;
  Tensor out;
  kernels::conv2d(x, w_.value, &b_.value, out);
  return out;
}

Tensor Conv2dLayer::backward(const Tensor& dout) {
  Tensor din(cache_in_.shape());
  kernels::conv2d_backward(cache_in_, w_.value, dout, &din, &w_.grad, &b_.grad);
  return din;
}

void Conv2dLayer::params(ParamRefs& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

BatchNormLayer::BatchNormLayer(const std::string& name, int channels) : name_(name) {
  gamma_ = Param(name + ".gamma", {channels});
  gamma_.value.fill(1.0);
  beta_ = Param(name + ".beta", {channels});
  running_mean_ = Tensor({channels});
  running_var_ = Tensor({channels}, 1.0);
}

void BatchNormLayer::state(StateRefs& out) {
  out.emplace_back(name_ + ".running_mean", &running_mean_);
  out.emplace_back(name_ + ".running_var", &running_var_);
}

Tensor BatchNormLayer::forward(const Tensor& x, bool training) {
  if (x.ndim() != 4) throw std::invalid_argument("BatchNormLayer: expected NCHW input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != gamma_.value.dim(0)) throw std::invalid_argument("BatchNormLayer: channel mismatch");
  const int plane = h * w;
  const double m = static_cast<double>(n) * plane;
  cached_training_ = training;
  Tensor out(x.shape());
  cache_xc_ = Tensor(x.shape());
  cache_invstd_.assign(c, 0.0);
  for (int ci = 0; ci < c; ++ci) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* p = x.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / m;
      double sq = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* p = x.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      running_mean_[ci] = (1.0 - momentum_) * running_mean_[ci] + momentum_ * mean;
      running_var_[ci] = (1.0 - momentum_) * running_var_[ci] + momentum_ * var;
    } else {
      mean = running_mean_[ci];
      var = running_var_[ci];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cache_invstd_[ci] = invstd;
    const double g = gamma_.value[ci], b = beta_.value[ci];
    for (int ni = 0; ni < n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
      for (int i = 0; i < plane; ++i) {
        const double xc = x[base + i] - mean;
        cache_xc_[base + i] = xc;
        out[base + i] = g * xc * invstd + b;
      }
    }
  }
  return out;
}

Tensor BatchNormLayer::backward(const Tensor& dout) {
  check_shape(dout, cache_xc_.shape(), "BatchNormLayer::backward");
  const int n = dout.dim(0), c = dout.dim(1), plane = dout.dim(2) * dout.dim(3);
  const double m = static_cast<double>(n) * plane;
  Tensor dx(dout.shape());
  for (int ci = 0; ci < c; ++ci) {
    const double invstd = cache_invstd_[ci];
    const double g = gamma_.value[ci];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
      for (int i = 0; i < plane; ++i) {
        const double dy = dout[base + i];
        sum_dy += dy;
        sum_dy_xhat += dy * cache_xc_[base + i] * invstd;
      }
    }
    gamma_.grad[ci] += sum_dy_xhat;
    beta_.grad[ci] += sum_dy;
    if (!cached_training_) {
      // Eval mode: statistics are constants, so dx = dy * gamma * invstd.
      for (int ni = 0; ni < n; ++ni) {
        const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) dx[base + i] = dout[base + i] * g * invstd;
      }
      continue;
    }
    for (int ni = 0; ni < n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
      for (int i = 0; i < plane; ++i) {
        const double dy = dout[base + i];
        const double xhat = cache_xc_[base + i] * invstd;
        dx[base + i] = g * invstd * (dy - sum_dy / m - xhat * sum_dy_xhat / m);
      }
    }
  }
  return dx;
}

void BatchNormLayer::params(ParamRefs& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

LayerNormLayer::LayerNormLayer(const std::string& name, int channels) {
  gamma_ = Param(name + ".gamma", {channels});
  gamma_.value.fill(1.0);
  beta_ = Param(name + ".beta", {channels});
}

Tensor LayerNormLayer::forward(const Tensor& rows) {
  if (rows.ndim() != 2) throw std::invalid_argument("LayerNormLayer: expected (M, C) rows");
  const int m = rows.dim(0), c = rows.dim(1);
  if (c != gamma_.value.dim(0)) throw std::invalid_argument("LayerNormLayer: channel mismatch");
  Tensor out({m, c});
  cache_xhat_ = Tensor({m, c});
  cache_invstd_.assign(m, 0.0);
  for (int r = 0; r < m; ++r) {
    const double* x = rows.data() + static_cast<std::size_t>(r) * c;
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += x[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) {
      const double d = x[i] - mean;
      var += d * d;
    }
    var /= c;
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cache_invstd_[r] = invstd;
    for (int i = 0; i < c; ++i) {
      const double xhat = (x[i] - mean) * invstd;
      cache_xhat_[static_cast<std::size_t>(r) * c + i] = xhat;
      out[static_cast<std::size_t>(r) * c + i] = gamma_.value[i] * xhat + beta_.value[i];
    }
  }
  return out;
}

Tensor LayerNormLayer::backward(const Tensor& dout) {
  check_shape(dout, cache_xhat_.shape(), "LayerNormLayer::backward");
  const int m = dout.dim(0), c = dout.dim(1);
  Tensor dx({m, c});
  for (int r = 0; r < m; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * c;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int i = 0; i < c; ++i) {
      const double dy = dout[base + i];
      const double xhat = cache_xhat_[base + i];
      gamma_.grad[i] += dy * xhat;
      beta_.grad[i] += dy;
      const double dxhat = dy * gamma_.value[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double invstd = cache_invstd_[r];
    for (int i = 0; i < c; ++i) {
      const double dxhat = dout[base + i] * gamma_.value[i];
      dx[base + i] =
          invstd * (dxhat - sum_dxhat / c - cache_xhat_[base + i] * sum_dxhat_xhat / c);
    }
  }
  return dx;
}

void LayerNormLayer::params(ParamRefs& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void gelu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.shape());
  const long long n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = kernels::gelu(x[static_cast<std::size_t>(i)]);
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  check_shape(dy, x.shape(), "gelu_backward");
  dx = Tensor(x.shape());
  const long long n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    dx[j] = dy[j] * kernels::gelu_grad(x[j]);
  }
}

void sigmoid_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.shape());
  const long long n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i)
    y[static_cast<std::size_t>(i)] = kernels::sigmoid(x[static_cast<std::size_t>(i)]);
}

void sigmoid_backward_from_output(const Tensor& y, const Tensor& dy, Tensor& dx) {
  check_shape(dy, y.shape(), "sigmoid_backward_from_output");
  dx = Tensor(y.shape());
  const long long n = static_cast<long long>(y.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    dx[j] = dy[j] * y[j] * (1.0 - y[j]);
  }
}

Tensor grid_to_rows(const Tensor& grid) {
  if (grid.ndim() != 4) throw std::invalid_argument("grid_to_rows: expected NCHW");
  const int n = grid.dim(0), c = grid.dim(1), h = grid.dim(2), w = grid.dim(3);
  Tensor rows({n * h * w, c});
  const int plane = h * w;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < static_cast<long long>(n) * plane; ++t) {
    const int ni = static_cast<int>(t / plane);
    const int p = static_cast<int>(t % plane);
    for (int ci = 0; ci < c; ++ci)
      rows[static_cast<std::size_t>(t) * c + ci] =
          grid[(static_cast<std::size_t>(ni) * c + ci) * plane + p];
  }
  return rows;
}

Tensor rows_to_grid(const Tensor& rows, int n, int c, int h, int w) {
  if (rows.ndim() != 2 || rows.dim(0) != n * h * w || rows.dim(1) != c)
    throw std::invalid_argument("rows_to_grid: shape mismatch");
  Tensor grid({n, c, h, w});
  const int plane = h * w;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < static_cast<long long>(n) * plane; ++t) {
    const int ni = static_cast<int>(t / plane);
    const int p = static_cast<int>(t % plane);
    for (int ci = 0; ci < c; ++ci)
      grid[(static_cast<std::size_t>(ni) * c + ci) * plane + p] =
          rows[static_cast<std::size_t>(t) * c + ci];
  }
  return grid;
}

}  // namespace trace
