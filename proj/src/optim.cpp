#include "trace/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace trace {

AdamW::AdamW(const ParamRefs& params, const AdamWConfig& cfg) : params_(params), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Param& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p.value[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p.value[i]);
    }
  }
}

void AdamW::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw std::invalid_argument("AdamW::restore: moment count does not match parameter count");
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    if (!m[pi].same_shape(params_[pi]->value) || !v[pi].same_shape(params_[pi]->value))
      throw std::invalid_argument("AdamW::restore: moment shape mismatch at '" +
                                  params_[pi]->name + "'");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

double cosine_lr(double lr_init, double lr_min, std::int64_t step, std::int64_t total_steps) {
  if (lr_min > lr_init) throw std::invalid_argument("cosine_lr: lr_min exceeds lr_init");
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step >= total_steps - 1) return lr_min;
  if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
  const double span = static_cast<double>(total_steps - 1);
  const double phase = 3.14159265358979323846 * static_cast<double>(step) / span;
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace trace
