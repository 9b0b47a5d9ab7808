#include "trace/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "trace/kernels.hpp"
#include "trace/rng.hpp"

namespace trace {

void EncoderConfig::validate() const {
  if (input_size <= 0 || patch <= 0 || input_size % patch != 0)
    throw std::invalid_argument("EncoderConfig: input_size must be a positive multiple of patch");
  if (stages < 1) throw std::invalid_argument("EncoderConfig: need at least one stage");
  if (width < 1) throw std::invalid_argument("EncoderConfig: width must be positive");
  int g = input_size / patch;
  for (int i = 1; i < stages; ++i) {
    g = (g + 1) / 2;
    if (g < 1) throw std::invalid_argument("EncoderConfig: too many stages for the grid size");
  }
}

std::vector<StageShape> EncoderConfig::stage_shapes() const {
  validate();
  std::vector<StageShape> shapes;
  int g = input_size / patch;
  for (int i = 0; i < stages; ++i) {
    shapes.push_back({g, g, width});
    g = (g + 1) / 2;
  }
  return shapes;
}

ToyEncoder::ToyEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  shapes_ = cfg_.stage_shapes();
  Rng rng(cfg_.seed);
  const int in = cfg_.patch * cfg_.patch * 3;
  embed_w_ = Tensor({in, cfg_.width});
  const double es = 1.0 / std::sqrt(static_cast<double>(in));
  for (std::size_t i = 0; i < embed_w_.size(); ++i) embed_w_[i] = rng.normal() * es;
  const double ms = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
  for (int s = 0; s < cfg_.stages; ++s) {
    Tensor w({cfg_.width, cfg_.width});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * ms;
    mix_w_.push_back(std::move(w));
  }
}

Tensor ToyEncoder::patchify(const Tensor& images) const {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.input_size ||
      images.dim(3) != cfg_.input_size)
    throw std::invalid_argument("ToyEncoder: expected (N, 3, S, S) input, got " +
                                images.shape_str());
  const int n = images.dim(0), p = cfg_.patch, g = cfg_.input_size / p;
  const int row_len = p * p * 3;
  Tensor rows({n * g * g, row_len});
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < static_cast<long long>(n) * g * g; ++t) {
    const int ni = static_cast<int>(t / (g * g));
    const int gy = static_cast<int>((t / g) % g);
    const int gx = static_cast<int>(t % g);
    double* out = rows.data() + static_cast<std::size_t>(t) * row_len;
    for (int c = 0; c < 3; ++c)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          out[(c * p + py) * p + px] = images.at(ni, c, gy * p + py, gx * p + px);
  }
  return rows;
}

StageFeatures ToyEncoder::forward(const Tensor& images, const std::vector<Tensor>* prompts) {
  const int n = images.dim(0);
  fwd_batch_ = n;
  if (prompts && static_cast<int>(prompts->size()) != cfg_.stages)
    throw std::invalid_argument("ToyEncoder: prompt count does not match stage count");
  Tensor embedded;
  kernels::linear(patchify(images), embed_w_, nullptr, embedded);
  Tensor x = rows_to_grid(embedded, n, cfg_.width, shapes_[0].h, shapes_[0].w);

  StageFeatures outs;
  for (int s = 0; s < cfg_.stages; ++s) {
    if (prompts) {
      const Tensor& p = (*prompts)[s];
      check_shape(p, {n, shapes_[s].c, shapes_[s].h, shapes_[s].w}, "ToyEncoder prompt");
      x.add_(p);
    }
    Tensor mixed_rows;
    kernels::linear(grid_to_rows(x), mix_w_[s], nullptr, mixed_rows);
    Tensor y = rows_to_grid(mixed_rows, n, cfg_.width, shapes_[s].h, shapes_[s].w);
    outs.push_back(y);
    if (s + 1 < cfg_.stages) {
      Tensor pooled;
      kernels::adaptive_avg_pool(y, shapes_[s + 1].h, shapes_[s + 1].w, pooled);
      x = pooled;
    }
  }
  return outs;
}

std::vector<Tensor> ToyEncoder::backward_to_prompts(const std::vector<Tensor>& dstages) {
  if (static_cast<int>(dstages.size()) != cfg_.stages)
    throw std::invalid_argument("ToyEncoder: stage-gradient count mismatch");
  const int n = fwd_batch_;
  const int width = cfg_.width;
  std::vector<Tensor> dprompts(cfg_.stages);
  Tensor g;  // gradient flowing back from the next stage's pooled input
  for (int s = cfg_.stages - 1; s >= 0; --s) {
    Tensor total = dstages[s];
    if (s < cfg_.stages - 1) total.add_(g);
    // Through the token mix: dX = dY * W^T. The mix is linear and frozen, so
    // no forward cache is needed.
    const int hw = shapes_[s].h * shapes_[s].w;
    Tensor drows = grid_to_rows(total);
    Tensor dx_rows({n * hw, width});
    const Tensor& w = mix_w_[s];
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(n) * hw; ++r) {
      const double* dr = drows.data() + static_cast<std::size_t>(r) * width;
      double* dx = dx_rows.data() + static_cast<std::size_t>(r) * width;
      for (int i = 0; i < width; ++i) {
        double acc = 0.0;
        for (int j = 0; j < width; ++j) acc += dr[j] * w[static_cast<std::size_t>(i) * width + j];
        dx[i] = acc;
      }
    }
    // Injection is additive, so the prompt gradient equals the gradient at
    // the stage input.
    dprompts[s] = rows_to_grid(dx_rows, n, width, shapes_[s].h, shapes_[s].w);
    if (s > 0) {
      g = Tensor({n, width, shapes_[s - 1].h, shapes_[s - 1].w});
      kernels::adaptive_avg_pool_backward(dprompts[s], shapes_[s - 1].h, shapes_[s - 1].w, g);
    }
  }
  return dprompts;
}

std::uint64_t ToyEncoder::param_hash() const {
  // FNV-1a over the raw bytes of every frozen tensor.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    const std::size_t bytes = t.size() * sizeof(double);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(embed_w_);
  for (const auto& w : mix_w_) mix(w);
  return h;
}

std::unique_ptr<EncoderInterface> make_encoder(const std::string& profile,
                                               const EncoderConfig& cfg) {
  if (profile == "toy") return std::make_unique<ToyEncoder>(cfg);
  if (profile == "external")
    throw std::invalid_argument(
        "encoder profile 'external' requires a backbone integration that is not bundled; "
        "use profile 'toy'");
  throw std::invalid_argument("unknown encoder profile: " + profile);
}

CoarseDecoder::CoarseDecoder(const std::vector<StageShape>& stages, int out_size, int width,
                             Rng& rng)
    : stage_shapes_(stages), out_size_(out_size), width_(width) {
  if (stages.empty()) throw std::invalid_argument("CoarseDecoder: no stages");
  if (out_size <= 0 || width <= 0) throw std::invalid_argument("CoarseDecoder: bad dims");
  for (std::size_t i = 0; i < stages.size(); ++i)
    proj_.emplace_back("decoder.proj" + std::to_string(i), stages[i].c, width, rng);
  conv1_ = Conv2dLayer("decoder.conv1", width, width, 3, rng);
  conv2_ = Conv2dLayer("decoder.conv2", width, 1, 3, rng);
}

Tensor CoarseDecoder::forward(const StageFeatures& stages) {
  if (stages.size() != stage_shapes_.size())
    throw std::invalid_argument("CoarseDecoder: stage count mismatch");
  const int n = stages[0].dim(0);
  fwd_batch_ = n;
  cache_fused_ = Tensor({n, width_, out_size_, out_size_});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageShape& sh = stage_shapes_[s];
    check_shape(stages[s], {n, sh.c, sh.h, sh.w}, "CoarseDecoder stage input");
    Tensor rows = proj_[s].forward(grid_to_rows(stages[s]));
    Tensor up;
    kernels::upsample_bilinear(rows_to_grid(rows, n, width_, sh.h, sh.w), out_size_, out_size_,
                               up);
    cache_fused_.add_(up);
  }
  cache_z1_ = conv1_.forward(cache_fused_);
  gelu_forward(cache_z1_, cache_a1_);
  cache_z2_ = conv2_.forward(cache_a1_);
  sigmoid_forward(cache_z2_, cache_m0_);
  return cache_m0_;
}

StageFeatures CoarseDecoder::backward(const Tensor& dm0) {
  Tensor dz2;
  sigmoid_backward_from_output(cache_m0_, dm0, dz2);
  Tensor da1 = conv2_.backward(dz2);
  Tensor dz1;
  gelu_backward(cache_z1_, da1, dz1);
  Tensor dfused = conv1_.backward(dz1);
  StageFeatures dstages(stage_shapes_.size());
  for (std::size_t s = 0; s < stage_shapes_.size(); ++s) {
    const StageShape& sh = stage_shapes_[s];
    Tensor dgrid({fwd_batch_, width_, sh.h, sh.w});
    kernels::upsample_bilinear_backward(dfused, sh.h, sh.w, dgrid);
    Tensor drows = proj_[s].backward(grid_to_rows(dgrid));
    dstages[s] = rows_to_grid(drows, fwd_batch_, sh.c, sh.h, sh.w);
  }
  return dstages;
}

void CoarseDecoder::params(ParamRefs& out) {
  for (auto& p : proj_) p.params(out);
  conv1_.params(out);
  conv2_.params(out);
}

}  // namespace trace
