#include "trace/spectral.hpp"

#include <cmath>
#include <stdexcept>

#include "trace/kernels.hpp"

namespace trace {

WaveletSubbands haar_dwt(const Tensor& plane) {
  if (plane.ndim() != 2) throw std::invalid_argument("haar_dwt: expected a 2D plane");
  const int h = plane.dim(0), w = plane.dim(1);
  if (h < 1 || w < 1) throw std::invalid_argument("haar_dwt: empty plane");
  const int h2 = (h + 1) / 2, w2 = (w + 1) / 2;
  WaveletSubbands sb;
  sb.orig_h = h;
  sb.orig_w = w;
  sb.low = Tensor({h2, w2});
  sb.horiz = Tensor({h2, w2});
  sb.vert = Tensor({h2, w2});
  sb.diag = Tensor({h2, w2});
  // Odd sizes are edge-reflected to even; the orthonormal 2x2 stencil keeps
  // ||x|| so one level reconstructs exactly.
#pragma omp parallel for schedule(static)
  for (int by = 0; by < h2; ++by) {
    for (int bx = 0; bx < w2; ++bx) {
      const int y0 = 2 * by, x0 = 2 * bx;
      const int y1 = kernels::mirror_index(y0 + 1, h);
      const int x1 = kernels::mirror_index(x0 + 1, w);
      const double a = plane.at(y0, x0);
      const double b = plane.at(y0, x1);
      const double c = plane.at(y1, x0);
      const double d = plane.at(y1, x1);
      sb.low.at(by, bx) = 0.5 * (a + b + c + d);
      sb.horiz.at(by, bx) = 0.5 * (a - b + c - d);
      sb.vert.at(by, bx) = 0.5 * (a + b - c - d);
      sb.diag.at(by, bx) = 0.5 * (a - b - c + d);
    }
  }
  return sb;
}

Tensor wavelet_feature(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("wavelet_feature: expected a (3, H, W) image");
  const int h = image.dim(1), w = image.dim(2);
  const int h2 = (h + 1) / 2, w2 = (w + 1) / 2;
  Tensor out({9, h2, w2});
  for (int c = 0; c < 3; ++c) {
    Tensor plane({h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) plane.at(y, x) = image.at(c, y, x);
    const WaveletSubbands sb = haar_dwt(plane);
    const Tensor* bands[3] = {&sb.horiz, &sb.vert, &sb.diag};
    for (int b = 0; b < 3; ++b)
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) out.at(c * 3 + b, y, x) = bands[b]->at(y, x);
  }
  return out;
}

namespace {

// Integer coefficient tables plus the central-magnitude normalizer. The
// residual accumulates the exactly-representable integer form and divides
// once at the end: the zero-sum cancellation then happens on exact partial
// sums, so constant inputs yield a residual of exactly 0.0 (pre-dividing
// coefficients like 1/12 rounds them and leaves ~1e-16 leakage).
struct SrmKernelRaw {
  Tensor coeff;
  double divisor = 1.0;
};

const std::vector<SrmKernelRaw>& srm_kernel_bank_raw() {
  static const std::vector<SrmKernelRaw> bank = [] {
    std::vector<SrmKernelRaw> k;
    Tensor first({1, 3});
    first.at(0, 1) = -1.0;
    first.at(0, 2) = 1.0;
    k.push_back({first, 1.0});
    Tensor second({1, 3});
    second.at(0, 0) = 1.0;
    second.at(0, 1) = -2.0;
    second.at(0, 2) = 1.0;
    k.push_back({second, 2.0});
    // 5x5 "SQUARE" predictor residual, central coefficient -12 before the
    // 1/12 normalization.
    const double sq[5][5] = {{-1, 2, -2, 2, -1},
                             {2, -6, 8, -6, 2},
                             {-2, 8, -12, 8, -2},
                             {2, -6, 8, -6, 2},
                             {-1, 2, -2, 2, -1}};
    Tensor square({5, 5});
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) square.at(y, x) = sq[y][x];
    k.push_back({square, 12.0});
    return k;
  }();
  return bank;
}

}  // namespace

const std::vector<Tensor>& srm_kernel_bank() {
  static const std::vector<Tensor> bank = [] {
    std::vector<Tensor> k;
    for (const SrmKernelRaw& raw : srm_kernel_bank_raw()) {
      Tensor t(raw.coeff.shape());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = raw.coeff[i] / raw.divisor;
      k.push_back(std::move(t));
    }
    return k;
  }();
  return bank;
}

Tensor srm_residual(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("srm_residual: expected a (3, H, W) image");
  const int h = image.dim(1), w = image.dim(2);
  const auto& bank = srm_kernel_bank_raw();
  Tensor out({3 * kSrmKernelCount, h, w});
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < 3 * kSrmKernelCount; ++plane) {
    const int c = plane / kSrmKernelCount;
    const SrmKernelRaw& raw = bank[static_cast<std::size_t>(plane % kSrmKernelCount)];
    const Tensor& ker = raw.coeff;
    const int kh = ker.dim(0), kw = ker.dim(1);
    const int cy = kh / 2, cx = kw / 2;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky) {
          const int yy = kernels::mirror_index(y + ky - cy, h);
          for (int kx = 0; kx < kw; ++kx) {
            const int xx = kernels::mirror_index(x + kx - cx, w);
            acc += ker.at(ky, kx) * image.at(c, yy, xx);
          }
        }
        out.at(plane, y, x) = acc / raw.divisor;
      }
    }
  }
  return out;
}

Tensor fuse_perturbation(const Tensor& wavelet_feat, const Tensor& srm_feat, int h, int w) {
  if (wavelet_feat.ndim() != 3 || srm_feat.ndim() != 3)
    throw std::invalid_argument("fuse_perturbation: expected 3D feature stacks");
  if (srm_feat.dim(1) != h || srm_feat.dim(2) != w)
    throw std::invalid_argument("fuse_perturbation: SRM plane size mismatch");
  const int wc = wavelet_feat.dim(0), sc = srm_feat.dim(0);
  Tensor wav4({1, wc, wavelet_feat.dim(1), wavelet_feat.dim(2)});
  std::copy(wavelet_feat.data(), wavelet_feat.data() + wavelet_feat.size(), wav4.data());
  Tensor up;
  kernels::upsample_nearest(wav4, h, w, up);
  Tensor out({wc + sc, h, w});
  std::copy(up.data(), up.data() + up.size(), out.data());
  std::copy(srm_feat.data(), srm_feat.data() + srm_feat.size(),
            out.data() + static_cast<std::size_t>(wc) * h * w);
  return out;
}

int perturbation_channels(bool use_wavelet, bool use_srm) {
  return (use_wavelet ? 9 : 0) + (use_srm ? 3 * kSrmKernelCount : 0);
}

Tensor perturbation_map(const Tensor& image, bool use_wavelet, bool use_srm) {
  if (!use_wavelet && !use_srm)
    throw std::invalid_argument("perturbation_map: no active branch");
  const int h = image.dim(1), w = image.dim(2);
  if (use_wavelet && use_srm)
    return fuse_perturbation(wavelet_feature(image), srm_residual(image), h, w);
  if (use_srm) return srm_residual(image);
  Tensor wav = wavelet_feature(image);
  Tensor wav4({1, wav.dim(0), wav.dim(1), wav.dim(2)});
  std::copy(wav.data(), wav.data() + wav.size(), wav4.data());
  Tensor up;
  kernels::upsample_nearest(wav4, h, w, up);
  Tensor out({wav.dim(0), h, w});
  std::copy(up.data(), up.data() + up.size(), out.data());
  return out;
}

PromptProjector::PromptProjector(int in_channels, int hidden,
                                 const std::vector<StageShape>& stages, Rng& rng)
    : in_channels_(in_channels), hidden_(hidden), stages_(stages) {
  if (in_channels <= 0 || hidden <= 0 || stages.empty())
    throw std::invalid_argument("PromptProjector: bad configuration");
  for (std::size_t i = 0; i < stages.size(); ++i)
    down_.emplace_back("prompt.down" + std::to_string(i), in_channels, hidden, rng);
  // All stages share one channel width, so a single up-projection serves
  // every stage.
  up_ = LinearLayer("prompt.up", hidden, stages[0].c, rng);
  for (const auto& s : stages)
    if (s.c != stages[0].c)
      throw std::invalid_argument("PromptProjector: stages must share one channel width");
}

Tensor PromptProjector::pooled_rows(const Tensor& fp, int stage) const {
  Tensor fp4({1, in_channels_, fp.dim(1), fp.dim(2)});
  std::copy(fp.data(), fp.data() + fp.size(), fp4.data());
  Tensor pooled;
  kernels::adaptive_avg_pool(fp4, stages_[stage].h, stages_[stage].w, pooled);
  return grid_to_rows(pooled);
}

std::vector<Tensor> PromptProjector::forward(const std::vector<Tensor>& fp) {
  const int n = static_cast<int>(fp.size());
  if (n == 0) throw std::invalid_argument("PromptProjector: empty batch");
  fwd_batch_ = n;
  cache_hidden_pre_.assign(stages_.size(), Tensor());
  std::vector<Tensor> prompts(stages_.size());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const int hw = stages_[s].h * stages_[s].w;
    Tensor rows({n * hw, in_channels_});
    for (int ni = 0; ni < n; ++ni) {
      if (fp[ni].ndim() != 3 || fp[ni].dim(0) != in_channels_)
        throw std::invalid_argument("PromptProjector: expected (Cp, H, W) input, got " +
                                    fp[ni].shape_str());
      Tensor r = pooled_rows(fp[ni], static_cast<int>(s));
      std::copy(r.data(), r.data() + r.size(),
                rows.data() + static_cast<std::size_t>(ni) * hw * in_channels_);
    }
    Tensor pre = down_[s].forward(rows);
    cache_hidden_pre_[s] = pre;
    Tensor post;
    gelu_forward(pre, post);
    Tensor out;
    kernels::linear(post, up_.weight().value, &up_.bias().value, out);
    prompts[s] = rows_to_grid(out, n, stages_[s].c, stages_[s].h, stages_[s].w);
  }
  return prompts;
}

Tensor PromptProjector::project(const Tensor& fp, int stage) const {
  if (stage < 0 || stage >= static_cast<int>(stages_.size()))
    throw std::invalid_argument("PromptProjector: stage out of range");
  Tensor pre = down_[stage].apply(pooled_rows(fp, stage));
  Tensor post;
  gelu_forward(pre, post);
  Tensor out = up_.apply(post);
  const StageShape& sh = stages_[stage];
  Tensor prompt({sh.c, sh.h, sh.w});
  for (int t = 0; t < sh.h * sh.w; ++t)
    for (int ci = 0; ci < sh.c; ++ci)
      prompt[static_cast<std::size_t>(ci) * sh.h * sh.w + t] =
          out[static_cast<std::size_t>(t) * sh.c + ci];
  return prompt;
}

void PromptProjector::backward(const std::vector<Tensor>& dprompts) {
  if (dprompts.size() != stages_.size())
    throw std::invalid_argument("PromptProjector: gradient count mismatch");
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Tensor drows = grid_to_rows(dprompts[s]);
    // The up-projection is shared across stages, so run its backward manually
    // against this stage's recomputed GELU output and accumulate.
    Tensor post;
    gelu_forward(cache_hidden_pre_[s], post);
    Tensor dpost(post.shape());
    kernels::linear_backward(post, up_.weight().value, drows, &dpost, &up_.weight().grad,
                             &up_.bias().grad);
    Tensor dpre;
    gelu_backward(cache_hidden_pre_[s], dpost, dpre);
    down_[s].backward(dpre);
  }
}

void PromptProjector::params(ParamRefs& out) {
  for (auto& d : down_) d.params(out);
  up_.params(out);
}

}  // namespace trace
