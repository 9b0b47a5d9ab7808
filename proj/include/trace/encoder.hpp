#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trace/layers.hpp"
#include "trace/tensor.hpp"

namespace trace {

struct StageShape {
  int h = 0, w = 0, c = 0;
};

// Configuration of the frozen backbone. All stages share one channel width so
// a single shared up-projection can serve every stage's prompt.
struct EncoderConfig {
  int input_size = 64;
  int patch = 8;
  int stages = 2;
  int width = 32;
  std::uint64_t seed = 1234;

  void validate() const;
  std::vector<StageShape> stage_shapes() const;
};

// Per-stage feature maps, each (N, c_i, h_i, w_i).
using StageFeatures = std::vector<Tensor>;

// Abstract multi-stage encoder. Implementations hold frozen weights: they
// expose no trainable params, but must propagate gradients back to the
// injected prompts so the prompt projector can learn.
class EncoderInterface {
 public:
  virtual ~EncoderInterface() = default;
  virtual const EncoderConfig& config() const = 0;
  // prompts may be null (no injection); otherwise one (N, c_i, h_i, w_i)
  // tensor per stage, added to the stage input before the stage transform.
  virtual StageFeatures forward(const Tensor& images, const std::vector<Tensor>* prompts) = 0;
  // dstages: gradient w.r.t. every stage output. Returns the gradient w.r.t.
  // each injected prompt (same shapes as the prompts).
  virtual std::vector<Tensor> backward_to_prompts(const std::vector<Tensor>& dstages) = 0;
  // Digest over all frozen weights; must be invariant under training.
  virtual std::uint64_t param_hash() const = 0;
};

// Deterministic, seeded stand-in backbone: patch embedding followed by a
// per-stage linear token mix and 2x average pooling between stages. Entirely
// linear, so prompt gradients need no activation caches.
class ToyEncoder : public EncoderInterface {
 public:
  explicit ToyEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const override { return cfg_; }
  StageFeatures forward(const Tensor& images, const std::vector<Tensor>* prompts) override;
  std::vector<Tensor> backward_to_prompts(const std::vector<Tensor>& dstages) override;
  std::uint64_t param_hash() const override;

 private:
  Tensor patchify(const Tensor& images) const;

  EncoderConfig cfg_;
  Tensor embed_w_;               // (patch*patch*3, width), frozen
  std::vector<Tensor> mix_w_;    // per stage (width, width), frozen
  std::vector<StageShape> shapes_;
  int fwd_batch_ = 0;
};

std::unique_ptr<EncoderInterface> make_encoder(const std::string& profile, const EncoderConfig& cfg);

// Trainable coarse decoder: per-stage 1x1 projection, bilinear upsample to
// the full resolution, sum, two 3x3 convs with a GELU between, sigmoid head.
class CoarseDecoder {
 public:
  CoarseDecoder() = default;
  CoarseDecoder(const std::vector<StageShape>& stages, int out_size, int width, Rng& rng);

  // stages: encoder outputs. Returns M0 probabilities (N, 1, S, S).
  Tensor forward(const StageFeatures& stages);
  // dm0: gradient w.r.t. the probability map. Returns per-stage gradients.
  StageFeatures backward(const Tensor& dm0);
  // Pre-sigmoid logits of the last forward call (N, 1, S, S).
  const Tensor& logits() const { return cache_z2_; }

  void params(ParamRefs& out);

 private:
  std::vector<StageShape> stage_shapes_;
  int out_size_ = 0;
  int width_ = 0;
  std::vector<LinearLayer> proj_;
  Conv2dLayer conv1_, conv2_;
  Tensor cache_fused_, cache_z1_, cache_a1_, cache_z2_, cache_m0_;
  int fwd_batch_ = 0;
};

}  // namespace trace
