#pragma once

#include <array>
#include <string>
#include <vector>

#include "trace/layers.hpp"
#include "trace/tensor.hpp"

namespace trace {

// Serialization directions over an h x w token grid.
enum class ScanDir { RowFwd = 0, ColFwd = 1, RowBwd = 2, ColBwd = 3 };
constexpr int kScanDirs = 4;

// Bijection: sequence position j -> row-major grid index. Backward scans
// reverse their forward counterparts.
std::vector<int> scan_permutation(ScanDir dir, int h, int w);

// Content (mask) and scope (edge) feature grids, each (N, C, h, w).
struct BranchPair {
  Tensor content, scope;
};

// Alternating [m_p(1), e_p(1), m_p(2), e_p(2), ...] token sequence:
// tokens (N, 2*h*w, C), even positions content, odd positions scope.
struct InterleavedSequence {
  Tensor tokens;
  ScanDir dir = ScanDir::RowFwd;
  int h = 0, w = 0;
};

InterleavedSequence build_direction_sequence(const BranchPair& pair, ScanDir dir);
BranchPair split_and_restore(const InterleavedSequence& seq);

// Channel-wise weighted sum over the four directional pairs:
// content_out(:, c) = sum_d wm(d, c) * content_d(:, c), likewise scope / we.
BranchPair aggregate_directions(const std::array<BranchPair, kScanDirs>& pairs,
                                const Tensor& wm, const Tensor& we);
void aggregate_directions_backward(const std::array<BranchPair, kScanDirs>& pairs,
                                   const Tensor& wm, const Tensor& we,
                                   const Tensor& dcontent, const Tensor& dscope,
                                   std::array<BranchPair, kScanDirs>& dpairs, Tensor& dwm,
                                   Tensor& dwe);

// Patch embedding of the coarse mask: (N, 1, S, S) -> (N, C, S/p, S/p).
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(const std::string& name, int patch, int width, Rng& rng);

  Tensor forward(const Tensor& m0);
  Tensor backward(const Tensor& dout);
  void params(ParamRefs& out);

 private:
  int patch_ = 0, width_ = 0;
  LinearLayer proj_;
  int fwd_n_ = 0, fwd_s_ = 0;
};

// Local fusion trunk: conv -> batch-norm -> GLU (2C' -> C') -> conv -> GELU.
class LdcfBlock {
 public:
  LdcfBlock() = default;
  LdcfBlock(const std::string& name, int width, Rng& rng);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dout);
  void params(ParamRefs& out);
  void state(StateRefs& out);

 private:
  int width_ = 0;
  Conv2dLayer conv_a_, conv_b_;
  BatchNormLayer bn_;
  Tensor cache_glu_in_, cache_z_;
};

// Forward activations one selective state-space block needs for its exact
// backward pass. Owned by the caller so the same parameter set can serve
// several directions concurrently.
struct MixerBlockCache {
  Tensor ln_xhat;                 // (N*L, C)
  std::vector<double> ln_invstd;  // N*L
  Tensor a, g;                    // (N, L, D): post-projection input / gate (pre-activation)
  Tensor ac;                      // (N, L, D): post causal depthwise conv, pre-SiLU
  Tensor v;                       // (N, L, D)
  Tensor bmat, cmat;              // (N, L, S)
  Tensor dtp, dt;                 // (N, L, D): pre-softplus and step sizes
  Tensor h;                       // (N, L, D, S): recurrent states after each step
  Tensor decay;                   // (N, L, D, S): exp(dt * A) factors
  Tensor y;                       // (N, L, D)
};

// One Mamba-style block: LN -> input/gate projections -> causal depthwise
// conv -> SiLU -> selective recurrence h_t = exp(dt*A) h_{t-1} + dt B_t v_t,
// y_t = C_t . h_t + D v_t -> gated output projection -> residual.
class MixerBlock {
 public:
  MixerBlock() = default;
  MixerBlock(const std::string& name, int c, int d, int s, int k, Rng& rng);

  // seq: (N, L, C). forward is const: all mutable state lives in the cache.
  Tensor forward(const Tensor& seq, MixerBlockCache& cache) const;
  Tensor backward(const Tensor& dout, const MixerBlockCache& cache);
  void params(ParamRefs& out);

  int channels() const { return c_; }

 private:
  int c_ = 0, d_ = 0, s_ = 0, k_ = 0;
  Param ln_g_, ln_b_;
  Param w_in_, b_in_, w_gate_, b_gate_;
  Param conv_w_, conv_b_;
  Param w_b_, w_c_;
  Param dt_w_, dt_b_;
  Param a_log_, d_skip_;
  Param w_out_, b_out_;
};

using MixerCaches = std::vector<MixerBlockCache>;

// Stack of L blocks sharing one parameter set across all scan directions.
class MixerStack {
 public:
  MixerStack() = default;
  MixerStack(const std::string& name, int blocks, int c, int d, int s, int k, Rng& rng);

  Tensor forward(const Tensor& seq, MixerCaches& caches) const;
  Tensor backward(const Tensor& dout, const MixerCaches& caches);
  void params(ParamRefs& out);

  int depth() const { return static_cast<int>(blocks_.size()); }
  MixerBlock& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<MixerBlock> blocks_;
};

// Which serialized branches run through the mixer (Table-III style single
// branch variants skip interleaving and modulation).
enum class ReasonerMode { Full, MaskOnly, EdgeOnly };

struct ReasonerConfig {
  int input_size = 64;  // M0 resolution
  int patch = 4;
  int width = 64;  // latent C
  int blocks = 2;
  int state_dim = 16;
  int conv_kernel = 3;
  ReasonerMode mode = ReasonerMode::Full;

  void validate() const;
  int grid() const { return input_size / patch; }
};

// The full scope reasoner refining M0 into the final mask plus an edge map.
class Reasoner {
 public:
  Reasoner() = default;
  Reasoner(const ReasonerConfig& cfg, Rng& rng);

  struct Output {
    Tensor mask, edge;  // (N, 1, S, S) probabilities
  };

  Output forward(const Tensor& m0, bool training);
  // Returns the gradient w.r.t. M0.
  Tensor backward(const Tensor& dmask, const Tensor& dedge);

  // LDCF front half in isolation: patch-embed + trunk + the two 1x1 heads.
  BranchPair ldcf_split(const Tensor& m0, bool training);
  // Gate modulation in isolation: caches for a following ssgm_backward.
  Tensor ssgm_modulate(const Tensor& mf, const Tensor& ef);
  // Gradients (dM_f, dE_f) of the last ssgm_modulate given dM_c.
  std::pair<Tensor, Tensor> ssgm_backward(const Tensor& dmc);
  // Sigmoid gate G of the last forward/ssgm_modulate call, (N, C, h, w).
  const Tensor& gate() const { return cache_g_; }

  void params(ParamRefs& out);
  void state(StateRefs& out);
  const ReasonerConfig& config() const { return cfg_; }
  MixerStack& mixer() { return mixer_; }
  Param& dir_weight_m() { return w_m_; }
  Param& dir_weight_e() { return w_e_; }

 private:
  Tensor predict_from_grid(Conv2dLayer& head, const Tensor& grid, Tensor& cache_prob);
  Tensor head_backward(Conv2dLayer& head, const Tensor& dprob, const Tensor& cache_prob);

  ReasonerConfig cfg_;
  PatchEmbed embed_;
  LdcfBlock ldcf1_, ldcf2_;
  Conv2dLayer branch_m_, branch_e_;  // 1x1 heads after the first trunk
  MixerStack mixer_;
  Param w_m_, w_e_;  // (4, C) directional weights
  LayerNormLayer ssgm_ln_;
  LinearLayer ssgm_lin_;
  Conv2dLayer mask_head_, edge_head_;  // 1x1 to a single logit plane

  // forward caches
  std::array<MixerCaches, kScanDirs> mix_caches_;
  std::array<BranchPair, kScanDirs> dir_pairs_;
  Tensor cache_mf_, cache_ef_, cache_g_;
  Tensor cache_mask_logit_, cache_mask_prob_, cache_edge_logit_, cache_edge_prob_;
  int fwd_n_ = 0;
};

}  // namespace trace
