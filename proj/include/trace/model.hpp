#pragma once

#include <memory>
#include <string>
#include <vector>

#include "trace/encoder.hpp"
#include "trace/reasoner.hpp"
#include "trace/spectral.hpp"

namespace trace {

// Ablation-table switches. sps_* select the perturbation branches feeding the
// prompts (both off = promptless encoder); scr_* select which serialized
// branch runs through the state-space reasoner (one off = single-branch
// variant, both off = reasoner bypassed entirely: the coarse decoder output
// is the final mask and no edge map is produced).
struct AblationFlags {
  bool sps_wavelet = true;
  bool sps_srm = true;
  bool scr_mask = true;
  bool scr_edge = true;

  bool use_prompts() const { return sps_wavelet || sps_srm; }
  bool use_reasoner() const { return scr_mask || scr_edge; }
  ReasonerMode reasoner_mode() const;
  std::string describe() const;
};

// Disables the named flags: comma list over
// {sps_wavelet, sps_srm, scr_mask, scr_edge}; "" or "none" disables nothing.
AblationFlags parse_ablation(const std::string& text);

// Flag combinations of the eight ablation-table rows:
//   1 full | 2 -wavelet | 3 -srm | 4 -both sps | 5 -both scr (bypass)
//   6 -scr_edge (mask-only branch) | 7 -scr_mask (edge-only branch)
//   8 bare encoder/decoder (everything off)
AblationFlags ablation_table_row(int row);

struct ModelConfig {
  EncoderConfig encoder;
  ReasonerConfig reasoner;   // input_size must match encoder.input_size
  int prompt_hidden = 16;    // SPS down-projection width
  int decoder_width = 16;    // coarse decoder conv width
  std::string encoder_profile = "toy";
  AblationFlags ablation;
  std::uint64_t seed = 7;

  void validate() const;
};

struct ModelOutput {
  Tensor m0;    // coarse probabilities (N, 1, S, S)
  Tensor mask;  // final probabilities (N, 1, S, S); == m0 under bypass
  Tensor edge;  // (N, 1, S, S); empty when the reasoner is bypassed
  bool has_edge() const { return !edge.empty(); }
};

// The full pipeline: perturbation prompts -> frozen encoder -> coarse
// decoder -> scope reasoner. Only prompts, decoder, and reasoner train.
class TraceModel {
 public:
  explicit TraceModel(const ModelConfig& cfg);

  ModelOutput forward(const Tensor& images, bool training);
  // dmask / dedge: loss gradients w.r.t. the final probability maps; dedge is
  // ignored under bypass. Parameter gradients accumulate.
  void backward(const Tensor& dmask, const Tensor& dedge);

  ParamRefs params();
  // Persistent non-trainable state (batch-norm running statistics).
  StateRefs state();
  void zero_grads();

  const ModelConfig& config() const { return cfg_; }
  EncoderInterface& encoder() { return *encoder_; }
  CoarseDecoder& decoder() { return decoder_; }
  PromptProjector& prompts() { return proj_; }
  // Null when the reasoner is bypassed.
  Reasoner* reasoner() { return reasoner_.get(); }

 private:
  ModelConfig cfg_;
  PromptProjector proj_;
  std::unique_ptr<EncoderInterface> encoder_;
  CoarseDecoder decoder_;
  std::unique_ptr<Reasoner> reasoner_;
};

// Fig.9-style visualization input: mean over channels of the SSGM gate,
// (N, C, h, w) -> (N, h, w).
Tensor gate_mean_map(const Tensor& gate);

}  // namespace trace
