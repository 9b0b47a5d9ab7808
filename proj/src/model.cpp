#include "trace/model.hpp"

#include <sstream>
#include <stdexcept>
#include <utility>

#include "trace/rng.hpp"

namespace trace {

ReasonerMode AblationFlags::reasoner_mode() const {
  if (scr_mask && scr_edge) return ReasonerMode::Full;
  if (scr_mask) return ReasonerMode::MaskOnly;
  if (scr_edge) return ReasonerMode::EdgeOnly;
  throw std::logic_error("AblationFlags::reasoner_mode: reasoner is bypassed");
}

std::string AblationFlags::describe() const {
  std::ostringstream s;
  s << "sps_wavelet=" << (sps_wavelet ? "on" : "off") << " sps_srm=" << (sps_srm ? "on" : "off")
    << " scr_mask=" << (scr_mask ? "on" : "off") << " scr_edge=" << (scr_edge ? "on" : "off");
  return s.str();
}

AblationFlags parse_ablation(const std::string& text) {
  AblationFlags f;
  if (text.empty() || text == "none") return f;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string tok =
        comma == std::string::npos ? text.substr(pos) : text.substr(pos, comma - pos);
    if (tok == "sps_wavelet") {
      f.sps_wavelet = false;
    } else if (tok == "sps_srm") {
      f.sps_srm = false;
    } else if (tok == "scr_mask") {
      f.scr_mask = false;
    } else if (tok == "scr_edge") {
      f.scr_edge = false;
    } else if (!tok.empty()) {
      throw std::invalid_argument("parse_ablation: unknown flag '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return f;
}

AblationFlags ablation_table_row(int row) {
  AblationFlags f;
  switch (row) {
    case 1: break;
    case 2: f.sps_wavelet = false; break;
    case 3: f.sps_srm = false; break;
    case 4: f.sps_wavelet = f.sps_srm = false; break;
    case 5: f.scr_mask = f.scr_edge = false; break;
    case 6: f.scr_edge = false; break;
    case 7: f.scr_mask = false; break;
    case 8: f.sps_wavelet = f.sps_srm = f.scr_mask = f.scr_edge = false; break;
    default: throw std::invalid_argument("ablation_table_row: row must lie in 1..8");
  }
  return f;
}

void ModelConfig::validate() const {
  encoder.validate();
  reasoner.validate();
  if (encoder.input_size != reasoner.input_size) {
    throw std::invalid_argument("ModelConfig: encoder input_size " +
                                std::to_string(encoder.input_size) + " != reasoner input_size " +
                                std::to_string(reasoner.input_size));
  }
  if (prompt_hidden < 1) throw std::invalid_argument("ModelConfig: prompt_hidden must be >= 1");
  if (decoder_width < 1) throw std::invalid_argument("ModelConfig: decoder_width must be >= 1");
}

TraceModel::TraceModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.ablation.use_reasoner()) cfg_.reasoner.mode = cfg_.ablation.reasoner_mode();
  cfg_.validate();
  encoder_ = make_encoder(cfg_.encoder_profile, cfg_.encoder);
  // Forked sub-streams keep each module's init independent of which other
  // modules an ablation instantiates.
  Rng master(cfg_.seed);
  Rng rng_proj = master.fork(1);
  Rng rng_dec = master.fork(2);
  Rng rng_reason = master.fork(3);
  const std::vector<StageShape> shapes = encoder_->config().stage_shapes();
  if (cfg_.ablation.use_prompts()) {
    proj_ = PromptProjector(
        perturbation_channels(cfg_.ablation.sps_wavelet, cfg_.ablation.sps_srm),
        cfg_.prompt_hidden, shapes, rng_proj);
  }
  decoder_ = CoarseDecoder(shapes, cfg_.encoder.input_size, cfg_.decoder_width, rng_dec);
  if (cfg_.ablation.use_reasoner()) reasoner_ = std::make_unique<Reasoner>(cfg_.reasoner, rng_reason);
}

namespace {

Tensor slice_sample(const Tensor& images, int i) {
  Tensor out({images.dim(1), images.dim(2), images.dim(3)});
  const double* src = images.data() + static_cast<std::size_t>(i) * out.size();
  std::copy(src, src + out.size(), out.data());
  return out;
}

}  // namespace

ModelOutput TraceModel::forward(const Tensor& images, bool training) {
  if (images.ndim() != 4 || images.dim(1) != 3) {
    throw std::invalid_argument("TraceModel::forward: expected (N, 3, H, W) images, got " +
                                images.shape_str());
  }
  const int s = cfg_.encoder.input_size;
  if (images.dim(2) != s || images.dim(3) != s) {
    throw std::invalid_argument("TraceModel::forward: input is " + images.shape_str() +
                                " but the model was built for " + std::to_string(s) + "x" +
                                std::to_string(s));
  }
  const int n = images.dim(0);
  std::vector<Tensor> prompt_tensors;
  const std::vector<Tensor>* prompts = nullptr;
  if (cfg_.ablation.use_prompts()) {
    std::vector<Tensor> fps(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      fps[static_cast<std::size_t>(i)] =
          perturbation_map(slice_sample(images, i), cfg_.ablation.sps_wavelet, cfg_.ablation.sps_srm);
    }
    prompt_tensors = proj_.forward(fps);
    prompts = &prompt_tensors;
  }
  StageFeatures stages = encoder_->forward(images, prompts);
  ModelOutput out;
  out.m0 = decoder_.forward(stages);
  if (reasoner_) {
    Reasoner::Output r = reasoner_->forward(out.m0, training);
    out.mask = std::move(r.mask);
    out.edge = std::move(r.edge);
  } else {
    out.mask = out.m0;
  }
  return out;
}

void TraceModel::backward(const Tensor& dmask, const Tensor& dedge) {
  Tensor dm0 = reasoner_ ? reasoner_->backward(dmask, dedge) : dmask;
  StageFeatures dstages = decoder_.backward(dm0);
  // Without prompts no trainable parameter sits behind the encoder.
  if (cfg_.ablation.use_prompts()) proj_.backward(encoder_->backward_to_prompts(dstages));
}

ParamRefs TraceModel::params() {
  ParamRefs out;
  if (cfg_.ablation.use_prompts()) proj_.params(out);
  decoder_.params(out);
  if (reasoner_) reasoner_->params(out);
  return out;
}

StateRefs TraceModel::state() {
  StateRefs out;
  if (reasoner_) reasoner_->state(out);
  return out;
}

void TraceModel::zero_grads() {
  for (Param* p : params()) p->zero_grad();
}

Tensor gate_mean_map(const Tensor& gate) {
  if (gate.ndim() != 4) {
    throw std::invalid_argument("gate_mean_map: expected a (N, C, h, w) gate, got " +
                                gate.shape_str());
  }
  const int n = gate.dim(0), c = gate.dim(1), h = gate.dim(2), w = gate.dim(3);
  Tensor out({n, h, w});
  for (int ni = 0; ni < n; ++ni)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ci = 0; ci < c; ++ci) acc += gate.at(ni, ci, y, x);
        out.at(ni, y, x) = acc / c;
      }
  return out;
}

}  // namespace trace
