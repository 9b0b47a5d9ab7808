#pragma once

#include <cstdint>
#include <string>

#include "trace/model.hpp"

namespace trace {

// One flat key=value document drives a run; keys match the field names below
// one-to-one. Geometry defaults follow the reference setup, toy() shrinks
// everything to laptop scale.
struct RunConfig {
  int input_size = 1008;
  int batch_size = 4;
  int epochs = 20;
  double lr_init = 2e-4;
  double lr_min = 1e-7;
  double weight_decay = 1e-4;
  double threshold = 0.5;
  std::uint64_t seed = 7;
  std::string encoder_profile = "toy";
  // frozen backbone geometry
  int encoder_patch = 8;
  int encoder_stages = 2;
  int encoder_width = 32;
  std::uint64_t encoder_seed = 1234;
  // scope reasoner geometry
  int reasoner_patch = 4;
  int reasoner_width = 64;
  int reasoner_blocks = 2;
  int reasoner_state = 16;
  int reasoner_conv = 3;
  // prompt projector / coarse decoder widths
  int prompt_hidden = 16;
  int decoder_width = 16;
  AblationFlags ablation;

  void validate() const;
  ModelConfig model_config() const;

  // 64x64 profile small enough for CPU smoke runs.
  static RunConfig toy();
};

// Applies one "key" / "value" pair; unknown keys are validation errors.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat key = value lines; '#' starts a comment; blank lines skipped.
RunConfig load_run_config(const std::string& path);

// Canonical snapshot, one key=value per line; parses back bit-identically
// through apply_config_entry (doubles serialized at full precision).
std::string dump_run_config(const RunConfig& cfg);

// Re-parses a dump_run_config snapshot (e.g. out of a checkpoint).
RunConfig parse_run_config(const std::string& text);

}  // namespace trace
