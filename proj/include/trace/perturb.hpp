#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

// Post-processing attack kinds and their Table-IV parameter grid.
struct Perturbation {
  enum class Kind { Identity, GaussianBlur, JpegCompression, GaussianNoise };
  Kind kind = Kind::Identity;
  double param = 0.0;  // blur: odd kernel size; jpeg: quality; noise: sigma on 0-255

  std::string label() const;
};

// Standard 8-cell grid: blur {3, 9, 15}, jpeg {50, 75}, noise {3, 9, 15}.
std::vector<Perturbation> standard_perturbation_grid();

// Parse "blur:9", "jpeg:75", "noise:3", "identity" (comma-separated lists are
// split by the caller).
Perturbation parse_perturbation(const std::string& text);

// Apply to a (3, H, W) image in [0, 1]. Blur sigma follows the kernel-size
// rule 0.3*((k-1)/2 - 1) + 0.8; JPEG round-trips through the real codec;
// noise is seeded additive Gaussian with sigma on the 0-255 scale.
Tensor perturb(const Tensor& image, const Perturbation& p, std::uint64_t seed);

struct SweepRow {
  Perturbation perturbation;
  double mean_iou = 0.0;
  int images = 0;
};

// Mean IoU per grid cell over (image, mask-target) pairs; predict_mask maps a
// (3, H, W) image to an (H, W) probability mask.
std::vector<SweepRow> robustness_sweep(
    const std::function<Tensor(const Tensor&)>& predict_mask,
    const std::vector<std::pair<Tensor, Tensor>>& pairs, const std::vector<Perturbation>& grid,
    double threshold, std::uint64_t seed);

std::string sweep_text(const std::vector<SweepRow>& rows);
std::string sweep_json(const std::vector<SweepRow>& rows);

}  // namespace trace
