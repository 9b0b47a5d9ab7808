#include "trace/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "trace/image_io.hpp"
#include "trace/kernels.hpp"
#include "trace/metrics.hpp"
#include "trace/rng.hpp"

namespace trace {

std::string Perturbation::label() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Identity:
      return "identity";
    case Kind::GaussianBlur:
      os << "blur:" << static_cast<int>(param);
      break;
    case Kind::JpegCompression:
      os << "jpeg:" << static_cast<int>(param);
      break;
    case Kind::GaussianNoise:
      os << "noise:" << static_cast<int>(param);
      break;
  }
  return os.str();
}

std::vector<Perturbation> standard_perturbation_grid() {
  std::vector<Perturbation> grid;
  for (double k : {3.0, 9.0, 15.0}) grid.push_back({Perturbation::Kind::GaussianBlur, k});
  for (double q : {50.0, 75.0}) grid.push_back({Perturbation::Kind::JpegCompression, q});
  for (double s : {3.0, 9.0, 15.0}) grid.push_back({Perturbation::Kind::GaussianNoise, s});
  return grid;
}

Perturbation parse_perturbation(const std::string& text) {
  if (text == "identity" || text == "none") return {Perturbation::Kind::Identity, 0.0};
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("perturbation must look like kind:param, got '" + text + "'");
  const std::string kind = text.substr(0, colon);
  double param = 0.0;
  try {
    param = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("bad perturbation parameter in '" + text + "'");
  }
  if (kind == "blur") return {Perturbation::Kind::GaussianBlur, param};
  if (kind == "jpeg") return {Perturbation::Kind::JpegCompression, param};
  if (kind == "noise") return {Perturbation::Kind::GaussianNoise, param};
  throw std::invalid_argument("unknown perturbation kind '" + kind + "'");
}

namespace {

Tensor gaussian_blur(const Tensor& image, int k) {
  if (k < 1 || k % 2 == 0)
    throw std::invalid_argument("gaussian_blur: kernel size must be odd and positive");
  if (k == 1) return image;
  const double sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8;
  std::vector<double> g(static_cast<std::size_t>(k));
  const int c = k / 2;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;

  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor tmp(image.shape()), out(image.shape());
  // Separable passes with edge-reflected borders.
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < ch; ++ci) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i)
          acc += g[static_cast<std::size_t>(i)] *
                 image.at(ci, y, kernels::mirror_index(x + i - c, w));
        tmp.at(ci, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i)
          acc += g[static_cast<std::size_t>(i)] *
                 tmp.at(ci, kernels::mirror_index(y + i - c, h), x);
        out.at(ci, y, x) = acc;
      }
  }
  return out;
}

}  // namespace

Tensor perturb(const Tensor& image, const Perturbation& p, std::uint64_t seed) {
  if (image.ndim() != 3) throw std::invalid_argument("perturb: expected a (C, H, W) image");
  switch (p.kind) {
    case Perturbation::Kind::Identity:
      return image;
    case Perturbation::Kind::GaussianBlur:
      return gaussian_blur(image, static_cast<int>(p.param));
    case Perturbation::Kind::JpegCompression: {
      if (image.dim(0) != 3)
        throw std::invalid_argument("perturb: JPEG round-trip needs an RGB image");
      return image_to_tensor(
          decode_image(encode_jpeg(tensor_to_image(image), static_cast<int>(p.param)), 3));
    }
    case Perturbation::Kind::GaussianNoise: {
      if (p.param == 0.0) return image;
      Rng rng(seed);
      Tensor out(image.shape());
      const double sigma = p.param / 255.0;
      for (std::size_t i = 0; i < image.size(); ++i)
        out[i] = std::clamp(image[i] + rng.normal() * sigma, 0.0, 1.0);
      return out;
    }
  }
  throw std::invalid_argument("perturb: unknown kind");
}

std::vector<SweepRow> robustness_sweep(const std::function<Tensor(const Tensor&)>& predict_mask,
                                       const std::vector<std::pair<Tensor, Tensor>>& pairs,
                                       const std::vector<Perturbation>& grid, double threshold,
                                       std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("robustness_sweep: empty dataset");
  std::vector<SweepRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    SweepRow row;
    row.perturbation = grid[g];
    double iou_sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Tensor attacked =
          perturb(pairs[i].first, grid[g], seed + 10007 * g + i);
      const Tensor pred = predict_mask(attacked);
      iou_sum += compute_metrics(pred, pairs[i].second, threshold).iou;
    }
    row.images = static_cast<int>(pairs.size());
    row.mean_iou = iou_sum / row.images;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_text(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "perturbation   mean IoU   images\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-14s %-10.4f %d\n", r.perturbation.label().c_str(),
                  r.mean_iou, r.images);
    os << buf;
  }
  return os.str();
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"perturbation", r.perturbation.label()},
                 {"mean_iou", r.mean_iou},
                 {"images", r.images}});
  return j.dump(2);
}

}  // namespace trace
