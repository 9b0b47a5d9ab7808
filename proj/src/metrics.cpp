#include "trace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace trace {

Tensor binarize(const Tensor& pred, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("binarize: threshold outside [0, 1]");
  Tensor out(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] >= threshold ? 1.0 : 0.0;
  return out;
}

MetricValues compute_metrics(const Tensor& pred, const Tensor& target, double threshold) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("compute_metrics: shape mismatch, pred " + pred.shape_str() +
                                " vs target " + target.shape_str());
  if (pred.size() == 0) throw std::invalid_argument("compute_metrics: empty input");
  const Tensor bin = binarize(pred, threshold);
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  double abs_err = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = bin[i] > 0.5, t = target[i] > 0.5;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
    abs_err += std::abs(pred[i] - target[i]);
  }
  // Empty-denominator convention: both sets empty -> 1, else 0.
  auto ratio = [](long long num, long long den, bool both_empty) {
    if (den == 0) return both_empty ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  const bool both_empty = (tp + fp + fn) == 0;
  MetricValues m;
  m.iou = ratio(tp, tp + fp + fn, both_empty);
  m.dice = ratio(2 * tp, 2 * tp + fp + fn, both_empty);
  m.precision = ratio(tp, tp + fp, both_empty);
  m.recall = ratio(tp, tp + fn, both_empty);
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(pred.size());
  m.mae = abs_err / static_cast<double>(pred.size());
  return m;
}

std::optional<double> compute_auc(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("compute_auc: shape mismatch");
  const std::size_t n = pred.size();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) pos += target[i] > 0.5;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&pred](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  // Midranks over tie groups, then the Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (target[order[k]] > 0.5) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

MetricValues evaluate_pair(const Tensor& pred, const Tensor& target, double threshold) {
  MetricValues m = compute_metrics(pred, target, threshold);
  m.auc = compute_auc(pred, target);
  return m;
}

CorpusReport aggregate_metrics(const std::vector<MetricValues>& per_image) {
  CorpusReport r;
  r.images = static_cast<int>(per_image.size());
  if (per_image.empty()) return r;
  double auc_sum = 0.0;
  for (const auto& m : per_image) {
    r.mean.iou += m.iou;
    r.mean.dice += m.dice;
    r.mean.precision += m.precision;
    r.mean.recall += m.recall;
    r.mean.accuracy += m.accuracy;
    r.mean.mae += m.mae;
    if (m.auc) {
      auc_sum += *m.auc;
      ++r.auc_images;
    }
  }
  const double inv = 1.0 / r.images;
  r.mean.iou *= inv;
  r.mean.dice *= inv;
  r.mean.precision *= inv;
  r.mean.recall *= inv;
  r.mean.accuracy *= inv;
  r.mean.mae *= inv;
  if (r.auc_images > 0) r.mean.auc = auc_sum / r.auc_images;
  return r;
}

std::string report_text(const CorpusReport& report, const std::string& title) {
  std::ostringstream os;
  os << title << " (" << report.images << " images";
  if (report.auc_images != report.images)
    os << ", AUC defined on " << report.auc_images;
  os << ")\n";
  os << "  IoU      Dice     Prec     Recall   Acc      MAE      AUC\n  ";
  auto cell = [&os](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%-8.4f ", v);
    os << buf;
  };
  cell(report.mean.iou);
  cell(report.mean.dice);
  cell(report.mean.precision);
  cell(report.mean.recall);
  cell(report.mean.accuracy);
  cell(report.mean.mae);
  if (report.mean.auc)
    cell(*report.mean.auc);
  else
    os << "n/a";
  os << "\n";
  return os.str();
}

std::string report_json(const CorpusReport& report) {
  nlohmann::json j;
  j["images"] = report.images;
  j["auc_images"] = report.auc_images;
  j["iou"] = report.mean.iou;
  j["dice"] = report.mean.dice;
  j["precision"] = report.mean.precision;
  j["recall"] = report.mean.recall;
  j["accuracy"] = report.mean.accuracy;
  j["mae"] = report.mean.mae;
  if (report.mean.auc)
    j["auc"] = *report.mean.auc;
  else
    j["auc"] = nullptr;
  return j.dump(2);
}

}  // namespace trace
