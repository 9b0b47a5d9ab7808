#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "trace/metrics.hpp"

using namespace trace;
using testutil::random_tensor;

namespace {

// Independent counting oracle.
struct Counts {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts count_pixels(const Tensor& pred, const Tensor& target, double thr) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= thr;
    const bool t = target[i] > 0.5;
    if (p && t) ++c.tp;
    if (p && !t) ++c.fp;
    if (!p && t) ++c.fn;
    if (!p && !t) ++c.tn;
  }
  return c;
}

// O(P*N) pairwise AUC with 0.5 credit for ties.
double pairwise_auc(const Tensor& pred, const Tensor& target) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] <= 0.5) continue;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (target[j] > 0.5) continue;
      ++pairs;
      if (pred[i] > pred[j])
        wins += 1.0;
      else if (pred[i] == pred[j])
        wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("compute_metrics matches the counting oracle on random pairs") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor pred = random_tensor({8, 8}, rng, 0.0, 1.0);
    // Mix of random and quantized predictions so ties happen.
    if (trial % 3 == 0)
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = std::round(pred[i] * 4) / 4;
    Tensor target = testutil::random_mask({8, 8}, rng, 0.3 + 0.01 * trial);
    const double thr = 0.5;
    const MetricValues m = compute_metrics(pred, target, thr);
    const Counts c = count_pixels(pred, target, thr);

    const auto ratio = [](long long num, long long den, bool both_empty) {
      return den == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(num) / den;
    };
    const bool both = (c.tp + c.fp + c.fn) == 0;
    CHECK(m.iou == doctest::Approx(ratio(c.tp, c.tp + c.fp + c.fn, both)).epsilon(1e-12));
    CHECK(m.dice ==
          doctest::Approx(ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, both)).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(ratio(c.tp, c.tp + c.fp, both)).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(ratio(c.tp, c.tp + c.fn, both)).epsilon(1e-12));
    CHECK(m.accuracy ==
          doctest::Approx(static_cast<double>(c.tp + c.tn) / 64).epsilon(1e-12));

    double mae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mae += std::fabs(pred[i] - target[i]);
    CHECK(m.mae == doctest::Approx(mae / 64).epsilon(1e-12));
  }
}

TEST_CASE("compute_auc matches the pairwise oracle, including ties") {
  Rng rng(72);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor pred = random_tensor({8, 8}, rng, 0.0, 1.0);
    if (trial % 2 == 0)
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = std::round(pred[i] * 3) / 3;
    Tensor target = testutil::random_mask({8, 8}, rng, 0.4);
    const auto auc = compute_auc(pred, target);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < target.size(); ++i) (target[i] > 0.5 ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) {
      CHECK(!auc.has_value());
      continue;
    }
    REQUIRE(auc.has_value());
    CHECK(*auc == doctest::Approx(pairwise_auc(pred, target)).epsilon(1e-12));
  }
}

TEST_CASE("empty-set conventions") {
  Tensor zero({4, 4});
  Tensor ones({4, 4}, 1.0);

  // Both prediction and target empty: all ratios are 1 by convention.
  MetricValues m = compute_metrics(zero, zero);
  CHECK(m.iou == 1.0);
  CHECK(m.dice == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.accuracy == 1.0);
  CHECK(!compute_auc(zero, zero).has_value());  // single-class target

  // Empty target, full prediction: 0.
  m = compute_metrics(ones, zero);
  CHECK(m.iou == 0.0);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);  // no positives to recover, but fp > 0
  CHECK(m.accuracy == 0.0);

  // Empty prediction, full target: 0.
  m = compute_metrics(zero, ones);
  CHECK(m.iou == 0.0);
  CHECK(m.recall == 0.0);
}

TEST_CASE("binarize thresholds inclusively") {
  Tensor pred({3});
  pred.at(0) = 0.49999;
  pred.at(1) = 0.5;
  pred.at(2) = 0.50001;
  const Tensor b = binarize(pred, 0.5);
  CHECK(b.at(0) == 0.0);
  CHECK(b.at(1) == 1.0);  // >= threshold
  CHECK(b.at(2) == 1.0);
}

TEST_CASE("evaluate_pair = compute_metrics + compute_auc") {
  Rng rng(73);
  Tensor pred = random_tensor({6, 6}, rng, 0.0, 1.0);
  Tensor target = testutil::random_mask({6, 6}, rng);
  const MetricValues a = evaluate_pair(pred, target, 0.4);
  const MetricValues b = compute_metrics(pred, target, 0.4);
  CHECK(a.iou == b.iou);
  CHECK(a.mae == b.mae);
  CHECK(a.auc == compute_auc(pred, target));
}

TEST_CASE("aggregate_metrics averages per-image values, AUC over defined ones") {
  MetricValues a;
  a.iou = 0.5;
  a.dice = 0.6;
  a.mae = 0.1;
  a.auc = 0.9;
  MetricValues b;
  b.iou = 1.0;
  b.dice = 0.8;
  b.mae = 0.3;  // no AUC for b
  const CorpusReport r = aggregate_metrics({a, b});
  CHECK(r.images == 2);
  CHECK(r.auc_images == 1);
  CHECK(r.mean.iou == doctest::Approx(0.75));
  CHECK(r.mean.dice == doctest::Approx(0.7));
  CHECK(r.mean.mae == doctest::Approx(0.2));
  REQUIRE(r.mean.auc.has_value());
  CHECK(*r.mean.auc == doctest::Approx(0.9));

  const CorpusReport empty = aggregate_metrics({});
  CHECK(empty.images == 0);
  CHECK(empty.auc_images == 0);
}

TEST_CASE("report renderings carry all seven metrics") {
  MetricValues v;
  v.iou = 0.5;
  v.dice = 0.6;
  v.precision = 0.7;
  v.recall = 0.8;
  v.accuracy = 0.9;
  v.mae = 0.05;
  v.auc = 0.95;
  const CorpusReport r = aggregate_metrics({v});

  const std::string text = report_text(r, "unit");
  for (const char* k : {"IoU", "Dice", "Prec", "Recall", "Acc", "MAE", "AUC"})
    CHECK(text.find(k) != std::string::npos);
  CHECK(text.find("unit") != std::string::npos);

  const std::string json = report_json(r);
  for (const char* k : {"iou", "dice", "precision", "recall", "accuracy", "mae", "auc"})
    CHECK(json.find(k) != std::string::npos);
}
