#include "trace/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "trace/objectives.hpp"
#include "trace/optim.hpp"
#include "trace/rng.hpp"

namespace trace {

Tensor stack_images(const std::vector<PreparedSample>& samples,
                    const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Tensor& first = samples[idx[0]].image;
  Tensor out({static_cast<int>(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = samples[idx[i]].image;
    if (!img.same_shape(first))
      throw std::invalid_argument("stack_images: mixed image shapes in one batch");
    std::copy(img.data(), img.data() + img.size(), out.data() + i * img.size());
  }
  return out;
}

TargetPair stack_targets(const std::vector<PreparedSample>& samples,
                         const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("stack_targets: empty batch");
  const Tensor& first = samples[idx[0]].target.mask;
  const int n = static_cast<int>(idx.size());
  TargetPair out;
  out.mask = Tensor({n, 1, first.dim(0), first.dim(1)});
  out.edge = Tensor({n, 1, first.dim(0), first.dim(1)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const TargetPair& t = samples[idx[i]].target;
    if (!t.mask.same_shape(first) || !t.edge.same_shape(first))
      throw std::invalid_argument("stack_targets: mixed target shapes in one batch");
    std::copy(t.mask.data(), t.mask.data() + t.mask.size(), out.mask.data() + i * t.mask.size());
    std::copy(t.edge.data(), t.edge.data() + t.edge.size(), out.edge.data() + i * t.edge.size());
  }
  return out;
}

Tensor predict_mask_single(TraceModel& model, const Tensor& image) {
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), batch.data());
  const ModelOutput out = model.forward(batch, /*training=*/false);
  Tensor mask({out.mask.dim(2), out.mask.dim(3)});
  std::copy(out.mask.data(), out.mask.data() + mask.size(), mask.data());
  return mask;
}

CorpusReport run_eval(TraceModel& model, const std::vector<PreparedSample>& samples,
                      double threshold, std::vector<MetricValues>* per_image) {
  if (samples.empty()) throw std::invalid_argument("run_eval: no samples");
  std::vector<MetricValues> values;
  values.reserve(samples.size());
  for (const PreparedSample& s : samples)
    values.push_back(evaluate_pair(predict_mask_single(model, s.image), s.target.mask, threshold));
  if (per_image != nullptr) *per_image = values;
  return aggregate_metrics(values);
}

namespace {

double macro_iou(TraceModel& model, const std::vector<PreparedSample>& samples, double threshold) {
  return run_eval(model, samples, threshold).mean.iou;
}

}  // namespace

TrainResult run_train(const RunConfig& cfg, TraceModel& model,
                      const std::vector<PreparedSample>& train,
                      const std::vector<PreparedSample>& val, const StepLogFn& log) {
  if (train.empty()) throw std::invalid_argument("run_train: empty train split");
  const std::vector<PreparedSample>& selection = val.empty() ? train : val;

  const ParamRefs params = model.params();
  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt(params, opt_cfg);

  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  TrainResult result;
  result.best = snapshot_checkpoint(cfg, model, &opt, 0, -1.0);
  Rng shuffle_base(cfg.seed);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle = shuffle_base.fork(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.index(static_cast<int>(i)))]);

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Tensor images = stack_images(train, idx);
      const TargetPair targets = stack_targets(train, idx);

      const ModelOutput out = model.forward(images, /*training=*/true);
      model.zero_grads();
      Tensor dmask(out.mask.shape());
      Tensor dedge;
      if (out.has_edge()) dedge = Tensor(out.edge.shape());
      const LossBreakdown losses =
          total_objective(out.mask, out.edge, targets, Reduction::Mean, &dmask,
                          out.has_edge() ? &dedge : nullptr);
      const double lr = cosine_lr(cfg.lr_init, cfg.lr_min, step, total_steps);
      if (log) log(epoch, step, lr, losses);
      if (!std::isfinite(losses.total)) {
        result.aborted_nan = true;
        result.final_loss = losses.total;
        result.steps = step;
        return result;
      }
      model.backward(dmask, dedge);
      opt.step(lr);
      result.final_loss = losses.total;
      ++step;
    }

    const double val_iou = macro_iou(model, selection, cfg.threshold);
    if (val_iou > result.best_val_iou) {
      result.best_val_iou = val_iou;
      result.best = snapshot_checkpoint(cfg, model, &opt, epoch + 1, val_iou);
    }
  }
  result.steps = step;
  return result;
}

}  // namespace trace
