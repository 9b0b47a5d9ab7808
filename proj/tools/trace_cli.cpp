// Command-line front end: train / eval / infer / robustness / synth-data /
// make-edges. Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "trace/checkpoint.hpp"
#include "trace/config.hpp"
#include "trace/dataset.hpp"
#include "trace/image_io.hpp"
#include "trace/metrics.hpp"
#include "trace/model.hpp"
#include "trace/perturb.hpp"
#include "trace/trainer.hpp"

namespace fs = std::filesystem;
using namespace trace;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string manifest_path;
  bool toy = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> size;
  std::optional<double> threshold;
  std::string ablate;
  bool lenient = false;
};

RunConfig build_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    cfg = load_run_config(o.config_path);  // the file is the source of truth
  } else if (o.toy) {
    cfg = RunConfig::toy();
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.size) cfg.input_size = *o.size;
  if (o.threshold) cfg.threshold = *o.threshold;
  if (!o.ablate.empty()) cfg.ablation = parse_ablation(o.ablate);
  return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

// Probability map (H, W) in [0,1] -> 8-bit grayscale PNG.
void write_prob_png(const std::string& path, const Tensor& prob) {
  ImageU8 img;
  img.width = prob.dim(1);
  img.height = prob.dim(0);
  img.channels = 1;
  img.pixels.resize(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, prob[i]));
    img.pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  write_png(path, img);
}

Tensor squeeze_map(const Tensor& nchw, int n) {
  Tensor out({nchw.dim(2), nchw.dim(3)});
  const double* src = nchw.data() + static_cast<std::size_t>(n) * out.size();
  std::copy(src, src + out.size(), out.data());
  return out;
}

int cmd_train(const CommonOpts& o, const std::string& out_path) {
  RunConfig cfg = build_config(o);
  cfg.validate();
  const auto records = read_manifest(o.manifest_path);
  std::vector<std::string> errors;
  const auto train = load_split(records, Split::Train, cfg.input_size, o.lenient, &errors);
  const auto val = load_split(records, Split::Val, cfg.input_size, o.lenient, &errors);
  for (const std::string& e : errors) std::cerr << "skipping " << e << '\n';
  if (train.empty()) throw std::invalid_argument("train split is empty");

  TraceModel model(cfg.model_config());
  const std::uint64_t frozen_before = model.encoder().param_hash();
  std::cout << "training on " << train.size() << " samples (" << val.size()
            << " validation), ablation: " << cfg.ablation.describe() << '\n';
  const TrainResult result = run_train(
      cfg, model, train, val, [](int epoch, std::int64_t step, double lr, const LossBreakdown& l) {
        std::cout << "epoch " << epoch << " step " << step << " lr " << lr << " total " << l.total
                  << " (bce_mask " << l.bce_mask << ", iou " << l.iou_mask << ", bce_edge "
                  << l.bce_edge << ")\n";
      });
  if (model.encoder().param_hash() != frozen_before)
    throw std::runtime_error("frozen encoder hash changed during training");

  save_checkpoint(out_path, result.best);
  if (result.aborted_nan) {
    std::cerr << "aborted on non-finite loss at step " << result.steps
              << "; last good checkpoint written to " << out_path << '\n';
    return 2;
  }
  std::cout << "done: " << result.steps << " steps, best val IoU " << result.best_val_iou
            << ", checkpoint " << out_path << '\n';
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt_path, const std::string& split_name_arg,
             const std::string& report_prefix) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (o.threshold) cfg.threshold = *o.threshold;
  TraceModel model(cfg.model_config());
  restore_checkpoint(ckpt, model, nullptr);

  const auto records = read_manifest(o.manifest_path);
  std::vector<std::string> errors;
  const auto samples =
      load_split(records, parse_split(split_name_arg), cfg.input_size, o.lenient, &errors);
  for (const std::string& e : errors) std::cerr << "skipping " << e << '\n';
  if (samples.empty()) throw std::invalid_argument("split '" + split_name_arg + "' is empty");

  const CorpusReport report = run_eval(model, samples, cfg.threshold);
  const std::string text = report_text(report, "split " + split_name_arg);
  std::cout << text;
  write_text_file(report_prefix + ".txt", text);
  write_text_file(report_prefix + ".json", report_json(report));
  std::cout << "wrote " << report_prefix << ".txt and " << report_prefix << ".json\n";
  return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& ckpt_path,
              const std::vector<std::string>& images, const std::string& out_dir,
              bool export_gates) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (o.size && *o.size != cfg.input_size)
    throw std::invalid_argument("requested size " + std::to_string(*o.size) +
                                " does not match the checkpoint's input_size " +
                                std::to_string(cfg.input_size));
  if (o.threshold) cfg.threshold = *o.threshold;
  TraceModel model(cfg.model_config());
  restore_checkpoint(ckpt, model, nullptr);
  fs::create_directories(out_dir);

  for (const std::string& path : images) {
    const ImageU8 raw = read_image(path, 3);
    const Tensor original = image_to_tensor(raw);
    const Tensor input = resize_bilinear(original, cfg.input_size, cfg.input_size);
    Tensor batch({1, 3, cfg.input_size, cfg.input_size});
    std::copy(input.data(), input.data() + input.size(), batch.data());
    const ModelOutput out = model.forward(batch, /*training=*/false);

    const std::string stem = fs::path(path).stem().string();
    // predictions reported at the original image resolution
    const Tensor mask = resize_bilinear(squeeze_map(out.mask, 0), raw.height, raw.width);
    write_prob_png((fs::path(out_dir) / (stem + "_mask.png")).string(), mask);
    write_prob_png((fs::path(out_dir) / (stem + "_mask_bin.png")).string(),
                   binarize(mask, cfg.threshold));
    if (out.has_edge()) {
      const Tensor edge = resize_bilinear(squeeze_map(out.edge, 0), raw.height, raw.width);
      write_prob_png((fs::path(out_dir) / (stem + "_edge.png")).string(), edge);
    }
    if (export_gates) {
      if (model.reasoner() == nullptr || model.reasoner()->gate().empty())
        throw std::invalid_argument("--export-gates needs the full reasoner (no bypass)");
      const Tensor g = gate_mean_map(model.reasoner()->gate());
      write_prob_png((fs::path(out_dir) / (stem + "_gate.png")).string(),
                     resize_bilinear(squeeze_map(g, 0), raw.height, raw.width));
    }
    std::cout << path << " -> " << out_dir << '/' << stem << "_*.png\n";
  }
  return 0;
}

int cmd_robustness(const CommonOpts& o, const std::string& ckpt_path,
                   const std::string& split_name_arg, const std::string& perturb_list,
                   const std::string& report_prefix) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (o.threshold) cfg.threshold = *o.threshold;
  TraceModel model(cfg.model_config());
  restore_checkpoint(ckpt, model, nullptr);

  const auto records = read_manifest(o.manifest_path);
  std::vector<std::string> errors;
  const auto samples =
      load_split(records, parse_split(split_name_arg), cfg.input_size, o.lenient, &errors);
  for (const std::string& e : errors) std::cerr << "skipping " << e << '\n';
  if (samples.empty()) throw std::invalid_argument("split '" + split_name_arg + "' is empty");

  std::vector<Perturbation> grid;
  if (perturb_list.empty()) {
    grid = standard_perturbation_grid();
  } else {
    std::size_t pos = 0;
    while (pos <= perturb_list.size()) {
      const std::size_t comma = perturb_list.find(',', pos);
      const std::string tok = comma == std::string::npos ? perturb_list.substr(pos)
                                                         : perturb_list.substr(pos, comma - pos);
      if (!tok.empty()) grid.push_back(parse_perturbation(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  std::vector<std::pair<Tensor, Tensor>> pairs;
  pairs.reserve(samples.size());
  for (const PreparedSample& s : samples) pairs.emplace_back(s.image, s.target.mask);

  const auto rows = robustness_sweep(
      [&model](const Tensor& image) { return predict_mask_single(model, image); }, pairs, grid,
      cfg.threshold, o.seed.value_or(cfg.seed));
  const std::string text = sweep_text(rows);
  std::cout << text;
  write_text_file(report_prefix + ".txt", text);
  write_text_file(report_prefix + ".json", sweep_json(rows));
  std::cout << "wrote " << report_prefix << ".txt and " << report_prefix << ".json\n";
  return 0;
}

int cmd_synth(const CommonOpts& o, const std::string& out_dir, const std::string& out_manifest,
              int per_kind, const std::string& kinds_list, bool filter_overlap,
              double promote_fraction) {
  const std::uint64_t seed = o.seed.value_or(7);
  const auto sources = read_manifest(o.manifest_path);
  if (sources.empty()) throw std::invalid_argument("source manifest is empty");

  std::vector<ForgeryKind> kinds;
  {
    std::size_t pos = 0;
    while (pos <= kinds_list.size()) {
      const std::size_t comma = kinds_list.find(',', pos);
      const std::string tok = comma == std::string::npos ? kinds_list.substr(pos)
                                                         : kinds_list.substr(pos, comma - pos);
      if (!tok.empty()) kinds.push_back(parse_forgery_kind(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  if (kinds.empty()) throw std::invalid_argument("no forgery kinds requested");
  fs::create_directories(out_dir);

  std::vector<DatasetRecord> out_records;
  std::vector<std::string> failures;
  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    const ForgeryKind kind = kinds[ki];
    const Provenance prov = kind == ForgeryKind::Splice     ? Provenance::SynthSplice
                            : kind == ForgeryKind::CopyMove ? Provenance::SynthCopyMove
                                                            : Provenance::SynthRemoval;
    for (int i = 0; i < per_kind; ++i) {
      const DatasetRecord& src = sources[static_cast<std::size_t>(i) % sources.size()];
      const DatasetRecord& donor_rec =
          sources[(static_cast<std::size_t>(i) + 1) % sources.size()];
      try {
        const Tensor host = image_to_tensor(read_image(src.authentic_path, 3));
        const Tensor salient = image_to_mask(read_image(src.mask_path, 1));
        Tensor donor_img, donor_mask;
        if (kind == ForgeryKind::Splice) {
          donor_img = image_to_tensor(read_image(donor_rec.authentic_path, 3));
          donor_mask = image_to_mask(read_image(donor_rec.mask_path, 1));
        }
        // Deterministic per-record sub-seed; extra draws only when the
        // overlap filter rejects.
        const std::uint64_t rec_seed = seed ^ (0xABCDull + 1000003ull * ki +
                                               7919ull * static_cast<std::uint64_t>(i));
        ForgeryResult forged;
        bool kept = false;
        for (std::uint64_t retry = 0; retry < 8 && !kept; ++retry) {
          forged = synth_forgery(kind, host, salient,
                                 kind == ForgeryKind::Splice ? &donor_img : nullptr,
                                 kind == ForgeryKind::Splice ? &donor_mask : nullptr,
                                 rec_seed + 101 * retry);
          kept = !filter_overlap || saliency_overlap_filter(forged.mask, salient);
        }
        if (!kept) {
          failures.push_back(forgery_kind_name(kind) + " #" + std::to_string(i) +
                             ": rejected by the saliency-overlap filter");
          continue;
        }
        const std::string stem = forgery_kind_name(kind) + "_" + std::to_string(i);
        DatasetRecord rec;
        rec.authentic_path = src.authentic_path;
        rec.manipulated_path = (fs::path(out_dir) / (stem + ".png")).string();
        rec.mask_path = (fs::path(out_dir) / (stem + "_mask.png")).string();
        rec.edge_path = (fs::path(out_dir) / (stem + "_edge.png")).string();
        rec.provenance = prov;
        write_png(rec.manipulated_path, tensor_to_image(forged.image));
        write_png(rec.mask_path, mask_to_image(forged.mask));
        write_png(rec.edge_path, mask_to_image(sobel_edge_target(forged.mask)));
        out_records.push_back(std::move(rec));
      } catch (const std::exception& e) {
        failures.push_back(forgery_kind_name(kind) + " #" + std::to_string(i) + ": " + e.what());
      }
    }
  }

  assign_splits(out_records, seed);
  if (promote_fraction > 0.0) promote_hard(out_records, promote_fraction, seed);
  write_manifest(out_manifest, out_records);

  int counts[3] = {0, 0, 0};
  for (const DatasetRecord& r : out_records) {
    if (r.provenance == Provenance::SynthSplice) ++counts[0];
    if (r.provenance == Provenance::SynthCopyMove) ++counts[1];
    if (r.provenance == Provenance::SynthRemoval) ++counts[2];
  }
  std::cout << "synthesized: splice " << counts[0] << ", copymove " << counts[1] << ", removal "
            << counts[2] << "; manifest " << out_manifest << '\n';
  for (const std::string& f : failures) std::cerr << "failed: " << f << '\n';
  return 0;
}

int cmd_make_edges(const CommonOpts& o) {
  const auto records = read_manifest(o.manifest_path);
  int written = 0;
  for (const DatasetRecord& rec : records) {
    if (rec.edge_path.empty())
      throw std::invalid_argument("record '" + rec.manipulated_path + "' has no edge_path");
    try {
      const Tensor mask = image_to_mask(read_image(rec.mask_path, 1));
      write_png(rec.edge_path, mask_to_image(sobel_edge_target(mask)));
      ++written;
    } catch (const std::exception& e) {
      if (!o.lenient) throw;
      std::cerr << "skipping '" << rec.mask_path << "': " << e.what() << '\n';
    }
  }
  std::cout << "wrote " << written << " edge maps\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic manipulation localization pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::uint64_t seed_arg = 0;
  int size_arg = 0;
  double threshold_arg = 0.0;

  const auto add_common = [&](CLI::App* cmd, bool manifest_required) {
    cmd->add_option("--config", opts.config_path, "flat key=value run configuration");
    auto* m = cmd->add_option("--manifest", opts.manifest_path, "dataset manifest (JSONL)");
    if (manifest_required) m->required();
    cmd->add_flag("--toy", opts.toy, "start from the 64x64 toy profile");
    cmd->add_option("--seed", seed_arg, "seed override");
    cmd->add_option("--size", size_arg, "input size override");
    cmd->add_option("--threshold", threshold_arg, "binarization threshold");
    cmd->add_option("--ablate", opts.ablate,
                    "comma list of flags to disable: sps_wavelet,sps_srm,scr_mask,scr_edge");
    cmd->add_flag("--lenient", opts.lenient, "skip unreadable records instead of failing");
  };

  // train
  auto* train = app.add_subcommand("train", "train on the manifest's train split");
  std::string train_out = "checkpoint.trck";
  add_common(train, true);
  train->add_option("--out", train_out, "checkpoint output path");

  // eval
  auto* eval = app.add_subcommand("eval", "seven-metric report over one split");
  std::string eval_ckpt, eval_split = "test", eval_report = "report";
  add_common(eval, true);
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--split", eval_split, "train | val | test");
  eval->add_option("--report", eval_report, "report path prefix");

  // infer
  auto* infer = app.add_subcommand("infer", "predict masks/edges for images");
  std::string infer_ckpt, infer_out = "predictions";
  std::vector<std::string> infer_images;
  bool infer_gates = false;
  add_common(infer, false);
  infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer->add_option("--out-dir", infer_out, "output directory");
  infer->add_flag("--export-gates", infer_gates, "also write SSGM gate maps");
  infer->add_option("images", infer_images, "input image paths")->required();

  // robustness
  auto* robust = app.add_subcommand("robustness", "metric sweep across perturbations");
  std::string robust_ckpt, robust_split = "test", robust_perturb, robust_report = "robustness";
  add_common(robust, true);
  robust->add_option("--checkpoint", robust_ckpt, "trained checkpoint")->required();
  robust->add_option("--split", robust_split, "train | val | test");
  robust->add_option("--perturb", robust_perturb,
                     "comma list kind:param (blur:9, jpeg:75, noise:3, identity); default grid");
  robust->add_option("--report", robust_report, "report path prefix");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "synthesize forgeries from sources");
  std::string synth_out_dir = "synth", synth_manifest = "";
  int synth_per_kind = 2;
  std::string synth_kinds = "splice,copymove,removal";
  bool synth_filter = false;
  double synth_promote = 0.0;
  add_common(synth, true);
  synth->add_option("--out-dir", synth_out_dir, "directory for synthesized files");
  synth->add_option("--out", synth_manifest, "output manifest path (default <out-dir>/manifest.jsonl)");
  synth->add_option("--per-kind", synth_per_kind, "forgeries per kind");
  synth->add_option("--kinds", synth_kinds, "comma list: splice,copymove,removal");
  synth->add_flag("--filter-overlap", synth_filter, "apply the saliency-overlap filter");
  synth->add_option("--promote-hard", synth_promote,
                    "fraction of sdri_st train records promoted to test");

  // make-edges
  auto* edges = app.add_subcommand("make-edges", "write Sobel edge maps for manifest masks");
  add_common(edges, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  // Overrides only apply when given on the active subcommand.
  CLI::App* active = app.get_subcommands().front();
  if (active->count("--seed") > 0) opts.seed = seed_arg;
  if (active->count("--size") > 0) opts.size = size_arg;
  if (active->count("--threshold") > 0) opts.threshold = threshold_arg;

  try {
    if (train->parsed()) return cmd_train(opts, train_out);
    if (eval->parsed()) return cmd_eval(opts, eval_ckpt, eval_split, eval_report);
    if (infer->parsed()) return cmd_infer(opts, infer_ckpt, infer_images, infer_out, infer_gates);
    if (robust->parsed())
      return cmd_robustness(opts, robust_ckpt, robust_split, robust_perturb, robust_report);
    if (synth->parsed()) {
      const std::string manifest_out = synth_manifest.empty()
                                           ? (fs::path(synth_out_dir) / "manifest.jsonl").string()
                                           : synth_manifest;
      return cmd_synth(opts, synth_out_dir, manifest_out, synth_per_kind, synth_kinds,
                       synth_filter, synth_promote);
    }
    if (edges->parsed()) return cmd_make_edges(opts);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
