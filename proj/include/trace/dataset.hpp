#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trace/caption.hpp"
#include "trace/objectives.hpp"
#include "trace/tensor.hpp"

namespace trace {

enum class Split { Train = 0, Val = 1, Test = 2 };
enum class Provenance {
  SdriSt = 0,
  Selected = 1,
  SynthSplice = 2,
  SynthCopyMove = 3,
  SynthRemoval = 4
};
constexpr int kProvenanceCount = 5;

std::string split_name(Split s);
Split parse_split(const std::string& text);
std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& text);

// One dataset example. Masks are stored as PNG, images as PNG or JPEG.
struct DatasetRecord {
  std::string authentic_path;
  std::string manipulated_path;
  std::string mask_path;
  std::string edge_path;
  Split split = Split::Train;
  Provenance provenance = Provenance::Selected;
};

// Newline-delimited manifest, one canonical JSON object per line (keys in
// sorted order), so write(read(x)) == x byte-for-byte. Malformed lines and
// duplicate (split, manipulated_path) pairs are reported with line numbers.
std::string manifest_line(const DatasetRecord& rec);
std::vector<DatasetRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<DatasetRecord>& records);

// Sobel gradient magnitude of a binary (H, W) mask, reflect-padded at the
// border and thresholded at > 0 into a binary edge band.
Tensor sobel_edge_target(const Tensor& mask);

// One cluster of salient pixels, a candidate manipulated region.
struct CandidateRegion {
  Tensor mask;  // (H, W) binary
  int cluster_id = 0;
  double score = 0.0;
};

// K-means over per-pixel features [x/W, y/H, lambda*r, lambda*g, lambda*b] of
// the salient pixels: normalized coordinates dominate so clusters stay
// spatially compact. Seeded k-means++ initialization; the returned regions
// partition the salient mask. Requires 1 <= k <= |salient pixels|.
std::vector<CandidateRegion> spatial_kmeans_candidates(const Tensor& salient_mask,
                                                       const Tensor& image, int k,
                                                       std::uint64_t seed, double lambda = 0.2);

// Opening then closing with a disk structuring element of the given radius,
// then removal of 8-connected components below min_component pixels. Border
// convention: erosion pads with 1, dilation with 0, so full-frame masks
// survive both passes.
Tensor morph_refine(const Tensor& region, int radius, int min_component = 8);

// Semantic-delta judge comparing the caption of the original image with the
// caption of a region-masked copy.
using ScoreFn = std::function<double(const std::string& original, const std::string& masked)>;

// Default two-tier judge: a changed subject noun (first token after leading
// articles) scores far above any attribute-level token churn, so subject
// shifts always outrank attribute shifts.
double subject_shift_score(const std::string& original, const std::string& masked);

struct ScoredCandidate {
  CandidateRegion region;
  bool scored = false;
};

struct RankOutcome {
  // Scored candidates first, descending score, stable; unscored trail.
  std::vector<ScoredCandidate> ranked;
  int scored_count = 0;
};

// For each candidate, fill its region with the salient-region mean color,
// caption original and masked images, and score the delta with the judge.
// Client failures mark the candidate unscored; the pipeline continues.
RankOutcome rank_candidates(const Tensor& image, const std::vector<CandidateRegion>& candidates,
                            CaptionClient& client, const ScoreFn& judge = subject_shift_score);

enum class ForgeryKind { Splice = 0, CopyMove = 1, Removal = 2 };

std::string forgery_kind_name(ForgeryKind kind);
ForgeryKind parse_forgery_kind(const std::string& text);

// Fills the masked pixels of image in place.
using FillFn = std::function<void(Tensor& image, const Tensor& mask)>;

// Default removal filler: iterative wavefront that sets each unfilled masked
// pixel to the mean of its already-filled 4-neighbors, one shell per pass.
// Fully deterministic.
void mean_fill(Tensor& image, const Tensor& mask);

struct ForgeryResult {
  Tensor image;      // (3, H, W)
  Tensor mask;       // (H, W) binary: exactly the pixels whose values changed
  int attempts = 1;  // transform draws consumed before one was accepted
};

// Synthesizes one forgery from a host image and its salient-object mask.
//   copymove: salient object resampled under a seeded similarity transform
//             (scale 0.7-1.3, rotation +-30 deg, random in-frame placement)
//             and pasted back into the host;
//   splice:   same, but the object comes from donor/donor_salient;
//   removal:  salient region erased via the filler.
// Degenerate draws (object fully outside the frame, placement below the
// minimum-displacement guard, or no pixel changed) are retried with fresh
// sub-seeds a bounded number of times, then rejected with an error.
ForgeryResult synth_forgery(ForgeryKind kind, const Tensor& host, const Tensor& host_salient,
                            const Tensor* donor, const Tensor* donor_salient, std::uint64_t seed,
                            const FillFn& filler = mean_fill);

// Keep iff |gt AND salient| / |gt| > threshold (strict). Empty gt -> reject.
bool saliency_overlap_filter(const Tensor& gt_mask, const Tensor& salient_mask,
                             double threshold = 0.8);

struct PreparedSample {
  Tensor image;       // (3, S, S) in [0, 1]
  TargetPair target;  // mask (S, S) binary, edge regenerated at size S
};

// Decode + resize one record: bilinear for the image, nearest-neighbor for
// the mask (stays binary), edge target regenerated from the resized mask.
PreparedSample load_and_prepare(const DatasetRecord& rec, int size);

// All records of one split. Strict mode rethrows the first record error;
// lenient mode skips bad records and reports them through errors.
std::vector<PreparedSample> load_split(const std::vector<DatasetRecord>& records, Split split,
                                       int size, bool lenient = false,
                                       std::vector<std::string>* errors = nullptr);

// Seeded stratified-by-provenance 8:1:1 assignment, in place.
void assign_splits(std::vector<DatasetRecord>& records, std::uint64_t seed);

// Moves the given fraction of sdri_st train records into the test split
// (seeded choice), rebalancing hard samples toward evaluation.
void promote_hard(std::vector<DatasetRecord>& records, double fraction, std::uint64_t seed);

}  // namespace trace
