#include "trace/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "trace/image_io.hpp"
#include "trace/kernels.hpp"
#include "trace/rng.hpp"

namespace trace {

namespace {

void check_binary_mask(const Tensor& mask, const char* what) {
  if (mask.ndim() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a (H, W) mask, got " +
                                mask.shape_str());
  }
}

void check_rgb_image(const Tensor& image, const char* what) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument(std::string(what) + ": expected a (3, H, W) image, got " +
                                image.shape_str());
  }
}

void check_same_hw(const Tensor& image, const Tensor& mask, const char* what) {
  if (image.dim(1) != mask.dim(0) || image.dim(2) != mask.dim(1)) {
    throw std::invalid_argument(std::string(what) + ": image " + image.shape_str() +
                                " and mask " + mask.shape_str() + " disagree on size");
  }
}

bool on(double v) { return v > 0.5; }

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw std::invalid_argument("split_name: bad enum value");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw std::invalid_argument("parse_split: unknown split '" + text + "'");
}

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::SdriSt: return "sdri_st";
    case Provenance::Selected: return "selected";
    case Provenance::SynthSplice: return "synth_splice";
    case Provenance::SynthCopyMove: return "synth_copymove";
    case Provenance::SynthRemoval: return "synth_removal";
  }
  throw std::invalid_argument("provenance_name: bad enum value");
}

Provenance parse_provenance(const std::string& text) {
  if (text == "sdri_st") return Provenance::SdriSt;
  if (text == "selected") return Provenance::Selected;
  if (text == "synth_splice") return Provenance::SynthSplice;
  if (text == "synth_copymove") return Provenance::SynthCopyMove;
  if (text == "synth_removal") return Provenance::SynthRemoval;
  throw std::invalid_argument("parse_provenance: unknown provenance '" + text + "'");
}

std::string manifest_line(const DatasetRecord& rec) {
  // nlohmann objects keep keys sorted, so dump() is already canonical.
  const nlohmann::json j{
      {"authentic_path", rec.authentic_path},   {"edge_path", rec.edge_path},
      {"manipulated_path", rec.manipulated_path}, {"mask_path", rec.mask_path},
      {"provenance", provenance_name(rec.provenance)}, {"split", split_name(rec.split)},
  };
  return j.dump();
}

std::vector<DatasetRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::vector<DatasetRecord> records;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    DatasetRecord rec;
    try {
      const auto j = nlohmann::json::parse(line);
      rec.authentic_path = j.at("authentic_path").get<std::string>();
      rec.manipulated_path = j.at("manipulated_path").get<std::string>();
      rec.mask_path = j.at("mask_path").get<std::string>();
      rec.edge_path = j.at("edge_path").get<std::string>();
      rec.split = parse_split(j.at("split").get<std::string>());
      rec.provenance = parse_provenance(j.at("provenance").get<std::string>());
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert({split_name(rec.split), rec.manipulated_path}).second) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": duplicate (split, manipulated_path) pair '" +
                               rec.manipulated_path + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const DatasetRecord& rec : records) {
    if (!seen.insert({split_name(rec.split), rec.manipulated_path}).second) {
      throw std::runtime_error("write_manifest: duplicate (split, manipulated_path) pair '" +
                               rec.manipulated_path + "'");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const DatasetRecord& rec : records) out << manifest_line(rec) << '\n';
}

Tensor sobel_edge_target(const Tensor& mask) {
  check_binary_mask(mask, "sobel_edge_target");
  const int h = static_cast<int>(mask.dim(0));
  const int w = static_cast<int>(mask.dim(1));
  Tensor edge({h, w});
  static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
#pragma omp parallel for
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx = 0.0, gy = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double v = mask.at(kernels::mirror_index(y + dy, h),
                                   kernels::mirror_index(x + dx, w));
          gx += kx[dy + 1][dx + 1] * v;
          gy += kx[dx + 1][dy + 1] * v;  // transpose of kx
        }
      }
      edge.at(y, x) = (gx * gx + gy * gy) > 0.0 ? 1.0 : 0.0;
    }
  }
  return edge;
}

std::vector<CandidateRegion> spatial_kmeans_candidates(const Tensor& salient_mask,
                                                       const Tensor& image, int k,
                                                       std::uint64_t seed, double lambda) {
  check_binary_mask(salient_mask, "spatial_kmeans_candidates");
  check_rgb_image(image, "spatial_kmeans_candidates");
  check_same_hw(image, salient_mask, "spatial_kmeans_candidates");
  if (k < 1) throw std::invalid_argument("spatial_kmeans_candidates: k must be >= 1");

  const int h = static_cast<int>(salient_mask.dim(0));
  const int w = static_cast<int>(salient_mask.dim(1));
  std::vector<int> ys, xs;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (on(salient_mask.at(y, x))) {
        ys.push_back(y);
        xs.push_back(x);
      }
  const int n = static_cast<int>(ys.size());
  if (n == 0) throw std::invalid_argument("spatial_kmeans_candidates: salient mask is empty");
  if (k > n) {
    throw std::invalid_argument("spatial_kmeans_candidates: k=" + std::to_string(k) +
                                " exceeds the salient pixel count " + std::to_string(n));
  }

  using Feat = std::array<double, 5>;
  std::vector<Feat> feat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    feat[static_cast<std::size_t>(i)] = {
        static_cast<double>(xs[static_cast<std::size_t>(i)]) / w,
        static_cast<double>(ys[static_cast<std::size_t>(i)]) / h,
        lambda * image.at(0, ys[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(i)]),
        lambda * image.at(1, ys[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(i)]),
        lambda * image.at(2, ys[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(i)])};
  }
  const auto dist2 = [](const Feat& a, const Feat& b) {
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };

  // Seeded k-means++: each new center is drawn proportional to the squared
  // distance from the nearest existing one.
  Rng rng(seed);
  std::vector<Feat> centers;
  centers.reserve(static_cast<std::size_t>(k));
  centers.push_back(feat[static_cast<std::size_t>(rng.index(n))]);
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    d2[static_cast<std::size_t>(i)] = dist2(feat[static_cast<std::size_t>(i)], centers[0]);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    int pick;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(feat[static_cast<std::size_t>(pick)]);
    for (int i = 0; i < n; ++i) {
      const double v = dist2(feat[static_cast<std::size_t>(i)], centers.back());
      if (v < d2[static_cast<std::size_t>(i)]) d2[static_cast<std::size_t>(i)] = v;
    }
  }

  // Lloyd iterations; assignment ties break toward the lowest cluster index,
  // emptied clusters grab the point farthest from its current center.
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = dist2(feat[static_cast<std::size_t>(i)], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = dist2(feat[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Feat> sums(static_cast<std::size_t>(k), Feat{});
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      for (int j = 0; j < 5; ++j) sums[static_cast<std::size_t>(c)][j] += feat[static_cast<std::size_t>(i)][j];
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        for (int j = 0; j < 5; ++j)
          centers[static_cast<std::size_t>(c)][j] =
              sums[static_cast<std::size_t>(c)][j] / counts[static_cast<std::size_t>(c)];
      } else {
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = dist2(feat[static_cast<std::size_t>(i)],
                                 centers[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers[static_cast<std::size_t>(c)] = feat[static_cast<std::size_t>(far)];
      }
    }
  }

  std::vector<CandidateRegion> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    out[static_cast<std::size_t>(c)].mask =
        Tensor({h, w});
    out[static_cast<std::size_t>(c)].cluster_id = c;
  }
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].mask.at(
        ys[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(i)]) = 1.0;
  }
  return out;
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
  return out;
}

// Erosion pads with 1 and dilation with 0 (the usual asymmetric convention),
// so masks touching the frame are not shaved by the border itself.
Tensor erode(const Tensor& m, const std::vector<std::pair<int, int>>& se) {
  const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
  Tensor out({h, w});
#pragma omp parallel for
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool all = true;
      for (const auto& [dy, dx] : se) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (!on(m.at(yy, xx))) {
          all = false;
          break;
        }
      }
      out.at(y, x) = all ? 1.0 : 0.0;
    }
  return out;
}

Tensor dilate(const Tensor& m, const std::vector<std::pair<int, int>>& se) {
  const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
  Tensor out({h, w});
#pragma omp parallel for
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool any = false;
      for (const auto& [dy, dx] : se) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (on(m.at(yy, xx))) {
          any = true;
          break;
        }
      }
      out.at(y, x) = any ? 1.0 : 0.0;
    }
  return out;
}

void drop_small_components(Tensor& m, int min_component) {
  const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
  std::vector<char> visited(static_cast<std::size_t>(h) * w, 0);
  std::vector<int> stack, comp;
  for (int start = 0; start < h * w; ++start) {
    if (visited[static_cast<std::size_t>(start)] || !on(m[static_cast<std::size_t>(start)])) continue;
    stack.assign(1, start);
    visited[static_cast<std::size_t>(start)] = 1;
    comp.clear();
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      const int y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (visited[static_cast<std::size_t>(q)] || !on(m[static_cast<std::size_t>(q)])) continue;
          visited[static_cast<std::size_t>(q)] = 1;
          stack.push_back(q);
        }
    }
    if (static_cast<int>(comp.size()) < min_component)
      for (int p : comp) m[static_cast<std::size_t>(p)] = 0.0;
  }
}

}  // namespace

Tensor morph_refine(const Tensor& region, int radius, int min_component) {
  check_binary_mask(region, "morph_refine");
  if (radius < 0) throw std::invalid_argument("morph_refine: radius must be >= 0");
  const auto se = disk_offsets(radius);
  Tensor opened = dilate(erode(region, se), se);
  Tensor closed = erode(dilate(opened, se), se);
  drop_small_components(closed, min_component);
  return closed;
}

namespace {

constexpr double kSubjectWeight = 10.0;

std::vector<std::string> tokenize_caption(const std::string& text) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      toks.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

bool is_article(const std::string& t) { return t == "a" || t == "an" || t == "the"; }

std::string subject_of(const std::vector<std::string>& toks) {
  for (const std::string& t : toks)
    if (!is_article(t)) return t;
  return "";
}

}  // namespace

double subject_shift_score(const std::string& original, const std::string& masked) {
  const auto ta = tokenize_caption(original);
  const auto tb = tokenize_caption(masked);
  double score = 0.0;
  if (subject_of(ta) != subject_of(tb)) score += kSubjectWeight;
  std::set<std::string> sa, sb;
  for (const auto& t : ta)
    if (!is_article(t)) sa.insert(t);
  for (const auto& t : tb)
    if (!is_article(t)) sb.insert(t);
  if (sa.empty() && sb.empty()) return score;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  // attribute tier: token-set dissimilarity, capped at 1 << kSubjectWeight
  score += 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
  return score;
}

RankOutcome rank_candidates(const Tensor& image, const std::vector<CandidateRegion>& candidates,
                            CaptionClient& client, const ScoreFn& judge) {
  check_rgb_image(image, "rank_candidates");
  RankOutcome out;
  if (candidates.empty()) return out;

  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  Tensor claimed({h, w});
  double mean[3] = {0.0, 0.0, 0.0};
  std::size_t salient_count = 0;
  for (const CandidateRegion& cand : candidates) {
    check_binary_mask(cand.mask, "rank_candidates");
    check_same_hw(image, cand.mask, "rank_candidates");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!on(cand.mask.at(y, x))) continue;
        if (on(claimed.at(y, x)))
          throw std::invalid_argument("rank_candidates: candidate masks overlap");
        claimed.at(y, x) = 1.0;
        for (int c = 0; c < 3; ++c) mean[c] += image.at(c, y, x);
        ++salient_count;
      }
  }
  if (salient_count == 0)
    throw std::invalid_argument("rank_candidates: all candidate masks are empty");
  for (double& c : mean) c /= static_cast<double>(salient_count);

  const auto cap_orig = caption_tensor(client, image);
  for (const CandidateRegion& cand : candidates) {
    ScoredCandidate sc;
    sc.region = cand;
    std::optional<std::string> cap_masked;
    if (cap_orig) {
      Tensor masked = image;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (on(cand.mask.at(y, x)))
            for (int c = 0; c < 3; ++c) masked.at(c, y, x) = mean[c];
      cap_masked = caption_tensor(client, masked);
    }
    if (cap_orig && cap_masked) {
      sc.region.score = judge(*cap_orig, *cap_masked);
      sc.scored = true;
      ++out.scored_count;
    }
    out.ranked.push_back(std::move(sc));
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) {
                     if (a.scored != b.scored) return a.scored;
                     if (!a.scored) return false;
                     return a.region.score > b.region.score;
                   });
  return out;
}

std::string forgery_kind_name(ForgeryKind kind) {
  switch (kind) {
    case ForgeryKind::Splice: return "splice";
    case ForgeryKind::CopyMove: return "copymove";
    case ForgeryKind::Removal: return "removal";
  }
  throw std::invalid_argument("forgery_kind_name: bad enum value");
}

ForgeryKind parse_forgery_kind(const std::string& text) {
  if (text == "splice") return ForgeryKind::Splice;
  if (text == "copymove") return ForgeryKind::CopyMove;
  if (text == "removal") return ForgeryKind::Removal;
  throw std::invalid_argument("parse_forgery_kind: unknown kind '" + text + "'");
}

void mean_fill(Tensor& image, const Tensor& mask) {
  check_rgb_image(image, "mean_fill");
  check_binary_mask(mask, "mean_fill");
  check_same_hw(image, mask, "mean_fill");
  const int h = static_cast<int>(mask.dim(0)), w = static_cast<int>(mask.dim(1));
  std::vector<char> filled(static_cast<std::size_t>(h) * w);
  int remaining = 0;
  for (int p = 0; p < h * w; ++p) {
    filled[static_cast<std::size_t>(p)] = on(mask[static_cast<std::size_t>(p)]) ? 0 : 1;
    remaining += on(mask[static_cast<std::size_t>(p)]) ? 1 : 0;
  }
  if (remaining == h * w) {  // no known pixel anywhere: flat gray
    image.fill(0.5);
    return;
  }
  static const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  std::vector<int> shell;
  std::vector<std::array<double, 3>> vals;
  while (remaining > 0) {
    shell.clear();
    vals.clear();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int p = y * w + x;
        if (filled[static_cast<std::size_t>(p)]) continue;
        std::array<double, 3> sum{};
        int cnt = 0;
        for (int d = 0; d < 4; ++d) {
          const int yy = y + dy[d], xx = x + dx[d];
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (!filled[static_cast<std::size_t>(yy) * w + xx]) continue;
          for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += image.at(c, yy, xx);
          ++cnt;
        }
        if (cnt == 0) continue;
        for (double& s : sum) s /= cnt;
        shell.push_back(p);
        vals.push_back(sum);
      }
    for (std::size_t i = 0; i < shell.size(); ++i) {
      const int y = shell[i] / w, x = shell[i] % w;
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = vals[i][static_cast<std::size_t>(c)];
      filled[static_cast<std::size_t>(shell[i])] = 1;
    }
    remaining -= static_cast<int>(shell.size());
  }
}

namespace {

constexpr int kMaxForgeryAttempts = 16;
constexpr double kMinDisplacement = 4.0;  // pixels; copy-move degeneracy guard
constexpr double kPi = 3.14159265358979323846;

// Inverse-maps every frame pixel through the similarity transform and copies
// nearest-neighbor source pixels where the source mask is on. Returns the
// pasted pixel count.
int paste_object(const Tensor& src_img, const Tensor& src_mask, double cy, double cx, double scale,
                 double rot, double ty, double tx, Tensor& out) {
  const int h = static_cast<int>(out.dim(1)), w = static_cast<int>(out.dim(2));
  const int sh = static_cast<int>(src_img.dim(1)), sw = static_cast<int>(src_img.dim(2));
  const double cosr = std::cos(rot), sinr = std::sin(rot);
  int pasted = 0;
#pragma omp parallel for reduction(+ : pasted)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double rx = x - tx, ry = y - ty;
      const double qx = cx + (cosr * rx + sinr * ry) / scale;
      const double qy = cy + (-sinr * rx + cosr * ry) / scale;
      const long qxi = std::lround(qx), qyi = std::lround(qy);
      if (qxi < 0 || qxi >= sw || qyi < 0 || qyi >= sh) continue;
      if (!on(src_mask.at(qyi, qxi))) continue;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = src_img.at(c, qyi, qxi);
      ++pasted;
    }
  }
  return pasted;
}

Tensor changed_mask(const Tensor& before, const Tensor& after, std::size_t* count) {
  const int h = static_cast<int>(before.dim(1)), w = static_cast<int>(before.dim(2));
  Tensor gt({h, w});
  std::size_t cnt = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool diff = before.at(0, y, x) != after.at(0, y, x) ||
                        before.at(1, y, x) != after.at(1, y, x) ||
                        before.at(2, y, x) != after.at(2, y, x);
      gt.at(y, x) = diff ? 1.0 : 0.0;
      cnt += diff ? 1u : 0u;
    }
  if (count != nullptr) *count = cnt;
  return gt;
}

void mask_stats(const Tensor& mask, double* cy, double* cx, std::size_t* count) {
  double sy = 0.0, sx = 0.0;
  std::size_t cnt = 0;
  const int h = static_cast<int>(mask.dim(0)), w = static_cast<int>(mask.dim(1));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (on(mask.at(y, x))) {
        sy += y;
        sx += x;
        ++cnt;
      }
  *count = cnt;
  *cy = cnt > 0 ? sy / static_cast<double>(cnt) : 0.0;
  *cx = cnt > 0 ? sx / static_cast<double>(cnt) : 0.0;
}

}  // namespace

ForgeryResult synth_forgery(ForgeryKind kind, const Tensor& host, const Tensor& host_salient,
                            const Tensor* donor, const Tensor* donor_salient, std::uint64_t seed,
                            const FillFn& filler) {
  check_rgb_image(host, "synth_forgery");
  check_binary_mask(host_salient, "synth_forgery");
  check_same_hw(host, host_salient, "synth_forgery");

  if (kind == ForgeryKind::Removal) {
    std::size_t salient_count = 0;
    double cy = 0.0, cx = 0.0;
    mask_stats(host_salient, &cy, &cx, &salient_count);
    if (salient_count == 0)
      throw std::invalid_argument("synth_forgery: salient mask is empty");
    ForgeryResult res;
    res.image = host;
    filler(res.image, host_salient);
    std::size_t changed = 0;
    res.mask = changed_mask(host, res.image, &changed);
    if (changed == 0)
      throw std::runtime_error("synth_forgery: removal filler changed no pixels");
    return res;
  }

  if (kind == ForgeryKind::Splice) {
    if (donor == nullptr || donor_salient == nullptr)
      throw std::invalid_argument("synth_forgery: splice requires a donor image and mask");
    check_rgb_image(*donor, "synth_forgery donor");
    check_binary_mask(*donor_salient, "synth_forgery donor");
    check_same_hw(*donor, *donor_salient, "synth_forgery donor");
  }
  const Tensor& src_img = kind == ForgeryKind::Splice ? *donor : host;
  const Tensor& src_mask = kind == ForgeryKind::Splice ? *donor_salient : host_salient;
  double cy = 0.0, cx = 0.0;
  std::size_t object_count = 0;
  mask_stats(src_mask, &cy, &cx, &object_count);
  if (object_count == 0) throw std::invalid_argument("synth_forgery: salient mask is empty");

  const int h = static_cast<int>(host.dim(1)), w = static_cast<int>(host.dim(2));
  Rng base(seed);
  for (int attempt = 1; attempt <= kMaxForgeryAttempts; ++attempt) {
    Rng r = base.fork(static_cast<std::uint64_t>(attempt));
    const double scale = r.uniform(0.7, 1.3);
    const double rot = r.uniform(-kPi / 6.0, kPi / 6.0);
    const double tx = r.uniform(0.0, static_cast<double>(w));
    const double ty = r.uniform(0.0, static_cast<double>(h));
    if (kind == ForgeryKind::CopyMove &&
        std::hypot(tx - cx, ty - cy) < kMinDisplacement)
      continue;  // near-identity placement would yield a no-op forgery
    ForgeryResult res;
    res.image = host;
    if (paste_object(src_img, src_mask, cy, cx, scale, rot, ty, tx, res.image) == 0)
      continue;  // object landed fully outside the frame
    std::size_t changed = 0;
    res.mask = changed_mask(host, res.image, &changed);
    if (changed == 0) continue;  // pasted values happened to match the host
    res.attempts = attempt;
    return res;
  }
  throw std::runtime_error("synth_forgery: no valid transform within " +
                           std::to_string(kMaxForgeryAttempts) + " attempts");
}

bool saliency_overlap_filter(const Tensor& gt_mask, const Tensor& salient_mask, double threshold) {
  check_binary_mask(gt_mask, "saliency_overlap_filter");
  check_binary_mask(salient_mask, "saliency_overlap_filter");
  if (gt_mask.dim(0) != salient_mask.dim(0) || gt_mask.dim(1) != salient_mask.dim(1)) {
    throw std::invalid_argument("saliency_overlap_filter: mask sizes disagree: " +
                                gt_mask.shape_str() + " vs " + salient_mask.shape_str());
  }
  std::size_t gt = 0, inter = 0;
  for (std::size_t p = 0; p < gt_mask.size(); ++p) {
    if (!on(gt_mask[p])) continue;
    ++gt;
    if (on(salient_mask[p])) ++inter;
  }
  if (gt == 0) return false;
  return static_cast<double>(inter) / static_cast<double>(gt) > threshold;
}

PreparedSample load_and_prepare(const DatasetRecord& rec, int size) {
  if (size < 2) throw std::invalid_argument("load_and_prepare: size must be >= 2");
  PreparedSample out;
  try {
    const ImageU8 img = read_image(rec.manipulated_path, 3);
    out.image = resize_bilinear(image_to_tensor(img), size, size);
    const ImageU8 mask_img = read_image(rec.mask_path, 1);
    out.target.mask = resize_nearest(image_to_mask(mask_img), size, size);
    out.target.edge = sobel_edge_target(out.target.mask);
  } catch (const std::exception& e) {
    throw std::runtime_error("record '" + rec.manipulated_path + "': " + e.what());
  }
  return out;
}

std::vector<PreparedSample> load_split(const std::vector<DatasetRecord>& records, Split split,
                                       int size, bool lenient, std::vector<std::string>* errors) {
  std::vector<PreparedSample> out;
  for (const DatasetRecord& rec : records) {
    if (rec.split != split) continue;
    try {
      out.push_back(load_and_prepare(rec, size));
    } catch (const std::exception& e) {
      if (!lenient) throw;
      if (errors != nullptr) errors->push_back(e.what());
    }
  }
  return out;
}

void assign_splits(std::vector<DatasetRecord>& records, std::uint64_t seed) {
  Rng base(seed);
  for (int p = 0; p < kProvenanceCount; ++p) {
    Rng r = base.fork(static_cast<std::uint64_t>(p));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (static_cast<int>(records[i].provenance) == p) idx.push_back(i);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(r.index(static_cast<int>(i)))]);
    const std::size_t n = idx.size();
    const std::size_t n_val = n / 10, n_test = n / 10;
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) {
      records[idx[i]].split =
          i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
  }
}

void promote_hard(std::vector<DatasetRecord>& records, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("promote_hard: fraction must lie in [0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].provenance == Provenance::SdriSt && records[i].split == Split::Train)
      idx.push_back(i);
  Rng r(seed);
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r.index(static_cast<int>(i)))]);
  const auto moved = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(idx.size())));
  for (std::size_t i = 0; i < moved && i < idx.size(); ++i) records[idx[i]].split = Split::Test;
}

}  // namespace trace
