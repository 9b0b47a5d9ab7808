#include "trace/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace trace {
namespace kernels {

using std::size_t;

void conv2d(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) throw std::invalid_argument("conv2d: channel mismatch");
  out = Tensor({n, cout, h, wd});
  const int cy = kh / 2, cx = kw / 2;
  const double* ip = in.data();
  const double* wp = w.data();
  double* op = out.data();
  const size_t in_plane = static_cast<size_t>(h) * wd;
  const size_t in_img = in_plane * cin;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * cout; ++nc) {
    const int ni = nc / cout, co = nc % cout;
    const double b = bias ? bias->data()[co] : 0.0;
    double* oplane = op + (static_cast<size_t>(ni) * cout + co) * in_plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        double acc = b;
        for (int ci = 0; ci < cin; ++ci) {
          const double* iplane = ip + static_cast<size_t>(ni) * in_img + ci * in_plane;
          const double* wrow =
              wp + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            const int yy = mirror_index(y + ky - cy, h);
            const double* irow = iplane + static_cast<size_t>(yy) * wd;
            for (int kx = 0; kx < kw; ++kx) {
              const int xx = mirror_index(x + kx - cx, wd);
              acc += wrow[ky * kw + kx] * irow[xx];
            }
          }
        }
        oplane[static_cast<size_t>(y) * wd + x] = acc;
      }
    }
  }
}

void conv2d_backward(const Tensor& in, const Tensor& w, const Tensor& dout,
                     Tensor* din, Tensor* dw, Tensor* db) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int cy = kh / 2, cx = kw / 2;
  const size_t plane = static_cast<size_t>(h) * wd;

  if (din) {
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < n * cin; ++nc) {
      const int ni = nc / cin, ci = nc % cin;
      double* dplane = din->data() + (static_cast<size_t>(ni) * cin + ci) * plane;
      for (int co = 0; co < cout; ++co) {
        const double* goplane =
            dout.data() + (static_cast<size_t>(ni) * cout + co) * plane;
        const double* wrow = w.data() + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < wd; ++x) {
            const double g = goplane[static_cast<size_t>(y) * wd + x];
            if (g == 0.0) continue;
            for (int ky = 0; ky < kh; ++ky) {
              const int yy = mirror_index(y + ky - cy, h);
              for (int kx = 0; kx < kw; ++kx) {
                const int xx = mirror_index(x + kx - cx, wd);
                dplane[static_cast<size_t>(yy) * wd + xx] += wrow[ky * kw + kx] * g;
              }
            }
          }
        }
      }
    }
  }

  if (dw) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      for (int ni = 0; ni < n; ++ni) {
        const double* goplane =
            dout.data() + (static_cast<size_t>(ni) * cout + co) * plane;
        for (int ci = 0; ci < cin; ++ci) {
          const double* iplane =
              in.data() + (static_cast<size_t>(ni) * cin + ci) * plane;
          double* dwrow = dw->data() + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < wd; ++x) {
              const double g = goplane[static_cast<size_t>(y) * wd + x];
              if (g == 0.0) continue;
              for (int ky = 0; ky < kh; ++ky) {
                const int yy = mirror_index(y + ky - cy, h);
                for (int kx = 0; kx < kw; ++kx) {
                  const int xx = mirror_index(x + kx - cx, wd);
                  dwrow[ky * kw + kx] += iplane[static_cast<size_t>(yy) * wd + xx] * g;
                }
              }
            }
          }
        }
      }
    }
  }

  if (db) {
    for (int co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* goplane =
            dout.data() + (static_cast<size_t>(ni) * cout + co) * plane;
        for (size_t i = 0; i < plane; ++i) acc += goplane[i];
      }
      db->data()[co] += acc;
    }
  }
}

void linear(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out) {
  const int m = in.dim(0), fin = in.dim(1);
  const int fout = w.dim(1);
  if (w.dim(0) != fin) throw std::invalid_argument("linear: width mismatch");
  out = Tensor({m, fout});

#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    const double* irow = in.data() + static_cast<size_t>(r) * fin;
    double* orow = out.data() + static_cast<size_t>(r) * fout;
    if (bias) {
      for (int o = 0; o < fout; ++o) orow[o] = bias->data()[o];
    } else {
      for (int o = 0; o < fout; ++o) orow[o] = 0.0;
    }
    for (int i = 0; i < fin; ++i) {
      const double v = irow[i];
      if (v == 0.0) continue;
      const double* wrow = w.data() + static_cast<size_t>(i) * fout;
      for (int o = 0; o < fout; ++o) orow[o] += v * wrow[o];
    }
  }
}

void linear_backward(const Tensor& in, const Tensor& w, const Tensor& dout,
                     Tensor* din, Tensor* dw, Tensor* db) {
  const int m = in.dim(0), fin = in.dim(1), fout = w.dim(1);

  if (din) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < m; ++r) {
      const double* grow = dout.data() + static_cast<size_t>(r) * fout;
      double* drow = din->data() + static_cast<size_t>(r) * fin;
      for (int i = 0; i < fin; ++i) {
        const double* wrow = w.data() + static_cast<size_t>(i) * fout;
        double acc = 0.0;
        for (int o = 0; o < fout; ++o) acc += wrow[o] * grow[o];
        drow[i] += acc;
      }
    }
  }

  if (dw) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < fin; ++i) {
      double* dwrow = dw->data() + static_cast<size_t>(i) * fout;
      for (int r = 0; r < m; ++r) {
        const double v = in.data()[static_cast<size_t>(r) * fin + i];
        if (v == 0.0) continue;
        const double* grow = dout.data() + static_cast<size_t>(r) * fout;
        for (int o = 0; o < fout; ++o) dwrow[o] += v * grow[o];
      }
    }
  }

  if (db) {
    for (int r = 0; r < m; ++r) {
      const double* grow = dout.data() + static_cast<size_t>(r) * fout;
      for (int o = 0; o < fout; ++o) db->data()[o] += grow[o];
    }
  }
}

namespace {
inline int bin_start(int i, int in, int out) { return (i * in) / out; }
inline int bin_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace

void adaptive_avg_pool(const Tensor& in, int oh, int ow, Tensor& out) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  out = Tensor({n, c, oh, ow});
  const size_t iplane = static_cast<size_t>(h) * wd;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* ip = in.data() + static_cast<size_t>(nc) * iplane;
    double* op = out.data() + static_cast<size_t>(nc) * oplane;
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = bin_start(oy, h, oh), y1 = bin_end(oy, h, oh);
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = bin_start(ox, wd, ow), x1 = bin_end(ox, wd, ow);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += ip[static_cast<size_t>(y) * wd + x];
        op[static_cast<size_t>(oy) * ow + ox] =
            acc / (static_cast<double>(y1 - y0) * (x1 - x0));
      }
    }
  }
}

void adaptive_avg_pool_backward(const Tensor& dout, int h, int w, Tensor& din) {
  const int n = dout.dim(0), c = dout.dim(1), oh = dout.dim(2), ow = dout.dim(3);
  const size_t iplane = static_cast<size_t>(h) * w;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* gp = dout.data() + static_cast<size_t>(nc) * oplane;
    double* dp = din.data() + static_cast<size_t>(nc) * iplane;
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = bin_start(oy, h, oh), y1 = bin_end(oy, h, oh);
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = bin_start(ox, w, ow), x1 = bin_end(ox, w, ow);
        const double g = gp[static_cast<size_t>(oy) * ow + ox] /
                         (static_cast<double>(y1 - y0) * (x1 - x0));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) dp[static_cast<size_t>(y) * w + x] += g;
      }
    }
  }
}

void upsample_nearest(const Tensor& in, int oh, int ow, Tensor& out) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  out = Tensor({n, c, oh, ow});
  const size_t iplane = static_cast<size_t>(h) * wd;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* ip = in.data() + static_cast<size_t>(nc) * iplane;
    double* op = out.data() + static_cast<size_t>(nc) * oplane;
    for (int y = 0; y < oh; ++y) {
      const int sy = static_cast<int>((static_cast<long long>(y) * h) / oh);
      for (int x = 0; x < ow; ++x) {
        const int sx = static_cast<int>((static_cast<long long>(x) * wd) / ow);
        op[static_cast<size_t>(y) * ow + x] = ip[static_cast<size_t>(sy) * wd + sx];
      }
    }
  }
}

void upsample_nearest_backward(const Tensor& dout, int ih, int iw, Tensor& din) {
  const int n = dout.dim(0), c = dout.dim(1), oh = dout.dim(2), ow = dout.dim(3);
  const size_t iplane = static_cast<size_t>(ih) * iw;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* gp = dout.data() + static_cast<size_t>(nc) * oplane;
    double* dp = din.data() + static_cast<size_t>(nc) * iplane;
    for (int y = 0; y < oh; ++y) {
      const int sy = static_cast<int>((static_cast<long long>(y) * ih) / oh);
      for (int x = 0; x < ow; ++x) {
        const int sx = static_cast<int>((static_cast<long long>(x) * iw) / ow);
        dp[static_cast<size_t>(sy) * iw + sx] += gp[static_cast<size_t>(y) * ow + x];
      }
    }
  }
}

namespace {
struct LerpCoef {
  int i0, i1;
  double w0, w1;
};

inline LerpCoef lerp_coef(int o, int in, int out) {
  const double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
  double s = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, in - 1);
  const double f = s - i0;
  return {i0, i1, 1.0 - f, f};
}
}  // namespace

void upsample_bilinear(const Tensor& in, int oh, int ow, Tensor& out) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  out = Tensor({n, c, oh, ow});
  std::vector<LerpCoef> ys(oh), xs(ow);
  for (int y = 0; y < oh; ++y) ys[y] = lerp_coef(y, h, oh);
  for (int x = 0; x < ow; ++x) xs[x] = lerp_coef(x, wd, ow);
  const size_t iplane = static_cast<size_t>(h) * wd;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* ip = in.data() + static_cast<size_t>(nc) * iplane;
    double* op = out.data() + static_cast<size_t>(nc) * oplane;
    for (int y = 0; y < oh; ++y) {
      const LerpCoef& ly = ys[y];
      const double* r0 = ip + static_cast<size_t>(ly.i0) * wd;
      const double* r1 = ip + static_cast<size_t>(ly.i1) * wd;
      for (int x = 0; x < ow; ++x) {
        const LerpCoef& lx = xs[x];
        op[static_cast<size_t>(y) * ow + x] =
            ly.w0 * (lx.w0 * r0[lx.i0] + lx.w1 * r0[lx.i1]) +
            ly.w1 * (lx.w0 * r1[lx.i0] + lx.w1 * r1[lx.i1]);
      }
    }
  }
}

void upsample_bilinear_backward(const Tensor& dout, int ih, int iw, Tensor& din) {
  const int n = dout.dim(0), c = dout.dim(1), oh = dout.dim(2), ow = dout.dim(3);
  std::vector<LerpCoef> ys(oh), xs(ow);
  for (int y = 0; y < oh; ++y) ys[y] = lerp_coef(y, ih, oh);
  for (int x = 0; x < ow; ++x) xs[x] = lerp_coef(x, iw, ow);
  const size_t iplane = static_cast<size_t>(ih) * iw;
  const size_t oplane = static_cast<size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const double* gp = dout.data() + static_cast<size_t>(nc) * oplane;
    double* dp = din.data() + static_cast<size_t>(nc) * iplane;
    for (int y = 0; y < oh; ++y) {
      const LerpCoef& ly = ys[y];
      for (int x = 0; x < ow; ++x) {
        const LerpCoef& lx = xs[x];
        const double g = gp[static_cast<size_t>(y) * ow + x];
        dp[static_cast<size_t>(ly.i0) * iw + lx.i0] += ly.w0 * lx.w0 * g;
        dp[static_cast<size_t>(ly.i0) * iw + lx.i1] += ly.w0 * lx.w1 * g;
        dp[static_cast<size_t>(ly.i1) * iw + lx.i0] += ly.w1 * lx.w0 * g;
        dp[static_cast<size_t>(ly.i1) * iw + lx.i1] += ly.w1 * lx.w1 * g;
      }
    }
  }
}

}  // namespace kernels

namespace ref {

void conv2d(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  out = Tensor({n, cout, h, wd});
  const int cy = kh / 2, cx = kw / 2;
  for (int ni = 0; ni < n; ++ni)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
          double acc = bias ? bias->at(co) : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int yy = kernels::mirror_index(y + ky - cy, h);
                const int xx = kernels::mirror_index(x + kx - cx, wd);
                acc += w.at(co, ci, ky, kx) * in.at(ni, ci, yy, xx);
              }
          out.at(ni, co, y, x) = acc;
        }
}

void linear(const Tensor& in, const Tensor& w, const Tensor* bias, Tensor& out) {
  const int m = in.dim(0), fin = in.dim(1), fout = w.dim(1);
  out = Tensor({m, fout});
  for (int r = 0; r < m; ++r)
    for (int o = 0; o < fout; ++o) {
      double acc = bias ? bias->at(o) : 0.0;
      for (int i = 0; i < fin; ++i) acc += in.at(r, i) * w.at(i, o);
      out.at(r, o) = acc;
    }
}

void adaptive_avg_pool(const Tensor& in, int oh, int ow, Tensor& out) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  out = Tensor({n, c, oh, ow});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const int y0 = (oy * h) / oh, y1 = ((oy + 1) * h + oh - 1) / oh;
          const int x0 = (ox * wd) / ow, x1 = ((ox + 1) * wd + ow - 1) / ow;
          double acc = 0.0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) acc += in.at(ni, ci, y, x);
          out.at(ni, ci, oy, ox) = acc / (static_cast<double>(y1 - y0) * (x1 - x0));
        }
}

void upsample_bilinear(const Tensor& in, int oh, int ow, Tensor& out) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  out = Tensor({n, c, oh, ow});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const double sy =
              std::clamp((y + 0.5) * h / oh - 0.5, 0.0, static_cast<double>(h - 1));
          const double sx =
              std::clamp((x + 0.5) * wd / ow - 0.5, 0.0, static_cast<double>(wd - 1));
          const int y0 = static_cast<int>(std::floor(sy));
          const int x0 = static_cast<int>(std::floor(sx));
          const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, wd - 1);
          const double fy = sy - y0, fx = sx - x0;
          out.at(ni, ci, y, x) =
              (1 - fy) * ((1 - fx) * in.at(ni, ci, y0, x0) + fx * in.at(ni, ci, y0, x1)) +
              fy * ((1 - fx) * in.at(ni, ci, y1, x0) + fx * in.at(ni, ci, y1, x1));
        }
}

}  // namespace ref
}  // namespace trace
