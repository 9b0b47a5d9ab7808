#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "trace/kernels.hpp"

using namespace trace;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Naive test-side conv with the same symmetric-padding contract, written
// independently of both library implementations.
Tensor naive_conv2d(const Tensor& in, const Tensor& w, const Tensor* bias) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  Tensor out({n, cout, h, wd});
  for (int ni = 0; ni < n; ++ni)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
          double acc = bias ? bias->at(co) : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int yy = y + ky - kh / 2, xx = x + kx - kw / 2;
                yy = kernels::mirror_index(yy, h);
                xx = kernels::mirror_index(xx, wd);
                acc += w.at(co, ci, ky, kx) * in.at(ni, ci, yy, xx);
              }
          out.at(ni, co, y, x) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("mirror_index reflects with edge inclusion") {
  // n = 4: ... 1 0 | 0 1 2 3 | 3 2 ...
  CHECK(kernels::mirror_index(-2, 4) == 1);
  CHECK(kernels::mirror_index(-1, 4) == 0);
  CHECK(kernels::mirror_index(0, 4) == 0);
  CHECK(kernels::mirror_index(3, 4) == 3);
  CHECK(kernels::mirror_index(4, 4) == 3);
  CHECK(kernels::mirror_index(5, 4) == 2);
  for (int i = -20; i <= 20; ++i) {
    CHECK(kernels::mirror_index(i, 1) == 0);
    const int j = kernels::mirror_index(i, 5);
    CHECK(j >= 0);
    CHECK(j < 5);
    // One full reflection period away maps to the same index.
    CHECK(kernels::mirror_index(i + 10, 5) == j);
  }
}

TEST_CASE("conv2d matches the naive oracle and the serial reference") {
  Rng rng(11);
  for (auto [kh, kw] : {std::pair{1, 1}, std::pair{3, 3}, std::pair{5, 5}}) {
    const Tensor in = random_tensor({2, 3, 7, 6}, rng);
    const Tensor w = random_tensor({4, 3, kh, kw}, rng);
    const Tensor b = random_tensor({4}, rng);
    Tensor out, out_ref;
    kernels::conv2d(in, w, &b, out);
    ref::conv2d(in, w, &b, out_ref);
    const Tensor oracle = naive_conv2d(in, w, &b);
    CHECK(max_abs_diff(out, oracle) < 1e-12);
    // Parallel and serial paths must agree bit-for-bit: every output element
    // is written by exactly one iteration in both.
    CHECK(testutil::bit_equal(out, out_ref));
  }
  // No-bias path.
  const Tensor in = random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor out;
  kernels::conv2d(in, w, nullptr, out);
  CHECK(max_abs_diff(out, naive_conv2d(in, w, nullptr)) < 1e-12);
}

TEST_CASE("conv2d_backward matches finite differences") {
  Rng rng(12);
  Tensor in = random_tensor({2, 2, 5, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor b = random_tensor({3}, rng);
  Tensor probe_out;
  kernels::conv2d(in, w, &b, probe_out);
  testutil::Projection proj(probe_out, rng);

  const auto loss = [&] {
    Tensor out;
    kernels::conv2d(in, w, &b, out);
    return proj.dot(out);
  };

  Tensor din(in.shape()), dw(w.shape()), db(b.shape());
  kernels::conv2d_backward(in, w, proj.r, &din, &dw, &db);
  CHECK(testutil::fd_max_rel_err(in, din, loss) < 1e-6);
  CHECK(testutil::fd_max_rel_err(w, dw, loss) < 1e-6);
  CHECK(testutil::fd_max_rel_err(b, db, loss) < 1e-6);

  // Gradients accumulate: a second identical call doubles every entry.
  Tensor din2 = din, dw2 = dw, db2 = db;
  kernels::conv2d_backward(in, w, proj.r, &din2, &dw2, &db2);
  for (std::size_t i = 0; i < din.size(); ++i) CHECK(din2[i] == doctest::Approx(2 * din[i]));
  for (std::size_t i = 0; i < dw.size(); ++i) CHECK(dw2[i] == doctest::Approx(2 * dw[i]));
}

TEST_CASE("linear matches a hand matmul and the serial reference") {
  Rng rng(13);
  const Tensor in = random_tensor({5, 7}, rng);
  const Tensor w = random_tensor({7, 4}, rng);
  const Tensor b = random_tensor({4}, rng);
  Tensor out, out_ref;
  kernels::linear(in, w, &b, out);
  ref::linear(in, w, &b, out_ref);
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 4; ++o) {
      double acc = b.at(o);
      for (int i = 0; i < 7; ++i) acc += in.at(r, i) * w.at(i, o);
      CHECK(out.at(r, o) == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK(testutil::bit_equal(out, out_ref));
}

TEST_CASE("linear_backward matches finite differences") {
  Rng rng(14);
  Tensor in = random_tensor({4, 6}, rng);
  Tensor w = random_tensor({6, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor probe;
  kernels::linear(in, w, &b, probe);
  testutil::Projection proj(probe, rng);
  const auto loss = [&] {
    Tensor out;
    kernels::linear(in, w, &b, out);
    return proj.dot(out);
  };
  Tensor din(in.shape()), dw(w.shape()), db(b.shape());
  kernels::linear_backward(in, w, proj.r, &din, &dw, &db);
  CHECK(testutil::fd_max_rel_err(in, din, loss) < 1e-6);
  CHECK(testutil::fd_max_rel_err(w, dw, loss) < 1e-6);
  CHECK(testutil::fd_max_rel_err(b, db, loss) < 1e-6);
}

TEST_CASE("adaptive_avg_pool averages the documented bins") {
  Rng rng(15);
  const Tensor in = random_tensor({2, 3, 8, 8}, rng);
  Tensor out;
  kernels::adaptive_avg_pool(in, 4, 4, out);
  // Even split: each output is the mean of its 2x2 block.
  for (int ni = 0; ni < 2; ++ni)
    for (int ci = 0; ci < 3; ++ci)
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
          const double want = 0.25 * (in.at(ni, ci, 2 * oy, 2 * ox) +
                                      in.at(ni, ci, 2 * oy, 2 * ox + 1) +
                                      in.at(ni, ci, 2 * oy + 1, 2 * ox) +
                                      in.at(ni, ci, 2 * oy + 1, 2 * ox + 1));
          CHECK(out.at(ni, ci, oy, ox) == doctest::Approx(want).epsilon(1e-12));
        }

  // Non-divisible case agrees with the serial reference bit-for-bit and
  // with the bin formula floor(i*H/oh) .. ceil((i+1)*H/oh).
  const Tensor odd = random_tensor({1, 2, 7, 5}, rng);
  Tensor o1, o2;
  kernels::adaptive_avg_pool(odd, 3, 2, o1);
  ref::adaptive_avg_pool(odd, 3, 2, o2);
  CHECK(testutil::bit_equal(o1, o2));
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      const int y0 = oy * 7 / 3, y1 = ((oy + 1) * 7 + 2) / 3;
      const int x0 = ox * 5 / 2, x1 = ((ox + 1) * 5 + 1) / 2;
      double acc = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) acc += odd.at(0, 1, y, x);
      CHECK(o1.at(0, 1, oy, ox) ==
            doctest::Approx(acc / ((y1 - y0) * (x1 - x0))).epsilon(1e-12));
    }

  // Pooling a constant plane is the identity on the value.
  Tensor constant({1, 1, 9, 9}, 0.37);
  Tensor pooled;
  kernels::adaptive_avg_pool(constant, 4, 4, pooled);
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == doctest::Approx(0.37));
}

TEST_CASE("adaptive_avg_pool backward is the exact adjoint") {
  Rng rng(16);
  Tensor in = random_tensor({1, 2, 7, 6}, rng);
  Tensor probe;
  kernels::adaptive_avg_pool(in, 3, 3, probe);
  testutil::Projection proj(probe, rng);
  const auto loss = [&] {
    Tensor out;
    kernels::adaptive_avg_pool(in, 3, 3, out);
    return proj.dot(out);
  };
  Tensor din(in.shape());
  kernels::adaptive_avg_pool_backward(proj.r, 7, 6, din);
  CHECK(testutil::fd_max_rel_err(in, din, loss) < 1e-6);
}

TEST_CASE("upsample_nearest picks floor-scaled sources") {
  Rng rng(17);
  const Tensor in = random_tensor({1, 2, 3, 3}, rng);
  Tensor out;
  kernels::upsample_nearest(in, 6, 6, out);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        CHECK(out.at(0, c, y, x) == in.at(0, c, y * 3 / 6, x * 3 / 6));

  Tensor din(std::vector<int>{1, 2, 3, 3});
  testutil::Projection proj(out, rng);
  kernels::upsample_nearest_backward(proj.r, 3, 3, din);
  Tensor inm = in;
  const auto loss = [&] {
    Tensor o;
    kernels::upsample_nearest(inm, 6, 6, o);
    return proj.dot(o);
  };
  CHECK(testutil::fd_max_rel_err(inm, din, loss) < 1e-6);
}

TEST_CASE("upsample_bilinear: identity at equal size, constant preservation, reference parity") {
  Rng rng(18);
  const Tensor in = random_tensor({2, 2, 5, 7}, rng);
  Tensor same;
  kernels::upsample_bilinear(in, 5, 7, same);
  CHECK(testutil::bit_equal(same, in));

  Tensor constant({1, 1, 4, 4}, -0.83);
  Tensor up;
  kernels::upsample_bilinear(constant, 9, 13, up);
  for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(-0.83));

  Tensor big, big_ref;
  kernels::upsample_bilinear(in, 11, 9, big);
  ref::upsample_bilinear(in, 11, 9, big_ref);
  CHECK(testutil::bit_equal(big, big_ref));
}

TEST_CASE("upsample_bilinear backward is the exact adjoint") {
  Rng rng(19);
  Tensor in = random_tensor({1, 2, 4, 5}, rng);
  Tensor probe;
  kernels::upsample_bilinear(in, 9, 7, probe);
  testutil::Projection proj(probe, rng);
  const auto loss = [&] {
    Tensor o;
    kernels::upsample_bilinear(in, 9, 7, o);
    return proj.dot(o);
  };
  Tensor din(in.shape());
  kernels::upsample_bilinear_backward(proj.r, 4, 5, din);
  CHECK(testutil::fd_max_rel_err(in, din, loss) < 1e-6);
}

TEST_CASE("scalar activation gradients match finite differences") {
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0}) {
    const double h = 1e-6;
    const double g_fd = (kernels::gelu(x + h) - kernels::gelu(x - h)) / (2 * h);
    CHECK(kernels::gelu_grad(x) == doctest::Approx(g_fd).epsilon(1e-6));
    const double s_fd = (kernels::silu(x + h) - kernels::silu(x - h)) / (2 * h);
    CHECK(kernels::silu_grad(x) == doctest::Approx(s_fd).epsilon(1e-6));
  }
  CHECK(kernels::sigmoid(0.0) == doctest::Approx(0.5));
  CHECK(kernels::sigmoid(700.0) == doctest::Approx(1.0));
  CHECK(kernels::sigmoid(-700.0) == doctest::Approx(0.0));
  CHECK(kernels::softplus(100.0) == doctest::Approx(100.0));
  CHECK(kernels::softplus(-100.0) == doctest::Approx(std::exp(-100.0)));
  CHECK(kernels::softplus(0.0) == doctest::Approx(std::log(2.0)));
}
