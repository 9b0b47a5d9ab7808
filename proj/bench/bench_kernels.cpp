// Timing table: OpenMP kernels vs. their serial reference implementations.
// Each kernel runs on identical inputs; the max element difference is printed
// alongside the speedup as a cheap agreement check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "trace/kernels.hpp"
#include "trace/rng.hpp"
#include "trace/tensor.hpp"

using trace::Rng;
using trace::Tensor;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm up
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / repeats;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
  std::printf("%-22s %10.3f ms %10.3f ms %8.2fx %12.3e\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
  Rng rng(42);
  const int repeats = 5;
  std::printf("%-22s %13s %13s %9s %12s\n", "kernel", "serial", "openmp", "speedup", "max diff");

  {
    const Tensor in = random_tensor({2, 16, 64, 64}, rng);
    const Tensor w = random_tensor({16, 16, 3, 3}, rng);
    const Tensor b = random_tensor({16}, rng);
    Tensor out_ref, out_par;
    const double s = time_ms([&] { trace::ref::conv2d(in, w, &b, out_ref); }, repeats);
    const double p = time_ms([&] { trace::kernels::conv2d(in, w, &b, out_par); }, repeats);
    report("conv2d 16x16x3x3", s, p, max_diff(out_ref, out_par));
  }
  {
    const Tensor in = random_tensor({4096, 128}, rng);
    const Tensor w = random_tensor({128, 128}, rng);
    const Tensor b = random_tensor({128}, rng);
    Tensor out_ref, out_par;
    const double s = time_ms([&] { trace::ref::linear(in, w, &b, out_ref); }, repeats);
    const double p = time_ms([&] { trace::kernels::linear(in, w, &b, out_par); }, repeats);
    report("linear 4096x128x128", s, p, max_diff(out_ref, out_par));
  }
  {
    const Tensor in = random_tensor({2, 32, 128, 128}, rng);
    Tensor out_ref, out_par;
    const double s = time_ms([&] { trace::ref::adaptive_avg_pool(in, 16, 16, out_ref); }, repeats);
    const double p = time_ms([&] { trace::kernels::adaptive_avg_pool(in, 16, 16, out_par); },
                             repeats);
    report("avg_pool 128->16", s, p, max_diff(out_ref, out_par));
  }
  {
    const Tensor in = random_tensor({2, 32, 32, 32}, rng);
    Tensor out_ref, out_par;
    const double s = time_ms([&] { trace::ref::upsample_bilinear(in, 128, 128, out_ref); }, repeats);
    const double p =
        time_ms([&] { trace::kernels::upsample_bilinear(in, 128, 128, out_par); }, repeats);
    report("bilinear 32->128", s, p, max_diff(out_ref, out_par));
  }
  return 0;
}
