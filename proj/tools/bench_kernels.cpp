// Timing comparison between the serial reference kernels and their OpenMP
// dispatching counterparts. Prints one row per (kernel, size) pair.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "fcraft/kernels.hpp"
#include "fcraft/rng.hpp"

namespace {

using clk = std::chrono::steady_clock;

double time_of(int reps, const std::function<void()>& fn) {
  // One warmup, then best of reps.
  fn();
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    auto t0 = clk::now();
    fn();
    auto t1 = clk::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  using namespace fcraft;
  Rng rng(7);

  std::printf("%-22s %10s %12s %12s %8s\n", "kernel", "size", "serial[ms]",
              "parallel[ms]", "speedup");

  for (std::size_t n : {64, 128, 256}) {
    std::vector<double> a(n * n), b(n * n), c(n * n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const int reps = n <= 128 ? 20 : 5;
    double ts = time_of(reps, [&] {
      kernels::matmul_serial(a.data(), b.data(), c.data(), n, n, n, false, false);
    });
    kernels::set_parallel(true);
    double tp = time_of(reps, [&] {
      kernels::matmul(a.data(), b.data(), c.data(), n, n, n, false, false);
    });
    std::printf("%-22s %7zu^3 %12.3f %12.3f %7.2fx\n", "matmul", n, ts * 1e3,
                tp * 1e3, ts / tp);
  }

  for (std::size_t n : {512, 1024}) {
    const std::size_t dim = 64;
    std::vector<double> p(n * dim), q(n * dim), d(n * n);
    for (auto& v : p) v = rng.normal();
    for (auto& v : q) v = rng.normal();
    double ts = time_of(5, [&] {
      kernels::pairwise_sqdist_serial(p.data(), q.data(), d.data(), n, n, dim);
    });
    double tp = time_of(5, [&] {
      kernels::pairwise_sqdist(p.data(), q.data(), d.data(), n, n, dim);
    });
    std::printf("%-22s %8zux%zu %10.3f %12.3f %7.2fx\n", "pairwise_sqdist", n,
                dim, ts * 1e3, tp * 1e3, ts / tp);
  }

  {
    const std::size_t n = 1 << 22;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.normal();
    double ts = time_of(5, [&] {
      kernels::map_serial(x.data(), y.data(), n,
                          [](double v) { return std::tanh(v); });
    });
    double tp = time_of(5, [&] {
      kernels::map(x.data(), y.data(), n, [](double v) { return std::tanh(v); });
    });
    std::printf("%-22s %10zu %12.3f %12.3f %7.2fx\n", "map(tanh)", n, ts * 1e3,
                tp * 1e3, ts / tp);
  }
  return 0;
}
