#include "fcraft/kernels.hpp"

#include <atomic>

namespace fcraft::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Rough work thresholds below which forking threads costs more than it saves.
constexpr std::size_t kMatmulMinWork = 32768;
constexpr std::size_t kMapMinWork = 16384;
constexpr std::size_t kPairwiseMinWork = 32768;
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

bool detail::map_parallel_profitable(std::size_t n) {
  return parallel_enabled() && n >= kMapMinWork;
}

namespace {

// One output row of C. The accumulation order over kk is fixed per element,
// which keeps the parallel path bit-identical to the serial one.
inline void matmul_row(const double* a, const double* b, double* c,
                       std::size_t i, std::size_t m, std::size_t k,
                       std::size_t n, bool ta, bool tb) {
  double* crow = c + i * n;
  for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
  if (!ta && !tb) {
    const double* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  } else if (!ta && tb) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  } else if (ta && !tb) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[kk * m + i];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[kk * m + i] * b[j * k + kk];
      crow[j] = acc;
    }
  }
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n,
                   bool ta, bool tb) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c, i, m, k, n, ta, tb);
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool ta, bool tb) {
  if (!parallel_enabled() || m * k * n < kMatmulMinWork) {
    matmul_serial(a, b, c, m, k, n, ta, tb);
    return;
  }
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i)
    matmul_row(a, b, c, static_cast<std::size_t>(i), m, k, n, ta, tb);
}

namespace {

inline void sqdist_row(const double* p, const double* q, double* d,
                       std::size_t i, std::size_t nq, std::size_t dim) {
  const double* prow = p + i * dim;
  double* drow = d + i * nq;
  for (std::size_t j = 0; j < nq; ++j) {
    const double* qrow = q + j * dim;
    double acc = 0.0;
    for (std::size_t t = 0; t < dim; ++t) {
      const double diff = prow[t] - qrow[t];
      acc += diff * diff;
    }
    drow[j] = acc;
  }
}

}  // namespace

void pairwise_sqdist_serial(const double* p, const double* q, double* d,
                            std::size_t np, std::size_t nq, std::size_t dim) {
  for (std::size_t i = 0; i < np; ++i) sqdist_row(p, q, d, i, nq, dim);
}

void pairwise_sqdist(const double* p, const double* q, double* d,
                     std::size_t np, std::size_t nq, std::size_t dim) {
  if (!parallel_enabled() || np * nq * dim < kPairwiseMinWork) {
    pairwise_sqdist_serial(p, q, d, np, nq, dim);
    return;
  }
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(np); ++i)
    sqdist_row(p, q, d, static_cast<std::size_t>(i), nq, dim);
}

}  // namespace fcraft::kernels
