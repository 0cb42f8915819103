#pragma once

#include <cstddef>

// Dense numeric kernels used by the tensor layer. Every kernel exists in two
// variants: a *_serial reference and a dispatching version that may run the
// loop under OpenMP. The parallel variants split work only across independent
// output elements, so for a fixed input they produce bit-identical results to
// the serial reference regardless of thread count. Tests rely on that.

namespace fcraft::kernels {

// Global switch, on by default. Mostly useful for benchmarks; correctness
// does not depend on it.
bool parallel_enabled();
void set_parallel(bool on);

// C (m x n) = op_a(A) * op_b(B), all row-major. ta/tb select a transposed
// read of the stored array: with ta the array A is stored k x m, otherwise
// m x k, and likewise for B.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n,
                   bool ta, bool tb);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool ta, bool tb);

// D(i,j) = squared euclidean distance between row i of P (np x dim) and
// row j of Q (nq x dim).
void pairwise_sqdist_serial(const double* p, const double* q, double* d,
                            std::size_t np, std::size_t nq, std::size_t dim);
void pairwise_sqdist(const double* p, const double* q, double* d,
                     std::size_t np, std::size_t nq, std::size_t dim);

// y[i] = f(x[i]); the dispatching form parallelizes across elements.
template <class F>
void map_serial(const double* x, double* y, std::size_t n, F f) {
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
}

namespace detail {
bool map_parallel_profitable(std::size_t n);
}

template <class F>
void map(const double* x, double* y, std::size_t n, F f) {
  if (!detail::map_parallel_profitable(n)) {
    map_serial(x, y, n, f);
    return;
  }
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    y[i] = f(x[i]);
}

}  // namespace fcraft::kernels
