#pragma once

#include <cstddef>

#ifdef ERPKIT_HAVE_CBLAS
#include <cblas.h>
#endif

namespace erpkit {

// The library parallelizes across models, never inside a kernel; a threaded
// BLAS underneath would reorder reductions and break reproducibility.
inline void pin_blas_single_threaded() {
#ifdef ERPKIT_HAVE_CBLAS
    openblas_set_num_threads(1);
#endif
}

// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major.
// Reduction order is fixed for a given backend and build, which keeps every
// training trajectory reproducible run to run.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc);

namespace detail {

template <typename T>
inline void gemm_fallback(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
                          const T* a, int lda, const T* b, int ldb, T beta, T* c,
                          int ldc) {
    auto a_at = [&](int i, int l) { return trans_a ? a[std::size_t(l) * lda + i] : a[std::size_t(i) * lda + l]; };
    auto b_at = [&](int l, int j) { return trans_b ? b[std::size_t(j) * ldb + l] : b[std::size_t(l) * ldb + j]; };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += double(a_at(i, l)) * double(b_at(l, j));
            T& out = c[std::size_t(i) * ldc + j];
            out = static_cast<T>(alpha * acc + (beta == T(0) ? 0.0 : double(beta) * double(out)));
        }
    }
}

} // namespace detail

#ifdef ERPKIT_HAVE_CBLAS

template <>
inline void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                        const float* a, int lda, const float* b, int ldb, float beta,
                        float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

template <>
inline void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb,
                         double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

#else

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc) {
    detail::gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

#endif

} // namespace erpkit
