// AVX2+FMA kernel set. This translation unit is compiled with -mavx2 -mfma
// on x86-64 only; callers reach it through the runtime dispatch table, which
// checks CPU support before handing out these pointers.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "rastg/kernels.hpp"

namespace rastg::kernels {
namespace {

void add_avx2(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_avx2(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_avx2(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double alpha, double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return hsum(acc) + tail;
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double tail = 0;
    for (; i < n; ++i) tail += x[i];
    return hsum(acc) + tail;
}

void relu_avx2(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* out, const double* dy, double* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(out + i), zero, _CMP_GT_OQ);
        __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
    }
    for (; i < n; ++i) {
        if (out[i] > 0.0) dx[i] += dy[i];
    }
}

// 4x8 register tile: 8 accumulators held across the full K loop.
inline void gemm_tile4x8(std::size_t k,
                         const double* a, std::size_t lda,
                         const double* b, std::size_t ldb,
                         double* c, std::size_t ldc) {
    __m256d c00 = _mm256_loadu_pd(c + 0 * ldc), c01 = _mm256_loadu_pd(c + 0 * ldc + 4);
    __m256d c10 = _mm256_loadu_pd(c + 1 * ldc), c11 = _mm256_loadu_pd(c + 1 * ldc + 4);
    __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        __m256d a0 = _mm256_set1_pd(a[0 * lda + p]);
        c00 = _mm256_fmadd_pd(a0, b0, c00);
        c01 = _mm256_fmadd_pd(a0, b1, c01);
        __m256d a1 = _mm256_set1_pd(a[1 * lda + p]);
        c10 = _mm256_fmadd_pd(a1, b0, c10);
        c11 = _mm256_fmadd_pd(a1, b1, c11);
        __m256d a2 = _mm256_set1_pd(a[2 * lda + p]);
        c20 = _mm256_fmadd_pd(a2, b0, c20);
        c21 = _mm256_fmadd_pd(a2, b1, c21);
        __m256d a3 = _mm256_set1_pd(a[3 * lda + p]);
        c30 = _mm256_fmadd_pd(a3, b0, c30);
        c31 = _mm256_fmadd_pd(a3, b1, c31);
    }
    _mm256_storeu_pd(c + 0 * ldc, c00);
    _mm256_storeu_pd(c + 0 * ldc + 4, c01);
    _mm256_storeu_pd(c + 1 * ldc, c10);
    _mm256_storeu_pd(c + 1 * ldc + 4, c11);
    _mm256_storeu_pd(c + 2 * ldc, c20);
    _mm256_storeu_pd(c + 2 * ldc + 4, c21);
    _mm256_storeu_pd(c + 3 * ldc, c30);
    _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// 1-row x 8-col tile for the M remainder.
inline void gemm_tile1x8(std::size_t k,
                         const double* a,
                         const double* b, std::size_t ldb,
                         double* c) {
    __m256d c0 = _mm256_loadu_pd(c), c1 = _mm256_loadu_pd(c + 4);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(a[p]);
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), c0);
        c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + 4), c1);
    }
    _mm256_storeu_pd(c, c0);
    _mm256_storeu_pd(c + 4, c1);
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    const std::size_t n8 = n - n % 8;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        for (std::size_t j = 0; j < n8; j += 8) {
            gemm_tile4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        }
    }
    for (; i < m; ++i) {
        for (std::size_t j = 0; j < n8; j += 8) {
            gemm_tile1x8(k, a + i * lda, b + j, ldb, c + i * ldc + j);
        }
    }
    if (n8 < n) {
        // column remainder: axpy down the K dimension
        for (std::size_t r = 0; r < m; ++r) {
            const double* arow = a + r * lda;
            double* crow = c + r * ldc + n8;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + p * ldb + n8;
                for (std::size_t j = 0; j < n - n8; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    // C += A^T B, A stored (k x m). Outer-product accumulation over p,
    // vectorized along N.
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * lda;
        const double* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            axpy_avx2(arow[i], brow, c + i * ldc, n);
        }
    }
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    // C += A B^T, B stored (n x k). Dot-product form.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] += dot_avx2(arow, b + j * ldb, k);
        }
    }
}

} // namespace

const Ops& avx2_ops() {
    static const Ops ops = {
        "avx2",
        add_avx2,
        sub_avx2,
        mul_avx2,
        axpy_avx2,
        scale_avx2,
        dot_avx2,
        sum_avx2,
        relu_avx2,
        relu_backward_avx2,
        gemm_nn_avx2,
        gemm_tn_avx2,
        gemm_nt_avx2,
    };
    return ops;
}

} // namespace rastg::kernels

#endif // x86-64
