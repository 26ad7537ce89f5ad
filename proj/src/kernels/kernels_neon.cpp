// NEON kernel set for aarch64 (2-wide f64). Mirrors the AVX2 variants with
// narrower vectors; NEON is baseline on aarch64 so no runtime CPU check is
// needed beyond the architecture itself.

#if defined(__aarch64__)

#include <arm_neon.h>

#include "rastg/kernels.hpp"

namespace rastg::kernels {
namespace {

void add_neon(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_neon(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_neon(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(double alpha, double* x, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(av, vld1q_f64(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return vaddvq_f64(vaddq_f64(acc0, acc1)) + tail;
}

double sum_neon(const double* x, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
        acc1 = vaddq_f64(acc1, vld1q_f64(x + i + 2));
    }
    double tail = 0;
    for (; i < n; ++i) tail += x[i];
    return vaddvq_f64(vaddq_f64(acc0, acc1)) + tail;
}

void relu_neon(const double* x, double* y, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmaxq_f64(zero, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_neon(const double* out, const double* dy, double* dx, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t mask = vcgtq_f64(vld1q_f64(out + i), zero);
        float64x2_t g = vreinterpretq_f64_u64(
            vandq_u64(mask, vreinterpretq_u64_f64(vld1q_f64(dy + i))));
        vst1q_f64(dx + i, vaddq_f64(vld1q_f64(dx + i), g));
    }
    for (; i < n; ++i) {
        if (out[i] > 0.0) dx[i] += dy[i];
    }
}

// 4x4 register tile (8 accumulators of 2 doubles).
inline void gemm_tile4x4(std::size_t k,
                         const double* a, std::size_t lda,
                         const double* b, std::size_t ldb,
                         double* c, std::size_t ldc) {
    float64x2_t c00 = vld1q_f64(c + 0 * ldc), c01 = vld1q_f64(c + 0 * ldc + 2);
    float64x2_t c10 = vld1q_f64(c + 1 * ldc), c11 = vld1q_f64(c + 1 * ldc + 2);
    float64x2_t c20 = vld1q_f64(c + 2 * ldc), c21 = vld1q_f64(c + 2 * ldc + 2);
    float64x2_t c30 = vld1q_f64(c + 3 * ldc), c31 = vld1q_f64(c + 3 * ldc + 2);
    for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t b0 = vld1q_f64(b + p * ldb);
        const float64x2_t b1 = vld1q_f64(b + p * ldb + 2);
        float64x2_t a0 = vdupq_n_f64(a[0 * lda + p]);
        c00 = vfmaq_f64(c00, a0, b0);
        c01 = vfmaq_f64(c01, a0, b1);
        float64x2_t a1 = vdupq_n_f64(a[1 * lda + p]);
        c10 = vfmaq_f64(c10, a1, b0);
        c11 = vfmaq_f64(c11, a1, b1);
        float64x2_t a2 = vdupq_n_f64(a[2 * lda + p]);
        c20 = vfmaq_f64(c20, a2, b0);
        c21 = vfmaq_f64(c21, a2, b1);
        float64x2_t a3 = vdupq_n_f64(a[3 * lda + p]);
        c30 = vfmaq_f64(c30, a3, b0);
        c31 = vfmaq_f64(c31, a3, b1);
    }
    vst1q_f64(c + 0 * ldc, c00);
    vst1q_f64(c + 0 * ldc + 2, c01);
    vst1q_f64(c + 1 * ldc, c10);
    vst1q_f64(c + 1 * ldc + 2, c11);
    vst1q_f64(c + 2 * ldc, c20);
    vst1q_f64(c + 2 * ldc + 2, c21);
    vst1q_f64(c + 3 * ldc, c30);
    vst1q_f64(c + 3 * ldc + 2, c31);
}

void gemm_nn_neon(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        for (std::size_t j = 0; j < n4; j += 4) {
            gemm_tile4x4(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        }
    }
    // row and column remainders: axpy down K
    for (std::size_t r = i; r < m; ++r) {
        const double* arow = a + r * lda;
        double* crow = c + r * ldc;
        for (std::size_t p = 0; p < k; ++p) axpy_neon(arow[p], b + p * ldb, crow, n4);
    }
    if (n4 < n) {
        for (std::size_t r = 0; r < m; ++r) {
            const double* arow = a + r * lda;
            double* crow = c + r * ldc + n4;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + p * ldb + n4;
                for (std::size_t j = 0; j < n - n4; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

void gemm_tn_neon(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * lda;
        const double* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            axpy_neon(arow[i], brow, c + i * ldc, n);
        }
    }
}

void gemm_nt_neon(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] += dot_neon(arow, b + j * ldb, k);
        }
    }
}

} // namespace

const Ops& neon_ops() {
    static const Ops ops = {
        "neon",
        add_neon,
        sub_neon,
        mul_neon,
        axpy_neon,
        scale_neon,
        dot_neon,
        sum_neon,
        relu_neon,
        relu_backward_neon,
        gemm_nn_neon,
        gemm_tn_neon,
        gemm_nt_neon,
    };
    return ops;
}

} // namespace rastg::kernels

#endif // aarch64
