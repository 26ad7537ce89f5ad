#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Dense f64 inner-loop kernels. Every kernel exists as a scalar reference
// implementation plus SIMD variants (AVX2 on x86-64, NEON on aarch64); the
// active set is selected once at runtime from CPU capabilities and can be
// pinned with the RASTG_KERNELS environment variable (scalar|avx2|neon|auto).
//
// GEMM convention: row-major, C is accumulated into (C += op(A)*op(B)).
// lda/ldb/ldc are row strides in elements.

namespace rastg::kernels {

struct Ops {
    const char* name;

    // y[i] = a[i] + b[i]
    void (*add)(const double* a, const double* b, double* y, std::size_t n);
    // y[i] = a[i] - b[i]
    void (*sub)(const double* a, const double* b, double* y, std::size_t n);
    // y[i] = a[i] * b[i]
    void (*mul)(const double* a, const double* b, double* y, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x[i] *= alpha
    void (*scale)(double alpha, double* x, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    // y[i] = max(x[i], 0)
    void (*relu)(const double* x, double* y, std::size_t n);
    // dx[i] += dy[i] * (out[i] > 0), with out the forward ReLU output
    void (*relu_backward)(const double* out, const double* dy, double* dx, std::size_t n);

    // C(MxN) += A(MxK) * B(KxN)
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C(MxN) += A(KxM)^T * B(KxN)
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C(MxN) += A(MxK) * B(NxK)^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
};

const Ops& scalar_ops();

// Kernel sets compiled into this binary and usable on this CPU.
std::vector<const Ops*> available_backends();

// The runtime-selected set. Selection happens once; RASTG_KERNELS overrides.
const Ops& active();

std::string active_backend_name();

} // namespace rastg::kernels
