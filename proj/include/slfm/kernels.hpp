#pragma once

#include <cstdint>

// Hot inner loops of the tensor engine. Every kernel exists twice with an
// identical signature: a plain serial reference under kernels::serial and an
// OpenMP version under kernels::par. Parallel loops only ever write disjoint
// output elements and keep each element's accumulation order fixed, so both
// variants produce bit-identical results at any thread count. The dispatching
// wrappers at namespace scope pick the active backend.

namespace slfm::kernels {

enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);

// Thread count for the parallel backend; 0 keeps the OpenMP default.
void set_threads(int n);

#define SLFM_KERNEL_DECLS                                                                     \
    /* c[M,N] = a[M,K] * b[K,N] */                                                            \
    void matmul(const double* a, const double* b, double* c, int M, int K, int N);            \
    /* c[K,N] = a^T * b with a[M,K], b[M,N] */                                                \
    void matmul_tn(const double* a, const double* b, double* c, int M, int K, int N);         \
    /* c[M,K] = a * b^T with a[M,N], b[K,N] */                                                \
    void matmul_nt(const double* a, const double* b, double* c, int M, int N, int K);         \
    /* cross-correlation, zero padding; y[Cout,To] */                                         \
    void conv1d_forward(const double* x, const double* w, const double* bias, double* y,      \
                        int Cin, int T, int Cout, int K, int stride, int pad, int To);        \
    void conv1d_backward_input(const double* gy, const double* w, double* gx, int Cin, int T, \
                               int Cout, int K, int stride, int pad, int To);                 \
    void conv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin,       \
                                int T, int Cout, int K, int stride, int pad, int To);         \
    /* transposed conv; y[Cout,To], To = T*stride, crop = leading overhang removed */         \
    void tconv1d_forward(const double* x, const double* w, const double* bias, double* y,     \
                         int Cin, int T, int Cout, int K, int stride, int crop, int To);      \
    void tconv1d_backward_input(const double* gy, const double* w, double* gx, int Cin,       \
                                int T, int Cout, int K, int stride, int crop, int To);        \
    void tconv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin,      \
                                 int T, int Cout, int K, int stride, int crop, int To);       \
    /* per-channel 2-D conv over (S,T), same padding, odd kernels */                          \
    void dwconv2d_forward(const double* x, const double* w, double* y, int C, int S, int T,   \
                          int Ks, int Kt);                                                    \
    void dwconv2d_backward_input(const double* gy, const double* w, double* gx, int C,        \
                                 int S, int T, int Ks, int Kt);                               \
    void dwconv2d_backward_kernel(const double* gy, const double* x, double* gw, int C,       \
                                  int S, int T, int Ks, int Kt);

namespace serial {
SLFM_KERNEL_DECLS
}

namespace par {
SLFM_KERNEL_DECLS
}

// Dispatching entry points used by the ops layer.
SLFM_KERNEL_DECLS

#undef SLFM_KERNEL_DECLS

}  // namespace slfm::kernels
