#include "slfm/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace slfm::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

// The loop bodies are shared: SLFM_PAR expands to an OpenMP pragma in the
// parallel build of the translation unit and to nothing in the serial one.

#define SLFM_DEFINE_KERNELS(NS, SLFM_PAR)                                                     \
    namespace NS {                                                                            \
                                                                                              \
    void matmul(const double* a, const double* b, double* c, int M, int K, int N) {           \
        SLFM_PAR                                                                              \
        for (int i = 0; i < M; ++i) {                                                         \
            double* ci = c + (int64_t)i * N;                                                  \
            for (int j = 0; j < N; ++j) ci[j] = 0.0;                                          \
            const double* ai = a + (int64_t)i * K;                                            \
            for (int k = 0; k < K; ++k) {                                                     \
                const double aik = ai[k];                                                     \
                const double* bk = b + (int64_t)k * N;                                        \
                for (int j = 0; j < N; ++j) ci[j] += aik * bk[j];                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void matmul_tn(const double* a, const double* b, double* c, int M, int K, int N) {        \
        SLFM_PAR                                                                              \
        for (int i = 0; i < K; ++i) {                                                         \
            double* ci = c + (int64_t)i * N;                                                  \
            for (int j = 0; j < N; ++j) ci[j] = 0.0;                                          \
            for (int m = 0; m < M; ++m) {                                                     \
                const double ami = a[(int64_t)m * K + i];                                     \
                const double* bm = b + (int64_t)m * N;                                        \
                for (int j = 0; j < N; ++j) ci[j] += ami * bm[j];                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void matmul_nt(const double* a, const double* b, double* c, int M, int N, int K) {        \
        SLFM_PAR                                                                              \
        for (int i = 0; i < M; ++i) {                                                         \
            const double* ai = a + (int64_t)i * N;                                            \
            double* ci = c + (int64_t)i * K;                                                  \
            for (int j = 0; j < K; ++j) {                                                     \
                const double* bj = b + (int64_t)j * N;                                        \
                double s = 0.0;                                                               \
                for (int n = 0; n < N; ++n) s += ai[n] * bj[n];                               \
                ci[j] = s;                                                                    \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void conv1d_forward(const double* x, const double* w, const double* bias, double* y,      \
                        int Cin, int T, int Cout, int K, int stride, int pad, int To) {       \
        SLFM_PAR                                                                              \
        for (int co = 0; co < Cout; ++co) {                                                   \
            double* yc = y + (int64_t)co * To;                                                \
            const double b0 = bias ? bias[co] : 0.0;                                          \
            for (int o = 0; o < To; ++o) {                                                    \
                double s = b0;                                                                \
                const int t0 = o * stride - pad;                                              \
                for (int ci = 0; ci < Cin; ++ci) {                                            \
                    const double* xc = x + (int64_t)ci * T;                                   \
                    const double* wc = w + ((int64_t)co * Cin + ci) * K;                      \
                    const int klo = t0 < 0 ? -t0 : 0;                                         \
                    const int khi = t0 + K > T ? T - t0 : K;                                  \
                    for (int k = klo; k < khi; ++k) s += xc[t0 + k] * wc[k];                  \
                }                                                                             \
                yc[o] = s;                                                                    \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void conv1d_backward_input(const double* gy, const double* w, double* gx, int Cin,        \
                               int T, int Cout, int K, int stride, int pad, int To) {         \
        SLFM_PAR                                                                              \
        for (int ci = 0; ci < Cin; ++ci) {                                                    \
            double* gxc = gx + (int64_t)ci * T;                                               \
            for (int t = 0; t < T; ++t) gxc[t] = 0.0;                                         \
            for (int co = 0; co < Cout; ++co) {                                               \
                const double* gyc = gy + (int64_t)co * To;                                    \
                const double* wc = w + ((int64_t)co * Cin + ci) * K;                          \
                for (int o = 0; o < To; ++o) {                                                \
                    const int t0 = o * stride - pad;                                          \
                    const int klo = t0 < 0 ? -t0 : 0;                                         \
                    const int khi = t0 + K > T ? T - t0 : K;                                  \
                    const double g = gyc[o];                                                  \
                    for (int k = klo; k < khi; ++k) gxc[t0 + k] += g * wc[k];                 \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void conv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin,       \
                                int T, int Cout, int K, int stride, int pad, int To) {        \
        SLFM_PAR                                                                              \
        for (int co = 0; co < Cout; ++co) {                                                   \
            const double* gyc = gy + (int64_t)co * To;                                        \
            for (int ci = 0; ci < Cin; ++ci) {                                                \
                const double* xc = x + (int64_t)ci * T;                                       \
                double* gwc = gw + ((int64_t)co * Cin + ci) * K;                              \
                for (int k = 0; k < K; ++k) {                                                 \
                    double s = 0.0;                                                           \
                    for (int o = 0; o < To; ++o) {                                            \
                        const int t = o * stride - pad + k;                                   \
                        if (t >= 0 && t < T) s += gyc[o] * xc[t];                             \
                    }                                                                         \
                    gwc[k] = s;                                                               \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void tconv1d_forward(const double* x, const double* w, const double* bias, double* y,     \
                         int Cin, int T, int Cout, int K, int stride, int crop, int To) {     \
        SLFM_PAR                                                                              \
        for (int co = 0; co < Cout; ++co) {                                                   \
            double* yc = y + (int64_t)co * To;                                                \
            const double b0 = bias ? bias[co] : 0.0;                                          \
            for (int o = 0; o < To; ++o) {                                                    \
                double s = b0;                                                                \
                const int of = o + crop; /* position in the uncropped output */               \
                for (int ci = 0; ci < Cin; ++ci) {                                            \
                    const double* xc = x + (int64_t)ci * T;                                   \
                    const double* wc = w + ((int64_t)ci * Cout + co) * K;                     \
                    /* contributions from i with 0 <= of - i*stride < K */                    \
                    int ilo = (of - K + stride) / stride;                                     \
                    if (ilo < 0) ilo = 0;                                                     \
                    int ihi = of / stride;                                                    \
                    if (ihi > T - 1) ihi = T - 1;                                             \
                    for (int i = ilo; i <= ihi; ++i) {                                        \
                        const int k = of - i * stride;                                        \
                        if (k >= 0 && k < K) s += xc[i] * wc[k];                              \
                    }                                                                         \
                }                                                                             \
                yc[o] = s;                                                                    \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void tconv1d_backward_input(const double* gy, const double* w, double* gx, int Cin,       \
                                int T, int Cout, int K, int stride, int crop, int To) {       \
        SLFM_PAR                                                                              \
        for (int ci = 0; ci < Cin; ++ci) {                                                    \
            double* gxc = gx + (int64_t)ci * T;                                               \
            for (int i = 0; i < T; ++i) {                                                     \
                double s = 0.0;                                                               \
                for (int co = 0; co < Cout; ++co) {                                           \
                    const double* gyc = gy + (int64_t)co * To;                                \
                    const double* wc = w + ((int64_t)ci * Cout + co) * K;                     \
                    for (int k = 0; k < K; ++k) {                                             \
                        const int o = i * stride + k - crop;                                  \
                        if (o >= 0 && o < To) s += gyc[o] * wc[k];                            \
                    }                                                                         \
                }                                                                             \
                gxc[i] = s;                                                                   \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void tconv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin,      \
                                 int T, int Cout, int K, int stride, int crop, int To) {      \
        SLFM_PAR                                                                              \
        for (int ci = 0; ci < Cin; ++ci) {                                                    \
            const double* xc = x + (int64_t)ci * T;                                           \
            for (int co = 0; co < Cout; ++co) {                                               \
                const double* gyc = gy + (int64_t)co * To;                                    \
                double* gwc = gw + ((int64_t)ci * Cout + co) * K;                             \
                for (int k = 0; k < K; ++k) {                                                 \
                    double s = 0.0;                                                           \
                    for (int i = 0; i < T; ++i) {                                             \
                        const int o = i * stride + k - crop;                                  \
                        if (o >= 0 && o < To) s += xc[i] * gyc[o];                            \
                    }                                                                         \
                    gwc[k] = s;                                                               \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void dwconv2d_forward(const double* x, const double* w, double* y, int C, int S, int T,   \
                          int Ks, int Kt) {                                                   \
        const int rs = Ks / 2, rt = Kt / 2;                                                   \
        SLFM_PAR                                                                              \
        for (int c = 0; c < C; ++c) {                                                         \
            const double* xc = x + (int64_t)c * S * T;                                        \
            const double* wc = w + (int64_t)c * Ks * Kt;                                      \
            double* yc = y + (int64_t)c * S * T;                                              \
            for (int s = 0; s < S; ++s) {                                                     \
                for (int t = 0; t < T; ++t) {                                                 \
                    double acc = 0.0;                                                         \
                    for (int ks = 0; ks < Ks; ++ks) {                                         \
                        const int si = s + ks - rs;                                           \
                        if (si < 0 || si >= S) continue;                                      \
                        for (int kt = 0; kt < Kt; ++kt) {                                     \
                            const int ti = t + kt - rt;                                       \
                            if (ti < 0 || ti >= T) continue;                                  \
                            acc += xc[(int64_t)si * T + ti] * wc[ks * Kt + kt];               \
                        }                                                                     \
                    }                                                                         \
                    yc[(int64_t)s * T + t] = acc;                                             \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void dwconv2d_backward_input(const double* gy, const double* w, double* gx, int C,        \
                                 int S, int T, int Ks, int Kt) {                              \
        const int rs = Ks / 2, rt = Kt / 2;                                                   \
        SLFM_PAR                                                                              \
        for (int c = 0; c < C; ++c) {                                                         \
            const double* gyc = gy + (int64_t)c * S * T;                                      \
            const double* wc = w + (int64_t)c * Ks * Kt;                                      \
            double* gxc = gx + (int64_t)c * S * T;                                            \
            for (int s = 0; s < S; ++s) {                                                     \
                for (int t = 0; t < T; ++t) {                                                 \
                    /* adjoint: correlate grad with the flipped kernel */                     \
                    double acc = 0.0;                                                         \
                    for (int ks = 0; ks < Ks; ++ks) {                                         \
                        const int so = s - (ks - rs);                                         \
                        if (so < 0 || so >= S) continue;                                      \
                        for (int kt = 0; kt < Kt; ++kt) {                                     \
                            const int to = t - (kt - rt);                                     \
                            if (to < 0 || to >= T) continue;                                  \
                            acc += gyc[(int64_t)so * T + to] * wc[ks * Kt + kt];              \
                        }                                                                     \
                    }                                                                         \
                    gxc[(int64_t)s * T + t] = acc;                                            \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    void dwconv2d_backward_kernel(const double* gy, const double* x, double* gw, int C,       \
                                  int S, int T, int Ks, int Kt) {                             \
        const int rs = Ks / 2, rt = Kt / 2;                                                   \
        SLFM_PAR                                                                              \
        for (int c = 0; c < C; ++c) {                                                         \
            const double* gyc = gy + (int64_t)c * S * T;                                      \
            const double* xc = x + (int64_t)c * S * T;                                        \
            double* gwc = gw + (int64_t)c * Ks * Kt;                                          \
            for (int ks = 0; ks < Ks; ++ks) {                                                 \
                for (int kt = 0; kt < Kt; ++kt) {                                             \
                    double acc = 0.0;                                                         \
                    for (int s = 0; s < S; ++s) {                                             \
                        const int si = s + ks - rs;                                           \
                        if (si < 0 || si >= S) continue;                                      \
                        for (int t = 0; t < T; ++t) {                                         \
                            const int ti = t + kt - rt;                                       \
                            if (ti < 0 || ti >= T) continue;                                  \
                            acc += gyc[(int64_t)s * T + t] * xc[(int64_t)si * T + ti];        \
                        }                                                                     \
                    }                                                                         \
                    gwc[ks * Kt + kt] = acc;                                                  \
                }                                                                             \
            }                                                                                 \
        }                                                                                     \
    }                                                                                         \
                                                                                              \
    } /* namespace NS */

#define SLFM_OMP_FOR _Pragma("omp parallel for schedule(static)")
#define SLFM_NO_PRAGMA

SLFM_DEFINE_KERNELS(serial, SLFM_NO_PRAGMA)
SLFM_DEFINE_KERNELS(par, SLFM_OMP_FOR)

#undef SLFM_DEFINE_KERNELS
#undef SLFM_OMP_FOR
#undef SLFM_NO_PRAGMA

// Dispatchers. Below ~16k multiply-adds the parallel-region overhead exceeds
// the loop itself, so small calls take the serial path; both paths are
// bit-identical so the cutoff never changes results.
namespace {
constexpr int64_t kMinParallelWork = 16384;
inline bool go_par(int64_t work) {
    return g_backend == Backend::parallel && work >= kMinParallelWork;
}
}  // namespace

#define SLFM_DISPATCH(work, fn, ...)             \
    if (go_par(work))                            \
        par::fn(__VA_ARGS__);                    \
    else                                         \
        serial::fn(__VA_ARGS__)

void matmul(const double* a, const double* b, double* c, int M, int K, int N) {
    SLFM_DISPATCH((int64_t)M * K * N, matmul, a, b, c, M, K, N);
}
void matmul_tn(const double* a, const double* b, double* c, int M, int K, int N) {
    SLFM_DISPATCH((int64_t)M * K * N, matmul_tn, a, b, c, M, K, N);
}
void matmul_nt(const double* a, const double* b, double* c, int M, int N, int K) {
    SLFM_DISPATCH((int64_t)M * K * N, matmul_nt, a, b, c, M, N, K);
}
void conv1d_forward(const double* x, const double* w, const double* bias, double* y, int Cin,
                    int T, int Cout, int K, int stride, int pad, int To) {
    SLFM_DISPATCH((int64_t)Cout * To * Cin * K, conv1d_forward, x, w, bias, y, Cin, T, Cout, K,
                  stride, pad, To);
}
void conv1d_backward_input(const double* gy, const double* w, double* gx, int Cin, int T,
                           int Cout, int K, int stride, int pad, int To) {
    SLFM_DISPATCH((int64_t)Cout * To * Cin * K, conv1d_backward_input, gy, w, gx, Cin, T, Cout, K,
                  stride, pad, To);
}
void conv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin, int T,
                            int Cout, int K, int stride, int pad, int To) {
    SLFM_DISPATCH((int64_t)Cout * To * Cin * K, conv1d_backward_kernel, gy, x, gw, Cin, T, Cout,
                  K, stride, pad, To);
}
void tconv1d_forward(const double* x, const double* w, const double* bias, double* y, int Cin,
                     int T, int Cout, int K, int stride, int crop, int To) {
    SLFM_DISPATCH((int64_t)Cout * T * Cin * K, tconv1d_forward, x, w, bias, y, Cin, T, Cout, K,
                  stride, crop, To);
}
void tconv1d_backward_input(const double* gy, const double* w, double* gx, int Cin, int T,
                            int Cout, int K, int stride, int crop, int To) {
    SLFM_DISPATCH((int64_t)Cout * T * Cin * K, tconv1d_backward_input, gy, w, gx, Cin, T, Cout, K,
                  stride, crop, To);
}
void tconv1d_backward_kernel(const double* gy, const double* x, double* gw, int Cin, int T,
                             int Cout, int K, int stride, int crop, int To) {
    SLFM_DISPATCH((int64_t)Cout * T * Cin * K, tconv1d_backward_kernel, gy, x, gw, Cin, T, Cout,
                  K, stride, crop, To);
}
void dwconv2d_forward(const double* x, const double* w, double* y, int C, int S, int T, int Ks,
                      int Kt) {
    SLFM_DISPATCH((int64_t)C * S * T * Ks * Kt, dwconv2d_forward, x, w, y, C, S, T, Ks, Kt);
}
void dwconv2d_backward_input(const double* gy, const double* w, double* gx, int C, int S, int T,
                             int Ks, int Kt) {
    SLFM_DISPATCH((int64_t)C * S * T * Ks * Kt, dwconv2d_backward_input, gy, w, gx, C, S, T, Ks,
                  Kt);
}
void dwconv2d_backward_kernel(const double* gy, const double* x, double* gw, int C, int S,
                              int T, int Ks, int Kt) {
    SLFM_DISPATCH((int64_t)C * S * T * Ks * Kt, dwconv2d_backward_kernel, gy, x, gw, C, S, T, Ks,
                  Kt);
}

#undef SLFM_DISPATCH

}  // namespace slfm::kernels
