#include "slfm/ops.hpp"

#include <cmath>
#include <cstring>

#include "slfm/kernels.hpp"

namespace slfm {

using detail::accumulate_grad;
using detail::make_op;

Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "silu") return Activation::silu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "' (expected gelu|silu|identity)");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::gelu: return "gelu";
        case Activation::silu: return "silu";
        default: return "identity";
    }
}

static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [a, b, n](Node& self) {
        accumulate_grad(*a.node(), self.grad.data(), n);
        accumulate_grad(*b.node(), self.grad.data(), n);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
    return make_op("sub", a.shape(), std::move(out), {a, b}, [a, b, n](Node& self) {
        accumulate_grad(*a.node(), self.grad.data(), n);
        std::vector<double> gb(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) gb[i] = -self.grad[i];
        accumulate_grad(*b.node(), gb.data(), n);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b, n](Node& self) {
        std::vector<double> g(static_cast<size_t>(n));
        const double* pa2 = a.data();
        const double* pb2 = b.data();
        for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb2[i];
        accumulate_grad(*a.node(), g.data(), n);
        for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa2[i];
        accumulate_grad(*b.node(), g.data(), n);
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + s;
    return make_op("add_scalar", a.shape(), std::move(out), {a}, [a, n](Node& self) {
        accumulate_grad(*a.node(), self.grad.data(), n);
    });
}

Tensor mul_scalar(const Tensor& a, double s) {
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * s;
    return make_op("mul_scalar", a.shape(), std::move(out), {a}, [a, s, n](Node& self) {
        std::vector<double> g(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * s;
        accumulate_grad(*a.node(), g.data(), n);
    });
}

static inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
static inline double gelu_bwd(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779399460599344;
    return cdf + x * pdf;
}
static inline double silu_fwd(double x) { return x / (1.0 + std::exp(-x)); }
static inline double silu_bwd(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

Tensor activation(const Tensor& x, Activation kind) {
    if (kind == Activation::identity) return x;
    const int64_t n = x.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* px = x.data();
    if (kind == Activation::gelu) {
        for (int64_t i = 0; i < n; ++i) out[i] = gelu_fwd(px[i]);
    } else {
        for (int64_t i = 0; i < n; ++i) out[i] = silu_fwd(px[i]);
    }
    return make_op("activation", x.shape(), std::move(out), {x}, [x, kind, n](Node& self) {
        std::vector<double> g(static_cast<size_t>(n));
        const double* px2 = x.data();
        if (kind == Activation::gelu) {
            for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * gelu_bwd(px2[i]);
        } else {
            for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * silu_bwd(px2[i]);
        }
        accumulate_grad(*x.node(), g.data(), n);
    });
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    std::vector<double> out(static_cast<size_t>(M) * N);
    kernels::matmul(a.data(), b.data(), out.data(), M, K, N);
    return make_op("matmul", {M, N}, std::move(out), {a, b}, [a, b, M, K, N](Node& self) {
        if (a.node()->tracked) {
            std::vector<double> ga(static_cast<size_t>(M) * K);
            kernels::matmul_nt(self.grad.data(), b.data(), ga.data(), M, N, K);
            accumulate_grad(*a.node(), ga.data(), (int64_t)M * K);
        }
        if (b.node()->tracked) {
            std::vector<double> gb(static_cast<size_t>(K) * N);
            kernels::matmul_tn(a.data(), self.grad.data(), gb.data(), M, K, N);
            accumulate_grad(*b.node(), gb.data(), (int64_t)K * N);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (W.ndim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(W.shape()));
    const int Din = W.dim(0), Dout = W.dim(1);
    if (x.ndim() < 1 || x.dim(x.ndim() - 1) != Din) {
        throw ShapeError("linear: inner dimensions disagree: x" + shape_str(x.shape()) + " vs W" +
                         shape_str(W.shape()));
    }
    if (b.ndim() != 1 || b.dim(0) != Dout) {
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match W" +
                         shape_str(W.shape()));
    }
    const int64_t M = x.size() / Din;
    std::vector<double> out(static_cast<size_t>(M) * Dout);
    kernels::matmul(x.data(), W.data(), out.data(), static_cast<int>(M), Din, Dout);
    const double* pb = b.data();
    for (int64_t r = 0; r < M; ++r) {
        double* row = out.data() + r * Dout;
        for (int j = 0; j < Dout; ++j) row[j] += pb[j];
    }
    Shape out_shape = x.shape();
    out_shape.back() = Dout;
    return make_op("linear", std::move(out_shape), std::move(out), {x, W, b},
                   [x, W, b, M, Din, Dout](Node& self) {
                       if (x.node()->tracked) {
                           std::vector<double> gx(static_cast<size_t>(M) * Din);
                           kernels::matmul_nt(self.grad.data(), W.data(), gx.data(),
                                              static_cast<int>(M), Dout, Din);
                           accumulate_grad(*x.node(), gx.data(), M * Din);
                       }
                       if (W.node()->tracked) {
                           std::vector<double> gw(static_cast<size_t>(Din) * Dout);
                           kernels::matmul_tn(x.data(), self.grad.data(), gw.data(),
                                              static_cast<int>(M), Din, Dout);
                           accumulate_grad(*W.node(), gw.data(), (int64_t)Din * Dout);
                       }
                       if (b.node()->tracked) {
                           std::vector<double> gb(static_cast<size_t>(Dout), 0.0);
                           for (int64_t r = 0; r < M; ++r)
                               for (int j = 0; j < Dout; ++j) gb[j] += self.grad[r * Dout + j];
                           accumulate_grad(*b.node(), gb.data(), Dout);
                       }
                   });
}

// --- convolutions --------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              int stride, int padding) {
    if (x.ndim() != 2 || kernel.ndim() != 3 || kernel.dim(1) != x.dim(0)) {
        throw ShapeError("conv1d: incompatible shapes x" + shape_str(x.shape()) + " vs kernel" +
                         shape_str(kernel.shape()));
    }
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ConfigError("conv1d: negative padding");
    const int Cin = x.dim(0), T = x.dim(1);
    const int Cout = kernel.dim(0), K = kernel.dim(2);
    const int To = (T + 2 * padding - K) / stride + 1;
    if (T + 2 * padding < K || To < 1) {
        throw ShapeError("conv1d: sequence too short: T=" + std::to_string(T) + " pad=" +
                         std::to_string(padding) + " K=" + std::to_string(K));
    }
    if (bias && (bias->ndim() != 1 || bias->dim(0) != Cout)) {
        throw ShapeError("conv1d: bias shape " + shape_str(bias->shape()) + " vs C_out=" +
                         std::to_string(Cout));
    }
    std::vector<double> out(static_cast<size_t>(Cout) * To);
    kernels::conv1d_forward(x.data(), kernel.data(), bias ? bias->data() : nullptr, out.data(),
                            Cin, T, Cout, K, stride, padding, To);
    Tensor bias_t = bias ? *bias : Tensor();
    return make_op(
        "conv1d", {Cout, To}, std::move(out), {x, kernel, bias_t},
        [x, kernel, bias_t, Cin, T, Cout, K, stride, padding, To](Node& self) {
            if (x.node()->tracked) {
                std::vector<double> gx(static_cast<size_t>(Cin) * T);
                kernels::conv1d_backward_input(self.grad.data(), kernel.data(), gx.data(), Cin, T,
                                               Cout, K, stride, padding, To);
                accumulate_grad(*x.node(), gx.data(), (int64_t)Cin * T);
            }
            if (kernel.node()->tracked) {
                std::vector<double> gw(static_cast<size_t>(Cout) * Cin * K);
                kernels::conv1d_backward_kernel(self.grad.data(), x.data(), gw.data(), Cin, T,
                                                Cout, K, stride, padding, To);
                accumulate_grad(*kernel.node(), gw.data(), (int64_t)Cout * Cin * K);
            }
            if (bias_t.defined() && bias_t.node()->tracked) {
                std::vector<double> gb(static_cast<size_t>(Cout), 0.0);
                for (int co = 0; co < Cout; ++co)
                    for (int o = 0; o < To; ++o) gb[co] += self.grad[(int64_t)co * To + o];
                accumulate_grad(*bias_t.node(), gb.data(), Cout);
            }
        });
}

int tconv_crop(int K, int stride) { return (K - stride) / 2; }

Tensor transposed_conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
                         int stride) {
    if (stride < 1) {
        throw ConfigError("transposed_conv1d: stride must be >= 1, got " + std::to_string(stride));
    }
    if (x.ndim() != 2 || kernel.ndim() != 3 || kernel.dim(0) != x.dim(0)) {
        throw ShapeError("transposed_conv1d: incompatible shapes x" + shape_str(x.shape()) +
                         " vs kernel" + shape_str(kernel.shape()));
    }
    const int Cin = x.dim(0), T = x.dim(1);
    const int Cout = kernel.dim(1), K = kernel.dim(2);
    if (K < stride) {
        throw ConfigError("transposed_conv1d: kernel length " + std::to_string(K) +
                          " shorter than stride " + std::to_string(stride) +
                          " cannot fill the output");
    }
    const int To = T * stride;
    const int crop = tconv_crop(K, stride);
    if (bias && (bias->ndim() != 1 || bias->dim(0) != Cout)) {
        throw ShapeError("transposed_conv1d: bias shape " + shape_str(bias->shape()) +
                         " vs C_out=" + std::to_string(Cout));
    }
    std::vector<double> out(static_cast<size_t>(Cout) * To);
    kernels::tconv1d_forward(x.data(), kernel.data(), bias ? bias->data() : nullptr, out.data(),
                             Cin, T, Cout, K, stride, crop, To);
    Tensor bias_t = bias ? *bias : Tensor();
    return make_op(
        "transposed_conv1d", {Cout, To}, std::move(out), {x, kernel, bias_t},
        [x, kernel, bias_t, Cin, T, Cout, K, stride, crop, To](Node& self) {
            if (x.node()->tracked) {
                std::vector<double> gx(static_cast<size_t>(Cin) * T);
                kernels::tconv1d_backward_input(self.grad.data(), kernel.data(), gx.data(), Cin, T,
                                                Cout, K, stride, crop, To);
                accumulate_grad(*x.node(), gx.data(), (int64_t)Cin * T);
            }
            if (kernel.node()->tracked) {
                std::vector<double> gw(static_cast<size_t>(Cin) * Cout * K);
                kernels::tconv1d_backward_kernel(self.grad.data(), x.data(), gw.data(), Cin, T,
                                                 Cout, K, stride, crop, To);
                accumulate_grad(*kernel.node(), gw.data(), (int64_t)Cin * Cout * K);
            }
            if (bias_t.defined() && bias_t.node()->tracked) {
                std::vector<double> gb(static_cast<size_t>(Cout), 0.0);
                for (int co = 0; co < Cout; ++co)
                    for (int o = 0; o < To; ++o) gb[co] += self.grad[(int64_t)co * To + o];
                accumulate_grad(*bias_t.node(), gb.data(), Cout);
            }
        });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
    if (x.ndim() != 3 || kernel.ndim() != 3 || kernel.dim(0) != x.dim(0)) {
        throw ShapeError("depthwise_conv2d: incompatible shapes x" + shape_str(x.shape()) +
                         " vs kernel" + shape_str(kernel.shape()));
    }
    const int C = x.dim(0), S = x.dim(1), T = x.dim(2);
    const int Ks = kernel.dim(1), Kt = kernel.dim(2);
    if (Ks % 2 == 0 || Kt % 2 == 0) {
        throw ConfigError("depthwise_conv2d: kernels must be odd for same padding, got (" +
                          std::to_string(Ks) + "," + std::to_string(Kt) + ")");
    }
    std::vector<double> out(static_cast<size_t>(C) * S * T);
    kernels::dwconv2d_forward(x.data(), kernel.data(), out.data(), C, S, T, Ks, Kt);
    return make_op("depthwise_conv2d", {C, S, T}, std::move(out), {x, kernel},
                   [x, kernel, C, S, T, Ks, Kt](Node& self) {
                       if (x.node()->tracked) {
                           std::vector<double> gx(static_cast<size_t>(C) * S * T);
                           kernels::dwconv2d_backward_input(self.grad.data(), kernel.data(),
                                                            gx.data(), C, S, T, Ks, Kt);
                           accumulate_grad(*x.node(), gx.data(), (int64_t)C * S * T);
                       }
                       if (kernel.node()->tracked) {
                           std::vector<double> gw(static_cast<size_t>(C) * Ks * Kt);
                           kernels::dwconv2d_backward_kernel(self.grad.data(), x.data(), gw.data(),
                                                             C, S, T, Ks, Kt);
                           accumulate_grad(*kernel.node(), gw.data(), (int64_t)C * Ks * Kt);
                       }
                   });
}

// --- normalization ---------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
    const int D = x.dim(x.ndim() - 1);
    if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
    if (gamma.ndim() != 1 || gamma.dim(0) != D || beta.ndim() != 1 || beta.dim(0) != D) {
        throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match feature dim " +
                         std::to_string(D));
    }
    const int64_t rows = x.size() / D;
    std::vector<double> out(static_cast<size_t>(x.size()));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * D;
        double mu = 0.0;
        for (int j = 0; j < D; ++j) mu += row[j];
        mu /= D;
        double var = 0.0;
        for (int j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= D;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[r] = inv;
        for (int j = 0; j < D; ++j) {
            const double xh = (row[j] - mu) * inv;
            (*xhat)[r * D + j] = xh;
            out[r * D + j] = xh * pg[j] + pb[j];
        }
    }
    return make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                   [x, gamma, beta, rows, D, xhat, inv_sigma](Node& self) {
                       const double* pg2 = gamma.data();
                       if (x.node()->tracked) {
                           std::vector<double> gx(static_cast<size_t>(x.size()));
                           for (int64_t r = 0; r < rows; ++r) {
                               double m1 = 0.0, m2 = 0.0;
                               for (int j = 0; j < D; ++j) {
                                   const double g = self.grad[r * D + j] * pg2[j];
                                   m1 += g;
                                   m2 += g * (*xhat)[r * D + j];
                               }
                               m1 /= D;
                               m2 /= D;
                               const double inv = (*inv_sigma)[r];
                               for (int j = 0; j < D; ++j) {
                                   const double g = self.grad[r * D + j] * pg2[j];
                                   gx[r * D + j] = (g - m1 - (*xhat)[r * D + j] * m2) * inv;
                               }
                           }
                           accumulate_grad(*x.node(), gx.data(), x.size());
                       }
                       if (gamma.node()->tracked) {
                           std::vector<double> gg(static_cast<size_t>(D), 0.0);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int j = 0; j < D; ++j)
                                   gg[j] += self.grad[r * D + j] * (*xhat)[r * D + j];
                           accumulate_grad(*gamma.node(), gg.data(), D);
                       }
                       if (beta.node()->tracked) {
                           std::vector<double> gb(static_cast<size_t>(D), 0.0);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int j = 0; j < D; ++j) gb[j] += self.grad[r * D + j];
                           accumulate_grad(*beta.node(), gb.data(), D);
                       }
                   });
}

Tensor layer_norm_frames(const Tensor& x, const Tensor* gamma, const Tensor* beta, double eps) {
    if (x.ndim() != 2) {
        throw ShapeError("layer_norm_frames: expected [C,T], got " + shape_str(x.shape()));
    }
    if (eps <= 0) throw ConfigError("layer_norm_frames: eps must be positive");
    const int C = x.dim(0), T = x.dim(1);
    const bool affine = gamma != nullptr;
    if (affine) {
        if (gamma->ndim() != 1 || gamma->dim(0) != C || !beta || beta->ndim() != 1 ||
            beta->dim(0) != C) {
            throw ShapeError("layer_norm_frames: affine shapes do not match channel dim " +
                             std::to_string(C));
        }
    }
    std::vector<double> out(static_cast<size_t>(C) * T);
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(C) * T);
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(T));
    const double* px = x.data();
    for (int t = 0; t < T; ++t) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += px[(int64_t)c * T + t];
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = px[(int64_t)c * T + t] - mu;
            var += d * d;
        }
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[t] = inv;
        for (int c = 0; c < C; ++c) {
            const double xh = (px[(int64_t)c * T + t] - mu) * inv;
            (*xhat)[(int64_t)c * T + t] = xh;
            out[(int64_t)c * T + t] = affine ? xh * gamma->data()[c] + beta->data()[c] : xh;
        }
    }
    Tensor gamma_t = affine ? *gamma : Tensor();
    Tensor beta_t = affine ? *beta : Tensor();
    return make_op(
        "layer_norm_frames", {C, T}, std::move(out), {x, gamma_t, beta_t},
        [x, gamma_t, beta_t, C, T, xhat, inv_sigma, affine](Node& self) {
            if (x.node()->tracked) {
                std::vector<double> gx(static_cast<size_t>(C) * T);
                for (int t = 0; t < T; ++t) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double gc = affine ? gamma_t.data()[c] : 1.0;
                        const double g = self.grad[(int64_t)c * T + t] * gc;
                        m1 += g;
                        m2 += g * (*xhat)[(int64_t)c * T + t];
                    }
                    m1 /= C;
                    m2 /= C;
                    const double inv = (*inv_sigma)[t];
                    for (int c = 0; c < C; ++c) {
                        const double gc = affine ? gamma_t.data()[c] : 1.0;
                        const double g = self.grad[(int64_t)c * T + t] * gc;
                        gx[(int64_t)c * T + t] =
                            (g - m1 - (*xhat)[(int64_t)c * T + t] * m2) * inv;
                    }
                }
                accumulate_grad(*x.node(), gx.data(), (int64_t)C * T);
            }
            if (affine && gamma_t.node()->tracked) {
                std::vector<double> gg(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t)
                        gg[c] += self.grad[(int64_t)c * T + t] * (*xhat)[(int64_t)c * T + t];
                accumulate_grad(*gamma_t.node(), gg.data(), C);
            }
            if (affine && beta_t.node()->tracked) {
                std::vector<double> gb(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t) gb[c] += self.grad[(int64_t)c * T + t];
                accumulate_grad(*beta_t.node(), gb.data(), C);
            }
        });
}

// --- reductions --------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    const int64_t n = x.size();
    double s = 0.0;
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    return make_op("sum", {1}, {s}, {x}, [x, n](Node& self) {
        std::vector<double> g(static_cast<size_t>(n), self.grad[0]);
        accumulate_grad(*x.node(), g.data(), n);
    });
}

Tensor mean(const Tensor& x) {
    const int64_t n = x.size();
    double s = 0.0;
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    s /= static_cast<double>(n);
    return make_op("mean", {1}, {s}, {x}, [x, n](Node& self) {
        std::vector<double> g(static_cast<size_t>(n), self.grad[0] / static_cast<double>(n));
        accumulate_grad(*x.node(), g.data(), n);
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape("mse", a, b);
    const int64_t n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = pa[i] - pb[i];
        s += d * d;
    }
    s /= static_cast<double>(n);
    return make_op("mse", {1}, {s}, {a, b}, [a, b, n](Node& self) {
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        std::vector<double> g(static_cast<size_t>(n));
        const double* pa2 = a.data();
        const double* pb2 = b.data();
        if (a.node()->tracked) {
            for (int64_t i = 0; i < n; ++i) g[i] = c * (pa2[i] - pb2[i]);
            accumulate_grad(*a.node(), g.data(), n);
        }
        if (b.node()->tracked) {
            for (int64_t i = 0; i < n; ++i) g[i] = c * (pb2[i] - pa2[i]);
            accumulate_grad(*b.node(), g.data(), n);
        }
    });
}

// --- shape surgery --------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = x.node()->values;  // shared storage, no copy
    if (grad_enabled() && x.node()->tracked) {
        n->tracked = true;
        n->parents = {x.node()};
        Tensor xc = x;
        int64_t count = x.size();
        n->backward = [xc, count](Node& self) {
            accumulate_grad(*xc.node(), self.grad.data(), count);
        };
    }
    return Tensor(n);
}

Tensor transpose2d(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("transpose2d: expected 2-D, got " + shape_str(x.shape()));
    const int A = x.dim(0), B = x.dim(1);
    std::vector<double> out(static_cast<size_t>(A) * B);
    const double* px = x.data();
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < B; ++j) out[(int64_t)j * A + i] = px[(int64_t)i * B + j];
    return make_op("transpose2d", {B, A}, std::move(out), {x}, [x, A, B](Node& self) {
        std::vector<double> g(static_cast<size_t>(A) * B);
        for (int i = 0; i < A; ++i)
            for (int j = 0; j < B; ++j) g[(int64_t)i * B + j] = self.grad[(int64_t)j * A + i];
        accumulate_grad(*x.node(), g.data(), (int64_t)A * B);
    });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    if (x.ndim() < 1 || r0 < 0 || r1 > x.dim(0) || r0 >= r1) {
        throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for shape " + shape_str(x.shape()));
    }
    const int64_t row = x.size() / x.dim(0);
    Shape out_shape = x.shape();
    out_shape[0] = r1 - r0;
    std::vector<double> out(static_cast<size_t>((r1 - r0) * row));
    std::memcpy(out.data(), x.data() + r0 * row, out.size() * sizeof(double));
    return make_op("slice_rows", std::move(out_shape), std::move(out), {x},
                   [x, r0, r1, row](Node& self) {
                       if (!x.node()->tracked) return;
                       auto& g = detail::grad_buffer(*x.node());
                       const int64_t n = (r1 - r0) * row;
                       const Precision p = global_precision();
                       for (int64_t i = 0; i < n; ++i) {
                           g[r0 * row + i] = detail::apply_precision_one(
                               g[r0 * row + i] + detail::apply_precision_one(self.grad[i], p), p);
                       }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: empty input list");
    Shape tail = xs[0].shape();
    int rows = 0;
    const int64_t row = xs[0].size() / xs[0].dim(0);
    for (const Tensor& t : xs) {
        if (t.ndim() != xs[0].ndim() || t.size() / t.dim(0) != row) {
            throw ShapeError("concat_rows: incompatible shapes " + shape_str(xs[0].shape()) +
                             " vs " + shape_str(t.shape()));
        }
        rows += t.dim(0);
    }
    tail[0] = rows;
    std::vector<double> out(static_cast<size_t>(rows * row));
    int64_t off = 0;
    for (const Tensor& t : xs) {
        std::memcpy(out.data() + off, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
        off += t.size();
    }
    std::vector<Tensor> inputs = xs;
    return make_op("concat_rows", std::move(tail), std::move(out), xs, [inputs](Node& self) {
        int64_t off2 = 0;
        for (const Tensor& t : inputs) {
            accumulate_grad(*t.node(), self.grad.data() + off2, t.size());
            off2 += t.size();
        }
    });
}

Tensor swap_groups(const Tensor& x, int A, int B) {
    if (x.ndim() != 2 || x.dim(0) != A * B) {
        throw ShapeError("swap_groups: expected [" + std::to_string(A * B) + ",T], got " +
                         shape_str(x.shape()));
    }
    const int T = x.dim(1);
    std::vector<double> out(static_cast<size_t>(A) * B * T);
    const double* px = x.data();
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            std::memcpy(out.data() + ((int64_t)b * A + a) * T, px + ((int64_t)a * B + b) * T,
                        static_cast<size_t>(T) * sizeof(double));
    return make_op("swap_groups", {B * A, T}, std::move(out), {x}, [x, A, B, T](Node& self) {
        std::vector<double> g(static_cast<size_t>(A) * B * T);
        for (int a = 0; a < A; ++a)
            for (int b = 0; b < B; ++b)
                std::memcpy(g.data() + ((int64_t)a * B + b) * T,
                            self.grad.data() + ((int64_t)b * A + a) * T,
                            static_cast<size_t>(T) * sizeof(double));
        accumulate_grad(*x.node(), g.data(), (int64_t)A * B * T);
    });
}

// --- conditioning helpers ----------------------------------------------------------

Tensor modulate_frames(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    if (x.ndim() != 2) {
        throw ShapeError("modulate_frames: expected [C,T], got " + shape_str(x.shape()));
    }
    const int C = x.dim(0), T = x.dim(1);
    if (scale.size() != C || shift.size() != C) {
        throw ShapeError("modulate_frames: modulation width " + shape_str(scale.shape()) +
                         " does not match channels " + std::to_string(C));
    }
    std::vector<double> out(static_cast<size_t>(C) * T);
    const double* px = x.data();
    const double* ps = scale.data();
    const double* ph = shift.data();
    for (int c = 0; c < C; ++c) {
        const double m = 1.0 + ps[c];
        for (int t = 0; t < T; ++t) out[(int64_t)c * T + t] = px[(int64_t)c * T + t] * m + ph[c];
    }
    return make_op(
        "modulate_frames", {C, T}, std::move(out), {x, scale, shift},
        [x, scale, shift, C, T](Node& self) {
            if (x.node()->tracked) {
                std::vector<double> g(static_cast<size_t>(C) * T);
                for (int c = 0; c < C; ++c) {
                    const double m = 1.0 + scale.data()[c];
                    for (int t = 0; t < T; ++t)
                        g[(int64_t)c * T + t] = self.grad[(int64_t)c * T + t] * m;
                }
                accumulate_grad(*x.node(), g.data(), (int64_t)C * T);
            }
            if (scale.node()->tracked) {
                std::vector<double> gs(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t)
                        gs[c] += self.grad[(int64_t)c * T + t] * x.data()[(int64_t)c * T + t];
                accumulate_grad(*scale.node(), gs.data(), C);
            }
            if (shift.node()->tracked) {
                std::vector<double> gh(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t) gh[c] += self.grad[(int64_t)c * T + t];
                accumulate_grad(*shift.node(), gh.data(), C);
            }
        });
}

Tensor gate_add(const Tensor& x, const Tensor& branch, const Tensor& alpha) {
    require_same_shape("gate_add", x, branch);
    if (x.ndim() != 2 || alpha.size() != x.dim(0)) {
        throw ShapeError("gate_add: gate width " + shape_str(alpha.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
    }
    const int C = x.dim(0), T = x.dim(1);
    std::vector<double> out(static_cast<size_t>(C) * T);
    const double* px = x.data();
    const double* pb = branch.data();
    const double* pa = alpha.data();
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            out[(int64_t)c * T + t] = px[(int64_t)c * T + t] + pa[c] * pb[(int64_t)c * T + t];
    return make_op(
        "gate_add", {C, T}, std::move(out), {x, branch, alpha},
        [x, branch, alpha, C, T](Node& self) {
            if (x.node()->tracked) accumulate_grad(*x.node(), self.grad.data(), (int64_t)C * T);
            if (branch.node()->tracked) {
                std::vector<double> g(static_cast<size_t>(C) * T);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t)
                        g[(int64_t)c * T + t] = self.grad[(int64_t)c * T + t] * alpha.data()[c];
                accumulate_grad(*branch.node(), g.data(), (int64_t)C * T);
            }
            if (alpha.node()->tracked) {
                std::vector<double> ga(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t)
                        ga[c] += self.grad[(int64_t)c * T + t] * branch.data()[(int64_t)c * T + t];
                accumulate_grad(*alpha.node(), ga.data(), C);
            }
        });
}

Tensor grouped_conv1d_shared(const Tensor& x, int groups, const Tensor& kernel,
                             const std::optional<Tensor>& bias, int stride, int padding) {
    if (x.ndim() != 2 || kernel.ndim() != 3) {
        throw ShapeError("grouped_conv1d_shared: bad ranks x" + shape_str(x.shape()) +
                         " kernel" + shape_str(kernel.shape()));
    }
    const int Cin = kernel.dim(1);
    if (groups < 1 || x.dim(0) != groups * Cin) {
        throw ShapeError("grouped_conv1d_shared: x" + shape_str(x.shape()) + " is not " +
                         std::to_string(groups) + " groups of " + std::to_string(Cin) +
                         " channels");
    }
    std::vector<Tensor> ys;
    ys.reserve(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        Tensor xg = slice_rows(x, g * Cin, (g + 1) * Cin);
        ys.push_back(conv1d(xg, kernel, bias, stride, padding));
    }
    return concat_rows(ys);
}

Tensor sinusoidal_embedding(double t, int dim) {
    if (dim < 2) throw ConfigError("sinusoidal_embedding: dim must be >= 2");
    std::vector<double> e(static_cast<size_t>(dim), 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(1e4) * static_cast<double>(i) / half);
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    if (dim % 2 == 1) e[dim - 1] = std::sin(t * 1e-4);
    return Tensor::from({dim}, std::move(e));
}

}  // namespace slfm
