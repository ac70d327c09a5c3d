#pragma once

#include <functional>

#include "slfm/ops.hpp"

namespace slfm {

// Training never samples t above 1 - kTimeClamp: the weighted objective's
// 1/(1-t)^2 factor is singular at t = 1. The loss is evaluated in the
// cancellation-free equivalent form, so the clamp only bounds the weight.
inline constexpr double kTimeClamp = 1e-3;

// Linear interpolation state between a source draw x0 and a data sample x1.
struct FlowState {
    Tensor x0;
    Tensor x1;
    Tensor x_t;  // (1-t) x0 + t x1
    double t = 0.0;
};

struct SamplerConfig {
    int nfe = 10;  // function evaluations on the uniform grid t_k = k/nfe
};

// Interpolant and companions. Ground-truth velocity along this path is the
// constant x1 - x0.
FlowState sample_path(const Tensor& x0, const Tensor& x1, double t);

// Data-space prediction d = x_t + (1-t) v.
Tensor d_from_v(const Tensor& x_t, const Tensor& v, double t);

// Weighted objective mean|d - x1|^2 / (1-t)^2, computed in the equivalent
// stable form mean|v - (x1 - x0)|^2. Requires t <= 1 - kTimeClamp.
Tensor fm_loss(const Tensor& v_pred, const FlowState& state);

// Plain velocity regression mean|v - (x1 - x0)|^2 with no time clamp; the
// un-reparameterized training variant.
Tensor velocity_loss(const Tensor& v_pred, const FlowState& state);

// Uniform draw on [0, 1 - kTimeClamp].
double sample_t(Rng& rng);

using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

// Explicit Euler on the uniform grid t_k = k/nfe with step 1/nfe,
// left-endpoint evaluation. Runs without taping. Throws NumericError naming
// the step index on a non-finite state.
Tensor euler_sample(const VelocityField& field, const Tensor& x0, const SamplerConfig& cfg);

}  // namespace slfm
