#include "slfm/flow.hpp"

#include <cmath>

namespace slfm {

FlowState sample_path(const Tensor& x0, const Tensor& x1, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ContractError("sample_path: t must lie in [0,1], got " + std::to_string(t));
    }
    if (x0.shape() != x1.shape()) {
        throw ShapeError("sample_path: endpoint shapes differ: " + shape_str(x0.shape()) +
                         " vs " + shape_str(x1.shape()));
    }
    FlowState s;
    s.x0 = x0;
    s.x1 = x1;
    s.t = t;
    s.x_t = add(mul_scalar(x0, 1.0 - t), mul_scalar(x1, t));
    return s;
}

Tensor d_from_v(const Tensor& x_t, const Tensor& v, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ContractError("d_from_v: t must lie in [0,1], got " + std::to_string(t));
    }
    return add(x_t, mul_scalar(v, 1.0 - t));
}

Tensor fm_loss(const Tensor& v_pred, const FlowState& state) {
    if (state.t > 1.0 - kTimeClamp) {
        throw ContractError("fm_loss: t=" + std::to_string(state.t) +
                            " exceeds the 1-eps time clamp; training must not sample it");
    }
    // identity: d - x1 = (1-t)(v - (x1 - x0)), so the 1/(1-t)^2 weight cancels
    Tensor target = sub(state.x1.detach(), state.x0.detach());
    return mse(v_pred, target);
}

Tensor velocity_loss(const Tensor& v_pred, const FlowState& state) {
    Tensor target = sub(state.x1.detach(), state.x0.detach());
    return mse(v_pred, target);
}

double sample_t(Rng& rng) { return rng.uniform() * (1.0 - kTimeClamp); }

Tensor euler_sample(const VelocityField& field, const Tensor& x0, const SamplerConfig& cfg) {
    if (cfg.nfe < 1) throw ConfigError("euler_sample: nfe must be >= 1");
    NoGradGuard ng;
    const double dt = 1.0 / cfg.nfe;
    Tensor x = x0.detach();
    for (int k = 0; k < cfg.nfe; ++k) {
        const double t = static_cast<double>(k) * dt;
        Tensor v;
        try {
            v = field(x, t);
        } catch (const NumericError& e) {
            throw NumericError("euler_sample: diverged at step " + std::to_string(k) + " (t=" +
                               std::to_string(t) + "): " + e.what());
        }
        if (v.shape() != x.shape()) {
            throw ShapeError("euler_sample: field returned " + shape_str(v.shape()) +
                             ", expected " + shape_str(x.shape()));
        }
        x = add(x, mul_scalar(v, dt));
        for (int64_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(x.data()[i])) {
                throw NumericError("euler_sample: non-finite state at step " + std::to_string(k));
            }
        }
    }
    return x;
}

}  // namespace slfm
