#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/params.hpp"
#include "khwm/core/types.hpp"

namespace khwm {

// Adaptive-moment optimizer state, one moment pair per parameter array.
struct AdamState {
    std::vector<MatX> m;
    std::vector<MatX> v;
    long step = 0;

    bool initialized() const { return step > 0 || !m.empty(); }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One update with bias-corrected moments:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Deterministic; state starts at zero moments on the first call.
inline void optimizer_step(ParameterStore& params, const std::vector<MatX>& grads,
                           AdamState& state, double lr, const AdamConfig& cfg = {}) {
    if (grads.size() != params.count())
        throw ContractError("optimizer_step: gradient count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.count());
        state.v.resize(params.count());
        for (std::size_t i = 0; i < params.count(); ++i) {
            state.m[i] = MatX::Zero(params.value(i).rows(), params.value(i).cols());
            state.v[i] = MatX::Zero(params.value(i).rows(), params.value(i).cols());
        }
    }
    for (std::size_t i = 0; i < params.count(); ++i) {
        const MatX& g = grads[i];
        if (g.rows() != params.value(i).rows() || g.cols() != params.value(i).cols())
            throw ContractError("optimizer_step: shape mismatch for '" + params.name(i) + "'");
        if (!g.allFinite())
            throw ContractError("optimizer_step: non-finite gradient for '" + params.name(i) + "'");
    }
    state.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const MatX& g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i].array() + (1.0 - cfg.beta2) * g.array().square();
        params.value(i).array() -=
            lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
    }
}

}  // namespace khwm
