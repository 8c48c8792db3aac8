#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/params.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/tape.hpp"
#include "khwm/core/types.hpp"

namespace khwm {

// A differentiable loss: builds the graph from parameter leaves and returns
// the scalar root. Must be pure given the parameter values (stochastic nodes
// use recorded noise captured in the closure).
using LossFn = std::function<Var<Real>(Tape<Real>&, const VarMap<Real>&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled per check; every coordinate is checked when the
    // store is smaller than this.
    Index max_coords = 256;
    std::uint64_t seed = 0;
};

namespace detail {

inline double eval_loss(const LossFn& fn, const ParameterStore& params,
                        const std::string& context) {
    Tape<Real> tape;
    VarMap<Real> vars;
    vars.bind(tape, params);
    Var<Real> loss = fn(tape, vars);
    const double v = loss.scalar();
    if (!std::isfinite(v))
        throw NumericError("non-finite loss while evaluating " + context);
    return v;
}

}  // namespace detail

// Compares the tape gradient against central finite differences:
//   max over sampled coordinates of |analytic - fd| / max(1, |fd|).
inline double grad_check(const LossFn& fn, const ParameterStore& params,
                         const GradCheckOptions& opt = {}) {
    if (opt.eps < 1e-7 || opt.eps > 1e-3)
        throw ContractError("grad_check: eps outside [1e-7, 1e-3]");

    // Analytic pass.
    std::vector<MatX> analytic;
    {
        Tape<Real> tape;
        VarMap<Real> vars;
        vars.bind(tape, params);
        Var<Real> loss = fn(tape, vars);
        if (!std::isfinite(loss.scalar()))
            throw NumericError("non-finite loss at the evaluation point");
        tape.backward(loss);
        analytic = vars.grads(tape, params);
    }

    // Coordinate sample (all coordinates if the store is small).
    struct Coord {
        std::size_t param;
        Index flat;
    };
    std::vector<Coord> coords;
    const Index total = params.total_coords();
    if (total <= opt.max_coords) {
        for (std::size_t p = 0; p < params.count(); ++p)
            for (Index k = 0; k < params.value(p).size(); ++k) coords.push_back({p, k});
    } else {
        Rng rng(seed_for(opt.seed, "grad_check"));
        for (Index c = 0; c < opt.max_coords; ++c) {
            Index flat = static_cast<Index>(rng.below(static_cast<std::uint64_t>(total)));
            for (std::size_t p = 0; p < params.count(); ++p) {
                if (flat < params.value(p).size()) {
                    coords.push_back({p, flat});
                    break;
                }
                flat -= params.value(p).size();
            }
        }
    }

    double max_rel = 0.0;
    ParameterStore probe = params;
    for (const Coord& c : coords) {
        double& slot = probe.value(c.param)(c.flat);
        const double saved = slot;
        slot = saved + opt.eps;
        const double fp = detail::eval_loss(fn, probe, "perturbed parameter '" + probe.name(c.param) + "'");
        slot = saved - opt.eps;
        const double fm = detail::eval_loss(fn, probe, "perturbed parameter '" + probe.name(c.param) + "'");
        slot = saved;
        const double fd = (fp - fm) / (2.0 * opt.eps);
        const double rel = std::abs(analytic[c.param](c.flat) - fd) / std::max(1.0, std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace khwm
