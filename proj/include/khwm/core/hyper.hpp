#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "khwm/core/errors.hpp"

namespace khwm {

// Shared learning hyperparameters. Defaults follow Dreamer-family
// conventions; everything here is rediscoverable from a config file
// bit-exactly (nlohmann serializes doubles shortest-round-trip).
struct HyperParams {
    double gamma = 0.95;        // discount, (0, 1]
    double lambda_mix = 0.95;   // lambda-return mixing, [0, 1]
    double beta_kl = 1.0;       // KL scale, > 0
    double eta_entropy = 3e-4;  // entropy scale, >= 0
    double mask_ratio = 0.95;   // masked fraction of visible-view patches, (0, 1)
    double bc_weight = 1.0;     // behavior-cloning weight, >= 0
    double lr_mae = 1e-3;
    double lr_wm = 3e-4;
    double lr_actor = 8e-5;
    double lr_critic = 3e-4;
    // Per-task scale applied to generated rewards before world-model targets
    // so per-step magnitudes stay in [0, 1].
    double reward_scale = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (!(lambda_mix >= 0.0 && lambda_mix <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
        if (!(beta_kl > 0.0)) throw ConfigError("beta must be > 0");
        if (!(eta_entropy >= 0.0)) throw ConfigError("eta must be >= 0");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
        if (!(bc_weight >= 0.0)) throw ConfigError("bc_weight must be >= 0");
        if (!(lr_mae > 0.0 && lr_wm > 0.0 && lr_actor > 0.0 && lr_critic > 0.0))
            throw ConfigError("learning rates must be > 0");
        if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be > 0");
    }
};

inline void to_json(nlohmann::json& j, const HyperParams& h) {
    j = nlohmann::json{{"gamma", h.gamma},
                       {"lambda", h.lambda_mix},
                       {"beta", h.beta_kl},
                       {"eta", h.eta_entropy},
                       {"mask_ratio", h.mask_ratio},
                       {"bc_weight", h.bc_weight},
                       {"lr_mae", h.lr_mae},
                       {"lr_wm", h.lr_wm},
                       {"lr_actor", h.lr_actor},
                       {"lr_critic", h.lr_critic},
                       {"reward_scale", h.reward_scale},
                       {"seed", h.seed}};
}

inline void from_json(const nlohmann::json& j, HyperParams& h) {
    h = HyperParams{};
    if (j.contains("gamma")) j.at("gamma").get_to(h.gamma);
    if (j.contains("lambda")) j.at("lambda").get_to(h.lambda_mix);
    if (j.contains("beta")) j.at("beta").get_to(h.beta_kl);
    if (j.contains("eta")) j.at("eta").get_to(h.eta_entropy);
    if (j.contains("mask_ratio")) j.at("mask_ratio").get_to(h.mask_ratio);
    if (j.contains("bc_weight")) j.at("bc_weight").get_to(h.bc_weight);
    if (j.contains("lr_mae")) j.at("lr_mae").get_to(h.lr_mae);
    if (j.contains("lr_wm")) j.at("lr_wm").get_to(h.lr_wm);
    if (j.contains("lr_critic")) j.at("lr_critic").get_to(h.lr_critic);
    if (j.contains("lr_actor")) j.at("lr_actor").get_to(h.lr_actor);
    if (j.contains("reward_scale")) j.at("reward_scale").get_to(h.reward_scale);
    if (j.contains("seed")) j.at("seed").get_to(h.seed);
    h.validate();
}

}  // namespace khwm
