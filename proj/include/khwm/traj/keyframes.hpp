#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "khwm/core/errors.hpp"

namespace khwm::traj {

// Default near-zero velocity threshold (workspace units per step). Expert
// dwells have exactly zero velocity; the margin leaves room for noisy data.
inline constexpr double kVelEpsDefault = 1e-3;

// A step t is keyframe-eligible iff velocity(t) < vel_eps and the gripper
// state at t equals the state at t-1. Runs of consecutive detections collapse
// to their first index; 0 and n-1 are always included.
inline std::vector<int> discover_keyframes(std::span<const double> velocities,
                                           std::span<const std::uint8_t> grip_states,
                                           double vel_eps = kVelEpsDefault) {
    if (vel_eps <= 0.0) throw ContractError("discover_keyframes: vel_eps must be > 0");
    const int n = static_cast<int>(velocities.size());
    if (n < 2 || grip_states.size() != velocities.size())
        throw ContractError("discover_keyframes: demo must have at least 2 aligned steps");

    std::vector<int> keys;
    keys.push_back(0);
    bool in_run = true;  // index 0 opens a run so an immediate dwell is not duplicated
    for (int t = 1; t < n - 1; ++t) {
        const bool hit = velocities[static_cast<size_t>(t)] < vel_eps &&
                         grip_states[static_cast<size_t>(t)] == grip_states[static_cast<size_t>(t - 1)];
        if (hit && !in_run) keys.push_back(t);
        in_run = hit;
    }
    if (keys.back() != n - 1) keys.push_back(n - 1);
    return keys;
}

// Inclusive frame span between two adjacent keyframes.
struct KeyHorizon {
    int start = 0;
    int end = 0;  // inclusive
    int length() const { return end - start + 1; }
};

// m keyframes yield m-1 horizons; adjacent horizons share their boundary frame.
inline std::vector<KeyHorizon> extract_key_horizons(std::span<const int> keyframes) {
    if (keyframes.size() < 2) throw ContractError("extract_key_horizons: need at least 2 keyframes");
    for (size_t i = 1; i < keyframes.size(); ++i)
        if (keyframes[i] <= keyframes[i - 1])
            throw ContractError("extract_key_horizons: keyframes must be strictly increasing");
    std::vector<KeyHorizon> out;
    for (size_t i = 1; i < keyframes.size(); ++i)
        out.push_back({keyframes[i - 1], keyframes[i]});
    return out;
}

// Fixed-length sliding windows over the whole demonstration (the no-key
// ablation's segmentation). Strides by window length; the tail window is
// anchored to the end so every frame is covered.
inline std::vector<KeyHorizon> fixed_windows(int demo_length, int window) {
    if (window < 2 || demo_length < 2) throw ContractError("fixed_windows: degenerate sizes");
    std::vector<KeyHorizon> out;
    if (demo_length <= window) {
        out.push_back({0, demo_length - 1});
        return out;
    }
    for (int start = 0; start + window <= demo_length; start += window)
        out.push_back({start, start + window - 1});
    if (out.back().end != demo_length - 1)
        out.push_back({demo_length - window, demo_length - 1});
    return out;
}

}  // namespace khwm::traj
