#pragma once

#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/types.hpp"
#include "khwm/sim/demo.hpp"
#include "khwm/traj/keyframes.hpp"

namespace khwm::mae {

// Length buckets horizons are truncated into for batching. Shorter horizons
// keep their natural length.
inline const std::vector<int> kLengthBuckets = {8, 16, 24};

// One key-horizon ready for the autoencoder: per-view, per-frame patch
// matrices (P x patch_pixels, values in [0,1]) plus the per-frame reward
// slice.
struct HorizonData {
    int views = 0;
    int frames = 0;
    std::vector<std::vector<MatX>> pixels;  // [view][frame] -> P x patch_pixels
    VecX rewards;                           // length == frames
};

// Splits a 32x32x3 8-bit frame into non-overlapping patch rows. Patch p =
// (pr, pc) row-major; columns hold the patch's pixels row-major, rgb inner.
inline MatX patchify(const sim::ImageU8& img, int image_size, int patch) {
    const int grid = image_size / patch;
    const int pp = patch * patch * 3;
    MatX out(grid * grid, pp);
    for (int pr = 0; pr < grid; ++pr)
        for (int pc = 0; pc < grid; ++pc) {
            const int p = pr * grid + pc;
            int col = 0;
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c)
                    for (int ch = 0; ch < 3; ++ch) {
                        const int rr = pr * patch + r, cc = pc * patch + c;
                        out(p, col++) =
                            static_cast<double>(img[static_cast<size_t>((rr * image_size + cc) * 3 + ch)]) /
                            255.0;
                    }
        }
    return out;
}

// Frame indices a horizon contributes after bucketing: horizons longer than
// the largest fitting bucket keep their first bucket-1 frames plus the final
// keyframe frame, so neither boundary is dropped.
inline std::vector<int> bucketed_frame_indices(const traj::KeyHorizon& h) {
    const int len = h.length();
    int bucket = 0;
    for (int b : kLengthBuckets)
        if (b <= len) bucket = b;
    std::vector<int> idx;
    if (bucket == 0 || bucket == len) {
        for (int t = h.start; t <= h.end; ++t) idx.push_back(t);
        return idx;
    }
    for (int t = h.start; t < h.start + bucket - 1; ++t) idx.push_back(t);
    idx.push_back(h.end);
    return idx;
}

inline HorizonData make_horizon(const sim::Demonstration& demo, const traj::KeyHorizon& h,
                                int image_size, int patch, double reward_scale = 1.0) {
    if (h.end >= demo.length) throw ContractError("make_horizon: span outside demonstration");
    const std::vector<int> idx = bucketed_frame_indices(h);
    HorizonData out;
    out.views = sim::kViewCount;
    out.frames = static_cast<int>(idx.size());
    out.pixels.resize(static_cast<size_t>(out.views));
    out.rewards.resize(out.frames);
    for (int v = 0; v < out.views; ++v)
        for (int t : idx)
            out.pixels[static_cast<size_t>(v)].push_back(
                patchify(demo.frames[static_cast<size_t>(t)][static_cast<size_t>(v)], image_size, patch));
    for (int i = 0; i < out.frames; ++i)
        out.rewards(i) = demo.rewards[static_cast<size_t>(idx[static_cast<size_t>(i)])] * reward_scale;
    return out;
}

// All horizons of a dataset, either keyframe-based or fixed windows (the
// no-key ablation).
inline std::vector<HorizonData> collect_horizons(const std::vector<sim::Demonstration>& demos,
                                                 const std::vector<std::vector<int>>& keyframes,
                                                 int image_size, int patch, double reward_scale,
                                                 bool fixed_window_mode = false,
                                                 int window = 16) {
    std::vector<HorizonData> out;
    for (size_t d = 0; d < demos.size(); ++d) {
        std::vector<traj::KeyHorizon> hs;
        if (fixed_window_mode)
            hs = traj::fixed_windows(demos[d].length, window);
        else
            hs = traj::extract_key_horizons(keyframes[d]);
        for (const auto& h : hs)
            out.push_back(make_horizon(demos[d], h, image_size, patch, reward_scale));
    }
    return out;
}

// Empirical bucketed horizon lengths; the policy samples imagination horizons
// from this distribution.
inline std::vector<int> horizon_length_distribution(const std::vector<HorizonData>& horizons) {
    std::vector<int> lengths;
    lengths.reserve(horizons.size());
    for (const auto& h : horizons) lengths.push_back(h.frames);
    return lengths;
}

}  // namespace khwm::mae
