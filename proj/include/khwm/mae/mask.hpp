#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/rng.hpp"

namespace khwm::mae {

// View&tube mask for one key-horizon: a single visible view, all other views
// fully masked; the visible view keeps a random patch subset shared across
// every frame of the horizon (the tube).
struct MaskSpec {
    int views = 0;
    int visible_view = 0;
    std::vector<std::uint8_t> patch_visible;  // size P; 1 = visible

    int visible_count() const {
        int n = 0;
        for (auto v : patch_visible) n += v;
        return n;
    }
    std::vector<int> visible_patches() const {
        std::vector<int> out;
        for (size_t p = 0; p < patch_visible.size(); ++p)
            if (patch_visible[p]) out.push_back(static_cast<int>(p));
        return out;
    }
};

// Visible patch budget for a mask ratio: round((1 - ratio) * P), at least 1.
inline int visible_patch_count(int patches, double mask_ratio) {
    const long k = std::lround((1.0 - mask_ratio) * static_cast<double>(patches));
    return static_cast<int>(std::max(1L, k));
}

inline MaskSpec sample_mask(int views, int frames, int patches, double mask_ratio,
                            std::uint64_t seed) {
    if (views < 1 || patches < 2) throw ContractError("sample_mask: need views >= 1, patches >= 2");
    (void)frames;  // the tube shares one patch mask across all frames
    Rng rng(seed_for(seed, "mask"));
    MaskSpec spec;
    spec.views = views;
    spec.visible_view = views == 1 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(views)));
    spec.patch_visible.assign(static_cast<size_t>(patches), 0);
    const int keep = visible_patch_count(patches, mask_ratio);
    // Partial Fisher-Yates over patch indices.
    std::vector<int> order(static_cast<size_t>(patches));
    for (int p = 0; p < patches; ++p) order[static_cast<size_t>(p)] = p;
    for (int i = 0; i < keep; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(patches - i)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        spec.patch_visible[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    }
    return spec;
}

}  // namespace khwm::mae
