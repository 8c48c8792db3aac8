#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "khwm/core/adam.hpp"
#include "khwm/core/params.hpp"
#include "khwm/core/tape.hpp"
#include "khwm/mae/data.hpp"
#include "khwm/mae/mask.hpp"
#include "khwm/sim/sim.hpp"

namespace khwm::mae {

struct MaeConfig {
    int views = 4;
    int image_size = 32;
    int patch = 4;        // stride-4 stem -> 64 patches on 32x32 frames
    int enc_dim = 64;
    int enc_depth = 4;
    int enc_heads = 4;
    int dec_dim = 16;
    int dec_depth = 2;
    int dec_heads = 1;
    int mlp_ratio = 2;
    int max_frames = 24;  // frame-embedding table size = largest bucket
    double mask_ratio = 0.95;

    int grid() const { return image_size / patch; }
    int patches() const { return grid() * grid(); }
    int patch_pixels() const { return patch * patch * 3; }
    // Control representation: 2x2 region-pooled encoder tokens.
    int repr_dim() const { return 4 * enc_dim; }
};

namespace vit {

// Multi-head self-attention over contiguous row groups (one group = full
// attention; several = block-diagonal attention).
template <typename S>
Var<S> attention(Tape<S>& t, const VarMap<S>& v, Owner owner, const std::string& prefix,
                 Var<S> x, int heads, const std::vector<std::pair<Index, Index>>& groups) {
    const Index d = x.cols();
    const Index dh = d / heads;
    Var<S> q = affine(x, v(owner, prefix + "/wq"), v(owner, prefix + "/bq"));
    Var<S> k = affine(x, v(owner, prefix + "/wk"), v(owner, prefix + "/bk"));
    Var<S> val = affine(x, v(owner, prefix + "/wv"), v(owner, prefix + "/bv"));
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<Var<S>> group_outs;
    for (const auto& [start, count] : groups) {
        std::vector<Var<S>> head_outs;
        for (int h = 0; h < heads; ++h) {
            Var<S> qh = cols_block(rows_block(q, start, count), h * dh, dh);
            Var<S> kh = cols_block(rows_block(k, start, count), h * dh, dh);
            Var<S> vh = cols_block(rows_block(val, start, count), h * dh, dh);
            Var<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            Var<S> attn = softmax_rows(scores);
            head_outs.push_back(matmul(attn, vh));
        }
        group_outs.push_back(heads == 1 ? head_outs[0] : hcat(head_outs));
    }
    Var<S> merged = group_outs.size() == 1 ? group_outs[0] : vcat(group_outs);
    return affine(merged, v(owner, prefix + "/wo"), v(owner, prefix + "/bo"));
}

template <typename S>
Var<S> mlp(Tape<S>& t, const VarMap<S>& v, Owner owner, const std::string& prefix, Var<S> x) {
    (void)t;
    Var<S> h = gelu(affine(x, v(owner, prefix + "/w1"), v(owner, prefix + "/b1")));
    return affine(h, v(owner, prefix + "/w2"), v(owner, prefix + "/b2"));
}

template <typename S>
Var<S> layernorm(const VarMap<S>& v, Owner owner, const std::string& prefix, Var<S> x) {
    return layernorm_rows(x, v(owner, prefix + "/g"), v(owner, prefix + "/b"));
}

// Declares one attention sublayer's parameters.
inline void attn_spec(std::vector<LayerSpec>& spec, const std::string& prefix, int dim) {
    spec.push_back({prefix + "/wq", dim, dim});
    spec.push_back({prefix + "/bq", 1, dim, dim});
    spec.push_back({prefix + "/wk", dim, dim});
    spec.push_back({prefix + "/bk", 1, dim, dim});
    spec.push_back({prefix + "/wv", dim, dim});
    spec.push_back({prefix + "/bv", 1, dim, dim});
    spec.push_back({prefix + "/wo", dim, dim});
    spec.push_back({prefix + "/bo", 1, dim, dim});
}

inline void mlp_spec(std::vector<LayerSpec>& spec, const std::string& prefix, int dim, int hidden) {
    spec.push_back({prefix + "/w1", dim, hidden});
    spec.push_back({prefix + "/b1", 1, hidden, dim});
    spec.push_back({prefix + "/w2", hidden, dim});
    spec.push_back({prefix + "/b2", 1, dim, hidden});
}

inline void ln_spec(std::vector<LayerSpec>& spec, const std::string& prefix, int dim) {
    spec.push_back({prefix + "/g", 1, dim, dim});
    spec.push_back({prefix + "/b", 1, dim, dim});
}

}  // namespace vit

// Key-horizon multi-view masked autoencoder: conv-stem patch features,
// view&tube masking, a joint-attention ViT encoder over visible tokens, and a
// factorized space/time ViT decoder with mask tokens that reconstructs every
// view's pixels and predicts the per-frame reward over the horizon.
class KmvMae {
public:
    explicit KmvMae(MaeConfig cfg) : cfg_(cfg) {}

    const MaeConfig& config() const { return cfg_; }

    std::vector<LayerSpec> layer_spec() const {
        std::vector<LayerSpec> spec;
        const int d = cfg_.enc_dim, dd = cfg_.dec_dim;
        spec.push_back({"stem/w", cfg_.patch_pixels(), d});
        spec.push_back({"stem/b", 1, d, cfg_.patch_pixels()});
        spec.push_back({"enc/view_emb", cfg_.views, d, d});
        spec.push_back({"enc/frame_emb", cfg_.max_frames, d, d});
        spec.push_back({"enc/pos_emb", cfg_.patches(), d, d});
        for (int b = 0; b < cfg_.enc_depth; ++b) {
            const std::string p = "enc/blk" + std::to_string(b);
            vit::ln_spec(spec, p + "/ln1", d);
            vit::attn_spec(spec, p + "/attn", d);
            vit::ln_spec(spec, p + "/ln2", d);
            vit::mlp_spec(spec, p + "/mlp", d, d * cfg_.mlp_ratio);
        }
        vit::ln_spec(spec, "enc/final_ln", d);

        spec.push_back({"dec/proj/w", d, dd, d});
        spec.push_back({"dec/proj/b", 1, dd, d});
        spec.push_back({"dec/mask_token", 1, dd, dd});
        spec.push_back({"dec/view_emb", cfg_.views, dd, dd});
        spec.push_back({"dec/frame_emb", cfg_.max_frames, dd, dd});
        spec.push_back({"dec/pos_emb", cfg_.patches(), dd, dd});
        for (int b = 0; b < cfg_.dec_depth; ++b) {
            const std::string p = "dec/blk" + std::to_string(b);
            vit::ln_spec(spec, p + "/ln_s", dd);
            vit::attn_spec(spec, p + "/space", dd);
            vit::ln_spec(spec, p + "/ln_t", dd);
            vit::attn_spec(spec, p + "/time", dd);
            vit::ln_spec(spec, p + "/ln_m", dd);
            vit::mlp_spec(spec, p + "/mlp", dd, dd * cfg_.mlp_ratio);
        }
        vit::ln_spec(spec, "dec/final_ln", dd);
        spec.push_back({"dec/pix/w", dd, cfg_.patch_pixels(), dd});
        spec.push_back({"dec/pix/b", 1, cfg_.patch_pixels(), dd});
        spec.push_back({"dec/rew1/w", dd, dd});
        spec.push_back({"dec/rew1/b", 1, dd, dd});
        spec.push_back({"dec/rew2/w", dd, 1, dd});
        spec.push_back({"dec/rew2/b", 1, 1, dd});
        return spec;
    }

    ParameterStore init_params(std::uint64_t seed) const {
        ParameterStore store = seeded_init(Owner::autoencoder, layer_spec(), seed);
        apply_init_overrides(store);
        return store;
    }

    // Row index in the decoder's full token grid (frame-major).
    Index grid_row(int v, int t, int p) const {
        return (static_cast<Index>(t) * cfg_.views + v) * cfg_.patches() + p;
    }

    // Stem features for every (view, frame) of a horizon, frame-major rows.
    // This is the conv stem: a stride-`patch` convolution is exactly a linear
    // map of the non-overlapping patch pixels.
    Var<Real> stem_features(Tape<Real>& t, const VarMap<Real>& v, const HorizonData& h) const {
        std::vector<Var<Real>> rows;
        for (int f = 0; f < h.frames; ++f)
            for (int view = 0; view < h.views; ++view)
                rows.push_back(t.constant(h.pixels[static_cast<size_t>(view)][static_cast<size_t>(f)]));
        Var<Real> patches = rows.size() == 1 ? rows[0] : vcat(rows);
        return affine(patches, v(Owner::autoencoder, "stem/w"), v(Owner::autoencoder, "stem/b"));
    }

    struct Forward {
        Var<Real> encoded;      // visible tokens, N_vis x enc_dim
        Var<Real> pixel_pred;   // (T*V*P) x patch_pixels, frame-major
        Var<Real> reward_pred;  // T x 1
    };

    Forward reconstruct(Tape<Real>& t, const VarMap<Real>& v, const HorizonData& h,
                        const MaskSpec& mask) const {
        if (h.views != cfg_.views || static_cast<int>(mask.patch_visible.size()) != cfg_.patches())
            throw ContractError("reconstruct: horizon/mask shape mismatch");
        if (h.frames > cfg_.max_frames)
            throw ContractError("reconstruct: horizon longer than the frame-embedding table");
        const auto owner = Owner::autoencoder;
        const int P = cfg_.patches();
        const std::vector<int> vis = mask.visible_patches();
        const int k = static_cast<int>(vis.size());

        // ---- encoder over visible tokens only ---- //
        std::vector<Var<Real>> vis_rows;
        std::vector<Index> view_ids, frame_ids, patch_ids;
        for (int f = 0; f < h.frames; ++f) {
            Var<Real> patches = t.constant(
                h.pixels[static_cast<size_t>(mask.visible_view)][static_cast<size_t>(f)]);
            Var<Real> sel = gather_rows(patches, std::vector<Index>(vis.begin(), vis.end()));
            vis_rows.push_back(sel);
            for (int i = 0; i < k; ++i) {
                view_ids.push_back(mask.visible_view);
                frame_ids.push_back(f);
                patch_ids.push_back(vis[static_cast<size_t>(i)]);
            }
        }
        Var<Real> vis_patches = vis_rows.size() == 1 ? vis_rows[0] : vcat(vis_rows);
        Var<Real> tokens =
            affine(vis_patches, v(owner, "stem/w"), v(owner, "stem/b"));
        tokens = add(tokens, gather_rows(v(owner, "enc/view_emb"), view_ids));
        tokens = add(tokens, gather_rows(v(owner, "enc/frame_emb"), frame_ids));
        tokens = add(tokens, gather_rows(v(owner, "enc/pos_emb"), patch_ids));

        const std::vector<std::pair<Index, Index>> whole{{0, tokens.rows()}};
        for (int b = 0; b < cfg_.enc_depth; ++b) {
            const std::string p = "enc/blk" + std::to_string(b);
            tokens = add(tokens, vit::attention(t, v, owner, p + "/attn",
                                                vit::layernorm(v, owner, p + "/ln1", tokens),
                                                cfg_.enc_heads, whole));
            tokens = add(tokens, vit::mlp(t, v, owner, p + "/mlp",
                                          vit::layernorm(v, owner, p + "/ln2", tokens)));
        }
        Var<Real> encoded = vit::layernorm(v, owner, "enc/final_ln", tokens);

        // ---- decoder over the full token grid ---- //
        const Index n = static_cast<Index>(h.frames) * cfg_.views * P;
        Var<Real> proj = affine(encoded, v(owner, "dec/proj/w"), v(owner, "dec/proj/b"));
        std::vector<Index> vis_grid_rows;
        for (int f = 0; f < h.frames; ++f)
            for (int i = 0; i < k; ++i)
                vis_grid_rows.push_back(grid_row(mask.visible_view, f, vis[static_cast<size_t>(i)]));
        Var<Real> grid = repeat_row(v(owner, "dec/mask_token"), n);
        grid = scatter_rows_replace(grid, vis_grid_rows, proj);

        std::vector<Index> g_view, g_frame, g_patch;
        g_view.reserve(static_cast<size_t>(n));
        for (int f = 0; f < h.frames; ++f)
            for (int view = 0; view < cfg_.views; ++view)
                for (int p = 0; p < P; ++p) {
                    g_view.push_back(view);
                    g_frame.push_back(f);
                    g_patch.push_back(p);
                }
        grid = add(grid, gather_rows(v(owner, "dec/view_emb"), g_view));
        grid = add(grid, gather_rows(v(owner, "dec/frame_emb"), g_frame));
        grid = add(grid, gather_rows(v(owner, "dec/pos_emb"), g_patch));

        // Frame groups are contiguous; tube groups need a permutation.
        std::vector<std::pair<Index, Index>> frame_groups;
        for (int f = 0; f < h.frames; ++f)
            frame_groups.push_back({static_cast<Index>(f) * cfg_.views * P,
                                    static_cast<Index>(cfg_.views) * P});
        std::vector<Index> to_tube(static_cast<size_t>(n)), from_tube(static_cast<size_t>(n));
        {
            Index at = 0;
            for (int view = 0; view < cfg_.views; ++view)
                for (int p = 0; p < P; ++p)
                    for (int f = 0; f < h.frames; ++f) {
                        const Index src = grid_row(view, f, p);
                        to_tube[static_cast<size_t>(at)] = src;
                        from_tube[static_cast<size_t>(src)] = at;
                        ++at;
                    }
        }
        std::vector<std::pair<Index, Index>> tube_groups;
        for (Index g = 0; g < static_cast<Index>(cfg_.views) * P; ++g)
            tube_groups.push_back({g * h.frames, h.frames});

        for (int b = 0; b < cfg_.dec_depth; ++b) {
            const std::string p = "dec/blk" + std::to_string(b);
            grid = add(grid, vit::attention(t, v, owner, p + "/space",
                                            vit::layernorm(v, owner, p + "/ln_s", grid),
                                            cfg_.dec_heads, frame_groups));
            Var<Real> tube_in =
                gather_rows(vit::layernorm(v, owner, p + "/ln_t", grid), to_tube);
            Var<Real> tube_out =
                vit::attention(t, v, owner, p + "/time", tube_in, cfg_.dec_heads, tube_groups);
            grid = add(grid, gather_rows(tube_out, from_tube));
            grid = add(grid, vit::mlp(t, v, owner, p + "/mlp",
                                      vit::layernorm(v, owner, p + "/ln_m", grid)));
        }
        grid = vit::layernorm(v, owner, "dec/final_ln", grid);

        Forward out;
        out.encoded = encoded;
        out.pixel_pred = affine(grid, v(owner, "dec/pix/w"), v(owner, "dec/pix/b"));
        Var<Real> pooled = group_mean_rows(grid, static_cast<Index>(cfg_.views) * P);  // T x dd
        Var<Real> rh = gelu(affine(pooled, v(owner, "dec/rew1/w"), v(owner, "dec/rew1/b")));
        out.reward_pred = affine(rh, v(owner, "dec/rew2/w"), v(owner, "dec/rew2/b"));
        return out;
    }

    // Pixel targets aligned with pixel_pred's frame-major row order.
    MatX pixel_targets(const HorizonData& h) const {
        MatX out(static_cast<Index>(h.frames) * cfg_.views * cfg_.patches(), cfg_.patch_pixels());
        for (int f = 0; f < h.frames; ++f)
            for (int view = 0; view < cfg_.views; ++view)
                out.middleRows(grid_row(view, f, 0), cfg_.patches()) =
                    h.pixels[static_cast<size_t>(view)][static_cast<size_t>(f)];
        return out;
    }

    // Unit-variance Gaussian negative log-likelihoods with constant offsets
    // dropped: mean squared error over all pixels plus mean squared error
    // over the per-frame rewards. Zero iff both predictions are exact.
    static Var<Real> reconstruction_loss(Var<Real> pixel_pred, Var<Real> pixel_target,
                                         Var<Real> reward_pred, Var<Real> reward_target) {
        return add(mean_all(square(sub(pixel_pred, pixel_target))),
                   mean_all(square(sub(reward_pred, reward_target))));
    }

    Var<Real> loss(Tape<Real>& t, const VarMap<Real>& v, const HorizonData& h,
                   const MaskSpec& mask) const {
        if (h.rewards.size() != h.frames) throw ContractError("loss: reward length mismatch");
        Forward fw = reconstruct(t, v, h, mask);
        Var<Real> pix_target = t.constant(pixel_targets(h));
        Var<Real> rew_target = t.constant(h.rewards);
        Var<Real> l = reconstruction_loss(fw.pixel_pred, pix_target, fw.reward_pred, rew_target);
        if (!std::isfinite(l.scalar())) throw NumericError("kmvmae loss is non-finite");
        return l;
    }

    // Deployment-path encoding: one front-view frame, every patch visible,
    // other views absent (they would only contribute mask tokens in the
    // decoder). Returns the 2x2 region-pooled final tokens.
    VecX encode_control(const ParameterStore& params, const sim::ImageU8& front) const {
        Tape<Real> tape;
        VarMap<Real> vars;
        vars.bind(tape, params);
        const auto owner = Owner::autoencoder;
        Var<Real> patches = tape.constant(patchify(front, cfg_.image_size, cfg_.patch));
        Var<Real> tokens = affine(patches, vars(owner, "stem/w"), vars(owner, "stem/b"));
        const int P = cfg_.patches();
        std::vector<Index> view_ids(static_cast<size_t>(P), static_cast<Index>(sim::View::front));
        std::vector<Index> frame_ids(static_cast<size_t>(P), 0);
        std::vector<Index> patch_ids;
        for (int p = 0; p < P; ++p) patch_ids.push_back(p);
        tokens = add(tokens, gather_rows(vars(owner, "enc/view_emb"), view_ids));
        tokens = add(tokens, gather_rows(vars(owner, "enc/frame_emb"), frame_ids));
        tokens = add(tokens, gather_rows(vars(owner, "enc/pos_emb"), patch_ids));
        const std::vector<std::pair<Index, Index>> whole{{0, tokens.rows()}};
        for (int b = 0; b < cfg_.enc_depth; ++b) {
            const std::string p = "enc/blk" + std::to_string(b);
            tokens = add(tokens, vit::attention(tape, vars, owner, p + "/attn",
                                                vit::layernorm(vars, owner, p + "/ln1", tokens),
                                                cfg_.enc_heads, whole));
            tokens = add(tokens, vit::mlp(tape, vars, owner, p + "/mlp",
                                          vit::layernorm(vars, owner, p + "/ln2", tokens)));
        }
        const MatX final_tokens =
            vit::layernorm(vars, owner, "enc/final_ln", tokens).value();

        // 2x2 region pooling over the patch grid keeps coarse layout.
        const int g = cfg_.grid();
        const int half = g / 2;
        VecX repr = VecX::Zero(cfg_.repr_dim());
        for (int region = 0; region < 4; ++region) {
            const int r0 = (region / 2) * half, c0 = (region % 2) * half;
            MatX acc = MatX::Zero(1, cfg_.enc_dim);
            for (int r = r0; r < r0 + half; ++r)
                for (int c = c0; c < c0 + half; ++c) acc += final_tokens.row(r * g + c);
            repr.segment(static_cast<Index>(region) * cfg_.enc_dim, cfg_.enc_dim) =
                (acc / static_cast<double>(half * half)).transpose();
        }
        return repr;
    }

private:
    MaeConfig cfg_;
};

// Frozen deployment encoder: raw region-pooled tokens standardized
// per-dimension with dataset statistics. The raw pooled representation is
// dominated by a large state-independent component; standardizing against the
// demonstration set gives the world model O(1) state-driven coordinates.
struct ControlEncoder {
    const KmvMae* model = nullptr;
    const ParameterStore* params = nullptr;
    VecX mean;     // empty = identity normalization
    VecX inv_std;

    VecX operator()(const sim::ImageU8& front) const {
        VecX z = model->encode_control(*params, front);
        if (mean.size() > 0) z = (z - mean).cwiseProduct(inv_std);
        return z;
    }

    // Standardization statistics over a set of raw representations. Dead
    // dimensions get a floored deviation so they stay inert instead of
    // exploding.
    void fit(const std::vector<VecX>& raw) {
        if (raw.empty()) throw ContractError("ControlEncoder::fit: no samples");
        const Index d = raw[0].size();
        mean = VecX::Zero(d);
        for (const auto& z : raw) mean += z;
        mean /= static_cast<double>(raw.size());
        VecX var = VecX::Zero(d);
        for (const auto& z : raw) var += (z - mean).cwiseAbs2();
        var /= static_cast<double>(raw.size());
        VecX stddev = var.cwiseSqrt();
        const double floor_dev = std::max(1e-8, 1e-3 * stddev.maxCoeff());
        inv_std = stddev.unaryExpr([floor_dev](double s) { return 1.0 / std::max(s, floor_dev); });
    }
};

// One optimizer step on a horizon batch: per-horizon masks are drawn from
// (seed, step, index); gradients accumulate across the batch mean.
inline double mae_train_step(const KmvMae& model, ParameterStore& params, AdamState& opt,
                             const std::vector<const HorizonData*>& batch, double lr,
                             std::uint64_t seed, long step) {
    if (batch.empty()) throw ContractError("mae_train_step: empty batch");
    std::vector<MatX> grads;
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        Tape<Real> tape;
        VarMap<Real> vars;
        vars.bind(tape, params);
        const MaskSpec mask =
            sample_mask(model.config().views, batch[i]->frames, model.config().patches(),
                        model.config().mask_ratio,
                        seed_for(seed, "mae/" + std::to_string(step) + "/" + std::to_string(i)));
        Var<Real> l = model.loss(tape, vars, *batch[i], mask);
        total += l.scalar() * inv;
        tape.backward(l);
        std::vector<MatX> g = vars.grads(tape, params);
        if (grads.empty()) {
            grads = std::move(g);
            for (auto& m : grads) m *= inv;
        } else {
            for (size_t j = 0; j < grads.size(); ++j) grads[j] += g[j] * inv;
        }
    }
    optimizer_step(params, grads, opt, lr);
    return total;
}

}  // namespace khwm::mae
