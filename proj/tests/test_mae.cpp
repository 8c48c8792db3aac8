#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "khwm/core/gradcheck.hpp"
#include "khwm/mae/model.hpp"

using namespace khwm;
using namespace khwm::mae;

namespace {

MaeConfig tiny_config() {
    MaeConfig cfg;
    cfg.views = 2;
    cfg.image_size = 8;
    cfg.patch = 4;  // P = 4
    cfg.enc_dim = 8;
    cfg.enc_depth = 1;
    cfg.enc_heads = 2;
    cfg.dec_dim = 8;
    cfg.dec_depth = 1;
    cfg.dec_heads = 1;
    cfg.mlp_ratio = 2;
    cfg.max_frames = 4;
    return cfg;
}

HorizonData random_horizon(const MaeConfig& cfg, int frames, std::uint64_t seed) {
    Rng rng(seed);
    HorizonData h;
    h.views = cfg.views;
    h.frames = frames;
    h.pixels.resize(static_cast<size_t>(cfg.views));
    for (int v = 0; v < cfg.views; ++v)
        for (int t = 0; t < frames; ++t) {
            MatX m(cfg.patches(), cfg.patch_pixels());
            for (Index i = 0; i < m.size(); ++i) m(i) = rng.uniform();
            h.pixels[static_cast<size_t>(v)].push_back(std::move(m));
        }
    h.rewards = VecX::Zero(frames);
    for (int t = 0; t < frames; ++t) h.rewards(t) = rng.uniform();
    return h;
}

}  // namespace

TEST_CASE("conv stem: 32x32 input with a 4x4 stride-4 stem gives 64 patches") {
    MaeConfig cfg;  // defaults
    CHECK(cfg.patches() == 64);
    sim::ImageU8 img(32 * 32 * 3, 128);
    MatX patches = patchify(img, cfg.image_size, cfg.patch);
    CHECK(patches.rows() == 64);
    CHECK(patches.cols() == 48);
}

TEST_CASE("conv stem: zero image with zero bias gives zero features") {
    MaeConfig cfg = tiny_config();
    KmvMae model(cfg);
    ParameterStore params = model.init_params(4);  // biases zeroed by init policy
    HorizonData h = random_horizon(cfg, 1, 1);
    for (auto& view : h.pixels)
        for (auto& m : view) m.setZero();
    Tape<Real> tape;
    VarMap<Real> vars;
    vars.bind(tape, params);
    Var<Real> feats = model.stem_features(tape, vars, h);
    CHECK(feats.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv stem: gradient check on one view, one frame") {
    MaeConfig cfg = tiny_config();
    cfg.views = 1;
    KmvMae model(cfg);
    ParameterStore params = model.init_params(5);
    HorizonData h = random_horizon(cfg, 1, 2);
    auto fn = [&](Tape<Real>& t, const VarMap<Real>& v) {
        return mean_all(square(model.stem_features(t, v, h)));
    };
    CHECK(grad_check(fn, params, {1e-5, 256, 0}) < 1e-4);
}

TEST_CASE("sample_mask: exact visible budget, determinism, single-view case") {
    int visible_front = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        MaskSpec m = sample_mask(4, 8, 64, 0.95, seed);
        CHECK(m.visible_count() == 3);  // round(0.05 * 64)
        CHECK(m.visible_view >= 0);
        CHECK(m.visible_view < 4);
        if (m.visible_view == 0) ++visible_front;
    }
    CHECK(visible_front > 20);  // all views get sampled

    MaskSpec a = sample_mask(4, 8, 64, 0.95, 7);
    MaskSpec b = sample_mask(4, 8, 64, 0.95, 7);
    CHECK(a.visible_view == b.visible_view);
    CHECK(a.patch_visible == b.patch_visible);

    MaskSpec single = sample_mask(1, 8, 64, 0.95, 3);
    CHECK(single.visible_view == 0);
    CHECK(single.visible_count() == 3);

    MaskSpec floor = sample_mask(4, 2, 4, 0.95, 3);
    CHECK(floor.visible_count() == 1);  // max(1, round(0.05 * 4))

    CHECK_THROWS_AS(sample_mask(0, 2, 4, 0.95, 1), ContractError);
}

TEST_CASE("reconstruct: output shapes match the contract") {
    MaeConfig cfg = tiny_config();
    KmvMae model(cfg);
    ParameterStore params = model.init_params(6);
    HorizonData h = random_horizon(cfg, 3, 3);
    MaskSpec mask = sample_mask(cfg.views, h.frames, cfg.patches(), cfg.mask_ratio, 11);
    Tape<Real> tape;
    VarMap<Real> vars;
    vars.bind(tape, params);
    auto fw = model.reconstruct(tape, vars, h, mask);
    CHECK(fw.pixel_pred.rows() == static_cast<Index>(cfg.views) * 3 * cfg.patches());
    CHECK(fw.pixel_pred.cols() == cfg.patch_pixels());
    CHECK(fw.reward_pred.rows() == 3);
    CHECK(fw.reward_pred.cols() == 1);
    CHECK(model.pixel_targets(h).rows() == fw.pixel_pred.rows());
}

TEST_CASE("information hiding: masked content never reaches the encoder") {
    MaeConfig cfg = tiny_config();
    KmvMae model(cfg);
    ParameterStore params = model.init_params(8);
    HorizonData h = random_horizon(cfg, 2, 9);
    MaskSpec mask;
    mask.views = cfg.views;
    mask.visible_view = 0;
    mask.patch_visible = {1, 0, 0, 1};

    auto encode = [&](const HorizonData& hh) {
        Tape<Real> tape;
        VarMap<Real> vars;
        vars.bind(tape, params);
        return MatX(model.reconstruct(tape, vars, hh, mask).encoded.value());
    };
    const MatX base = encode(h);

    // Perturb a fully masked view.
    HorizonData h2 = h;
    h2.pixels[1][0].setConstant(0.123);
    CHECK(encode(h2) == base);

    // Perturb masked patches of the visible view.
    HorizonData h3 = h;
    h3.pixels[0][0].row(1).setConstant(0.9);
    h3.pixels[0][1].row(2).setConstant(0.4);
    CHECK(encode(h3) == base);

    // Perturbing a visible patch must change the encoding.
    HorizonData h4 = h;
    h4.pixels[0][0].row(0).setConstant(0.9);
    CHECK(encode(h4) != base);

    // Reconstruction targets still see the masked change.
    CHECK(model.pixel_targets(h2) != model.pixel_targets(h));
}

TEST_CASE("swapping two fully masked views leaves the encoding unchanged") {
    MaeConfig cfg = tiny_config();
    cfg.views = 3;
    KmvMae model(cfg);
    ParameterStore params = model.init_params(10);
    HorizonData h = random_horizon(cfg, 2, 12);
    MaskSpec mask;
    mask.views = cfg.views;
    mask.visible_view = 0;
    mask.patch_visible = {1, 0, 0, 0};

    HorizonData swapped = h;
    std::swap(swapped.pixels[1], swapped.pixels[2]);

    Tape<Real> t1, t2;
    VarMap<Real> v1, v2;
    v1.bind(t1, params);
    v2.bind(t2, params);
    CHECK(model.reconstruct(t1, v1, h, mask).encoded.value() ==
          model.reconstruct(t2, v2, swapped, mask).encoded.value());
}

TEST_CASE("loss: zero iff exact, nonnegative otherwise") {
    Tape<Real> tape;
    MatX p = MatX::Random(6, 4), r = MatX::Random(3, 1);
    Var<Real> vp = tape.constant(p), vr = tape.constant(r);
    CHECK(KmvMae::reconstruction_loss(vp, vp, vr, vr).scalar() == 0.0);
    Var<Real> vp2 = tape.constant(MatX(p.array() + 0.1));
    CHECK(KmvMae::reconstruction_loss(vp2, vp, vr, vr).scalar() > 0.0);
}

TEST_CASE("kmvmae loss: gradient check on the 2-view 2-frame 4-patch toy") {
    MaeConfig cfg = tiny_config();
    KmvMae model(cfg);
    ParameterStore params = model.init_params(13);
    HorizonData h = random_horizon(cfg, 2, 21);
    MaskSpec mask = sample_mask(cfg.views, h.frames, cfg.patches(), cfg.mask_ratio, 5);
    auto fn = [&](Tape<Real>& t, const VarMap<Real>& v) { return model.loss(t, v, h, mask); };
    CHECK(grad_check(fn, params, {1e-5, 320, 0}) < 1e-4);
}

TEST_CASE("training: loss falls on a fixed horizon batch (tiny smoke)") {
    MaeConfig cfg = tiny_config();
    KmvMae model(cfg);
    ParameterStore params = model.init_params(17);
    AdamState opt;
    std::vector<HorizonData> hs{random_horizon(cfg, 2, 31), random_horizon(cfg, 3, 32)};
    std::vector<const HorizonData*> batch{&hs[0], &hs[1]};
    const double first = mae_train_step(model, params, opt, batch, 1e-3, 99, 0);
    double last = first;
    for (long step = 1; step < 60; ++step)
        last = mae_train_step(model, params, opt, batch, 1e-3, 99, step);
    CHECK(last < first);
}

TEST_CASE("bucketing: truncation keeps both keyframe boundaries") {
    using traj::KeyHorizon;
    auto idx = bucketed_frame_indices({10, 20});  // len 11 -> bucket 8
    REQUIRE(idx.size() == 8);
    CHECK(idx.front() == 10);
    CHECK(idx.back() == 20);
    for (size_t i = 1; i + 1 < idx.size(); ++i) CHECK(idx[i] == idx[i - 1] + 1);

    CHECK(bucketed_frame_indices({0, 7}).size() == 8);    // exact bucket
    CHECK(bucketed_frame_indices({0, 4}).size() == 5);    // below smallest bucket: natural
    CHECK(bucketed_frame_indices({0, 39}).size() == 24);  // capped at the largest bucket
    CHECK(bucketed_frame_indices({0, 39}).back() == 39);
}

TEST_CASE("encode_control: deterministic, shaped, patch-position sensitive") {
    MaeConfig cfg;  // full-size defaults
    cfg.enc_depth = 2;
    KmvMae model(cfg);
    ParameterStore params = model.init_params(3);
    sim::ImageU8 img(32 * 32 * 3, 200);
    img[0] = 5;
    VecX a = model.encode_control(params, img);
    VecX b = model.encode_control(params, img);
    CHECK(a == b);
    CHECK(a.size() == cfg.repr_dim());

    sim::ImageU8 img2 = img;
    for (int i = 0; i < 48; ++i) img2[static_cast<size_t>(i)] = 10;  // top-left patch area
    VecX c = model.encode_control(params, img2);
    CHECK(a != c);
}
