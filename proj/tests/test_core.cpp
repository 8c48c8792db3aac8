#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "khwm/core/adam.hpp"
#include "khwm/core/checkpoint.hpp"
#include "khwm/core/gradcheck.hpp"
#include "khwm/core/hyper.hpp"
#include "khwm/core/params.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/tape.hpp"

using namespace khwm;

namespace {

// Grad-checks a single tape op wired into a scalar loss.
double check_op(const LossFn& fn, const std::vector<LayerSpec>& spec, std::uint64_t seed = 3) {
    ParameterStore params = seeded_init(Owner::autoencoder, spec, seed);
    return grad_check(fn, params, {1e-5, 4096, 0});
}

Var<Real> P(Tape<Real>& t, const VarMap<Real>& v, const std::string& name) {
    (void)t;
    return v(Owner::autoencoder, name);
}

}  // namespace

TEST_CASE("tape: arithmetic and matmul gradients") {
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        auto a = P(t, v, "a"), b = P(t, v, "b"), c = P(t, v, "c");
        auto y = matmul(add(a, b), transpose(c));  // 3x5
        auto z = sub(neg(cmul(a, b)), scale(a, 0.5));
        return add(mean_all(square(y)), mean_all(square(z)));
    };
    CHECK(check_op(fn, {{"a", 3, 4}, {"b", 3, 4}, {"c", 5, 4}}) < 1e-7);
}

TEST_CASE("tape: elementwise nonlinearity gradients") {
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        auto a = P(t, v, "a");
        auto y = add(tanh(a), sigmoid(scale(a, 2.0)));
        y = add(y, gelu(a));
        y = add(y, softplus(a));
        y = add(y, exp(scale(a, 0.3)));
        y = cmul(y, y);
        return mean_all(y);
    };
    CHECK(check_op(fn, {{"a", 4, 5}}) < 1e-7);
}

TEST_CASE("tape: log and cdiv gradients") {
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        auto a = P(t, v, "a"), b = P(t, v, "b");
        auto pa = add_const(softplus(a), 0.1);
        auto pb = add_const(softplus(b), 0.1);
        return mean_all(add(log(pa), cdiv(pa, pb)));
    };
    CHECK(check_op(fn, {{"a", 3, 3}, {"b", 3, 3}}) < 1e-7);
}

TEST_CASE("tape: structural op gradients") {
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        auto a = P(t, v, "a");  // 6x4
        auto top = rows_block(a, 0, 3);
        auto bottom = rows_block(a, 3, 3);
        auto swapped = vcat<Real>({bottom, top});
        auto gathered = gather_rows(swapped, {0, 5, 2, 2});
        auto spread = scatter_rows_replace(swapped, {1, 4}, rows_block(gathered, 0, 2));
        auto wide = hcat<Real>({cols_block(spread, 0, 2), cols_block(spread, 2, 2)});
        auto rep = repeat_row(rows_block(wide, 0, 1), 3);
        return add(mean_all(square(spread)),
                   add(mean_all(cmul(gathered, gathered)), mean_all(square(rep))));
    };
    CHECK(check_op(fn, {{"a", 6, 4}}) < 1e-7);
}

TEST_CASE("tape: softmax, layernorm, group mean gradients") {
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        auto a = P(t, v, "a");  // 6x4
        auto g = P(t, v, "g"), b = P(t, v, "b");
        auto sm = softmax_rows(scale(a, 1.7));
        auto ln = layernorm_rows(a, g, b);
        auto gm = group_mean_rows(add(sm, ln), 2);
        return mean_all(square(gm));
    };
    CHECK(check_op(fn, {{"a", 6, 4}, {"g", 1, 4}, {"b", 1, 4}}) < 1e-6);
}

TEST_CASE("tape: detach blocks gradient flow") {
    ParameterStore params = seeded_init(Owner::autoencoder, {{"a", 2, 2}}, 1);
    Tape<Real> tape;
    VarMap<Real> vars;
    vars.bind(tape, params);
    auto a = vars(Owner::autoencoder, "a");
    auto loss = mean_all(cmul(detach(a), a));  // d/da = detach(a) only
    tape.backward(loss);
    MatX g = tape.grad_of(a);
    CHECK((g - params.get("a") / 4.0).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("seeded_init: deterministic, seed-sensitive, validates shapes") {
    std::vector<LayerSpec> spec{{"w", 4, 3}, {"b", 1, 3, 4}};
    ParameterStore a = seeded_init(Owner::actor, spec, 7);
    ParameterStore b = seeded_init(Owner::actor, spec, 7);
    REQUIRE(a.count() == 2);
    CHECK(a.get("w") == b.get("w"));
    CHECK(a.get("b") == b.get("b"));
    CHECK(a.all_finite());

    ParameterStore c = seeded_init(Owner::actor, spec, 8);
    bool differs = (a.get("w").array() != c.get("w").array()).any() ||
                   (a.get("b").array() != c.get("b").array()).any();
    CHECK(differs);

    CHECK_THROWS_AS(seeded_init(Owner::actor, {{"w", 0, 3}}, 1), InvalidSpecError);
    CHECK_THROWS_AS(seeded_init(Owner::actor, {{"w", 3, -1}}, 1), InvalidSpecError);
}

TEST_CASE("grad_check: quadratic loss is exact to 1e-8") {
    ParameterStore params = seeded_init(Owner::critic, {{"p", 5, 2}}, 11);
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        (void)t;
        auto p = v(Owner::critic, "p");
        return scale(sum_all(square(p)), 0.5);
    };
    CHECK(grad_check(fn, params, {1e-5, 4096, 0}) < 1e-8);
}

TEST_CASE("grad_check: exp overflow raises a numeric error") {
    ParameterStore params = seeded_init(Owner::critic, {{"p", 1, 1}}, 11);
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        (void)t;
        return sum_all(exp(scale(v(Owner::critic, "p"), 2000.0)));
    };
    CHECK_THROWS_AS(grad_check(fn, params, {}), NumericError);
}

TEST_CASE("grad_check: eps outside contract is rejected") {
    ParameterStore params = seeded_init(Owner::critic, {{"p", 1, 1}}, 11);
    auto fn = [](Tape<Real>& t, const VarMap<Real>& v) {
        (void)t;
        return sum_all(v(Owner::critic, "p"));
    };
    CHECK_THROWS_AS(grad_check(fn, params, {1e-2, 10, 0}), ContractError);
}

TEST_CASE("optimizer_step: zero gradients leave parameters, count steps") {
    ParameterStore params = seeded_init(Owner::world_model, {{"w", 3, 3}}, 5);
    const MatX before = params.get("w");
    AdamState state;
    optimizer_step(params, {MatX::Zero(3, 3)}, state, 1e-2);
    CHECK(params.get("w") == before);
    CHECK(state.step == 1);
}

TEST_CASE("optimizer_step: NaN gradient names the parameter") {
    ParameterStore params = seeded_init(Owner::world_model, {{"weird", 2, 2}}, 5);
    AdamState state;
    MatX g = MatX::Zero(2, 2);
    g(0, 0) = std::nan("");
    try {
        optimizer_step(params, {g}, state, 1e-2);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("weird") != std::string::npos);
    }
}

TEST_CASE("optimizer_step: shape mismatch is a contract error") {
    ParameterStore params = seeded_init(Owner::world_model, {{"w", 2, 2}}, 5);
    AdamState state;
    CHECK_THROWS_AS(optimizer_step(params, {MatX::Zero(2, 3)}, state, 1e-2), ContractError);
}

TEST_CASE("optimizer_step: converges to the closed-form quadratic minimum") {
    // argmin of 0.5*(p - a)^2 is a.
    const double target = 0.7;
    ParameterStore params(Owner::world_model);
    params.add("p", MatX::Zero(1, 1));
    AdamState state;
    for (int i = 0; i < 200; ++i) {
        MatX g(1, 1);
        g(0, 0) = params.get("p")(0, 0) - target;
        optimizer_step(params, {g}, state, 2e-2);
    }
    CHECK(std::abs(params.get("p")(0, 0) - target) < 1e-3);
}

TEST_CASE("checkpoint: bit-exact round trip") {
    namespace fs = std::filesystem;
    Checkpoint ckpt;
    ckpt.hyper.gamma = 0.913;
    ckpt.hyper.seed = 42;
    ckpt.refs["encoder"] = "deadbeefdeadbeef";
    ckpt.stores.push_back(seeded_init(Owner::autoencoder, {{"w", 7, 3}, {"b", 1, 3, 7}}, 9));
    ckpt.stores.push_back(seeded_init(Owner::actor, {{"w", 2, 5}}, 10));
    AdamState st;
    std::vector<MatX> g{MatX::Random(2, 5)};
    optimizer_step(ckpt.stores[1], g, st, 1e-3);
    ckpt.opt_states["actor"] = st;

    const std::string path = (fs::temp_directory_path() / "khwm_ckpt_test.bin").string();
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);

    CHECK(back.hyper.gamma == ckpt.hyper.gamma);
    CHECK(back.refs.at("encoder") == "deadbeefdeadbeef");
    REQUIRE(back.stores.size() == 2);
    CHECK(back.stores[0].get("w") == ckpt.stores[0].get("w"));
    CHECK(back.stores[0].get("b") == ckpt.stores[0].get("b"));
    CHECK(back.stores[1].get("w") == ckpt.stores[1].get("w"));
    CHECK(back.opt_states.at("actor").step == 1);
    CHECK(back.opt_states.at("actor").m[0] == st.m[0]);
    CHECK(back.opt_states.at("actor").v[0] == st.v[0]);

    // Same bytes -> same hash; the hash pins encoder identity downstream.
    CHECK(file_hash(path) == file_hash(path));
    fs::remove(path);
}

TEST_CASE("hyperparams: bit-exact json round trip and range checks") {
    HyperParams h;
    h.gamma = 0.9321739021831;
    h.lambda_mix = 1.0 / 3.0;
    h.eta_entropy = 3.07e-4;
    nlohmann::json j = h;
    HyperParams back = j.get<HyperParams>();
    CHECK(back.gamma == h.gamma);
    CHECK(back.lambda_mix == h.lambda_mix);
    CHECK(back.eta_entropy == h.eta_entropy);

    nlohmann::json bad = h;
    bad["gamma"] = 1.5;
    CHECK_THROWS_AS(bad.get<HyperParams>(), ConfigError);
    HyperParams zeros;
    zeros.mask_ratio = 1.0;
    CHECK_THROWS_AS(zeros.validate(), ConfigError);
}

TEST_CASE("rng: deterministic streams, label separation") {
    Rng a(7), b(7), c(8);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(7);
    for (int i = 0; i < 100; ++i) differs = differs || (a2.next_u64() != c.next_u64());
    CHECK(differs);
    CHECK(seed_for(1, "x") != seed_for(1, "y"));
    CHECK(seed_for(1, "x") != seed_for(2, "x"));
}
