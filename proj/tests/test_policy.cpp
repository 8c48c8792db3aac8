#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "khwm/core/gradcheck.hpp"
#include "khwm/policy/actor_critic.hpp"
#include "khwm/sim/sim.hpp"

using namespace khwm;
using namespace khwm::policy;

namespace {

// Independent oracle: n-step return mixture instead of the recursion.
//   V_t = (1-lambda) * sum_{n=1}^{H-1-t} lambda^{n-1} G_t^n
//         + lambda^{H-1-t} G_t^{H-t},         V_H = v_H,
// with G_t^n = r_t + ... + gamma^{n-1} r_{t+n-1} + gamma^n v_{t+n}.
VecX lambda_oracle(const VecX& r, const VecX& v, double gamma, double lambda) {
    const Index H = r.size();
    auto nstep = [&](Index t, Index n) {
        double g = 0.0, disc = 1.0;
        for (Index i = 0; i < n; ++i) {
            g += disc * r(t + i);
            disc *= gamma;
        }
        return g + disc * v(t + n);
    };
    VecX out(H);
    out(H - 1) = v(H - 1);
    for (Index t = 0; t + 1 < H; ++t) {
        double acc = 0.0, lam_pow = 1.0;
        for (Index n = 1; n <= H - 2 - t; ++n) {
            acc += (1.0 - lambda) * lam_pow * nstep(t, n);
            lam_pow *= lambda;
        }
        acc += lam_pow * nstep(t, H - 1 - t);
        out(t) = acc;
    }
    return out;
}

struct TinyStack {
    wm::RssmConfig wm_cfg;
    PolicyConfig pol_cfg;
    wm::Rssm rssm;
    ActorCritic ac;
    ParameterStore theta, psi, xi;

    explicit TinyStack(std::uint64_t seed)
        : wm_cfg([] {
              wm::RssmConfig c;
              c.repr_dim = 8;
              c.deter_dim = 8;
              c.stoch_dim = 4;
              c.action_embed = 4;
              c.hidden = 8;
              return c;
          }()),
          pol_cfg([this] {
              PolicyConfig p;
              p.state_dim = 12;
              p.hidden = 8;
              return p;
          }()),
          rssm(wm_cfg),
          ac(pol_cfg),
          theta(rssm.init_params(seed)),
          psi(ac.init_actor(seed + 1)),
          xi(ac.init_critic(seed + 2)) {}

    wm::LatentState start(Tape<Real>& t, const VarMap<Real>& v, std::uint64_t seed) const {
        Rng rng(seed);
        return rssm.initial_state(t, v, t.constant(rng.normal_matrix(1, wm_cfg.repr_dim)),
                                  rng.normal_matrix(1, wm_cfg.stoch_dim));
    }
};

}  // namespace

TEST_CASE("lambda_returns: worked example") {
    VecX r(2), v(2);
    r << 1.0, 2.0;
    v << 0.5, 0.5;
    VecX out = lambda_returns(r, v, 0.9, 0.8);
    CHECK(out(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out(0) == doctest::Approx(1.45).epsilon(1e-15));
}

TEST_CASE("lambda_returns: collapse at lambda = 0 and telescoping at lambda = 1") {
    Rng rng(3);
    VecX r = VecX::NullaryExpr(6, [&](Index) { return rng.normal(); });
    VecX v = VecX::NullaryExpr(6, [&](Index) { return rng.normal(); });
    VecX flat = lambda_returns(r, v, 0.9, 0.0);
    for (Index t = 0; t + 1 < 6; ++t)
        CHECK(flat(t) == doctest::Approx(r(t) + 0.9 * v(t + 1)).epsilon(1e-14));

    VecX zero_v = VecX::Zero(6);
    VecX suffix = lambda_returns(r, zero_v, 1.0, 1.0);
    double acc = 0.0;
    for (Index t = 4; t >= 0; --t) {
        acc += r(t);  // V_H = v_H = 0, so t < H accumulates plain suffix sums
        CHECK(suffix(t) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("lambda_returns: matches the n-step mixture oracle on random instances") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index H = 1 + static_cast<Index>(rng.below(12));
        VecX r = VecX::NullaryExpr(H, [&](Index) { return rng.normal() * 2.0; });
        VecX v = VecX::NullaryExpr(H, [&](Index) { return rng.normal() * 2.0; });
        double gamma = 0.05 + 0.95 * rng.uniform();
        double lambda = rng.uniform();
        if (trial % 5 == 1) lambda = 0.0;
        if (trial % 5 == 2) lambda = 1.0;
        if (trial % 7 == 3) gamma = 1.0;
        const VecX got = lambda_returns(r, v, gamma, lambda);
        const VecX want = lambda_oracle(r, v, gamma, lambda);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("lambda_returns: contract errors") {
    VecX r(3), v(2);
    r.setZero();
    v.setZero();
    CHECK_THROWS_AS(lambda_returns(r, v, 0.9, 0.5), ContractError);
    VecX v3 = VecX::Zero(3);
    CHECK_THROWS_AS(lambda_returns(r, v3, 0.0, 0.5), ContractError);
    CHECK_THROWS_AS(lambda_returns(r, v3, 0.9, 1.5), ContractError);
}

TEST_CASE("imagine: H=1 contract and noise determinism") {
    TinyStack s(5);
    auto run = [&] {
        Tape<Real> t;
        VarMap<Real> v;
        v.bind(t, s.theta);
        v.bind(t, s.psi);
        v.bind(t, s.xi);
        auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 2), 1, 0.95, 0.9, 42);
        return std::tuple(roll.states.size(), roll.actions.size(), roll.rewards.size(),
                          MatX(roll.actions[0].value()));
    };
    auto [ns, na, nr, act1] = run();
    CHECK(ns == 2);
    CHECK(na == 1);
    CHECK(nr == 1);
    auto [ns2, na2, nr2, act2] = run();
    CHECK(act1 == act2);

    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, s.theta);
    v.bind(t, s.psi);
    CHECK_THROWS_AS(imagine(t, v, s.rssm, s.ac, s.start(t, v, 2), 0, 0.95, 0.9, 1), ContractError);
}

TEST_CASE("imagine: tape lambda-returns equal the plain recursion") {
    TinyStack s(7);
    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, s.theta);
    v.bind(t, s.psi);
    v.bind(t, s.xi);
    const int H = 6;
    auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 3), H, 0.9, 0.8, 11);
    VecX r(H), val(H);
    for (int i = 0; i < H; ++i) {
        r(i) = roll.rewards[static_cast<size_t>(i)].value()(0, 0);
        val(i) = roll.values[static_cast<size_t>(i)].value()(0, 0);
    }
    const VecX plain = lambda_returns(r, val, 0.9, 0.8);
    for (int i = 0; i < H; ++i)
        CHECK(roll.lambda[static_cast<size_t>(i)].value()(0, 0) ==
              doctest::Approx(plain(i)).epsilon(1e-12));
}

TEST_CASE("imagine: gradient of mean predicted reward w.r.t. actor params") {
    TinyStack s(9);
    auto fn = [&](Tape<Real>& t, const VarMap<Real>& v_psi) {
        VarMap<Real> all = v_psi;
        all.bind(t, s.theta);
        all.bind(t, s.xi);
        auto roll = imagine(t, all, s.rssm, s.ac, s.start(t, all, 4), 3, 0.95, 0.9, 13);
        Var<Real> sum = t.constant_scalar(0.0);
        for (auto& rw : roll.rewards) sum = add(sum, mean_all(rw));
        return scale(sum, 1.0 / 3.0);
    };
    CHECK(grad_check(fn, s.psi, {1e-5, 256, 4}) < 1e-4);
}

TEST_CASE("critic_loss: zero when values equal targets; empty horizon is zero") {
    TinyStack s(11);
    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, s.theta);
    v.bind(t, s.psi);
    v.bind(t, s.xi);
    auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 5), 4, 0.95, 0.9, 17);
    // Fabricate targets equal to the critic's own (recomputed) values.
    ImaginedRollout fab = roll;
    for (int i = 0; i + 1 < fab.horizon; ++i) {
        const wm::LatentState& st = fab.states[static_cast<size_t>(i) + 1];
        wm::LatentState frozen{detach(st.h), detach(st.sample), detach(st.mean), detach(st.std)};
        fab.lambda[static_cast<size_t>(i)] =
            s.ac.critic_value(t, v, ActorCritic::state_feature(frozen));
    }
    CHECK(critic_loss(t, v, s.ac, fab).scalar() == doctest::Approx(0.0).epsilon(1e-15));

    auto one = imagine(t, v, s.rssm, s.ac, s.start(t, v, 5), 1, 0.95, 0.9, 17);
    CHECK(critic_loss(t, v, s.ac, one).scalar() == 0.0);
}

TEST_CASE("critic_loss: stop-gradient blocks world model and actor exactly") {
    TinyStack s(13);
    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, s.theta);
    v.bind(t, s.psi);
    v.bind(t, s.xi);
    auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 6), 4, 0.95, 0.9, 19);
    Var<Real> loss = critic_loss(t, v, s.ac, roll);
    t.backward(loss);
    VarMap<Real> check = v;
    for (std::size_t i = 0; i < s.theta.count(); ++i)
        CHECK(t.grad_of(v(Owner::world_model, s.theta.name(i))).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t i = 0; i < s.psi.count(); ++i)
        CHECK(t.grad_of(v(Owner::actor, s.psi.name(i))).cwiseAbs().maxCoeff() == 0.0);
    bool critic_touched = false;
    for (std::size_t i = 0; i < s.xi.count(); ++i)
        critic_touched |= t.grad_of(v(Owner::critic, s.xi.name(i))).cwiseAbs().maxCoeff() > 0.0;
    CHECK(critic_touched);
}

TEST_CASE("critic_loss: gradient check w.r.t. critic params") {
    TinyStack s(15);
    // The stop-gradient targets are extracted once; the loss is then a pure
    // function of the critic parameters.
    CriticBatch batch;
    {
        Tape<Real> t;
        VarMap<Real> v;
        v.bind(t, s.theta);
        v.bind(t, s.psi);
        v.bind(t, s.xi);
        auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 7), 4, 0.95, 0.9, 23);
        batch = critic_targets(roll);
    }
    auto fn = [&](Tape<Real>& t, const VarMap<Real>& v_xi) {
        return critic_loss_on_data(t, v_xi, s.ac, batch);
    };
    CHECK(grad_check(fn, s.xi, {1e-5, 256, 5}) < 1e-4);
}

TEST_CASE("actor_loss: eta=0 without BC reduces to -mean(lambda returns)") {
    TinyStack s(17);
    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, s.theta);
    v.bind(t, s.psi);
    v.bind(t, s.xi);
    auto roll = imagine(t, v, s.rssm, s.ac, s.start(t, v, 8), 5, 0.95, 0.9, 29);
    Var<Real> loss = actor_loss(t, v, s.ac, roll, 0.0, std::nullopt, 0.0);
    double manual = 0.0;
    for (int i = 0; i + 1 < 5; ++i) manual -= roll.lambda[static_cast<size_t>(i)].value()(0, 0);
    manual /= 4.0;
    CHECK(loss.scalar() == doctest::Approx(manual).epsilon(1e-14));

    CHECK_THROWS_AS(actor_loss(t, v, s.ac, roll, 0.0, std::nullopt, 1.0), ContractError);
    CHECK_THROWS_AS(actor_loss(t, v, s.ac, roll, -1.0, std::nullopt, 0.0), ContractError);
}

TEST_CASE("behavior cloning: minimum at the expert action with tiny std") {
    PolicyConfig cfg;
    cfg.state_dim = 4;
    ActorCritic ac(cfg);
    Tape<Real> t;
    MatX expert_action(1, 3);
    expert_action << 0.03, -0.05, 1.0;  // saturated grip still has finite NLL
    const MatX u = ac.unsquash(expert_action);

    auto nll_at = [&](const MatX& mean_raw, double sigma) {
        ActorCritic::ActorDist d;
        d.mean_raw = t.constant(mean_raw);
        d.std = t.constant(MatX::Constant(1, 3, sigma));
        return neg(ac.log_prob_from_u(d, t.constant(u))).scalar();
    };
    const double at_mode = nll_at(u, cfg.sigma_min);
    CHECK(std::isfinite(at_mode));
    // Documented minimum: sum over dims of log(sigma_min) + 0.5 log(2 pi)
    // + log bound + log(1 - tanh(u)^2).
    double expected = 0.0;
    const VecX bounds = cfg.bounds();
    for (int c = 0; c < 3; ++c) {
        const double th = std::tanh(u(0, c));
        expected += std::log(cfg.sigma_min) + 0.5 * std::log(2.0 * M_PI) +
                    std::log(bounds(c)) + std::log(1.0 - th * th);
    }
    CHECK(at_mode == doctest::Approx(expected).epsilon(1e-12));
    CHECK(nll_at(MatX(u.array() + 0.01), cfg.sigma_min) > at_mode);
    CHECK(nll_at(MatX(u.array() - 0.01), cfg.sigma_min) > at_mode);
}

TEST_CASE("actor_loss with BC: gradient check w.r.t. actor params") {
    TinyStack s(19);
    Rng rng(7);
    wm::SequenceBatch expert;
    for (int t2 = 0; t2 <= 3; ++t2) expert.reprs.push_back(rng.normal_matrix(2, s.wm_cfg.repr_dim));
    for (int t2 = 0; t2 < 3; ++t2) {
        MatX a = rng.normal_matrix(2, 3) * 0.03;
        a.col(2).setConstant(t2 % 2 == 0 ? 1.0 : -1.0);
        expert.actions.push_back(a);
        expert.rewards.push_back(VecX::Zero(2));
    }
    auto fn = [&](Tape<Real>& t, const VarMap<Real>& v_psi) {
        VarMap<Real> all = v_psi;
        all.bind(t, s.theta);
        all.bind(t, s.xi);
        auto roll = imagine(t, all, s.rssm, s.ac, s.start(t, all, 9), 4, 0.95, 0.9, 31);
        Var<Real> bc = bc_loss(t, all, s.rssm, s.ac, expert, 37);
        return actor_loss(t, all, s.ac, roll, 3e-4, bc, 1.0);
    };
    CHECK(grad_check(fn, s.psi, {1e-5, 256, 6}) < 1e-4);
}

TEST_CASE("entropy scale: larger eta widens the converged policy (3-seed majority)") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto train = [&](double eta) {
            TinyStack s(100 + seed);  // same fixed world model per seed
            AdamState opt;
            for (int step = 0; step < 250; ++step) {
                Tape<Real> t;
                VarMap<Real> v;
                v.bind(t, s.psi);
                VarMap<Real> all = v;
                all.bind(t, s.theta);
                all.bind(t, s.xi);
                auto roll = imagine(t, all, s.rssm, s.ac, s.start(t, all, 50 + seed), 3, 0.95,
                                    0.9, 1000 + static_cast<std::uint64_t>(step));
                Var<Real> loss = actor_loss(t, all, s.ac, roll, eta, std::nullopt, 0.0);
                t.backward(loss);
                auto grads = v.grads(t, s.psi);
                optimizer_step(s.psi, grads, opt, 1e-2);
            }
            // Mean std at the rollout start state.
            Tape<Real> t;
            VarMap<Real> v;
            v.bind(t, s.psi);
            VarMap<Real> all = v;
            all.bind(t, s.theta);
            auto d = s.ac.actor_dist(t, all, ActorCritic::state_feature(s.start(t, all, 50 + seed)));
            return d.std.value().mean();
        };
        if (train(0.5) > train(0.0)) ++wins;
    }
    CHECK(wins >= 2);
}

TEST_CASE("total objective is the sum of its parts") {
    CHECK(total_objective(1.25, 0.5, 0.125, 2.0) == doctest::Approx(3.875));
}

TEST_CASE("policy_act: in-bounds, deterministic at evaluation") {
    mae::MaeConfig enc_cfg;
    enc_cfg.enc_dim = 8;
    enc_cfg.enc_depth = 1;
    enc_cfg.enc_heads = 2;
    enc_cfg.dec_dim = 8;
    enc_cfg.dec_depth = 1;
    mae::KmvMae encoder_model(enc_cfg);
    ParameterStore phi = encoder_model.init_params(21);
    mae::ControlEncoder encoder{&encoder_model, &phi};

    wm::RssmConfig wm_cfg;
    wm_cfg.repr_dim = enc_cfg.repr_dim();
    wm_cfg.deter_dim = 8;
    wm_cfg.stoch_dim = 4;
    wm_cfg.action_embed = 4;
    wm_cfg.hidden = 8;
    wm::Rssm rssm(wm_cfg);
    ParameterStore theta = rssm.init_params(22);

    PolicyConfig pol_cfg;
    pol_cfg.state_dim = wm_cfg.state_dim();
    pol_cfg.hidden = 8;
    ActorCritic ac(pol_cfg);
    ParameterStore psi = ac.init_actor(23);

    sim::World world(sim::World::task("place-item"));
    auto [state, obs] = world.reset(1);

    AgentSession sa, sb;
    sim::Action a1 = policy_act(encoder, rssm, theta, ac, psi, sa, obs[0]);
    sim::Action a2 = policy_act(encoder, rssm, theta, ac, psi, sb, obs[0]);
    CHECK(a1.dx == a2.dx);
    CHECK(a1.dy == a2.dy);
    CHECK(a1.grip == a2.grip);
    CHECK(std::abs(a1.dx) <= sim::kMaxStep);
    CHECK(std::abs(a1.dy) <= sim::kMaxStep);
    CHECK(std::abs(a1.grip) <= 1.0);

    // The session advances and stays usable across an episode prefix.
    for (int i = 0; i < 5; ++i) {
        sim::StepResult r =
            world.step(state, policy_act(encoder, rssm, theta, ac, psi, sa, obs[0]));
        state = r.state;
        obs = r.obs;
        CHECK(std::isfinite(state.gripper.x()));
    }
}
