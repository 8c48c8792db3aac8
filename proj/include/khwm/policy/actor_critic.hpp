#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "khwm/core/params.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/tape.hpp"
#include "khwm/mae/model.hpp"
#include "khwm/sim/sim.hpp"
#include "khwm/wm/rssm.hpp"

namespace khwm::policy {

struct PolicyConfig {
    int state_dim = 144;  // deter + stoch of the world model
    int action_dim = 3;
    int hidden = 128;
    double sigma_min = 1e-3;
    double sigma_max = 1.0;
    // Squash scales per action dimension: displacement in [-move_bound,
    // move_bound], grip in [-1, 1].
    double move_bound = sim::kMaxStep;

    VecX bounds() const {
        VecX b(3);
        b << move_bound, move_bound, 1.0;
        return b;
    }
};

// lambda-return with terminal critic bootstrap:
//   V_H = v_H;  V_t = r_t + gamma * ((1 - lambda) * v_{t+1} + lambda * V_{t+1})
// over rewards r_1..H and values v_1..H (index 0 holds t = 1).
inline VecX lambda_returns(const VecX& rewards, const VecX& values, double gamma, double lambda) {
    if (rewards.size() != values.size()) throw ContractError("lambda_returns: length mismatch");
    if (rewards.size() < 1) throw ContractError("lambda_returns: empty horizon");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("lambda_returns: gamma outside (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lambda_returns: lambda outside [0, 1]");
    const Index H = rewards.size();
    VecX out(H);
    out(H - 1) = values(H - 1);
    for (Index t = H - 2; t >= 0; --t)
        out(t) = rewards(t) + gamma * ((1.0 - lambda) * values(t + 1) + lambda * out(t + 1));
    return out;
}

// Squashed-Gaussian actor and scalar critic over world-model states.
class ActorCritic {
public:
    explicit ActorCritic(PolicyConfig cfg) : cfg_(cfg) {}

    const PolicyConfig& config() const { return cfg_; }

    std::vector<LayerSpec> actor_spec() const {
        return {{"actor/w1", cfg_.state_dim, cfg_.hidden},
                {"actor/b1", 1, cfg_.hidden, cfg_.state_dim},
                {"actor/w2", cfg_.hidden, 2 * cfg_.action_dim, cfg_.hidden},
                {"actor/b2", 1, 2 * cfg_.action_dim, cfg_.hidden}};
    }
    std::vector<LayerSpec> critic_spec() const {
        return {{"critic/w1", cfg_.state_dim, cfg_.hidden},
                {"critic/b1", 1, cfg_.hidden, cfg_.state_dim},
                {"critic/w2", cfg_.hidden, 1, cfg_.hidden},
                {"critic/b2", 1, 1, cfg_.hidden}};
    }

    ParameterStore init_actor(std::uint64_t seed) const {
        ParameterStore s = seeded_init(Owner::actor, actor_spec(), seed);
        apply_init_overrides(s);
        return s;
    }
    ParameterStore init_critic(std::uint64_t seed) const {
        ParameterStore s = seeded_init(Owner::critic, critic_spec(), seed);
        apply_init_overrides(s);
        return s;
    }

    struct ActorDist {
        Var<Real> mean_raw;  // pre-squash mean, B x A
        Var<Real> std;       // bounded, B x A
    };

    static Var<Real> state_feature(const wm::LatentState& s) {
        return hcat<Real>({s.h, s.sample});
    }

    ActorDist actor_dist(Tape<Real>& t, const VarMap<Real>& v, Var<Real> state) const {
        (void)t;
        Var<Real> hid = gelu(affine(state, v(Owner::actor, "actor/w1"), v(Owner::actor, "actor/b1")));
        Var<Real> out = affine(hid, v(Owner::actor, "actor/w2"), v(Owner::actor, "actor/b2"));
        ActorDist d;
        d.mean_raw = cols_block(out, 0, cfg_.action_dim);
        d.std = add_const(scale(sigmoid(cols_block(out, cfg_.action_dim, cfg_.action_dim)),
                                cfg_.sigma_max - cfg_.sigma_min),
                          cfg_.sigma_min);
        return d;
    }

    Var<Real> critic_value(Tape<Real>& t, const VarMap<Real>& v, Var<Real> state) const {
        (void)t;
        Var<Real> hid =
            gelu(affine(state, v(Owner::critic, "critic/w1"), v(Owner::critic, "critic/b1")));
        return affine(hid, v(Owner::critic, "critic/w2"), v(Owner::critic, "critic/b2"));
    }

    // action = bounds * tanh(u), columnwise.
    Var<Real> squash(Var<Real> u) const {
        Tape<Real>& t = *u.tape;
        Var<Real> scales = t.constant(cfg_.bounds().transpose());
        return cmul(tanh(u), repeat_row(scales, u.rows()));
    }

    // Pre-squash coordinates of an executed action, clipped into the open
    // interval so saturated expert actions keep finite likelihoods.
    MatX unsquash(const MatX& actions) const {
        const VecX b = cfg_.bounds();
        MatX u(actions.rows(), actions.cols());
        for (Index r = 0; r < actions.rows(); ++r)
            for (Index c = 0; c < actions.cols(); ++c) {
                double a = actions(r, c) / b(c);
                a = std::clamp(a, -0.999, 0.999);
                u(r, c) = std::atanh(a);
            }
        return u;
    }

    // log p(a) for a = squash(u): Gaussian log-density of u minus the squash
    // Jacobian log-det, summed over action dims (B x 1).
    Var<Real> log_prob_from_u(const ActorDist& d, Var<Real> u) const {
        Tape<Real>& t = *d.mean_raw.tape;
        Var<Real> z = cdiv(sub(u, d.mean_raw), d.std);
        Var<Real> gauss =
            add_const(add(scale(square(z), 0.5), log(d.std)), 0.5 * std::log(2.0 * M_PI));
        // log|da/du| = log(bound) + log(1 - tanh(u)^2)
        Var<Real> jac = log(add_const(neg(square(tanh(u))), 1.0));
        Var<Real> log_bounds = t.constant(cfg_.bounds().array().log().matrix().transpose());
        jac = add(jac, repeat_row(log_bounds, u.rows()));
        Var<Real> nll_terms = add(gauss, jac);  // -(log density) accumulates below
        Var<Real> ones = t.constant(MatX::Ones(nll_terms.cols(), 1));
        return neg(matmul(nll_terms, ones));
    }

    // Base (pre-squash) Gaussian entropy, B x 1.
    Var<Real> entropy(const ActorDist& d) const {
        Tape<Real>& t = *d.mean_raw.tape;
        Var<Real> per_dim = add_const(log(d.std), 0.5 * std::log(2.0 * M_PI * std::exp(1.0)));
        Var<Real> ones = t.constant(MatX::Ones(per_dim.cols(), 1));
        return matmul(per_dim, ones);
    }

private:
    PolicyConfig cfg_;
};

// H-step imagined trajectory through the prior dynamics. `states` has H+1
// entries; rewards/values/lambda hold t = 1..H at index t-1.
struct ImaginedRollout {
    int horizon = 0;
    std::vector<wm::LatentState> states;
    std::vector<Var<Real>> actions;
    std::vector<Var<Real>> entropies;
    std::vector<Var<Real>> rewards;
    std::vector<Var<Real>> values;
    std::vector<Var<Real>> lambda;
};

inline ImaginedRollout imagine(Tape<Real>& t, const VarMap<Real>& v, const wm::Rssm& rssm,
                               const ActorCritic& ac, const wm::LatentState& start, int horizon,
                               double gamma, double lambda_mix, std::uint64_t noise_seed) {
    if (horizon < 1) throw ContractError("imagine: horizon must be >= 1");
    Rng rng(seed_for(noise_seed, "imagine"));
    const Index b = start.h.rows();
    ImaginedRollout out;
    out.horizon = horizon;
    out.states.push_back(start);
    for (int step = 0; step < horizon; ++step) {
        const wm::LatentState& s = out.states.back();
        ActorCritic::ActorDist dist = ac.actor_dist(t, v, ActorCritic::state_feature(s));
        Var<Real> noise = t.constant(rng.normal_matrix(b, ac.config().action_dim));
        Var<Real> u = add(dist.mean_raw, cmul(dist.std, noise));
        Var<Real> action = ac.squash(u);
        out.actions.push_back(action);
        out.entropies.push_back(ac.entropy(dist));
        wm::LatentState next = rssm.prior_predict(
            t, v, s, action, rng.normal_matrix(b, rssm.config().stoch_dim));
        out.states.push_back(next);
        out.rewards.push_back(rssm.decode_heads(t, v, next).reward);
        out.values.push_back(ac.critic_value(t, v, ActorCritic::state_feature(next)));
    }
    // lambda-returns on the tape, terminal bootstrap V_H = v_H.
    std::vector<Var<Real>> lam(static_cast<size_t>(horizon));
    lam[static_cast<size_t>(horizon - 1)] = out.values.back();
    for (int i = horizon - 2; i >= 0; --i) {
        Var<Real> mix = add(scale(out.values[static_cast<size_t>(i) + 1], (1.0 - lambda_mix)),
                            scale(lam[static_cast<size_t>(i) + 1], lambda_mix));
        lam[static_cast<size_t>(i)] = add(out.rewards[static_cast<size_t>(i)], scale(mix, gamma));
    }
    out.lambda = std::move(lam);
    return out;
}

// Stop-gradient extraction for the critic: imagined states and lambda-return
// targets leave the graph as plain data, so no gradient can reach the world
// model, the actor, or the targets themselves.
struct CriticBatch {
    MatX features;  // ((H-1)*B) x state_dim, states t = 1..H-1
    VecX targets;   // matching lambda returns
};

inline CriticBatch critic_targets(const ImaginedRollout& rollout) {
    CriticBatch out;
    if (rollout.horizon < 2) return out;
    const Index b = rollout.states[0].h.rows();
    const Index dim = rollout.states[0].h.cols() + rollout.states[0].sample.cols();
    out.features.resize(static_cast<Index>(rollout.horizon - 1) * b, dim);
    out.targets.resize(static_cast<Index>(rollout.horizon - 1) * b);
    for (int i = 0; i + 1 < rollout.horizon; ++i) {
        const wm::LatentState& s = rollout.states[static_cast<size_t>(i) + 1];
        out.features.middleRows(static_cast<Index>(i) * b, b)
            << s.h.value(), s.sample.value();
        out.targets.segment(static_cast<Index>(i) * b, b) =
            rollout.lambda[static_cast<size_t>(i)].value().col(0);
    }
    return out;
}

// Mean over t = 1..H-1 (and batch) of 0.5 * (v(s_t) - sg(V^lambda_t))^2.
inline Var<Real> critic_loss_on_data(Tape<Real>& t, const VarMap<Real>& v, const ActorCritic& ac,
                                     const CriticBatch& batch) {
    if (batch.features.rows() == 0) return t.constant_scalar(0.0);
    Var<Real> value = ac.critic_value(t, v, t.constant(batch.features));
    Var<Real> target = t.constant(MatX(batch.targets));
    return mean_all(scale(square(sub(value, target)), 0.5));
}

inline Var<Real> critic_loss(Tape<Real>& t, const VarMap<Real>& v, const ActorCritic& ac,
                             const ImaginedRollout& rollout) {
    return critic_loss_on_data(t, v, ac, critic_targets(rollout));
}

// Behavior cloning: expert-action NLL under the actor at posterior states
// recomputed from expert observations (front-view representations).
inline Var<Real> bc_loss(Tape<Real>& t, const VarMap<Real>& v, const wm::Rssm& rssm,
                         const ActorCritic& ac, const wm::SequenceBatch& expert_seq,
                         std::uint64_t noise_seed) {
    std::vector<wm::LatentState> states = rssm.posterior_roll(t, v, expert_seq, noise_seed);
    Var<Real> total = t.constant_scalar(0.0);
    const int steps = expert_seq.steps();
    for (int i = 0; i < steps; ++i) {
        ActorCritic::ActorDist dist =
            ac.actor_dist(t, v, ActorCritic::state_feature(states[static_cast<size_t>(i)]));
        Var<Real> u = t.constant(ac.unsquash(expert_seq.actions[static_cast<size_t>(i)]));
        total = add(total, mean_all(neg(ac.log_prob_from_u(dist, u))));
    }
    return scale(total, 1.0 / static_cast<double>(steps));
}

// Actor objective: mean over t = 1..H-1 of (-V^lambda_t - eta * H[a_t|s_t]),
// plus the weighted behavior-cloning term.
inline Var<Real> actor_loss(Tape<Real>& t, const VarMap<Real>& v, const ActorCritic& ac,
                            const ImaginedRollout& rollout, double eta,
                            std::optional<Var<Real>> bc, double bc_weight) {
    if (eta < 0.0) throw ContractError("actor_loss: eta must be >= 0");
    if (bc_weight > 0.0 && !bc.has_value())
        throw ContractError("actor_loss: BC weight > 0 requires an expert batch");
    Var<Real> total = t.constant_scalar(0.0);
    if (rollout.horizon >= 2) {
        for (int i = 0; i + 1 < rollout.horizon; ++i) {
            Var<Real> term = neg(rollout.lambda[static_cast<size_t>(i)]);
            if (eta > 0.0)
                term = sub(term, scale(rollout.entropies[static_cast<size_t>(i) + 1], eta));
            total = add(total, mean_all(term));
        }
        total = scale(total, 1.0 / static_cast<double>(rollout.horizon - 1));
    }
    if (bc.has_value() && bc_weight > 0.0) total = add(total, scale(*bc, bc_weight));
    return total;
}

// Composite objective: the sense, plan, and act losses evaluate independently
// and add up.
inline double total_objective(double kmvmae, double wm, double critic, double actor_bc) {
    return kmvmae + wm + critic + actor_bc;
}

// ---- deployment path ---- //

// Controller state carried across one episode.
struct AgentSession {
    bool initialized = false;
    MatX h;
    MatX sample;
    Eigen::Vector3d prev_action{0.0, 0.0, 0.0};
};

// Front-view-only control: encode the frame, advance the posterior with zero
// noise, and act with the squashed distribution mean.
inline sim::Action policy_act(const mae::ControlEncoder& encoder, const wm::Rssm& rssm,
                              const ParameterStore& theta, const ActorCritic& ac,
                              const ParameterStore& psi, AgentSession& session,
                              const sim::ImageU8& front) {
    const VecX z = encoder(front);
    Tape<Real> t;
    VarMap<Real> v;
    v.bind(t, theta);
    v.bind(t, psi);
    const MatX zero_noise = MatX::Zero(1, rssm.config().stoch_dim);
    wm::LatentState state;
    if (!session.initialized) {
        state = rssm.initial_state(t, v, t.constant(z.transpose()), zero_noise);
    } else {
        wm::LatentState prev{t.constant(session.h), t.constant(session.sample), Var<Real>{},
                             Var<Real>{}};
        state = rssm.posterior_update(t, v, prev,
                                      t.constant(MatX(session.prev_action.transpose())),
                                      t.constant(z.transpose()), zero_noise);
    }
    ActorCritic::ActorDist dist = ac.actor_dist(t, v, ActorCritic::state_feature(state));
    const MatX mean_action = ac.squash(dist.mean_raw).value();
    session.initialized = true;
    session.h = state.h.value();
    session.sample = state.sample.value();
    session.prev_action = Eigen::Vector3d(mean_action(0, 0), mean_action(0, 1), mean_action(0, 2));
    return {mean_action(0, 0), mean_action(0, 1), mean_action(0, 2)};
}

}  // namespace khwm::policy
