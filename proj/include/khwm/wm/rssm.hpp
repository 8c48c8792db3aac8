#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "khwm/core/params.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/tape.hpp"

namespace khwm::wm {

struct RssmConfig {
    int repr_dim = 256;    // frozen-encoder representation width
    int deter_dim = 128;   // recurrent state h
    int stoch_dim = 16;    // stochastic state
    int action_dim = 3;
    int action_embed = 16;
    int hidden = 128;
    // Smooth std bound: sigma = min + (max - min) * sigmoid(raw).
    double sigma_min = 1e-3;
    double sigma_max = 2.0;

    int state_dim() const { return deter_dim + stoch_dim; }
};

// Batched latent state (rows = batch). sample = mean + std * recorded noise.
struct LatentState {
    Var<Real> h;
    Var<Real> sample;
    Var<Real> mean;
    Var<Real> std;
};

// Closed-form KL between diagonal Gaussians, KL(q || p); the independent
// reference used by the Monte-Carlo oracle tests.
inline double diag_gaussian_kl(const VecX& mu_q, const VecX& std_q, const VecX& mu_p,
                               const VecX& std_p) {
    double kl = 0.0;
    for (Index i = 0; i < mu_q.size(); ++i) {
        const double vq = std_q(i) * std_q(i), vp = std_p(i) * std_p(i);
        kl += std::log(std_p(i) / std_q(i)) +
              (vq + (mu_q(i) - mu_p(i)) * (mu_q(i) - mu_p(i))) / (2.0 * vp) - 0.5;
    }
    return kl;
}

// Training inputs for one sequence batch: representations z_0..z_T from the
// frozen encoder, executed actions a_0..a_{T-1}, rewards r_1..r_T.
struct SequenceBatch {
    std::vector<MatX> reprs;    // T+1 of B x repr_dim
    std::vector<MatX> actions;  // T of B x action_dim
    std::vector<VecX> rewards;  // T of length B

    int steps() const { return static_cast<int>(actions.size()); }
    Index batch() const { return reprs.empty() ? 0 : reprs[0].rows(); }
};

// Recurrent state-space model over frozen autoencoder representations: a
// gated recurrent core shared by posterior and prior, diagonal-Gaussian
// stochastic state, and representation/reward decoder heads.
class Rssm {
public:
    explicit Rssm(RssmConfig cfg) : cfg_(cfg) {}

    const RssmConfig& config() const { return cfg_; }

    std::vector<LayerSpec> layer_spec() const {
        std::vector<LayerSpec> spec;
        const int in = cfg_.stoch_dim + cfg_.action_embed;
        spec.push_back({"act/w", cfg_.action_dim, cfg_.action_embed});
        spec.push_back({"act/b", 1, cfg_.action_embed, cfg_.action_dim});
        for (const char* gate : {"r", "u", "c"}) {
            spec.push_back({std::string("gru/wx") + gate, in, cfg_.deter_dim});
            spec.push_back({std::string("gru/wh") + gate, cfg_.deter_dim, cfg_.deter_dim});
            spec.push_back({std::string("gru/b") + gate, 1, cfg_.deter_dim, in});
        }
        spec.push_back({"post/w1", cfg_.deter_dim + cfg_.repr_dim, cfg_.hidden});
        spec.push_back({"post/b1", 1, cfg_.hidden, cfg_.deter_dim + cfg_.repr_dim});
        spec.push_back({"post/w2", cfg_.hidden, 2 * cfg_.stoch_dim, cfg_.hidden});
        spec.push_back({"post/b2", 1, 2 * cfg_.stoch_dim, cfg_.hidden});
        spec.push_back({"prior/w1", cfg_.deter_dim, cfg_.hidden});
        spec.push_back({"prior/b1", 1, cfg_.hidden, cfg_.deter_dim});
        spec.push_back({"prior/w2", cfg_.hidden, 2 * cfg_.stoch_dim, cfg_.hidden});
        spec.push_back({"prior/b2", 1, 2 * cfg_.stoch_dim, cfg_.hidden});
        spec.push_back({"dec/w1", cfg_.state_dim(), cfg_.hidden});
        spec.push_back({"dec/b1", 1, cfg_.hidden, cfg_.state_dim()});
        spec.push_back({"dec/w2", cfg_.hidden, cfg_.repr_dim, cfg_.hidden});
        spec.push_back({"dec/b2", 1, cfg_.repr_dim, cfg_.hidden});
        spec.push_back({"rew/w1", cfg_.state_dim(), cfg_.hidden});
        spec.push_back({"rew/b1", 1, cfg_.hidden, cfg_.state_dim()});
        spec.push_back({"rew/w2", cfg_.hidden, 1, cfg_.hidden});
        spec.push_back({"rew/b2", 1, 1, cfg_.hidden});
        return spec;
    }

    ParameterStore init_params(std::uint64_t seed) const {
        ParameterStore store = seeded_init(Owner::world_model, layer_spec(), seed);
        apply_init_overrides(store);
        return store;
    }

    Var<Real> embed_action(Tape<Real>& t, const VarMap<Real>& v, Var<Real> action) const {
        (void)t;
        return affine(action, v(Owner::world_model, "act/w"), v(Owner::world_model, "act/b"));
    }

    // Shared recurrent core; posterior and prior advance h identically.
    Var<Real> advance_h(Tape<Real>& t, const VarMap<Real>& v, const LatentState& prev,
                        Var<Real> action_embed) const {
        (void)t;
        const auto W = [&v](const std::string& n) { return v(Owner::world_model, n); };
        Var<Real> x = hcat<Real>({prev.sample, action_embed});
        Var<Real> r = sigmoid(add(add(matmul(x, W("gru/wxr")), matmul(prev.h, W("gru/whr"))),
                                  repeat_row(W("gru/br"), x.rows())));
        Var<Real> u = sigmoid(add(add(matmul(x, W("gru/wxu")), matmul(prev.h, W("gru/whu"))),
                                  repeat_row(W("gru/bu"), x.rows())));
        Var<Real> c = tanh(add(add(matmul(x, W("gru/wxc")), matmul(cmul(r, prev.h), W("gru/whc"))),
                               repeat_row(W("gru/bc"), x.rows())));
        // h' = u*h + (1-u)*c
        return add(cmul(u, prev.h), sub(c, cmul(u, c)));
    }

    LatentState initial_state(Tape<Real>& t, const VarMap<Real>& v, Var<Real> z0,
                              const MatX& noise) const {
        Var<Real> h = t.constant(MatX::Zero(z0.rows(), cfg_.deter_dim));
        return stochastic(t, v, "post", hcat<Real>({h, z0}), h, noise);
    }

    LatentState posterior_update(Tape<Real>& t, const VarMap<Real>& v, const LatentState& prev,
                                 Var<Real> action, Var<Real> z, const MatX& noise) const {
        Var<Real> h = advance_h(t, v, prev, embed_action(t, v, action));
        return stochastic(t, v, "post", hcat<Real>({h, z}), h, noise);
    }

    LatentState prior_predict(Tape<Real>& t, const VarMap<Real>& v, const LatentState& prev,
                              Var<Real> action, const MatX& noise) const {
        Var<Real> h = advance_h(t, v, prev, embed_action(t, v, action));
        return stochastic(t, v, "prior", h, h, noise);
    }

    struct Heads {
        Var<Real> repr;    // B x repr_dim
        Var<Real> reward;  // B x 1
    };

    Heads decode_heads(Tape<Real>& t, const VarMap<Real>& v, const LatentState& s) const {
        (void)t;
        const auto W = [&v](const std::string& n) { return v(Owner::world_model, n); };
        Var<Real> feat = hcat<Real>({s.h, s.sample});
        Heads out;
        out.repr = affine(gelu(affine(feat, W("dec/w1"), W("dec/b1"))), W("dec/w2"), W("dec/b2"));
        out.reward = affine(gelu(affine(feat, W("rew/w1"), W("rew/b1"))), W("rew/w2"), W("rew/b2"));
        return out;
    }

    // Per-batch-row KL(q || p) summed over stochastic dims, as a B x 1 var.
    static Var<Real> kl_term(Var<Real> mean_q, Var<Real> std_q, Var<Real> mean_p,
                             Var<Real> std_p) {
        Tape<Real>& t = *mean_q.tape;
        Var<Real> var_q = square(std_q), var_p = square(std_p);
        Var<Real> delta = square(sub(mean_q, mean_p));
        Var<Real> terms = add(sub(log(std_p), log(std_q)),
                              add_const(cdiv(add(var_q, delta), scale(var_p, 2.0)), -0.5));
        Var<Real> ones = t.constant(MatX::Ones(terms.cols(), 1));
        return matmul(terms, ones);
    }

    // Posterior filtering pass; returns states s_0..s_T (needed by both the
    // world-model loss and behavior cloning).
    std::vector<LatentState> posterior_roll(Tape<Real>& t, const VarMap<Real>& v,
                                            const SequenceBatch& seq,
                                            std::uint64_t noise_seed) const {
        if (seq.reprs.size() != seq.actions.size() + 1 ||
            seq.rewards.size() != seq.actions.size())
            throw ContractError("posterior_roll: misaligned sequence batch");
        Rng rng(seed_for(noise_seed, "posterior"));
        const Index b = seq.batch();
        std::vector<LatentState> states;
        states.push_back(initial_state(t, v, t.constant(seq.reprs[0]),
                                       rng.normal_matrix(b, cfg_.stoch_dim)));
        for (int i = 0; i < seq.steps(); ++i) {
            states.push_back(posterior_update(t, v, states.back(),
                                              t.constant(seq.actions[static_cast<size_t>(i)]),
                                              t.constant(seq.reprs[static_cast<size_t>(i) + 1]),
                                              rng.normal_matrix(b, cfg_.stoch_dim)));
        }
        return states;
    }

    struct WmOutputs {
        Var<Real> loss;
        std::vector<LatentState> states;  // posterior s_0..s_T
    };

    // Negative variational bound: representation NLL + reward NLL +
    // beta * KL(posterior || prior), summed over t = 1..T, averaged over the
    // batch. NLLs are unit-variance Gaussian, constant offsets dropped.
    Var<Real> wm_loss(Tape<Real>& t, const VarMap<Real>& v, const SequenceBatch& seq, double beta,
                      std::uint64_t noise_seed) const {
        return wm_loss_with_states(t, v, seq, beta, noise_seed).loss;
    }

    WmOutputs wm_loss_with_states(Tape<Real>& t, const VarMap<Real>& v, const SequenceBatch& seq,
                                  double beta, std::uint64_t noise_seed) const {
        if (beta <= 0.0) throw ContractError("wm_loss: beta must be > 0");
        Rng rng(seed_for(noise_seed, "posterior"));
        const Index b = seq.batch();
        WmOutputs out;
        LatentState state = initial_state(t, v, t.constant(seq.reprs[0]),
                                          rng.normal_matrix(b, cfg_.stoch_dim));
        out.states.push_back(state);
        Var<Real> total = t.constant_scalar(0.0);
        for (int i = 0; i < seq.steps(); ++i) {
            Var<Real> action = t.constant(seq.actions[static_cast<size_t>(i)]);
            Var<Real> h = advance_h(t, v, state, embed_action(t, v, action));
            const MatX noise = rng.normal_matrix(b, cfg_.stoch_dim);
            LatentState post =
                stochastic(t, v, "post", hcat<Real>({h, t.constant(seq.reprs[static_cast<size_t>(i) + 1])}), h, noise);
            LatentState prior = stochastic(t, v, "prior", h, h, noise);

            Heads heads = decode_heads(t, v, post);
            Var<Real> repr_err =
                sub(heads.repr, t.constant(seq.reprs[static_cast<size_t>(i) + 1]));
            Var<Real> ones_r = t.constant(MatX::Ones(cfg_.repr_dim, 1));
            Var<Real> repr_nll = scale(matmul(square(repr_err), ones_r), 0.5);  // B x 1
            Var<Real> rew_err = sub(heads.reward, t.constant(MatX(seq.rewards[static_cast<size_t>(i)])));
            Var<Real> rew_nll = scale(square(rew_err), 0.5);
            Var<Real> kl = kl_term(post.mean, post.std, prior.mean, prior.std);
            Var<Real> step_loss = add(add(repr_nll, rew_nll), scale(kl, beta));
            total = add(total, mean_all(step_loss));
            state = post;
            out.states.push_back(state);
        }
        if (!std::isfinite(total.scalar())) throw NumericError("wm_loss is non-finite");
        out.loss = total;
        return out;
    }

private:
    // Gaussian parameter head: two-layer MLP on `input`, smooth-bounded std,
    // reparameterized sample with the recorded noise.
    LatentState stochastic(Tape<Real>& t, const VarMap<Real>& v, const std::string& head,
                           Var<Real> input, Var<Real> h, const MatX& noise) const {
        const auto W = [&v, &head](const std::string& n) {
            return v(Owner::world_model, head + "/" + n);
        };
        Var<Real> hid = gelu(affine(input, W("w1"), W("b1")));
        Var<Real> params = affine(hid, W("w2"), W("b2"));
        Var<Real> mean = cols_block(params, 0, cfg_.stoch_dim);
        Var<Real> raw = cols_block(params, cfg_.stoch_dim, cfg_.stoch_dim);
        Var<Real> std =
            add_const(scale(sigmoid(raw), cfg_.sigma_max - cfg_.sigma_min), cfg_.sigma_min);
        if (noise.rows() != mean.rows() || noise.cols() != mean.cols())
            throw ContractError("stochastic: noise shape mismatch");
        Var<Real> sample = add(mean, cmul(std, t.constant(noise)));
        return LatentState{h, sample, mean, std};
    }

    RssmConfig cfg_;
};

}  // namespace khwm::wm
