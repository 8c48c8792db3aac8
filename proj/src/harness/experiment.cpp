#include "khwm/harness/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <thread>

#include "khwm/harness/metrics.hpp"
#include "khwm/core/checkpoint.hpp"
#include "khwm/mae/data.hpp"
#include "khwm/reward/llm.hpp"
#include "khwm/sim/expert.hpp"
#include "khwm/traj/replay.hpp"

namespace khwm::harness {

namespace fs = std::filesystem;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Demo steps as replay transitions: pre-action front-view representation,
// executed action, scaled reward of the resulting state.
std::vector<traj::Transition> encode_demo(const mae::ControlEncoder& encoder,
                                          const sim::Demonstration& demo, double reward_scale) {
    std::vector<traj::Transition> ep;
    ep.reserve(static_cast<size_t>(demo.length));
    for (int t = 0; t < demo.length; ++t) {
        traj::Transition tr;
        tr.repr =
            encoder(demo.frames[static_cast<size_t>(t)][static_cast<size_t>(sim::View::front)]);
        const sim::Action& a = demo.actions[static_cast<size_t>(t)];
        tr.action = Eigen::Vector3d(a.dx, a.dy, a.grip);
        tr.reward = demo.rewards[static_cast<size_t>(t)] * reward_scale;
        tr.done = t + 1 == demo.length;
        ep.push_back(std::move(tr));
    }
    return ep;
}

// Stacks replay sequences into a SequenceBatch of exactly `len` actions.
// Rows alternate expert/online when both classes are populated.
wm::SequenceBatch sample_seq_batch(const traj::ReplayBuffer& replay, Rng& rng, int rows, int len,
                                   int repr_dim) {
    wm::SequenceBatch seq;
    seq.reprs.assign(static_cast<size_t>(len) + 1, MatX(rows, repr_dim));
    seq.actions.assign(static_cast<size_t>(len), MatX(rows, 3));
    seq.rewards.assign(static_cast<size_t>(len), VecX(rows));
    for (int r = 0; r < rows; ++r) {
        const bool want_expert = !replay.has_class(false) || (r % 2 == 0);
        std::vector<traj::Transition> run;
        for (int attempt = 0; attempt < 32; ++attempt) {
            const bool expert = attempt < 24 ? want_expert : true;
            if (!replay.has_class(expert)) continue;
            run = replay.sample_sequence(rng, len + 1, expert);
            if (static_cast<int>(run.size()) == len + 1) break;
            run.clear();
        }
        if (run.empty()) throw ContractError("replay has no episode long enough for a sequence");
        for (int i = 0; i <= len; ++i)
            seq.reprs[static_cast<size_t>(i)].row(r) = run[static_cast<size_t>(i)].repr.transpose();
        for (int i = 0; i < len; ++i) {
            seq.actions[static_cast<size_t>(i)].row(r) =
                run[static_cast<size_t>(i)].action.transpose();
            seq.rewards[static_cast<size_t>(i)](r) = run[static_cast<size_t>(i)].reward;
        }
    }
    return seq;
}

struct EpisodeRollout {
    std::vector<traj::Transition> transitions;
    bool success = false;
    int steps = 0;
};

// One environment episode under the learned policy. Stochastic mode samples
// pre-squash action noise for exploration; evaluation uses the mean action.
EpisodeRollout rollout_episode(const sim::World& world, const reward::RewardProgram* program,
                               const mae::ControlEncoder& encoder, const wm::Rssm& rssm,
                               const ParameterStore& theta, const policy::ActorCritic& ac,
                               const ParameterStore& psi, std::uint64_t env_seed, bool stochastic,
                               std::uint64_t noise_seed, double reward_scale) {
    EpisodeRollout out;
    Rng noise(seed_for(noise_seed, "explore"));
    auto [state, obs] = world.reset(env_seed);
    MatX h, sample;
    Eigen::Vector3d prev_action(0.0, 0.0, 0.0);
    bool first = true;
    bool done = false;
    while (!done) {
        const VecX z = encoder(obs[static_cast<size_t>(sim::View::front)]);
        Tape<Real> t;
        VarMap<Real> v;
        v.bind(t, theta);
        v.bind(t, psi);
        const MatX zero_noise = MatX::Zero(1, rssm.config().stoch_dim);
        wm::LatentState s;
        if (first)
            s = rssm.initial_state(t, v, t.constant(z.transpose()), zero_noise);
        else
            s = rssm.posterior_update(t, v,
                                      wm::LatentState{t.constant(h), t.constant(sample), {}, {}},
                                      t.constant(MatX(prev_action.transpose())),
                                      t.constant(z.transpose()), zero_noise);
        first = false;
        auto dist = ac.actor_dist(t, v, policy::ActorCritic::state_feature(s));
        MatX u = dist.mean_raw.value();
        if (stochastic)
            u += dist.std.value().cwiseProduct(noise.normal_matrix(1, u.cols()));
        MatX action(1, 3);
        const VecX bounds = ac.config().bounds();
        for (Index c = 0; c < 3; ++c) action(0, c) = bounds(c) * std::tanh(u(0, c));

        h = s.h.value();
        sample = s.sample.value();
        prev_action = Eigen::Vector3d(action(0, 0), action(0, 1), action(0, 2));

        sim::StepResult r = world.step(state, {action(0, 0), action(0, 1), action(0, 2)});
        traj::Transition tr;
        tr.repr = z;
        tr.action = prev_action;
        if (program)
            tr.reward =
                reward::evaluate_reward(*program, sim::SimStateView(world, r.state)).total *
                reward_scale;
        tr.done = r.done;
        out.transitions.push_back(std::move(tr));
        state = std::move(r.state);
        obs = std::move(r.obs);
        done = r.done;
        out.steps += 1;
    }
    out.success = world.success(state);
    return out;
}

reward::LlmClient make_llm_client() {
    reward::LlmConfig cfg = reward::LlmConfig::from_env();
    if (const char* fixture = std::getenv("KHWM_LLM_FIXTURE")) cfg.fixture_path = fixture;
    return reward::LlmClient(cfg);
}

}  // namespace

Experiment::Experiment(ExperimentConfig cfg, std::string run_dir)
    : cfg_(std::move(cfg)), run_dir_(run_dir.empty() ? cfg_.out_dir : std::move(run_dir)) {
    cfg_.validate();
    fs::create_directories(run_dir_);
    const fs::path cfg_path = fs::path(run_dir_) / "config.json";
    if (!fs::exists(cfg_path)) save_config(cfg_, cfg_path.string());
}

std::string Experiment::data_dir() const { return (fs::path(run_dir_) / "data").string(); }
std::string Experiment::metrics_path() const {
    return (fs::path(run_dir_) / "metrics.jsonl").string();
}
std::string Experiment::mae_ckpt_path(std::uint64_t seed) const {
    return (fs::path(run_dir_) / ("mae_seed" + std::to_string(seed) + ".ckpt")).string();
}
std::string Experiment::agent_ckpt_path(std::uint64_t seed) const {
    return (fs::path(run_dir_) / ("agent_seed" + std::to_string(seed) + ".ckpt")).string();
}
std::string Experiment::marker_path(const std::string& phase) const {
    return (fs::path(run_dir_) / (phase + ".done")).string();
}

bool Experiment::marker_done(const std::string& phase) const {
    return fs::exists(marker_path(phase));
}

void Experiment::mark_done(const std::string& phase) {
    std::ofstream os(marker_path(phase));
    os << "done\n";
}

void Experiment::guarded(const std::string& phase, const std::function<void()>& body) {
    if (marker_done(phase)) return;
    try {
        body();
    } catch (const std::exception& e) {
        std::ofstream os(fs::path(run_dir_) / (phase + ".failed"));
        os << e.what() << "\n";
        throw PhaseError("phase '" + phase + "' failed (resumable marker written): " + e.what());
    }
    mark_done(phase);
}

mae::MaeConfig Experiment::mae_config() const {
    mae::MaeConfig m;
    m.views = sim::kViewCount;
    m.image_size = sim::kImageSize;
    m.enc_dim = cfg_.arch.enc_dim;
    m.enc_depth = cfg_.arch.enc_depth;
    m.enc_heads = cfg_.arch.enc_heads;
    m.dec_dim = cfg_.arch.dec_dim;
    m.dec_depth = cfg_.arch.dec_depth;
    m.dec_heads = cfg_.arch.dec_heads;
    m.mlp_ratio = cfg_.arch.mlp_ratio;
    m.mask_ratio = cfg_.hyper.mask_ratio;
    return m;
}

wm::RssmConfig Experiment::rssm_config() const {
    wm::RssmConfig w;
    w.repr_dim = mae_config().repr_dim();
    w.deter_dim = cfg_.arch.deter_dim;
    w.stoch_dim = cfg_.arch.stoch_dim;
    w.hidden = cfg_.arch.hidden;
    w.action_embed = cfg_.arch.action_embed;
    return w;
}

policy::PolicyConfig Experiment::policy_config() const {
    policy::PolicyConfig p;
    p.state_dim = rssm_config().state_dim();
    p.hidden = cfg_.arch.hidden;
    return p;
}

void Experiment::gen_demos() {
    guarded("gen-demos", [this] {
        sim::World world(sim::World::task(cfg_.task));
        auto demos = sim::generate_demonstrations(world, cfg_.demo_count, cfg_.hyper.seed);
        sim::save_dataset(data_dir(), cfg_.task, demos, cfg_.hyper.seed);
        MetricsWriter writer(metrics_path());
        MetricsRecord rec;
        rec.phase = "gen-demos";
        rec.step = cfg_.demo_count;
        rec.seed = cfg_.hyper.seed;
        rec.metrics["demos"] = cfg_.demo_count;
        writer.append(rec);
    });
}

void Experiment::gen_rewards() {
    guarded("gen-rewards", [this] {
        sim::World world(sim::World::task(cfg_.task));
        const reward::Backend backend =
            cfg_.backend == "llm" ? reward::Backend::llm : reward::Backend::templated;
        reward::LlmClient client = make_llm_client();
        reward::LlmClient* llm = backend == reward::Backend::llm ? &client : nullptr;

        reward::StagePlan plan = reward::describe_plan(cfg_.task, backend, llm);
        reward::RewardProgram program =
            cfg_.no_llm ? reward::success_only_program(cfg_.task)
                        : reward::generate_reward_program(plan, world.schema(), backend, llm);
        const reward::ValidationReport report = reward::validate_program(program, world.schema());

        std::ofstream(fs::path(run_dir_) / "plan.json") << nlohmann::json(plan).dump(2) << "\n";
        std::ofstream(fs::path(run_dir_) / "program.json")
            << nlohmann::json(program).dump(2) << "\n";
        std::ofstream(fs::path(run_dir_) / "validation.json")
            << reward::report_json(report).dump(2) << "\n";
        if (!report.ok()) throw SchemaError("reward program failed validation");

        // Attach rewards to every demonstration step from its state trace.
        sim::DatasetManifest manifest;
        auto demos = sim::load_dataset(data_dir(), cfg_.task, &manifest);
        for (size_t d = 0; d < demos.size(); ++d) {
            for (int t = 0; t < demos[d].length; ++t)
                demos[d].rewards[static_cast<size_t>(t)] =
                    reward::evaluate_reward(
                        program,
                        sim::SimStateView(world, demos[d].states[static_cast<size_t>(t)]))
                        .total;
            sim::write_demo_file(
                (fs::path(data_dir()) / cfg_.task / manifest.demos[d].file).string(), demos[d]);
        }
        manifest.reward_attached = true;
        manifest.reward_program_hash = reward::program_hash(program);
        sim::save_manifest(data_dir(), cfg_.task, manifest);
    });
}

reward::RewardProgram Experiment::load_program() const {
    std::ifstream is(fs::path(run_dir_) / "program.json");
    if (!is) throw IoError("missing program.json; run gen-rewards first");
    nlohmann::json j;
    is >> j;
    return j.get<reward::RewardProgram>();
}

std::vector<int> Experiment::horizon_lengths() const {
    sim::DatasetManifest manifest = sim::load_manifest(data_dir(), cfg_.task);
    std::vector<int> lengths;
    for (const auto& d : manifest.demos) {
        std::vector<traj::KeyHorizon> hs;
        if (cfg_.no_key)
            hs = traj::fixed_windows(d.length, cfg_.no_key_window);
        else
            hs = traj::extract_key_horizons(d.keyframes);
        for (const auto& h : hs)
            lengths.push_back(static_cast<int>(mae::bucketed_frame_indices(h).size()));
    }
    return lengths;
}

void Experiment::train_mae(std::uint64_t seed) {
    guarded("train-mae.seed" + std::to_string(seed), [this, seed] {
        const auto t0 = std::chrono::steady_clock::now();
        sim::DatasetManifest manifest;
        auto demos = sim::load_dataset(data_dir(), cfg_.task, &manifest);
        if (!manifest.reward_attached)
            throw PhaseError("dataset has no attached rewards; run gen-rewards first");
        std::vector<std::vector<int>> keyframes;
        for (const auto& d : manifest.demos) keyframes.push_back(d.keyframes);

        const mae::MaeConfig mcfg = mae_config();
        std::vector<mae::HorizonData> horizons =
            mae::collect_horizons(demos, keyframes, mcfg.image_size, mcfg.patch,
                                  cfg_.hyper.reward_scale, cfg_.no_key, cfg_.no_key_window);
        if (horizons.empty()) throw PhaseError("dataset produced no horizons");

        mae::KmvMae model(mcfg);
        ParameterStore params = model.init_params(seed_for(cfg_.hyper.seed, "mae/" + std::to_string(seed)));
        AdamState opt;
        MetricsWriter writer(metrics_path());
        Rng rng(seed_for(cfg_.hyper.seed, "mae-batch/" + std::to_string(seed)));
        for (int step = 0; step < cfg_.mae_steps; ++step) {
            std::vector<const mae::HorizonData*> batch;
            for (int b = 0; b < cfg_.mae_batch; ++b)
                batch.push_back(&horizons[static_cast<size_t>(rng.below(horizons.size()))]);
            const double loss =
                mae::mae_train_step(model, params, opt, batch, cfg_.hyper.lr_mae, seed, step);
            if (step % 20 == 0 || step + 1 == cfg_.mae_steps) {
                MetricsRecord rec;
                rec.phase = "train-mae";
                rec.step = step;
                rec.seed = seed;
                rec.wall_clock = seconds_since(t0);
                rec.metrics["loss"] = loss;
                writer.append(rec);
            }
        }
        Checkpoint ckpt;
        ckpt.hyper = cfg_.hyper;
        ckpt.refs["mae_config"] = nlohmann::json{{"enc_dim", mcfg.enc_dim},
                                                 {"enc_depth", mcfg.enc_depth},
                                                 {"enc_heads", mcfg.enc_heads},
                                                 {"dec_dim", mcfg.dec_dim},
                                                 {"dec_depth", mcfg.dec_depth},
                                                 {"dec_heads", mcfg.dec_heads},
                                                 {"mlp_ratio", mcfg.mlp_ratio}}
                                       .dump();
        ckpt.stores.push_back(std::move(params));
        ckpt.opt_states["mae"] = std::move(opt);
        save_checkpoint(ckpt, mae_ckpt_path(seed));
    });
}

// Everything the agent phase holds while training.
struct AgentTrainer {
    Experiment& exp;
    const ExperimentConfig& cfg;
    std::uint64_t seed;

    sim::World world;
    reward::RewardProgram program;
    mae::KmvMae encoder_model;
    ParameterStore phi;
    mae::ControlEncoder encoder;
    std::string encoder_hash;
    wm::Rssm rssm;
    policy::ActorCritic ac;
    ParameterStore theta, psi, xi;
    AdamState theta_opt, psi_opt, xi_opt;
    traj::ReplayBuffer replay;
    std::vector<int> lengths;
    Rng rng;
    int episodes_collected = 0;
    int episode_successes_window = 0;
    std::deque<int> recent_success;

    AgentTrainer(Experiment& e, std::uint64_t s)
        : exp(e),
          cfg(e.config()),
          seed(s),
          world(sim::World::task(cfg.task)),
          program(e.load_program()),
          encoder_model(e.mae_config()),
          phi(Owner::autoencoder),
          rssm(e.rssm_config()),
          ac(e.policy_config()),
          theta(Owner::world_model),
          psi(Owner::actor),
          xi(Owner::critic),
          replay(cfg.replay_capacity),
          rng(seed_for(cfg.hyper.seed, "agent/" + std::to_string(s))) {
        Checkpoint mae_ckpt = load_checkpoint(e.mae_ckpt_path(seed));
        phi = mae_ckpt.stores.at(0);
        encoder.model = &encoder_model;
        encoder.params = &phi;
        encoder_hash = file_hash(e.mae_ckpt_path(seed));
        theta = rssm.init_params(seed_for(cfg.hyper.seed, "theta/" + std::to_string(seed)));
        psi = ac.init_actor(seed_for(cfg.hyper.seed, "psi/" + std::to_string(seed)));
        xi = ac.init_critic(seed_for(cfg.hyper.seed, "xi/" + std::to_string(seed)));
        lengths = e.horizon_lengths();
        for (int& l : lengths) l = std::max(2, l);
    }

    void seed_replay(const std::vector<sim::Demonstration>& demos) {
        // Fit the representation standardizer on the raw demo encodings, then
        // store the normalized transitions.
        std::vector<VecX> raw;
        for (const auto& d : demos)
            for (int t = 0; t < d.length; ++t)
                raw.push_back(encoder_model.encode_control(
                    phi, d.frames[static_cast<size_t>(t)][static_cast<size_t>(sim::View::front)]));
        encoder.fit(raw);
        raw.clear();
        for (const auto& d : demos)
            replay.add_episode(encode_demo(encoder, d, cfg.hyper.reward_scale), true);
    }

    int sample_horizon() {
        return lengths[static_cast<size_t>(rng.below(lengths.size()))];
    }

    double wm_update(const wm::SequenceBatch& seq, std::uint64_t noise, MatX* start_h,
                     MatX* start_z) {
        Tape<Real> t;
        VarMap<Real> v;
        v.bind(t, theta);
        auto out = rssm.wm_loss_with_states(t, v, seq, cfg.hyper.beta_kl, noise);
        const double loss = out.loss.scalar();
        t.backward(out.loss);
        optimizer_step(theta, v.grads(t, theta), theta_opt, cfg.hyper.lr_wm);
        // Imagination starts: flatten posterior states (already computed).
        const Index b = seq.batch();
        const Index total = static_cast<Index>(out.states.size()) * b;
        MatX hs(total, rssm.config().deter_dim), zs(total, rssm.config().stoch_dim);
        for (size_t i = 0; i < out.states.size(); ++i) {
            hs.middleRows(static_cast<Index>(i) * b, b) = out.states[i].h.value();
            zs.middleRows(static_cast<Index>(i) * b, b) = out.states[i].sample.value();
        }
        MatX sh(cfg.imagine_batch, hs.cols()), sz(cfg.imagine_batch, zs.cols());
        for (int r = 0; r < cfg.imagine_batch; ++r) {
            const Index pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(total)));
            sh.row(r) = hs.row(pick);
            sz.row(r) = zs.row(pick);
        }
        *start_h = std::move(sh);
        *start_z = std::move(sz);
        return loss;
    }

    struct PolicyLosses {
        double actor = 0.0, critic = 0.0, bc = 0.0;
    };

    PolicyLosses policy_update(const MatX& start_h, const MatX& start_z,
                               const wm::SequenceBatch& bc_seq, std::uint64_t noise) {
        PolicyLosses out;
        policy::CriticBatch critic_batch;
        {
            Tape<Real> t;
            VarMap<Real> v;
            v.bind(t, psi);
            VarMap<Real> all = v;
            all.bind(t, theta);
            all.bind(t, xi);
            wm::LatentState start{t.constant(start_h), t.constant(start_z), {}, {}};
            const int H = sample_horizon();
            auto roll = policy::imagine(t, all, rssm, ac, start, H, cfg.hyper.gamma,
                                        cfg.hyper.lambda_mix, noise);
            Var<Real> bc = policy::bc_loss(t, all, rssm, ac, bc_seq, seed_for(noise, "bc"));
            out.bc = bc.scalar();
            Var<Real> loss =
                policy::actor_loss(t, all, ac, roll, cfg.hyper.eta_entropy, bc, cfg.hyper.bc_weight);
            out.actor = loss.scalar();
            t.backward(loss);
            optimizer_step(psi, v.grads(t, psi), psi_opt, cfg.hyper.lr_actor);
            critic_batch = policy::critic_targets(roll);
        }
        {
            Tape<Real> t;
            VarMap<Real> v;
            v.bind(t, xi);
            Var<Real> loss = policy::critic_loss_on_data(t, v, ac, critic_batch);
            out.critic = loss.scalar();
            t.backward(loss);
            optimizer_step(xi, v.grads(t, xi), xi_opt, cfg.hyper.lr_critic);
        }
        return out;
    }

    void collect_online(std::uint64_t tag) {
        EpisodeRollout ep = rollout_episode(
            world, &program, encoder, rssm, theta, ac, psi,
            seed_for(cfg.hyper.seed, "collect/" + std::to_string(seed) + "/" + std::to_string(tag)),
            true, seed_for(seed, "explore/" + std::to_string(tag)), cfg.hyper.reward_scale);
        if (static_cast<int>(ep.transitions.size()) > cfg.seq_len)
            replay.add_episode(std::move(ep.transitions), false);
        episodes_collected += 1;
        recent_success.push_back(ep.success ? 1 : 0);
        episode_successes_window += ep.success ? 1 : 0;
        if (recent_success.size() > 20) {
            episode_successes_window -= recent_success.front();
            recent_success.pop_front();
        }
    }

    double rolling_success() const {
        if (recent_success.empty()) return 0.0;
        return static_cast<double>(episode_successes_window) /
               static_cast<double>(recent_success.size());
    }
};

void Experiment::train_agent(std::uint64_t seed) {
    guarded("train-agent.seed" + std::to_string(seed), [this, seed] {
        const auto t0 = std::chrono::steady_clock::now();
        AgentTrainer trainer(*this, seed);
        auto demos = sim::load_dataset(data_dir(), cfg_.task);
        trainer.seed_replay(demos);
        demos.clear();
        demos.shrink_to_fit();

        MetricsWriter writer(metrics_path());
        const int bc_len = std::min(cfg_.seq_len, 8);
        for (int update = 0; update < cfg_.agent_updates; ++update) {
            const std::uint64_t noise =
                seed_for(cfg_.hyper.seed, "upd/" + std::to_string(seed) + "/" + std::to_string(update));
            wm::SequenceBatch seq = sample_seq_batch(trainer.replay, trainer.rng, cfg_.seq_batch,
                                                     cfg_.seq_len, rssm_config().repr_dim);
            MatX start_h, start_z;
            const double wm_loss = trainer.wm_update(seq, noise, &start_h, &start_z);
            wm::SequenceBatch bc_seq =
                sample_seq_batch(trainer.replay, trainer.rng, cfg_.bc_batch, bc_len,
                                 rssm_config().repr_dim);
            auto losses = trainer.policy_update(start_h, start_z, bc_seq, seed_for(noise, "pi"));
            if ((update + 1) % cfg_.collect_every == 0)
                trainer.collect_online(static_cast<std::uint64_t>(update));
            if (update % 25 == 0 || update + 1 == cfg_.agent_updates) {
                MetricsRecord rec;
                rec.phase = "train-agent";
                rec.step = update;
                rec.seed = seed;
                rec.wall_clock = seconds_since(t0);
                rec.metrics["wm_loss"] = wm_loss;
                rec.metrics["actor_loss"] = losses.actor;
                rec.metrics["critic_loss"] = losses.critic;
                rec.metrics["bc_loss"] = losses.bc;
                rec.metrics["online_success"] = trainer.rolling_success();
                writer.append(rec);
            }
        }

        Checkpoint ckpt;
        ckpt.hyper = cfg_.hyper;
        ckpt.refs["encoder"] = trainer.encoder_hash;
        ckpt.refs["reward_program"] = reward::program_hash(trainer.program);
        ckpt.refs["task"] = cfg_.task;
        const wm::RssmConfig wcfg = rssm_config();
        const policy::PolicyConfig pcfg = policy_config();
        ckpt.refs["arch"] = nlohmann::json{{"repr_dim", wcfg.repr_dim},
                                           {"deter_dim", wcfg.deter_dim},
                                           {"stoch_dim", wcfg.stoch_dim},
                                           {"hidden", wcfg.hidden},
                                           {"action_embed", wcfg.action_embed},
                                           {"policy_hidden", pcfg.hidden}}
                                 .dump();
        ckpt.stores.push_back(std::move(trainer.theta));
        ckpt.stores.push_back(std::move(trainer.psi));
        ckpt.stores.push_back(std::move(trainer.xi));
        ParameterStore norm(Owner::world_model);
        norm.add("repr_norm/mean", trainer.encoder.mean.transpose());
        norm.add("repr_norm/inv_std", trainer.encoder.inv_std.transpose());
        ckpt.stores.push_back(std::move(norm));
        ckpt.opt_states["theta"] = std::move(trainer.theta_opt);
        ckpt.opt_states["psi"] = std::move(trainer.psi_opt);
        ckpt.opt_states["xi"] = std::move(trainer.xi_opt);
        save_checkpoint(ckpt, agent_ckpt_path(seed));
    });
}

double Experiment::evaluate_seed(std::uint64_t seed) {
    EvalOutcome out = harness::evaluate_policy(agent_ckpt_path(seed), mae_ckpt_path(seed),
                                               cfg_.task, cfg_.eval_episodes, {seed},
                                               cfg_.parallel_workers);
    MetricsWriter writer(metrics_path());
    MetricsRecord rec;
    rec.phase = "eval";
    rec.step = cfg_.eval_episodes;
    rec.seed = seed;
    rec.metrics["success_rate"] = out.per_seed[0];
    writer.append(rec);
    return out.per_seed[0];
}

EvalOutcome Experiment::run() {
    gen_demos();
    gen_rewards();
    EvalOutcome out;
    out.episodes = cfg_.eval_episodes;
    for (std::uint64_t seed : cfg_.seeds) {
        train_mae(seed);
        train_agent(seed);
        out.per_seed.push_back(evaluate_seed(seed));
    }
    for (double r : out.per_seed) out.mean += r;
    out.mean /= static_cast<double>(out.per_seed.size());
    nlohmann::json summary{{"task", cfg_.task},
                           {"per_seed", out.per_seed},
                           {"mean_success", out.mean},
                           {"episodes", out.episodes}};
    std::ofstream(fs::path(run_dir_) / "summary.json") << summary.dump(2) << "\n";
    return out;
}

double evaluate_controller(const sim::World& world, int episodes, std::uint64_t seed,
                           const ControllerFactory& factory, int workers) {
    workers = std::max(1, std::min(workers, episodes));
    std::atomic<int> successes{0};
    auto body = [&](int w) {
        for (int ep = w; ep < episodes; ep += workers) {
            const std::uint64_t ep_seed = seed_for(seed, "eval-ep/" + std::to_string(ep));
            Controller controller = factory(ep_seed);
            auto [state, obs] = world.reset(ep_seed);
            bool done = false;
            while (!done) {
                sim::StepResult r = world.step(state, controller(state, obs));
                state = std::move(r.state);
                obs = std::move(r.obs);
                done = r.done;
            }
            if (world.success(state)) successes.fetch_add(1);
        }
    };
    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(body, w);
        for (auto& th : pool) th.join();
    }
    return static_cast<double>(successes.load()) / static_cast<double>(episodes);
}

EvalOutcome evaluate_policy(const std::string& agent_ckpt, const std::string& mae_ckpt,
                            const std::string& task, int episodes,
                            const std::vector<std::uint64_t>& seeds, int workers) {
    Checkpoint agent = load_checkpoint(agent_ckpt);
    Checkpoint mae_c = load_checkpoint(mae_ckpt);
    const std::string hash = file_hash(mae_ckpt);
    if (agent.refs.count("encoder") == 0 || agent.refs.at("encoder") != hash)
        throw ContractError("incompatible checkpoint hash: agent was trained against encoder " +
                            (agent.refs.count("encoder") ? agent.refs.at("encoder") : "<none>") +
                            " but " + mae_ckpt + " hashes to " + hash);

    // Rebuild model shells from the architecture metadata both checkpoints carry.
    const ParameterStore& phi = mae_c.stores.at(0);
    mae::MaeConfig mcfg;
    {
        nlohmann::json j = nlohmann::json::parse(mae_c.refs.at("mae_config"));
        mcfg.enc_dim = j.at("enc_dim");
        mcfg.enc_depth = j.at("enc_depth");
        mcfg.enc_heads = j.at("enc_heads");
        mcfg.dec_dim = j.at("dec_dim");
        mcfg.dec_depth = j.at("dec_depth");
        mcfg.dec_heads = j.at("dec_heads");
        mcfg.mlp_ratio = j.at("mlp_ratio");
    }
    const ParameterStore& theta = agent.stores.at(0);
    wm::RssmConfig wcfg;
    policy::PolicyConfig pcfg;
    {
        nlohmann::json j = nlohmann::json::parse(agent.refs.at("arch"));
        wcfg.repr_dim = j.at("repr_dim");
        wcfg.deter_dim = j.at("deter_dim");
        wcfg.stoch_dim = j.at("stoch_dim");
        wcfg.hidden = j.at("hidden");
        wcfg.action_embed = j.at("action_embed");
        pcfg.state_dim = wcfg.state_dim();
        pcfg.hidden = j.at("policy_hidden");
    }
    const ParameterStore& psi = agent.stores.at(1);

    mae::KmvMae encoder_model(mcfg);
    mae::ControlEncoder encoder{&encoder_model, &phi};
    if (agent.stores.size() > 3 && agent.stores[3].has("repr_norm/mean")) {
        encoder.mean = agent.stores[3].get("repr_norm/mean").transpose();
        encoder.inv_std = agent.stores[3].get("repr_norm/inv_std").transpose();
    }
    wm::Rssm rssm(wcfg);
    policy::ActorCritic ac(pcfg);
    sim::World world(sim::World::task(task));

    EvalOutcome out;
    out.episodes = episodes;
    for (std::uint64_t seed : seeds) {
        const double rate = evaluate_controller(
            world, episodes, seed,
            [&](std::uint64_t) -> Controller {
                auto session = std::make_shared<policy::AgentSession>();
                return [&, session](const sim::SimState&, const sim::MultiViewObservation& obs) {
                    return policy::policy_act(encoder, rssm, theta, ac, psi, *session,
                                              obs[static_cast<size_t>(sim::View::front)]);
                };
            },
            workers);
        out.per_seed.push_back(rate);
    }
    for (double r : out.per_seed) out.mean += r;
    out.mean /= static_cast<double>(out.per_seed.size());
    return out;
}

std::map<std::string, EvalOutcome> run_ablation(const ExperimentConfig& base,
                                                const std::string& root) {
    std::map<std::string, EvalOutcome> results;
    {
        Experiment full(base, (fs::path(root) / "full").string());
        results["full"] = full.run();
    }
    for (const std::string which : {"no_llm", "no_key"}) {
        Experiment exp(ablation_variant(base, which), (fs::path(root) / which).string());
        results[which] = exp.run();
    }
    nlohmann::json summary;
    for (const auto& [name, outcome] : results)
        summary[name] = {{"mean_success", outcome.mean}, {"per_seed", outcome.per_seed}};
    std::ofstream(fs::path(root) / "ablation_summary.json") << summary.dump(2) << "\n";
    return results;
}

}  // namespace khwm::harness
