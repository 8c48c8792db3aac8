#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "khwm/harness/config.hpp"
#include "khwm/mae/model.hpp"
#include "khwm/policy/actor_critic.hpp"
#include "khwm/reward/program.hpp"
#include "khwm/sim/sim.hpp"
#include "khwm/wm/rssm.hpp"

namespace khwm::harness {

struct EvalOutcome {
    std::vector<double> per_seed;
    double mean = 0.0;
    int episodes = 0;
};

// Four-phase pipeline over one experiment directory:
//   gen-demos -> gen-rewards -> train-mae -> train-agent -> eval
// Every phase is resumable: completed phases leave a .done marker and are
// skipped on re-entry; failures leave a .failed marker and raise PhaseError.
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg, std::string run_dir = "");

    const ExperimentConfig& config() const { return cfg_; }
    const std::string& run_dir() const { return run_dir_; }
    std::string data_dir() const;
    std::string metrics_path() const;
    std::string mae_ckpt_path(std::uint64_t seed) const;
    std::string agent_ckpt_path(std::uint64_t seed) const;
    std::string marker_path(const std::string& phase) const;

    mae::MaeConfig mae_config() const;
    wm::RssmConfig rssm_config() const;
    policy::PolicyConfig policy_config() const;

    void gen_demos();
    void gen_rewards();
    void train_mae(std::uint64_t seed);
    void train_agent(std::uint64_t seed);
    double evaluate_seed(std::uint64_t seed);
    EvalOutcome run();

    reward::RewardProgram load_program() const;

private:
    friend struct AgentTrainer;
    bool marker_done(const std::string& phase) const;
    void mark_done(const std::string& phase);
    void guarded(const std::string& phase, const std::function<void()>& body);
    std::vector<int> horizon_lengths() const;

    ExperimentConfig cfg_;
    std::string run_dir_;
};

// Loads both checkpoints, verifies the agent references exactly that encoder
// file, and runs deterministic evaluation episodes per seed.
EvalOutcome evaluate_policy(const std::string& agent_ckpt, const std::string& mae_ckpt,
                            const std::string& task, int episodes,
                            const std::vector<std::uint64_t>& seeds, int workers = 1);

// Controller-agnostic evaluation used by tests (scripted expert, random
// policy) and by evaluate_policy internally. The factory is invoked once per
// episode; the controller sees the privileged state plus the observation.
using Controller = std::function<sim::Action(const sim::SimState&, const sim::MultiViewObservation&)>;
using ControllerFactory = std::function<Controller(std::uint64_t episode_seed)>;
double evaluate_controller(const sim::World& world, int episodes, std::uint64_t seed,
                           const ControllerFactory& factory, int workers = 1);

// Runs the full config plus its no_llm and no_key variants under
// root/{full,no_llm,no_key}; returns mean success per variant.
std::map<std::string, EvalOutcome> run_ablation(const ExperimentConfig& base,
                                                const std::string& root);

}  // namespace khwm::harness
