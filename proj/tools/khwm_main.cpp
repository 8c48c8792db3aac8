// khwm — key-horizon world-model RL on a deterministic multi-view 2D
// tabletop. Subcommands cover the four pipeline phases plus evaluation,
// plotting, and the ablation suite.
//
// Exit codes: 0 success, 2 configuration error, 3 phase failure.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "khwm/core/errors.hpp"
#include "khwm/harness/experiment.hpp"
#include "khwm/harness/plots.hpp"

using namespace khwm;

namespace {

harness::ExperimentConfig load(const std::string& path) { return harness::load_config(path); }

void for_seeds(const harness::ExperimentConfig& cfg, std::optional<std::uint64_t> only,
               const std::function<void(std::uint64_t)>& body) {
    for (std::uint64_t seed : cfg.seeds) {
        if (only && *only != seed) continue;
        body(seed);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"khwm: staged rewards, key-horizon masked autoencoding, a recurrent world "
                 "model, and imagination-trained control on a 2D multi-view tabletop"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_opt;
    std::string metrics_path, out_dir, agent_ckpt, mae_ckpt;

    auto add_config = [&config_path](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    };

    auto* gen_demos = app.add_subcommand("gen-demos", "generate scripted expert demonstrations");
    add_config(gen_demos);
    auto* gen_rewards =
        app.add_subcommand("gen-rewards", "build the stage plan and dense reward program, "
                                          "attach rewards to the dataset");
    add_config(gen_rewards);
    auto* train_mae = app.add_subcommand("train-mae", "pretrain the masked autoencoder");
    add_config(train_mae);
    train_mae->add_option("--seed", seed_opt, "train only this seed");
    auto* train_agent =
        app.add_subcommand("train-agent", "train the world model and actor-critic");
    add_config(train_agent);
    train_agent->add_option("--seed", seed_opt, "train only this seed");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate trained policies");
    add_config(eval_cmd);
    eval_cmd->add_option("--seed", seed_opt, "evaluate only this seed");
    eval_cmd->add_option("--agent-checkpoint", agent_ckpt, "explicit agent checkpoint");
    eval_cmd->add_option("--mae-checkpoint", mae_ckpt, "explicit encoder checkpoint");
    auto* plot = app.add_subcommand("plot", "emit SVG learning curves and a CSV mirror");
    plot->add_option("--metrics", metrics_path, "metrics.jsonl file")->required();
    plot->add_option("--out", out_dir, "output directory")->required();
    auto* ablate = app.add_subcommand("ablate", "run full, no_llm, and no_key variants");
    add_config(ablate);
    auto* run = app.add_subcommand("run", "run the full pipeline end to end");
    add_config(run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_demos->parsed()) {
            harness::Experiment(load(config_path)).gen_demos();
        } else if (gen_rewards->parsed()) {
            harness::Experiment exp(load(config_path));
            exp.gen_demos();  // rewards attach to an existing dataset
            exp.gen_rewards();
        } else if (train_mae->parsed()) {
            harness::Experiment exp(load(config_path));
            for_seeds(exp.config(), seed_opt, [&](std::uint64_t s) { exp.train_mae(s); });
        } else if (train_agent->parsed()) {
            harness::Experiment exp(load(config_path));
            for_seeds(exp.config(), seed_opt, [&](std::uint64_t s) { exp.train_agent(s); });
        } else if (eval_cmd->parsed()) {
            harness::Experiment exp(load(config_path));
            if (!agent_ckpt.empty() || !mae_ckpt.empty()) {
                if (agent_ckpt.empty() || mae_ckpt.empty())
                    throw ConfigError("--agent-checkpoint and --mae-checkpoint go together");
                auto out = harness::evaluate_policy(agent_ckpt, mae_ckpt, exp.config().task,
                                                    exp.config().eval_episodes,
                                                    exp.config().seeds,
                                                    exp.config().parallel_workers);
                std::printf("mean success %.3f over %d episodes x %zu seeds\n", out.mean,
                            out.episodes, out.per_seed.size());
            } else {
                double sum = 0.0;
                int n = 0;
                for_seeds(exp.config(), seed_opt, [&](std::uint64_t s) {
                    const double rate = exp.evaluate_seed(s);
                    std::printf("seed %llu success %.3f\n",
                                static_cast<unsigned long long>(s), rate);
                    sum += rate;
                    ++n;
                });
                if (n > 0) std::printf("mean success %.3f\n", sum / n);
            }
        } else if (plot->parsed()) {
            harness::emit_plots(metrics_path, out_dir);
        } else if (ablate->parsed()) {
            harness::ExperimentConfig cfg = load(config_path);
            auto results = harness::run_ablation(cfg, cfg.out_dir);
            for (const auto& [name, outcome] : results)
                std::printf("%-8s mean success %.3f\n", name.c_str(), outcome.mean);
        } else if (run->parsed()) {
            auto out = harness::Experiment(load(config_path)).run();
            std::printf("mean success %.3f over %zu seeds\n", out.mean, out.per_seed.size());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const PhaseError& e) {
        std::fprintf(stderr, "phase failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
