#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "khwm/core/checkpoint.hpp"
#include "khwm/harness/experiment.hpp"
#include "khwm/harness/metrics.hpp"
#include "khwm/harness/plots.hpp"
#include "khwm/sim/expert.hpp"

using namespace khwm;
using namespace khwm::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig micro_config(const std::string& dir, const std::string& task = "place-item") {
    ExperimentConfig cfg;
    cfg.task = task;
    cfg.demo_count = 4;
    cfg.hyper.seed = 5;
    cfg.arch = ArchConfig{16, 1, 2, 8, 1, 1, 2, 32, 8, 32, 8};
    cfg.seeds = {0};
    cfg.eval_episodes = 3;
    cfg.mae_steps = 4;
    cfg.mae_batch = 2;
    cfg.agent_updates = 6;
    cfg.seq_batch = 3;
    cfg.seq_len = 6;
    cfg.imagine_batch = 4;
    cfg.bc_batch = 2;
    cfg.collect_every = 3;
    cfg.out_dir = dir;
    return cfg;
}

std::string temp_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: json round trip, validation, ablation parity") {
    ExperimentConfig cfg = micro_config("x");
    nlohmann::json j = cfg;
    ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(config_diff(cfg, back).empty());

    nlohmann::json bad = j;
    bad["backend"] = "styrofoam";
    CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);
    nlohmann::json bad2 = j;
    bad2["task"] = "fold-laundry";
    CHECK_THROWS_AS(bad2.get<ExperimentConfig>(), ConfigError);

    // Ablation variants differ from the base config in exactly the flag.
    ExperimentConfig no_llm = ablation_variant(cfg, "no_llm");
    CHECK(config_diff(cfg, no_llm) == std::vector<std::string>{"no_llm"});
    ExperimentConfig no_key = ablation_variant(cfg, "no_key");
    CHECK(config_diff(cfg, no_key) == std::vector<std::string>{"no_key"});
    CHECK_THROWS_AS(ablation_variant(cfg, "no_tape"), ConfigError);
}

TEST_CASE("metrics: append/read round trip, monotone steps, line diagnostics") {
    const std::string dir = temp_dir("khwm_metrics_test");
    fs::create_directories(dir);
    const std::string path = dir + "/metrics.jsonl";
    MetricsWriter writer(path);
    for (int s = 0; s < 5; ++s) {
        MetricsRecord r;
        r.phase = "train-mae";
        r.step = s;
        r.seed = 1;
        r.wall_clock = 0.25 * s;
        r.metrics["loss"] = 1.0 / (1 + s);
        writer.append(r);
    }
    MetricsRecord regress;
    regress.phase = "train-mae";
    regress.step = 2;
    regress.seed = 1;
    CHECK_THROWS_AS(writer.append(regress), ContractError);
    regress.seed = 2;  // a different stream may restart
    CHECK_NOTHROW(writer.append(regress));

    auto records = read_metrics(path);
    REQUIRE(records.size() == 6);
    CHECK(records[0].metrics.at("loss") == 1.0);
    CHECK(records[4].wall_clock == 1.0);

    std::ofstream(path, std::ios::app) << "{ not json }\n";
    try {
        read_metrics(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 7") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("plots: curve count, csv mirror, empty input") {
    const std::string dir = temp_dir("khwm_plots_test");
    fs::create_directories(dir);
    const std::string path = dir + "/metrics.jsonl";
    MetricsWriter writer(path);
    int total_records = 0;
    for (std::uint64_t seed : {0, 1, 2})
        for (int s = 0; s < 4; ++s) {
            MetricsRecord r;
            r.phase = "train-agent";
            r.step = s;
            r.seed = seed;
            r.metrics["wm_loss"] = 10.0 / (1 + s) + static_cast<double>(seed);
            writer.append(r);
            ++total_records;
        }
    emit_plots(path, dir + "/plots");

    // 3 seed curves + 1 mean curve.
    std::ifstream svg(dir + "/plots/plot_train_agent_wm_loss.svg");
    REQUIRE(svg);
    std::string body((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
    size_t curves = 0, at = 0;
    while ((at = body.find("<polyline", at)) != std::string::npos) {
        ++curves;
        at += 9;
    }
    CHECK(curves == 4);

    // CSV rows mirror the records one-to-one.
    std::ifstream csv(dir + "/plots/metrics.csv");
    REQUIRE(csv);
    int rows = -1;  // header
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == total_records);

    // Empty metrics: axes-only plot, no error.
    const std::string empty_path = dir + "/empty.jsonl";
    std::ofstream(empty_path).close();
    CHECK_NOTHROW(emit_plots(empty_path, dir + "/empty_plots"));
    CHECK(fs::exists(dir + "/empty_plots/plot_empty.svg"));
    CHECK(fs::exists(dir + "/empty_plots/metrics.csv"));
    fs::remove_all(dir);
}

TEST_CASE("phase isolation: deterministic phases reproduce bit-exactly") {
    const std::string dir = temp_dir("khwm_phase_iso");
    ExperimentConfig cfg = micro_config(dir);
    Experiment exp(cfg);
    exp.gen_demos();
    exp.gen_rewards();

    const fs::path demo0 = fs::path(exp.data_dir()) / cfg.task / "demo_0000.bin";
    const fs::path program = fs::path(exp.run_dir()) / "program.json";
    const auto demo_bytes = slurp(demo0);
    const auto program_bytes = slurp(program);
    const auto manifest_bytes = slurp(fs::path(exp.data_dir()) / cfg.task / "manifest.json");

    // Delete outputs and markers, re-run, compare bytes.
    fs::remove_all(exp.data_dir());
    fs::remove(program);
    fs::remove(exp.marker_path("gen-demos"));
    fs::remove(exp.marker_path("gen-rewards"));
    exp.gen_demos();
    exp.gen_rewards();
    CHECK(slurp(demo0) == demo_bytes);
    CHECK(slurp(program) == program_bytes);
    CHECK(slurp(fs::path(exp.data_dir()) / cfg.task / "manifest.json") == manifest_bytes);
    fs::remove_all(dir);
}

TEST_CASE("no_llm ablation swaps in the success-indicator program") {
    const std::string dir = temp_dir("khwm_no_llm");
    ExperimentConfig cfg = ablation_variant(micro_config(dir), "no_llm");
    Experiment exp(cfg);
    exp.gen_demos();
    exp.gen_rewards();
    nlohmann::json j;
    std::ifstream(fs::path(exp.run_dir()) / "program.json") >> j;
    reward::RewardProgram program = j.get<reward::RewardProgram>();
    CHECK(program == reward::success_only_program(cfg.task));
    fs::remove_all(dir);
}

TEST_CASE("phase failure leaves a resumable marker and is retryable") {
    const std::string dir = temp_dir("khwm_failed_phase");
    ExperimentConfig cfg = micro_config(dir);
    Experiment exp(cfg);
    // gen-rewards before gen-demos: the dataset is missing.
    CHECK_THROWS_AS(exp.gen_rewards(), PhaseError);
    CHECK(fs::exists(fs::path(exp.run_dir()) / "gen-rewards.failed"));
    CHECK(!fs::exists(exp.marker_path("gen-rewards")));
    // Fix the precondition and retry the same phase object.
    exp.gen_demos();
    CHECK_NOTHROW(exp.gen_rewards());
    CHECK(fs::exists(exp.marker_path("gen-rewards")));
    fs::remove_all(dir);
}

TEST_CASE("evaluate_controller: expert policy scores 1.0, random scores ~0 on the long task") {
    sim::World world(sim::World::task("take-items-out-of-box"));
    // Scripted expert wrapped as a policy.
    const double expert_rate = evaluate_controller(
        world, 10, 3,
        [&](std::uint64_t) -> Controller {
            auto expert = std::make_shared<sim::ScriptedExpert>(world);
            return [expert](const sim::SimState& s, const sim::MultiViewObservation&) {
                return expert->act(s);
            };
        },
        2);
    CHECK(expert_rate == 1.0);

    const double random_rate = evaluate_controller(
        world, 10, 4,
        [&](std::uint64_t ep_seed) -> Controller {
            auto rng = std::make_shared<Rng>(ep_seed);
            return [rng](const sim::SimState&, const sim::MultiViewObservation&) {
                return sim::Action{rng->uniform(-0.05, 0.05), rng->uniform(-0.05, 0.05),
                                   rng->uniform(-1.0, 1.0)};
            };
        },
        2);
    CHECK(random_rate <= 0.1);
}

TEST_CASE("full micro pipeline: checkpoints, eval, hash pinning") {
    const std::string dir = temp_dir("khwm_micro_pipeline");
    ExperimentConfig cfg = micro_config(dir);
    Experiment exp(cfg);
    EvalOutcome out = exp.run();
    CHECK(out.per_seed.size() == 1);
    CHECK(out.mean >= 0.0);
    CHECK(fs::exists(exp.mae_ckpt_path(0)));
    CHECK(fs::exists(exp.agent_ckpt_path(0)));
    CHECK(fs::exists(fs::path(exp.run_dir()) / "summary.json"));

    // evaluate_policy is deterministic given seeds.
    EvalOutcome a = evaluate_policy(exp.agent_ckpt_path(0), exp.mae_ckpt_path(0), cfg.task, 4,
                                    {9, 10});
    EvalOutcome b = evaluate_policy(exp.agent_ckpt_path(0), exp.mae_ckpt_path(0), cfg.task, 4,
                                    {9, 10});
    CHECK(a.per_seed == b.per_seed);
    CHECK(a.per_seed.size() == 2);

    // A mismatched encoder checkpoint is rejected by hash.
    Checkpoint tampered = load_checkpoint(exp.mae_ckpt_path(0));
    tampered.stores[0].value(0)(0, 0) += 1.0;
    const std::string other = dir + "/tampered_mae.ckpt";
    save_checkpoint(tampered, other);
    CHECK_THROWS_AS(evaluate_policy(exp.agent_ckpt_path(0), other, cfg.task, 2, {0}),
                    ContractError);

    // Resume semantics: a fresh Experiment over the same dir skips everything.
    Experiment again(cfg);
    CHECK_NOTHROW(again.gen_demos());
    CHECK_NOTHROW(again.train_mae(0));
    fs::remove_all(dir);
}
