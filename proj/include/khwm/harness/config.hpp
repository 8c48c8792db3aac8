#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "khwm/core/hyper.hpp"

namespace khwm::harness {

// Network sizes shared by the pipeline phases.
struct ArchConfig {
    int enc_dim = 64;
    int enc_depth = 4;
    int enc_heads = 4;
    int dec_dim = 16;
    int dec_depth = 2;
    int dec_heads = 1;
    int mlp_ratio = 2;
    int deter_dim = 128;
    int stoch_dim = 16;
    int hidden = 128;
    int action_embed = 16;
};

struct ExperimentConfig {
    std::string task = "place-item";
    int demo_count = 50;
    std::string backend = "template";  // "template" | "llm"
    HyperParams hyper;
    ArchConfig arch;
    // Ablations: no_llm swaps the generated dense rewards for the sparse
    // success indicator; no_key swaps key-horizons for fixed 16-frame windows.
    bool no_llm = false;
    bool no_key = false;
    int no_key_window = 16;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int eval_episodes = 50;
    // Phase budgets.
    int mae_steps = 300;
    int mae_batch = 4;
    int agent_updates = 1500;
    int seq_batch = 8;
    int seq_len = 12;
    int imagine_batch = 12;
    int bc_batch = 6;
    int collect_every = 15;
    std::size_t replay_capacity = 40000;
    int parallel_workers = 8;  // rollout workers available to callers
    std::string out_dir = "runs/exp";

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

// Top-level keys whose serialized values differ; the ablation-parity check.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

// Base config with exactly one ablation flag flipped (and a derived out_dir).
ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& which);

}  // namespace khwm::harness
