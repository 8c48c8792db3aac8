#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "khwm/sim/sim.hpp"

namespace khwm::sim {

// One expert trajectory. All per-step sequences share length `length`.
// `states[t]` is the post-action state for step t (metadata only, never fed
// to the agent); rewards stay zero until the reward-generation phase attaches
// them.
struct Demonstration {
    std::uint64_t seed = 0;
    int length = 0;
    std::vector<MultiViewObservation> frames;
    std::vector<Action> actions;
    std::vector<std::uint8_t> grips;     // gripper closed at entry t
    std::vector<double> velocities;      // |gripper(t) - gripper(t-1)|
    std::vector<double> rewards;
    std::vector<SimState> states;
};

struct ManifestDemo {
    std::string file;
    std::uint64_t seed = 0;
    int length = 0;
    std::vector<int> keyframes;
};

// Dataset layout: one directory per task holding manifest.json plus one
// binary file per trajectory (8-bit frames, value/255 scaling; actions and
// metadata as little-endian doubles).
struct DatasetManifest {
    std::string task;
    int image_size = kImageSize;
    std::vector<std::string> views;
    int count = 0;
    std::uint64_t base_seed = 0;
    bool reward_attached = false;
    std::string reward_program_hash;
    std::vector<ManifestDemo> demos;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

void write_demo_file(const std::string& path, const Demonstration& demo);
Demonstration read_demo_file(const std::string& path);

// Writes demos plus a manifest (keyframe index tables included) under
// dir/task_id/.
void save_dataset(const std::string& dir, const std::string& task_id,
                  const std::vector<Demonstration>& demos, std::uint64_t base_seed);

DatasetManifest load_manifest(const std::string& dir, const std::string& task_id);
void save_manifest(const std::string& dir, const std::string& task_id,
                   const DatasetManifest& manifest);

Demonstration load_demo(const std::string& dir, const std::string& task_id,
                        const ManifestDemo& entry);
std::vector<Demonstration> load_dataset(const std::string& dir, const std::string& task_id,
                                        DatasetManifest* manifest_out = nullptr);

}  // namespace khwm::sim
