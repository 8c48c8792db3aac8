#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/sim/demo.hpp"
#include "khwm/sim/sim.hpp"

namespace khwm::sim {

// Waypoint-following expert for the shipped tasks. Between waypoints it moves
// in straight (or arc) segments at full step size; at each waypoint it dwells
// for kDwellSteps with zero velocity and unchanged grip, which is the signal
// keyframe discovery keys on.
class ScriptedExpert {
public:
    static constexpr int kDwellSteps = 3;

    explicit ScriptedExpert(const World& world);

    void reset();
    Action act(const SimState& state);

private:
    struct Phase {
        enum class Kind { move_to_item, move_to_slot, move_to_handle, open_lid, dwell, set_grip };
        Kind kind;
        int arg = 0;        // item/slot index
        double grip = 0.0;  // set_grip target
        int remaining = 0;  // dwell budget
    };

    const World& world_;
    std::vector<Phase> phases_;
    std::size_t idx_ = 0;
    double grip_cmd_ = 1.0;
};

// Generation error carries the offending seed.
struct DemoGenerationError : Error {
    explicit DemoGenerationError(std::uint64_t seed, const std::string& why)
        : Error("demonstration generation failed for seed " + std::to_string(seed) + ": " + why),
          seed(seed) {}
    std::uint64_t seed;
};

// Runs the scripted expert n times with per-demo seeds base_seed + k. Each
// demonstration stores all four views, the expert action, the gripper state,
// and the gripper velocity magnitude per step, plus the post-action state
// trace used later to attach rewards.
std::vector<Demonstration> generate_demonstrations(const World& world, int n,
                                                   std::uint64_t base_seed);

}  // namespace khwm::sim
