#include "khwm/sim/expert.hpp"

#include <cmath>

namespace khwm::sim {

namespace {
constexpr double kArrivalTol = 1e-9;
constexpr double kLidStepAngle = 0.17;  // chord stays below the action clip
}  // namespace

ScriptedExpert::ScriptedExpert(const World& world) : world_(world) { reset(); }

void ScriptedExpert::reset() {
    using K = Phase::Kind;
    phases_.clear();
    idx_ = 0;
    grip_cmd_ = 1.0;

    auto pick_place = [this](int item) {
        phases_.push_back({K::move_to_item, item, 0.0, 0});
        phases_.push_back({K::dwell, 0, 0.0, kDwellSteps});
        phases_.push_back({K::set_grip, 0, 1.0, 0});
        phases_.push_back({K::move_to_slot, item, 0.0, 0});
        phases_.push_back({K::dwell, 0, 0.0, kDwellSteps});
        phases_.push_back({K::set_grip, 0, -1.0, 0});
    };

    // Episodes start with the gripper closed; open it before approaching.
    phases_.push_back({K::set_grip, 0, -1.0, 0});
    if (world_.spec().has_box) {
        phases_.push_back({K::move_to_handle, 0, 0.0, 0});
        phases_.push_back({K::dwell, 0, 0.0, kDwellSteps});
        phases_.push_back({K::set_grip, 0, 1.0, 0});
        phases_.push_back({K::open_lid, 0, 0.0, 0});
        phases_.push_back({K::dwell, 0, 0.0, kDwellSteps});
        phases_.push_back({K::set_grip, 0, -1.0, 0});
    }
    for (int i = 0; i < world_.spec().n_items; ++i) pick_place(i);
}

Action ScriptedExpert::act(const SimState& state) {
    using K = Phase::Kind;
    while (idx_ < phases_.size()) {
        Phase& ph = phases_[idx_];
        switch (ph.kind) {
            case K::move_to_item:
            case K::move_to_slot:
            case K::move_to_handle: {
                Vector2d target;
                if (ph.kind == K::move_to_item)
                    target = state.items[static_cast<size_t>(ph.arg)];
                else if (ph.kind == K::move_to_slot)
                    target = world_.zone_slot(ph.arg);
                else
                    target = world_.lid_handle(state.lid_angle);
                const Vector2d d = target - state.gripper;
                const double dist = d.norm();
                if (dist < kArrivalTol) {
                    ++idx_;
                    continue;
                }
                const Vector2d step = dist > kMaxStep ? Vector2d(d * (kMaxStep / dist)) : d;
                return {step.x(), step.y(), grip_cmd_};
            }
            case K::open_lid: {
                if (state.lid_angle >= M_PI / 2.0 - kArrivalTol) {
                    ++idx_;
                    continue;
                }
                const double dtheta = std::min(kLidStepAngle, M_PI / 2.0 - state.lid_angle);
                const Vector2d d =
                    world_.lid_handle(state.lid_angle + dtheta) - world_.lid_handle(state.lid_angle);
                return {d.x(), d.y(), grip_cmd_};
            }
            case K::dwell: {
                if (ph.remaining <= 0) {
                    ++idx_;
                    continue;
                }
                ph.remaining -= 1;
                return {0.0, 0.0, grip_cmd_};
            }
            case K::set_grip: {
                grip_cmd_ = ph.grip;
                ++idx_;
                return {0.0, 0.0, grip_cmd_};
            }
        }
    }
    return {0.0, 0.0, grip_cmd_};  // plan exhausted; hold still
}

std::vector<Demonstration> generate_demonstrations(const World& world, int n,
                                                   std::uint64_t base_seed) {
    std::vector<Demonstration> demos;
    demos.reserve(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(k);
        auto [state, obs] = world.reset(seed);
        ScriptedExpert expert(world);

        Demonstration demo;
        demo.seed = seed;
        Vector2d prev_gripper = state.gripper;
        bool done = false;
        while (!done) {
            if (state.step_count >= world.spec().horizon)
                throw DemoGenerationError(seed, "horizon exceeded before task success");
            demo.frames.push_back(obs);
            demo.grips.push_back(state.gripper_closed ? 1 : 0);
            demo.velocities.push_back((state.gripper - prev_gripper).norm());
            prev_gripper = state.gripper;

            const Action a = expert.act(state);
            demo.actions.push_back(a);

            StepResult r = world.step(state, a);
            state = std::move(r.state);
            obs = std::move(r.obs);
            done = r.done;
            demo.states.push_back(state);
            demo.rewards.push_back(0.0);
        }
        if (!world.success(state)) throw DemoGenerationError(seed, "episode ended without success");
        demo.length = static_cast<int>(demo.actions.size());
        demos.push_back(std::move(demo));
    }
    return demos;
}

}  // namespace khwm::sim
