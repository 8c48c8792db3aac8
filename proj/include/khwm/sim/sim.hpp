#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "khwm/reward/state_view.hpp"

namespace khwm::sim {

using Eigen::Vector2d;

// Workspace and interaction constants (workspace units on [0,1]^2).
inline constexpr double kMaxStep = 0.05;       // per-step displacement clip (Euclidean)
inline constexpr double kGraspRadius = 0.06;   // gripper-to-target engage distance
inline constexpr int kImageSize = 32;          // square RGB frames
inline constexpr int kViewCount = 4;
inline constexpr double kLidOpenAngle = M_PI / 2.0 - 0.08;  // "open" predicate threshold

enum class View : int { front = 0, left = 1, right = 2, wrist = 3 };

inline const char* view_name(View v) {
    switch (v) {
        case View::front: return "front";
        case View::left: return "left";
        case View::right: return "right";
        case View::wrist: return "wrist";
    }
    return "?";
}

// 32x32x3 row-major RGB, 8-bit; pixel value v encodes intensity v / 255.
using ImageU8 = std::vector<std::uint8_t>;

// One frame per camera, indexed by View.
using MultiViewObservation = std::array<ImageU8, kViewCount>;

// Relative gripper displacement plus a grip command (>= 0 closes, < 0 opens).
struct Action {
    double dx = 0.0;
    double dy = 0.0;
    double grip = 0.0;
};

struct SimState {
    Vector2d gripper{0.5, 0.5};
    bool gripper_closed = true;  // grip >= 0 convention; episodes start closed
    std::vector<Vector2d> items;
    double lid_angle = 0.0;      // radians in [0, pi/2]; moves only via the handle
    int grasped_item = -1;       // index into items, -1 when empty
    bool holding_lid = false;
    int step_count = 0;
};

// Ordered sub-task structure plus initial-state distribution parameters.
struct TaskSpec {
    std::string id;
    int horizon = 120;
    int n_items = 1;
    bool has_box = false;
    std::vector<std::string> stage_predicates;  // completion order
    // Nominal initial placements; reset() jitters them by +-jitter per axis.
    Vector2d gripper_start{0.5, 0.7};
    std::vector<Vector2d> item_starts;
    double jitter = 0.03;
};

struct StepResult {
    SimState state;
    MultiViewObservation obs;
    bool done = false;
};

// Deterministic 2D tabletop with a gripper, movable items, an optional lidded
// box, and four fixed cameras. All methods are pure functions of their
// arguments; instances share no mutable state.
class World {
public:
    explicit World(TaskSpec spec);

    // Registry of shipped tasks; throws on an unknown id.
    static TaskSpec task(const std::string& id);
    static std::vector<std::string> task_ids();

    const TaskSpec& spec() const { return spec_; }

    std::pair<SimState, MultiViewObservation> reset(std::uint64_t seed) const;
    StepResult step(const SimState& state, const Action& action) const;
    ImageU8 render(const SimState& state, View view) const;
    MultiViewObservation render_all(const SimState& state) const;

    bool predicate(const SimState& state, const std::string& name) const;
    bool success(const SimState& state) const;

    // Geometry queried by rewards and the scripted expert.
    Vector2d lid_hinge() const;
    Vector2d lid_handle(double angle) const;
    Vector2d zone_center() const;
    Vector2d zone_slot(int item) const;
    bool in_zone(const Vector2d& p) const;
    bool in_box(const Vector2d& p) const;

    reward::QuerySchema schema() const;

private:
    friend class SimStateView;
    bool item_grabbable(const SimState& state, int item) const;
    TaskSpec spec_;
};

// StateView adapter handing a (world, state) pair to reward programs.
class SimStateView : public reward::StateView {
public:
    SimStateView(const World& world, const SimState& state)
        : world_(world), state_(state), schema_(world.schema()) {}

    Eigen::Vector2d position(const std::string& entity) const override;
    double joint(const std::string& name) const override;
    bool predicate(const std::string& name) const override;
    const reward::QuerySchema& schema() const override { return schema_; }

private:
    const World& world_;
    const SimState& state_;
    reward::QuerySchema schema_;
};

}  // namespace khwm::sim
