#include "khwm/sim/sim.hpp"

#include <cmath>

#include "khwm/core/errors.hpp"
#include "khwm/core/rng.hpp"

namespace khwm::sim {

namespace {

// Scene geometry (workspace units).
constexpr double kGripperRadius = 0.035;
constexpr double kItemRadius = 0.05;
constexpr double kLidLength = 0.24;
constexpr double kLidHalfWidth = 0.015;
constexpr double kKnobRadius = 0.022;
constexpr double kWall = 0.02;

// Box footprint.
constexpr double kBoxX0 = 0.54, kBoxX1 = 0.78;
constexpr double kBoxY0 = 0.18, kBoxY1 = 0.42;

// Table drop zone.
constexpr double kZoneX0 = 0.06, kZoneX1 = 0.30;
constexpr double kZoneY0 = 0.06, kZoneY1 = 0.26;

struct Rgb {
    double r, g, b;
};

constexpr Rgb kBackground{1.0, 1.0, 1.0};
constexpr Rgb kZoneColor{0.78, 0.92, 0.78};
constexpr Rgb kBoxInterior{0.87, 0.78, 0.62};
constexpr Rgb kBoxWallColor{0.45, 0.30, 0.15};
constexpr Rgb kLidColor{0.62, 0.42, 0.22};
constexpr Rgb kKnobColor{0.30, 0.18, 0.08};
constexpr Rgb kItemColors[2] = {{0.85, 0.12, 0.12}, {0.95, 0.60, 0.10}};
constexpr Rgb kGripperClosed{0.10, 0.15, 0.80};
constexpr Rgb kGripperOpen{0.45, 0.60, 0.95};

inline bool in_rect(const Vector2d& p, double x0, double x1, double y0, double y1) {
    return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1;
}

inline bool in_disk(const Vector2d& p, const Vector2d& center, double radius) {
    return (p - center).squaredNorm() <= radius * radius;
}

Rgb scene_color(const TaskSpec& spec, const SimState& s, const Vector2d& hinge,
                const Vector2d& w) {
    if (in_disk(w, s.gripper, kGripperRadius))
        return s.gripper_closed ? kGripperClosed : kGripperOpen;
    if (spec.has_box) {
        // Lid as a rotated slab from the hinge, knob at the free end.
        const double c = std::cos(s.lid_angle), sn = std::sin(s.lid_angle);
        const Vector2d d = w - hinge;
        const double lx = c * d.x() + sn * d.y();
        const double ly = -sn * d.x() + c * d.y();
        const Vector2d knob = hinge + kLidLength * Vector2d(c, sn);
        if (in_disk(w, knob, kKnobRadius)) return kKnobColor;
        if (lx >= 0.0 && lx <= kLidLength && std::abs(ly) <= kLidHalfWidth) return kLidColor;
    }
    for (int i = 0; i < spec.n_items; ++i)
        if (in_disk(w, s.items[static_cast<size_t>(i)], kItemRadius))
            return kItemColors[i % 2];
    if (spec.has_box) {
        const bool left_wall = in_rect(w, kBoxX0, kBoxX0 + kWall, kBoxY0, kBoxY1);
        const bool right_wall = in_rect(w, kBoxX1 - kWall, kBoxX1, kBoxY0, kBoxY1);
        const bool bottom_wall = in_rect(w, kBoxX0, kBoxX1, kBoxY0, kBoxY0 + kWall);
        if (left_wall || right_wall || bottom_wall) return kBoxWallColor;
        if (in_rect(w, kBoxX0, kBoxX1, kBoxY0, kBoxY1)) return kBoxInterior;
    }
    if (in_rect(w, kZoneX0, kZoneX1, kZoneY0, kZoneY1)) return kZoneColor;
    return kBackground;
}

// View transforms are fixed affine maps of the scene; rendering inverse-maps
// each pixel center into the workspace and samples the scene color there.
Vector2d view_to_world(View view, const Vector2d& gripper, const Vector2d& q) {
    const Vector2d c(0.5, 0.5);
    switch (view) {
        case View::front: return q;
        case View::left: {
            const double a = -0.30, s = 1.0 / 0.92;
            const Vector2d d = (q - c) * s;
            return c + Vector2d(std::cos(a) * d.x() - std::sin(a) * d.y(),
                                std::sin(a) * d.x() + std::cos(a) * d.y());
        }
        case View::right: {
            const double a = 0.30, s = 1.0 / 0.92;
            const Vector2d d = (q - c) * s;
            return c + Vector2d(std::cos(a) * d.x() - std::sin(a) * d.y(),
                                std::sin(a) * d.x() + std::cos(a) * d.y());
        }
        case View::wrist: return gripper + (q - c) / 3.0;
    }
    throw ContractError("unknown view");
}

inline std::uint8_t quantize(double v) {
    const double q = std::round(v * 255.0);
    return static_cast<std::uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

}  // namespace

World::World(TaskSpec spec) : spec_(std::move(spec)) {}

TaskSpec World::task(const std::string& id) {
    if (id == "place-item") {
        TaskSpec t;
        t.id = id;
        t.horizon = 120;
        t.n_items = 1;
        t.has_box = false;
        t.stage_predicates = {"item1_in_zone"};
        t.gripper_start = {0.35, 0.70};
        t.item_starts = {{0.62, 0.32}};
        t.jitter = 0.05;
        return t;
    }
    if (id == "take-items-out-of-box") {
        TaskSpec t;
        t.id = id;
        t.horizon = 120;
        t.n_items = 2;
        t.has_box = true;
        t.stage_predicates = {"lid_open", "item1_in_zone", "item2_in_zone"};
        t.gripper_start = {0.50, 0.70};
        t.item_starts = {{0.60, 0.28}, {0.72, 0.28}};
        t.jitter = 0.02;
        return t;
    }
    throw ConfigError("unknown task id: " + id);
}

std::vector<std::string> World::task_ids() { return {"place-item", "take-items-out-of-box"}; }

Vector2d World::lid_hinge() const { return {kBoxX0, kBoxY1}; }

Vector2d World::lid_handle(double angle) const {
    return lid_hinge() + kLidLength * Vector2d(std::cos(angle), std::sin(angle));
}

Vector2d World::zone_center() const {
    return {(kZoneX0 + kZoneX1) / 2.0, (kZoneY0 + kZoneY1) / 2.0};
}

Vector2d World::zone_slot(int item) const {
    return {0.125 + 0.11 * static_cast<double>(item), 0.16};
}

bool World::in_zone(const Vector2d& p) const {
    return in_rect(p, kZoneX0, kZoneX1, kZoneY0, kZoneY1);
}

bool World::in_box(const Vector2d& p) const {
    return in_rect(p, kBoxX0, kBoxX1, kBoxY0, kBoxY1);
}

std::pair<SimState, MultiViewObservation> World::reset(std::uint64_t seed) const {
    Rng rng(seed_for(seed, "reset/" + spec_.id));
    SimState s;
    s.gripper = spec_.gripper_start +
                Vector2d(rng.uniform(-spec_.jitter, spec_.jitter),
                         rng.uniform(-spec_.jitter, spec_.jitter));
    s.gripper_closed = true;
    for (int i = 0; i < spec_.n_items; ++i)
        s.items.push_back(spec_.item_starts[static_cast<size_t>(i)] +
                          Vector2d(rng.uniform(-spec_.jitter, spec_.jitter),
                                   rng.uniform(-spec_.jitter, spec_.jitter)));
    s.lid_angle = 0.0;
    s.grasped_item = -1;
    s.holding_lid = false;
    s.step_count = 0;
    return {s, render_all(s)};
}

bool World::item_grabbable(const SimState& state, int item) const {
    if (!spec_.has_box) return true;
    if (predicate(state, "lid_open")) return true;
    return !in_box(state.items[static_cast<size_t>(item)]);
}

StepResult World::step(const SimState& state, const Action& action) const {
    if (!std::isfinite(action.dx) || !std::isfinite(action.dy) || !std::isfinite(action.grip))
        throw ContractError("step: non-finite action component");

    SimState s = state;

    // Displacement, clipped to the max step length.
    double dx = action.dx, dy = action.dy;
    const double n = std::hypot(dx, dy);
    if (n > kMaxStep) {
        dx *= kMaxStep / n;
        dy *= kMaxStep / n;
    }
    s.gripper.x() = std::clamp(s.gripper.x() + dx, 0.0, 1.0);
    s.gripper.y() = std::clamp(s.gripper.y() + dy, 0.0, 1.0);

    // A held lid constrains the gripper to the opening arc; the joint angle
    // follows the gripper.
    if (s.holding_lid) {
        const Vector2d hinge = lid_hinge();
        const Vector2d d = s.gripper - hinge;
        double phi = std::atan2(d.y(), d.x());
        phi = std::clamp(phi, 0.0, M_PI / 2.0);
        s.lid_angle = phi;
        s.gripper = lid_handle(phi);
    }

    s.gripper_closed = action.grip >= 0.0;

    if (!s.gripper_closed) {
        s.grasped_item = -1;
        s.holding_lid = false;
    } else if (s.grasped_item < 0 && !s.holding_lid) {
        // Engage the nearest eligible target within reach.
        int best_item = -1;
        double best = kGraspRadius;
        for (int i = 0; i < spec_.n_items; ++i) {
            if (!item_grabbable(s, i)) continue;
            const double d = (s.items[static_cast<size_t>(i)] - s.gripper).norm();
            if (d <= best) {
                best = d;
                best_item = i;
            }
        }
        double handle_dist = std::numeric_limits<double>::infinity();
        if (spec_.has_box) handle_dist = (lid_handle(s.lid_angle) - s.gripper).norm();
        if (handle_dist <= kGraspRadius && handle_dist <= best) {
            s.holding_lid = true;
        } else if (best_item >= 0) {
            s.grasped_item = best_item;
        }
    }

    if (s.grasped_item >= 0) s.items[static_cast<size_t>(s.grasped_item)] = s.gripper;

    s.step_count += 1;
    const bool done = success(s) || s.step_count >= spec_.horizon;
    return {s, render_all(s), done};
}

ImageU8 World::render(const SimState& state, View view) const {
    const Vector2d hinge = spec_.has_box ? lid_hinge() : Vector2d(0, 0);
    ImageU8 img(static_cast<size_t>(kImageSize * kImageSize * 3));
    for (int r = 0; r < kImageSize; ++r) {
        for (int c = 0; c < kImageSize; ++c) {
            const Vector2d q((c + 0.5) / kImageSize, 1.0 - (r + 0.5) / kImageSize);
            const Vector2d w = view_to_world(view, state.gripper, q);
            const Rgb col = scene_color(spec_, state, hinge, w);
            const size_t at = static_cast<size_t>((r * kImageSize + c) * 3);
            img[at + 0] = quantize(col.r);
            img[at + 1] = quantize(col.g);
            img[at + 2] = quantize(col.b);
        }
    }
    return img;
}

MultiViewObservation World::render_all(const SimState& state) const {
    return {render(state, View::front), render(state, View::left), render(state, View::right),
            render(state, View::wrist)};
}

bool World::predicate(const SimState& state, const std::string& name) const {
    if (name == "lid_open") return state.lid_angle >= kLidOpenAngle;
    if (name == "gripper_empty") return state.grasped_item < 0 && !state.holding_lid;
    if (name == "success") return success(state);
    for (int i = 0; i < spec_.n_items; ++i) {
        const std::string tag = "item" + std::to_string(i + 1);
        if (name == "grasped_" + tag) return state.grasped_item == i;
        if (name == tag + "_in_zone")
            return in_zone(state.items[static_cast<size_t>(i)]) && state.grasped_item != i;
    }
    throw ContractError("unknown predicate: " + name);
}

bool World::success(const SimState& state) const {
    for (const auto& p : spec_.stage_predicates) {
        if (p == "success") continue;
        if (!predicate(state, p)) return false;
    }
    return true;
}

reward::QuerySchema World::schema() const {
    reward::QuerySchema q;
    q.entities = {"gripper", "zone"};
    for (int i = 0; i < spec_.n_items; ++i) q.entities.push_back("item" + std::to_string(i + 1));
    q.predicates = {"gripper_empty", "success"};
    for (int i = 0; i < spec_.n_items; ++i) {
        q.predicates.push_back("grasped_item" + std::to_string(i + 1));
        q.predicates.push_back("item" + std::to_string(i + 1) + "_in_zone");
    }
    if (spec_.has_box) {
        q.entities.push_back("lid_handle");
        q.entities.push_back("box");
        q.joints.push_back("lid");
        q.predicates.push_back("lid_open");
    }
    return q;
}

Eigen::Vector2d SimStateView::position(const std::string& entity) const {
    if (entity == "gripper") return state_.gripper;
    if (entity == "zone") return world_.zone_center();
    if (entity == "lid_handle" && world_.spec().has_box)
        return world_.lid_handle(state_.lid_angle);
    if (entity == "box" && world_.spec().has_box)
        return {(kBoxX0 + kBoxX1) / 2.0, (kBoxY0 + kBoxY1) / 2.0};
    for (int i = 0; i < world_.spec().n_items; ++i)
        if (entity == "item" + std::to_string(i + 1)) return state_.items[static_cast<size_t>(i)];
    throw ContractError("unknown entity: " + entity);
}

double SimStateView::joint(const std::string& name) const {
    if (name == "lid" && world_.spec().has_box) return state_.lid_angle;
    throw ContractError("unknown joint: " + name);
}

bool SimStateView::predicate(const std::string& name) const {
    return world_.predicate(state_, name);
}

}  // namespace khwm::sim
