#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace khwm::reward {

// Names a task exposes to reward programs: positioned entities, revolute
// joints, and boolean predicates. Programs are validated against this before
// they are allowed near a simulator state.
struct QuerySchema {
    std::vector<std::string> entities;
    std::vector<std::string> joints;
    std::vector<std::string> predicates;

    bool has_entity(const std::string& n) const;
    bool has_joint(const std::string& n) const;
    bool has_predicate(const std::string& n) const;
};

inline bool contains(const std::vector<std::string>& v, const std::string& n) {
    for (const auto& s : v)
        if (s == n) return true;
    return false;
}

inline bool QuerySchema::has_entity(const std::string& n) const { return contains(entities, n); }
inline bool QuerySchema::has_joint(const std::string& n) const { return contains(joints, n); }
inline bool QuerySchema::has_predicate(const std::string& n) const { return contains(predicates, n); }

// Read-only view of one simulator state, the only surface reward programs
// evaluate against.
class StateView {
public:
    virtual ~StateView() = default;
    virtual Eigen::Vector2d position(const std::string& entity) const = 0;
    virtual double joint(const std::string& name) const = 0;
    virtual bool predicate(const std::string& name) const = 0;
    virtual const QuerySchema& schema() const = 0;
};

}  // namespace khwm::reward
