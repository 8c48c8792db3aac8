#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "khwm/core/errors.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/types.hpp"

namespace khwm::traj {

// One stored step: the frozen-encoder representation of the observation that
// preceded the action, the action taken, and the reward of the resulting
// state.
struct Transition {
    VecX repr;
    Eigen::Vector3d action{0.0, 0.0, 0.0};
    double reward = 0.0;
    bool done = false;
    bool expert = false;  // set by the buffer on insertion
};

// Episode-structured replay. Expert episodes are permanent; online episodes
// are evicted oldest-first when the transition capacity is exceeded. Sampling
// is uniform within a flag class and deterministic given the caller's Rng.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void add_episode(std::vector<Transition> steps, bool expert) {
        if (steps.empty()) throw ContractError("replay: empty episode");
        for (auto& t : steps) t.expert = expert;
        if (expert) {
            if (expert_count_ + steps.size() > capacity_)
                throw ContractError("replay: capacity must cover all expert transitions");
            expert_count_ += steps.size();
            expert_.push_back(std::move(steps));
        } else {
            if (steps.size() > capacity_ - expert_count_)
                throw ContractError(
                    "replay: online episode cannot fit without evicting expert transitions");
            while (expert_count_ + online_count_ + steps.size() > capacity_) {
                online_count_ -= online_.front().size();
                online_.pop_front();
            }
            online_count_ += steps.size();
            online_.push_back(std::move(steps));
        }
    }

    std::size_t size() const { return expert_count_ + online_count_; }
    std::size_t expert_size() const { return expert_count_; }
    std::size_t online_size() const { return online_count_; }
    std::size_t capacity() const { return capacity_; }

    bool has_class(bool expert) const { return expert ? expert_count_ > 0 : online_count_ > 0; }

    // Uniform over transitions of one flag class.
    const Transition& sample(Rng& rng, bool expert) const {
        const auto& pool = expert ? expert_ : online_;
        const std::size_t total = expert ? expert_count_ : online_count_;
        if (total == 0) throw ContractError("replay: sampled class is empty");
        std::size_t flat = static_cast<std::size_t>(rng.below(total));
        for (const auto& ep : pool) {
            if (flat < ep.size()) return ep[flat];
            flat -= ep.size();
        }
        throw ContractError("replay: index accounting broke");
    }

    // Contiguous in-episode sequence of exactly `length` steps, uniform over
    // valid (episode, start) pairs of the flag class. Episodes shorter than
    // `length` are returned whole.
    std::vector<Transition> sample_sequence(Rng& rng, int length, bool expert) const {
        const auto& pool = expert ? expert_ : online_;
        if (pool.empty()) throw ContractError("replay: sampled class is empty");
        std::size_t starts = 0;
        for (const auto& ep : pool)
            starts += ep.size() <= static_cast<std::size_t>(length)
                          ? 1
                          : ep.size() - static_cast<std::size_t>(length) + 1;
        std::size_t pick = static_cast<std::size_t>(rng.below(starts));
        for (const auto& ep : pool) {
            const std::size_t n = ep.size() <= static_cast<std::size_t>(length)
                                      ? 1
                                      : ep.size() - static_cast<std::size_t>(length) + 1;
            if (pick < n) {
                const std::size_t count =
                    std::min(ep.size(), static_cast<std::size_t>(length));
                return std::vector<Transition>(ep.begin() + static_cast<long>(pick),
                                               ep.begin() + static_cast<long>(pick + count));
            }
            pick -= n;
        }
        throw ContractError("replay: sequence accounting broke");
    }

private:
    std::size_t capacity_;
    std::size_t expert_count_ = 0;
    std::size_t online_count_ = 0;
    std::deque<std::vector<Transition>> expert_;
    std::deque<std::vector<Transition>> online_;
};

// Seeds a buffer with expert episodes. Capacity must cover every expert
// transition; later online insertions may never evict them.
inline ReplayBuffer build_replay(std::vector<std::vector<Transition>> expert_episodes,
                                 std::size_t capacity) {
    std::size_t total = 0;
    for (const auto& ep : expert_episodes) total += ep.size();
    if (capacity < total)
        throw ContractError("build_replay: capacity below expert transition count");
    ReplayBuffer buf(capacity);
    for (auto& ep : expert_episodes) buf.add_episode(std::move(ep), true);
    return buf;
}

}  // namespace khwm::traj
