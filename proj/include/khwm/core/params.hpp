#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/core/tape.hpp"
#include "khwm/core/types.hpp"

namespace khwm {

// Parameter partition used across the stack: autoencoder, world model,
// actor, critic.
enum class Owner : int { autoencoder = 0, world_model = 1, actor = 2, critic = 3 };

inline const char* owner_name(Owner o) {
    switch (o) {
        case Owner::autoencoder: return "autoencoder";
        case Owner::world_model: return "world_model";
        case Owner::actor: return "actor";
        case Owner::critic: return "critic";
    }
    return "?";
}

// One named array in a store. fan_in scales the init range; it defaults to
// the row count (input width for x*W weights).
struct LayerSpec {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    Index fan_in = -1;
};

class ParameterStore {
public:
    ParameterStore() = default;
    explicit ParameterStore(Owner owner) : owner_(owner) {}

    Owner owner() const { return owner_; }

    void add(const std::string& name, MatX value) {
        if (index_.count(name))
            throw InvalidSpecError("duplicate parameter name '" + name + "'");
        index_[name] = names_.size();
        names_.push_back(name);
        values_.push_back(std::move(value));
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const MatX& get(const std::string& name) const { return values_[at(name)]; }
    MatX& get(const std::string& name) { return values_[at(name)]; }

    std::size_t count() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const MatX& value(std::size_t i) const { return values_[i]; }
    MatX& value(std::size_t i) { return values_[i]; }

    Index total_coords() const {
        Index n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& v : values_)
            if (!v.allFinite()) return false;
        return true;
    }

private:
    std::size_t at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    Owner owner_ = Owner::autoencoder;
    std::vector<std::string> names_;
    std::vector<MatX> values_;
    std::map<std::string, std::size_t> index_;
};

// Deterministic initialization: each entry is drawn U(-L, L) with
// L = sqrt(3 / fan_in), from a stream keyed by (seed, owner, name) so the
// result is independent of declaration order.
inline ParameterStore seeded_init(Owner owner, const std::vector<LayerSpec>& spec,
                                  std::uint64_t seed) {
    ParameterStore store(owner);
    for (const auto& layer : spec) {
        if (layer.rows <= 0 || layer.cols <= 0)
            throw InvalidSpecError("layer '" + layer.name + "' has a non-positive dimension");
        const Index fan_in = layer.fan_in > 0 ? layer.fan_in : layer.rows;
        const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
        Rng rng(seed_for(seed, std::string(owner_name(owner)) + "/" + layer.name));
        MatX m(layer.rows, layer.cols);
        for (Index i = 0; i < layer.rows; ++i)
            for (Index j = 0; j < layer.cols; ++j) m(i, j) = rng.uniform(-limit, limit);
        store.add(layer.name, std::move(m));
    }
    return store;
}

// Standard post-init policy for network stores: layer-norm gains (last path
// component "g") start at identity, every bias (last component starting with
// 'b') at zero; weights and embeddings keep their fan-in-scaled draw.
inline void apply_init_overrides(ParameterStore& store) {
    for (std::size_t i = 0; i < store.count(); ++i) {
        const std::string& n = store.name(i);
        const std::string last = n.substr(n.rfind('/') + 1);
        if (last == "g") store.value(i).setOnes();
        if (!last.empty() && last[0] == 'b') store.value(i).setZero();
    }
}

// Parameters of one or more stores bound onto a tape as leaves.
template <typename S = Real>
class VarMap {
public:
    void bind(Tape<S>& tape, const ParameterStore& store) {
        const std::string prefix = std::string(owner_name(store.owner())) + "/";
        for (std::size_t i = 0; i < store.count(); ++i)
            vars_[prefix + store.name(i)] = tape.leaf(store.value(i));
    }

    Var<S> operator()(Owner owner, const std::string& name) const {
        auto it = vars_.find(std::string(owner_name(owner)) + "/" + name);
        if (it == vars_.end())
            throw ContractError("VarMap: unbound parameter '" + name + "'");
        return it->second;
    }

    // Gradients in store order; zeros where no gradient flowed.
    std::vector<MatX> grads(Tape<S>& tape, const ParameterStore& store) const {
        std::vector<MatX> out;
        out.reserve(store.count());
        const std::string prefix = std::string(owner_name(store.owner())) + "/";
        for (std::size_t i = 0; i < store.count(); ++i)
            out.push_back(tape.grad_of(vars_.at(prefix + store.name(i))));
        return out;
    }

private:
    std::map<std::string, Var<S>> vars_;
};

}  // namespace khwm
