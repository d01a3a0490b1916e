#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "freezetst/tape.hpp"
#include "freezetst/tensor.hpp"

namespace freezetst {

/// A named model parameter. `trainable` decides both whether the tape tracks
/// its gradient and whether the optimizer may touch it.
template <class Real>
struct Param {
    std::string name;
    Tensor<Real> value;
    bool trainable = true;
};

/// Binds parameters into one tape for the duration of a forward/backward
/// pass. Each parameter is bound at most once per tape, so a parameter used
/// by several channels accumulates its gradient across all of them.
template <class Real>
class Binder {
public:
    explicit Binder(Tape<Real>& tape) : tape_(&tape) {}

    /// Accepts const refs so that const model methods can bind; binding never
    /// mutates the parameter, but the stored pointer lets the trainer write
    /// updates back after the pass.
    int operator()(const Param<Real>& p) {
        auto it = ids_.find(&p);
        if (it != ids_.end()) return it->second;
        const int id = tape_->leaf(p.value, p.trainable);
        auto* mutable_p = const_cast<Param<Real>*>(&p);
        ids_.emplace(&p, id);
        bound_.emplace_back(mutable_p, id);
        return id;
    }

    /// Visit (param, tape id) in binding order; call after backward to read
    /// gradients for trainable parameters.
    template <class F>
    void for_each_bound(F&& f) const {
        for (const auto& [param, id] : bound_) f(*param, id);
    }

    const Tape<Real>& tape() const { return *tape_; }

private:
    Tape<Real>* tape_;
    std::unordered_map<const Param<Real>*, int> ids_;
    std::vector<std::pair<Param<Real>*, int>> bound_;
};

}  // namespace freezetst
