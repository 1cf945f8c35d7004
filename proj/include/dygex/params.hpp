#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dygex/rng.hpp"
#include "dygex/tape.hpp"
#include "dygex/tensor.hpp"

namespace dygex {

// One named trainable tensor plus its momentum slot.
struct Param {
    std::string name;
    Tensor value;
    Tensor momentum;
};

// Owns parameters in creation order; iteration order is deterministic.
class ParamStore {
public:
    Param& create(const std::string& name, Tensor init);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const;

    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    std::size_t count() const { return params_.size(); }
    std::size_t total_entries() const;

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// Binds parameters into one tape as leaves (trainable) or constants (frozen),
// memoized so each parameter appears once per forward pass.
class Binding {
public:
    Binding(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

    Tape::Var operator()(Param& p);

    Tape& tape() { return tape_; }
    bool trainable() const { return trainable_; }
    const std::vector<std::pair<Param*, Tape::Var>>& bound() const { return bound_; }

private:
    Tape& tape_;
    bool trainable_;
    std::vector<std::pair<Param*, Tape::Var>> bound_;
};

// Momentum SGD over every parameter bound into the tape. Call after
// Tape::backward; parameters without a gradient keep their momentum decay.
void sgd_step(Tape& tape, Binding& binding, double lr, double momentum);

// Glorot/Xavier uniform init for a (fan_out x fan_in) weight.
Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng);

}  // namespace dygex
