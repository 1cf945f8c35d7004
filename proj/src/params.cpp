#include "dygex/params.hpp"

#include <cmath>
#include <stdexcept>

#include "dygex/errors.hpp"

namespace dygex {

Param& ParamStore::create(const std::string& name, Tensor init) {
    if (has(name)) throw std::logic_error("parameter '" + name + "' already exists");
    auto p = std::make_unique<Param>();
    p->name = name;
    p->momentum = Tensor(init.rows(), init.cols());
    p->value = std::move(init);
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamStore::get(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return *p;
    throw std::logic_error("unknown parameter '" + name + "'");
}

const Param& ParamStore::get(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return *p;
    throw std::logic_error("unknown parameter '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return true;
    return false;
}

std::size_t ParamStore::total_entries() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

Tape::Var Binding::operator()(Param& p) {
    for (const auto& [param, var] : bound_)
        if (param == &p) return var;
    const Tape::Var var = trainable_ ? tape_.leaf(p.value) : tape_.constant(p.value);
    bound_.emplace_back(&p, var);
    return var;
}

void sgd_step(Tape& tape, Binding& binding, double lr, double momentum) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("momentum must lie in [0, 1)");
    for (const auto& [param, var] : binding.bound()) {
        const Tensor grad = tape.grad_or_zero(var);
        Tensor& vel = param->momentum;
        Tensor& val = param->value;
        for (std::size_t i = 0; i < val.size(); ++i) {
            vel[i] = momentum * vel[i] + grad[i];
            val[i] -= lr * vel[i];
        }
    }
}

Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(fan_out, fan_in);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace dygex
