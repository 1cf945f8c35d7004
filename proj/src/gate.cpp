#include "dygex/gate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dygex/errors.hpp"

namespace dygex {

namespace {

double logistic_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

void check_noise(double noise) {
    if (!(noise > 0.0 && noise < 1.0))
        throw NumericError("concrete_gate: noise " + std::to_string(noise) +
                           " must lie strictly inside (0, 1)");
}

}  // namespace

void GateParams::validate() const {
    if (!(gamma < 0.0 && zeta > 1.0))
        throw ConfigError("gate stretch interval must satisfy gamma < 0 < 1 < zeta, got [" +
                          std::to_string(gamma) + ", " + std::to_string(zeta) + "]");
    if (!(tau > 0.0))
        throw ConfigError("gate temperature must be positive, got " + std::to_string(tau));
}

double concrete_gate(double logit, double noise, const GateParams& params) {
    params.validate();
    check_noise(noise);
    // evaluated as logit plus noise log-odds, scaled by 1/tau, matching the
    // tape route bit for bit
    const double pre = (logit + (std::log(noise) - std::log1p(-noise))) * (1.0 / params.tau);
    const double s = logistic_scalar(pre);
    return std::min(1.0, std::max(0.0, s * (params.zeta - params.gamma) + params.gamma));
}

double deterministic_gate(double logit, const GateParams& params) {
    params.validate();
    const double s = logistic_scalar(logit);
    return std::min(1.0, std::max(0.0, s * (params.zeta - params.gamma) + params.gamma));
}

double annealed_tau(int epoch, int total_epochs, double tau_end) {
    if (total_epochs < 1) throw ConfigError("annealed_tau: total_epochs must be at least 1");
    if (epoch < 1 || epoch > total_epochs)
        throw ConfigError("annealed_tau: epoch " + std::to_string(epoch) +
                          " outside 1.." + std::to_string(total_epochs));
    if (!(tau_end > 0.0)) throw ConfigError("annealed_tau: tau_end must be positive");
    return std::pow(tau_end, static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

Tape::Var concrete_gates(Tape& tape, Tape::Var logits, const Tensor& noise,
                         const GateParams& params) {
    params.validate();
    const Tensor& lv = tape.val(logits);
    if (!lv.same_shape(noise))
        throw ShapeError("concrete_gates: noise " + noise.shape_str() + " does not match " +
                         lv.shape_str());
    Tensor offset(noise.rows(), noise.cols());
    for (std::size_t i = 0; i < noise.size(); ++i) {
        check_noise(noise[i]);
        offset[i] = std::log(noise[i]) - std::log1p(-noise[i]);
    }
    auto pre = tape.affine(tape.add(logits, tape.constant(std::move(offset))),
                           1.0 / params.tau, 0.0);
    auto stretched = tape.affine(tape.logistic(pre), params.zeta - params.gamma, params.gamma);
    return tape.clamp01(stretched);
}

Tape::Var deterministic_gates(Tape& tape, Tape::Var logits, const GateParams& params) {
    params.validate();
    auto stretched =
        tape.affine(tape.logistic(logits), params.zeta - params.gamma, params.gamma);
    return tape.clamp01(stretched);
}

}  // namespace dygex
