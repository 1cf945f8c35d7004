#pragma once

#include "dygex/tape.hpp"
#include "dygex/tensor.hpp"

namespace dygex {

// Stretch-and-clip parameters for the binary-concrete gates. The sigmoid
// output is stretched to (gamma, zeta) and clipped back to [0, 1], which
// lets gates reach exactly 0 and 1.
struct GateParams {
    double gamma = -0.1;
    double zeta = 1.1;
    double tau = 1.0;

    void validate() const;  // requires gamma < 0 < 1 < zeta and tau > 0
};

// One gate: noise is a uniform draw strictly inside (0, 1).
double concrete_gate(double logit, double noise, const GateParams& params);

// Inference-time gate: the noise log-odds term drops out and the temperature
// is fixed at 1, so the gate is a deterministic function of the logit.
double deterministic_gate(double logit, const GateParams& params);

// Temperature schedule: decays geometrically from 1 toward tau_end across
// the fine-tuning epochs; epoch is 1-based.
double annealed_tau(int epoch, int total_epochs, double tau_end = 0.1);

// Tape routes for a column of logits; gradients flow through the logits.
Tape::Var concrete_gates(Tape& tape, Tape::Var logits, const Tensor& noise,
                         const GateParams& params);
Tape::Var deterministic_gates(Tape& tape, Tape::Var logits, const GateParams& params);

}  // namespace dygex
