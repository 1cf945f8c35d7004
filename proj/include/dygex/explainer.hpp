#pragma once

#include <vector>

#include "dygex/gate.hpp"
#include "dygex/graph.hpp"
#include "dygex/params.hpp"

namespace dygex {

struct ExplainerConfig {
    int embed_dim = 0;         // width of the backbone embeddings consumed
    int att_dim = 16;          // width of the attention projections produced
    double leaky_slope = 0.2;  // slope of the logit nonlinearity
    double gamma = -0.1;       // gate stretch lower bound
    double zeta = 1.1;         // gate stretch upper bound
    bool hard_gates = true;    // false: per-source softmax instead of gates
    bool unit_gates = false;   // ablation: every gate pinned to 1, nothing learned
    int window = 0;            // temporal look-back; 0 means the whole buffer

    void validate() const;
    GateParams gate_params(double tau) const { return GateParams{gamma, zeta, tau}; }
};

// Edge-level attention on one snapshot. Every stored directed edge gets one
// gate; aggregation accumulates gate-weighted projected source-of-message
// embeddings into the destination-of-message rows.
class StructuralAttention {
public:
    StructuralAttention(const ExplainerConfig& config, ParamStore& store, Rng& rng);

    struct Result {
        Tape::Var logits;    // E x 1 (invalid when the snapshot has no edges)
        Tape::Var gates;     // E x 1 (invalid when the snapshot has no edges)
        Tape::Var embedded;  // N x att_dim
    };

    // Raw edge scores; requires at least one edge.
    Tape::Var edge_logits(Binding& bind, const Snapshot& snapshot, Tape::Var h) const;

    // noise == nullptr selects the deterministic inference gates; otherwise
    // noise must hold one (0,1) draw per edge and tau sets the temperature.
    Result attend(Binding& bind, const Snapshot& snapshot, Tape::Var h, const Tensor* noise,
                  double tau) const;

    // Aggregation under externally chosen gate values (e.g. binary masks).
    Tape::Var aggregate_with_gates(Binding& bind, const Snapshot& snapshot, Tape::Var h,
                                   Tape::Var gates) const;

private:
    const ExplainerConfig* config_;
    Param* w_proj;  // att_dim x embed_dim
    Param* a_vec;   // 2*att_dim x 1, split into source and destination halves
};

// Per-node causal attention across the buffered steps.
class TemporalAttention {
public:
    TemporalAttention(const ExplainerConfig& config, ParamStore& store, Rng& rng);

    struct Result {
        Tape::Var attention;  // (N*B) x B; row i*B+k holds node i, query step k
        Tape::Var mixed;      // (N*B) x att_dim
        Tape::Var last;       // N x att_dim, the newest step's mixture
    };

    Result attend(Binding& bind, const std::vector<Tape::Var>& buffered) const;

private:
    const ExplainerConfig* config_;
    Param* w_proj;  // att_dim x att_dim
    Param* a_vec;   // 2*att_dim x 1
};

// Lower-triangular step mask, optionally limited to the last `window` steps
// (window == 0 keeps the full history). Entry (k, j) is 1 when step j may
// influence step k.
Tensor causal_mask(std::size_t steps, int window);

// Both attention stages chained over the buffered window.
class Explainer {
public:
    Explainer(const ExplainerConfig& config, ParamStore& store, Rng& rng);

    // the attention stages point back at config_, so the object must stay put
    Explainer(const Explainer&) = delete;
    Explainer& operator=(const Explainer&) = delete;

    struct Result {
        std::vector<StructuralAttention::Result> structural;  // per buffered step
        TemporalAttention::Result temporal;
    };

    // snapshots and embeddings are parallel, oldest first. noise entries may
    // be null (deterministic gates) and must match each snapshot's edge count
    // otherwise.
    Result forward(Binding& bind, const std::vector<const Snapshot*>& snapshots,
                   const std::vector<Tape::Var>& embeddings,
                   const std::vector<const Tensor*>& noise, double tau) const;

    const StructuralAttention& structural() const { return structural_; }
    const TemporalAttention& temporal() const { return temporal_; }
    const ExplainerConfig& config() const { return config_; }

private:
    ExplainerConfig config_;
    StructuralAttention structural_;
    TemporalAttention temporal_;
};

}  // namespace dygex
