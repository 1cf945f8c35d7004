#pragma once

#include <iosfwd>
#include <utility>
#include <vector>

#include "dygex/graph.hpp"
#include "dygex/tensor.hpp"
#include "dygex/training.hpp"

namespace dygex {

// Kept-edge subset of one snapshot; indices refer to its sorted edge arrays.
struct ExplanationMask {
    int snapshot = 0;              // index of the explained snapshot
    double target_sparsity = 0.0;  // the grid point that produced the mask
    std::vector<std::size_t> kept;  // ascending edge indices
};

// Keeps the ceil((1 - target_sparsity) * |E|) highest-gate edges; ties go to
// the (src, dst)-lexicographically smaller edge. A request that rounds to
// zero edges keeps exactly one, with a warning.
ExplanationMask topk_edge_mask(const Snapshot& snapshot, const Tensor& gates,
                               double target_sparsity, int snapshot_index = 0);

// 1 - |kept| / |E|.
double sparsity(const ExplanationMask& mask, const Snapshot& snapshot);

// The snapshot restricted to the mask's kept edges.
Snapshot masked_snapshot(const Snapshot& snapshot, const ExplanationMask& mask);

// Deterministic attend-and-predict probabilities for the pairs, computed on
// the buffered window (oldest first) with its stored embeddings.
Tensor pipeline_scores(Model& model, const std::vector<const Snapshot*>& window,
                       const std::vector<Tensor>& embeddings,
                       const std::vector<std::pair<int, int>>& pairs);

// Mean absolute probability gap over the eval pairs between the pipeline on
// the original window and on the window with its newest snapshot masked.
// Only that snapshot's structural aggregation changes; the buffered
// embeddings stay those computed from the original graphs.
double fidelity(Model& model, const std::vector<const Snapshot*>& window,
                const std::vector<Tensor>& embeddings, const ExplanationMask& mask,
                const std::vector<std::pair<int, int>>& eval_pairs);

struct SweepRow {
    double sparsity = 0.0;  // achieved, after top-k quantization
    double fidelity = 0.0;
};

// One row per grid point: mask the newest snapshot at that sparsity with its
// own deterministic gates, then score the gap. Grid values must lie in [0,1).
std::vector<SweepRow> fidelity_sweep(Model& model, const std::vector<const Snapshot*>& window,
                                     const std::vector<Tensor>& embeddings,
                                     const std::vector<double>& grid,
                                     const std::vector<std::pair<int, int>>& eval_pairs);

// Header "sparsity,fidelity", one row per entry, full double precision.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// Header "snapshot,src,dst,gate_value"; for every trace and tracked edge one
// row holding the deterministic gate, or 0.0 when the snapshot does not
// contain that edge. An empty tracking list yields a header-only file.
void export_structural_csv(std::ostream& out, const DynamicGraph& graph,
                           const std::vector<SnapshotExplanation>& traces,
                           const std::vector<std::pair<int, int>>& tracked);

// Header "node,t_row,t_col,weight"; the block-row step-attention matrix of
// one trace, one row per entry.
void export_temporal_csv(std::ostream& out, const SnapshotExplanation& trace);

}  // namespace dygex
