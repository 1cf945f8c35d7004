#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "dygex/graph.hpp"
#include "dygex/tensor.hpp"

namespace dygex {

// Recipe for a dynamic graph with known-important edges. Each motif edge
// (u, v), when present at snapshot t AND at snapshot t - lag, triggers the
// future link ((v + 1) mod n, u) at snapshot t + 1 with probability p_signal.
// Everything else is uniform noise, so explanation quality has an oracle.
struct PlantedSpec {
    int num_nodes = 20;
    int num_snapshots = 8;
    int noise_edges_per_snapshot = 10;
    std::vector<std::pair<int, int>> motif;  // the signal edges
    double p_signal = 1.0;        // trigger fire probability, in (0.5, 1]
    double signal_density = 0.5;  // chance a motif edge is placed per snapshot
    int lag = 1;                  // planted temporal offset, >= 1
    std::uint64_t seed = 0;

    void validate() const;
};

// What the generator actually did; never handed to training code.
struct GroundTruth {
    std::vector<std::vector<std::pair<int, int>>> signal_edges;  // per snapshot, sorted
    int lag = 0;

    bool is_signal(int snapshot, int src, int dst) const;
};

// The future link a signal edge triggers.
std::pair<int, int> planted_effect(const std::pair<int, int>& signal, int num_nodes);

// Builds the planted graph. Deterministic under spec.seed: placement, trigger
// coins and noise each draw from their own derived stream.
std::pair<DynamicGraph, GroundTruth> generate_planted(const PlantedSpec& spec);

// Area under the ROC of gate values ranking signal (positive) against
// non-signal (negative) edges of one snapshot; ties count one half.
double explanation_auc(const Snapshot& snapshot, const Tensor& gates, const GroundTruth& truth,
                       int snapshot_index);

// True when the newest step's mean attention row, averaged over nodes, puts a
// strict maximum among the off-diagonal columns at the planted offset.
// `attention` stacks one steps x steps block per node.
bool temporal_recovery(const Tensor& attention, std::size_t steps, int lag);

// Emits "src,dst,time,weight" rows, time being the snapshot index; the
// stream loader reads the result back with exactly those column names.
void write_edge_stream_csv(std::ostream& out, const DynamicGraph& graph);

// Ground-truth sidecar as JSON: {"lag": L, "signal_edges": [[[u,v],...],...]}.
void write_ground_truth_json(std::ostream& out, const GroundTruth& truth);
GroundTruth read_ground_truth_json(std::istream& in);

}  // namespace dygex
