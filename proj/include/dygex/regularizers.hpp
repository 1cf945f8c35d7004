#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "dygex/graph.hpp"
#include "dygex/rng.hpp"
#include "dygex/tape.hpp"

namespace dygex {

struct ContrastiveConfig {
    int num_anchors = 32;
    int num_negatives = 8;
    double temperature = 1.0;

    void validate() const;
};

// k distinct integers from [0, n) in draw order.
std::vector<int> sample_distinct(Rng& rng, int n, int k);

// Cosine similarity of two tensors viewed as flat vectors, guarded against
// zero norms by a vanishing additive epsilon (all-zero rows score 0).
Tape::Var cosine_sim(Tape& tape, Tape::Var a, Tape::Var b);

// -log( exp(s_pos/T) / (exp(s_pos/T) + sum_k exp(s_k/T)) ) with cosine scores.
Tape::Var info_nce(Tape& tape, Tape::Var anchor, Tape::Var positive,
                   const std::vector<Tape::Var>& negatives, double temperature = 1.0);

// One consistency anchor: a node, one connected positive, unconnected negatives.
struct ConsistencyAnchor {
    int node = -1;
    int positive = -1;
    std::vector<int> negatives;
};

// Samples up to num_anchors distinct anchor nodes. Nodes without outgoing
// edges cannot form a positive pair and are skipped (with a warning); if no
// anchor survives the snapshot cannot be regularized and this throws.
std::vector<ConsistencyAnchor> sample_consistency_anchors(const Snapshot& snapshot,
                                                          const ContrastiveConfig& cfg, Rng& rng);

// Contrastive loss over dense rows of the gated adjacency: each anchor's row
// is pulled toward its connected positive's row and pushed from unconnected
// nodes' rows. `gates` holds one value per stored edge of the snapshot.
Tape::Var consistency_loss(Tape& tape, Tape::Var gates, const Snapshot& snapshot,
                           const std::vector<ConsistencyAnchor>& anchors,
                           double temperature = 1.0);

// Convenience wrapper: sample anchors, then score them.
Tape::Var consistency_loss(Tape& tape, Tape::Var gates, const Snapshot& snapshot,
                           const ContrastiveConfig& cfg, Rng& rng);

// Archive of per-node step-attention matrices from past snapshots. Each entry
// stores the (num_nodes * steps) x steps block-row matrix produced by the
// step-attention module when `ordinal` was the current snapshot. Oldest
// entries are evicted first.
class AttentionHistory {
public:
    struct Entry {
        int ordinal;
        std::size_t steps;
        Tensor attention;  // (num_nodes * steps) x steps
    };

    explicit AttentionHistory(std::size_t capacity);

    void push(int ordinal, std::size_t steps, Tensor attention);
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Entry& at(std::size_t i) const;  // 0 is the oldest entry
    const Entry& newest() const;
    std::size_t num_nodes() const;
    // indices of entries with window_start <= ordinal < current (recent) and
    // ordinal < window_start (distant), oldest first
    std::vector<std::size_t> in_window(int window_start, int current) const;
    std::vector<std::size_t> before_window(int window_start) const;
    void clear() { entries_.clear(); }

private:
    std::size_t capacity_;
    std::deque<Entry> entries_;
};

// Node block of an archived entry, zero-padded top-left so the most recent
// step stays in the bottom-right corner.
Tensor padded_attention_block(const AttentionHistory::Entry& entry, int node,
                              std::size_t padded_steps);

// Contrastive loss keeping each node's current step-attention matrix close to
// its own matrix at a recent archived snapshot (inside the buffer window) and
// away from its matrices at distant archived snapshots (before the window).
// `attention` is the current (num_nodes * steps) x steps block-row matrix for
// snapshot `current_ordinal`; the window covers ordinals >= window_start.
// Returns constant zero while the stream is too young to supply a recent
// positive or any distant negative.
Tape::Var continuity_loss(Tape& tape, Tape::Var attention, std::size_t steps,
                          int current_ordinal, int window_start, std::size_t padded_steps,
                          const AttentionHistory& history, const ContrastiveConfig& cfg,
                          Rng& rng);

// (1 - alpha - beta) * task + alpha * consistency + beta * continuity.
Tape::Var total_loss(Tape& tape, Tape::Var task, Tape::Var consistency, Tape::Var continuity,
                     double alpha, double beta);

}  // namespace dygex
