#include "dygex/regularizers.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <string>
#include <utility>

#include "dygex/errors.hpp"

namespace dygex {

void ContrastiveConfig::validate() const {
    if (num_anchors < 1) throw ConfigError("contrastive num_anchors must be at least 1");
    if (num_negatives < 1) throw ConfigError("contrastive num_negatives must be at least 1");
    if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
}

std::vector<int> sample_distinct(Rng& rng, int n, int k) {
    if (k < 0 || k > n)
        throw ConfigError("sample_distinct: cannot draw " + std::to_string(k) + " from " +
                          std::to_string(n));
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        const int j = i + rng.index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

Tape::Var cosine_sim(Tape& tape, Tape::Var a, Tape::Var b) {
    constexpr double kEps = 1e-24;
    auto na = tape.sqrt(tape.affine(tape.dot(a, a), 1.0, kEps));
    auto nb = tape.sqrt(tape.affine(tape.dot(b, b), 1.0, kEps));
    return tape.div(tape.dot(a, b), tape.mul(na, nb));
}

Tape::Var info_nce(Tape& tape, Tape::Var anchor, Tape::Var positive,
                   const std::vector<Tape::Var>& negatives, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("info_nce temperature must be positive");
    const double inv_t = 1.0 / temperature;
    auto s_pos = tape.affine(cosine_sim(tape, anchor, positive), inv_t, 0.0);
    std::vector<Tape::Var> scores{s_pos};
    for (Tape::Var neg : negatives)
        scores.push_back(tape.affine(cosine_sim(tape, anchor, neg), inv_t, 0.0));
    return tape.sub(tape.logsumexp(tape.stack_scalars(scores)), s_pos);
}

namespace {

// [first, last) edge range of a node in the (src, dst)-sorted edge arrays
std::pair<std::size_t, std::size_t> out_edge_range(const Snapshot& snapshot, int node) {
    const auto lo = std::lower_bound(snapshot.src.begin(), snapshot.src.end(), node);
    const auto hi = std::upper_bound(snapshot.src.begin(), snapshot.src.end(), node);
    return {static_cast<std::size_t>(lo - snapshot.src.begin()),
            static_cast<std::size_t>(hi - snapshot.src.begin())};
}

}  // namespace

std::vector<ConsistencyAnchor> sample_consistency_anchors(const Snapshot& snapshot,
                                                          const ContrastiveConfig& cfg,
                                                          Rng& rng) {
    cfg.validate();
    const int n = snapshot.num_nodes;
    std::vector<ConsistencyAnchor> anchors;
    std::size_t skipped = 0;
    for (int i : sample_distinct(rng, n, std::min(cfg.num_anchors, n))) {
        const auto [lo, hi] = out_edge_range(snapshot, i);
        std::vector<int> positives;  // out-neighbors, self-loops excluded
        for (std::size_t e = lo; e < hi; ++e)
            if (snapshot.dst[e] != i) positives.push_back(snapshot.dst[e]);
        std::vector<int> candidates;  // unconnected non-self nodes
        std::size_t e = lo;
        for (int j = 0; j < n; ++j) {
            while (e < hi && snapshot.dst[e] < j) ++e;
            if (j == i || (e < hi && snapshot.dst[e] == j)) continue;
            candidates.push_back(j);
        }
        if (positives.empty() || candidates.empty()) {
            ++skipped;
            continue;
        }
        ConsistencyAnchor anchor;
        anchor.node = i;
        anchor.positive = positives[rng.below(positives.size())];
        const int take = std::min<int>(cfg.num_negatives, static_cast<int>(candidates.size()));
        for (int pick : sample_distinct(rng, static_cast<int>(candidates.size()), take))
            anchor.negatives.push_back(candidates[pick]);
        anchors.push_back(std::move(anchor));
    }
    if (skipped > 0)
        std::cerr << "warning: skipped " << skipped
                  << " consistency anchors without usable positive/negative pairs\n";
    if (anchors.empty())
        throw DataError("consistency anchors: no sampled node has both a connected positive "
                        "and an unconnected negative");
    return anchors;
}

Tape::Var consistency_loss(Tape& tape, Tape::Var gates, const Snapshot& snapshot,
                           const std::vector<ConsistencyAnchor>& anchors, double temperature) {
    const Tensor& gv = tape.val(gates);
    if (gv.cols() != 1 || gv.rows() != snapshot.num_edges())
        throw ShapeError("consistency_loss: " + gv.shape_str() + " gates for " +
                         std::to_string(snapshot.num_edges()) + " edges");
    if (anchors.empty()) throw ConfigError("consistency_loss: anchor set is empty");

    // compact dense rows of the gated adjacency, one per referenced node
    std::map<int, int> row_of;
    auto touch = [&](int node) {
        if (node < 0 || node >= snapshot.num_nodes)
            throw IndexError("consistency_loss: node " + std::to_string(node) +
                             " outside 0.." + std::to_string(snapshot.num_nodes - 1));
        row_of.emplace(node, 0);
    };
    for (const auto& anchor : anchors) {
        touch(anchor.node);
        touch(anchor.positive);
        for (int j : anchor.negatives) touch(j);
    }
    int next = 0;
    for (auto& [node, row] : row_of) row = next++;

    std::vector<int> edge_ids, rows, cols;
    for (const auto& [node, row] : row_of) {
        const auto [lo, hi] = out_edge_range(snapshot, node);
        for (std::size_t e = lo; e < hi; ++e) {
            edge_ids.push_back(static_cast<int>(e));
            rows.push_back(row);
            cols.push_back(snapshot.dst[e]);
        }
    }
    Tape::Var dense;
    if (edge_ids.empty()) {
        dense = tape.constant(Tensor(row_of.size(), snapshot.num_nodes));
    } else {
        auto selected = tape.gather_rows(gates, edge_ids);
        dense = tape.scatter_rows(selected, rows, cols, row_of.size(), snapshot.num_nodes);
    }

    std::vector<Tape::Var> terms;
    terms.reserve(anchors.size());
    for (const auto& anchor : anchors) {
        auto a = tape.gather_rows(dense, {row_of.at(anchor.node)});
        auto p = tape.gather_rows(dense, {row_of.at(anchor.positive)});
        std::vector<Tape::Var> negatives;
        negatives.reserve(anchor.negatives.size());
        for (int j : anchor.negatives) negatives.push_back(tape.gather_rows(dense, {row_of.at(j)}));
        terms.push_back(info_nce(tape, a, p, negatives, temperature));
    }
    if (terms.size() == 1) return terms.front();
    return tape.mean(tape.stack_scalars(terms));
}

Tape::Var consistency_loss(Tape& tape, Tape::Var gates, const Snapshot& snapshot,
                           const ContrastiveConfig& cfg, Rng& rng) {
    return consistency_loss(tape, gates, snapshot, sample_consistency_anchors(snapshot, cfg, rng),
                            cfg.temperature);
}

AttentionHistory::AttentionHistory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("attention history capacity must be at least 1");
}

void AttentionHistory::push(int ordinal, std::size_t steps, Tensor attention) {
    if (steps < 1) throw ShapeError("attention history: steps must be at least 1");
    if (attention.cols() != steps || attention.rows() % steps != 0 || attention.rows() == 0)
        throw ShapeError("attention history: " + attention.shape_str() +
                         " is not a block-row stack of " + std::to_string(steps) + "-step blocks");
    if (!entries_.empty()) {
        if (ordinal <= entries_.back().ordinal)
            throw DataError("attention history: ordinal " + std::to_string(ordinal) +
                            " does not advance past " + std::to_string(entries_.back().ordinal));
        if (attention.rows() / steps != num_nodes())
            throw ShapeError("attention history: node count changed from " +
                             std::to_string(num_nodes()) + " to " +
                             std::to_string(attention.rows() / steps));
    }
    entries_.push_back(Entry{ordinal, steps, std::move(attention)});
    if (entries_.size() > capacity_) entries_.pop_front();
}

const AttentionHistory::Entry& AttentionHistory::at(std::size_t i) const {
    if (i >= entries_.size())
        throw IndexError("attention history index " + std::to_string(i) + " out of range " +
                         std::to_string(entries_.size()));
    return entries_[i];
}

const AttentionHistory::Entry& AttentionHistory::newest() const {
    if (entries_.empty()) throw IndexError("attention history is empty");
    return entries_.back();
}

std::size_t AttentionHistory::num_nodes() const {
    if (entries_.empty()) return 0;
    return entries_.back().attention.rows() / entries_.back().steps;
}

std::vector<std::size_t> AttentionHistory::in_window(int window_start, int current) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].ordinal >= window_start && entries_[i].ordinal < current) out.push_back(i);
    return out;
}

std::vector<std::size_t> AttentionHistory::before_window(int window_start) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].ordinal < window_start) out.push_back(i);
    return out;
}

Tensor padded_attention_block(const AttentionHistory::Entry& entry, int node,
                              std::size_t padded_steps) {
    const std::size_t nodes = entry.attention.rows() / entry.steps;
    if (node < 0 || static_cast<std::size_t>(node) >= nodes)
        throw IndexError("attention block: node " + std::to_string(node) + " out of range " +
                         std::to_string(nodes));
    if (padded_steps < entry.steps)
        throw ShapeError("attention block: cannot pad " + std::to_string(entry.steps) +
                         " steps down to " + std::to_string(padded_steps));
    const std::size_t off = padded_steps - entry.steps;
    Tensor out(padded_steps, padded_steps);
    for (std::size_t r = 0; r < entry.steps; ++r)
        for (std::size_t c = 0; c < entry.steps; ++c)
            out.at(off + r, off + c) = entry.attention.at(node * entry.steps + r, c);
    return out;
}

Tape::Var continuity_loss(Tape& tape, Tape::Var attention, std::size_t steps,
                          int current_ordinal, int window_start, std::size_t padded_steps,
                          const AttentionHistory& history, const ContrastiveConfig& cfg,
                          Rng& rng) {
    cfg.validate();
    const Tensor& av = tape.val(attention);
    if (steps < 1 || av.cols() != steps || av.rows() % steps != 0 || av.rows() == 0)
        throw ShapeError("continuity_loss: attention " + av.shape_str() +
                         " is not a block-row stack of " + std::to_string(steps) + "-step blocks");
    if (padded_steps < steps)
        throw ShapeError("continuity_loss: padded width " + std::to_string(padded_steps) +
                         " below current " + std::to_string(steps));
    if (window_start > current_ordinal)
        throw ConfigError("continuity_loss: window start " + std::to_string(window_start) +
                          " past current snapshot " + std::to_string(current_ordinal));
    const std::size_t n = av.rows() / steps;
    if (history.size() == 0) return tape.constant(Tensor::scalar(0.0));
    if (history.num_nodes() != n)
        throw ShapeError("continuity_loss: history holds " + std::to_string(history.num_nodes()) +
                         " nodes, current attention has " + std::to_string(n));

    const auto recent = history.in_window(window_start, current_ordinal);
    const auto distant = history.before_window(window_start);
    if (recent.empty() || distant.empty()) return tape.constant(Tensor::scalar(0.0));

    const std::vector<int> anchors =
        sample_distinct(rng, static_cast<int>(n), std::min(cfg.num_anchors, static_cast<int>(n)));
    const auto& positive_entry = history.at(recent[rng.below(recent.size())]);
    const int neg_count = std::min<int>(cfg.num_negatives, static_cast<int>(distant.size()));
    std::vector<const AttentionHistory::Entry*> negative_entries;
    negative_entries.reserve(neg_count);
    for (int pick : sample_distinct(rng, static_cast<int>(distant.size()), neg_count))
        negative_entries.push_back(&history.at(distant[pick]));

    std::vector<Tape::Var> terms;
    terms.reserve(anchors.size());
    for (int i : anchors) {
        std::vector<int> block(steps);
        for (std::size_t r = 0; r < steps; ++r) block[r] = static_cast<int>(i * steps + r);
        auto a = tape.gather_rows(attention, block);
        if (steps < padded_steps) a = tape.pad_bottom_right(a, padded_steps, padded_steps);
        auto p = tape.constant(padded_attention_block(positive_entry, i, padded_steps));
        std::vector<Tape::Var> negatives;
        negatives.reserve(negative_entries.size());
        for (const auto* entry : negative_entries)
            negatives.push_back(tape.constant(padded_attention_block(*entry, i, padded_steps)));
        terms.push_back(info_nce(tape, a, p, negatives, cfg.temperature));
    }
    if (terms.size() == 1) return terms.front();
    return tape.mean(tape.stack_scalars(terms));
}

Tape::Var total_loss(Tape& tape, Tape::Var task, Tape::Var consistency, Tape::Var continuity,
                     double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0 || alpha + beta > 1.0)
        throw ConfigError("loss weights need alpha >= 0, beta >= 0 and alpha + beta <= 1, got " +
                          std::to_string(alpha) + " and " + std::to_string(beta));
    auto weighted = tape.affine(task, 1.0 - alpha - beta, 0.0);
    if (alpha > 0.0) weighted = tape.add(weighted, tape.affine(consistency, alpha, 0.0));
    if (beta > 0.0) weighted = tape.add(weighted, tape.affine(continuity, beta, 0.0));
    return weighted;
}

}  // namespace dygex
