#include "dygex/explain_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>
#include <string>

#include "dygex/errors.hpp"
#include "dygex/format.hpp"

namespace dygex {
namespace {

void check_mask(const ExplanationMask& mask, const Snapshot& snapshot) {
    for (std::size_t idx : mask.kept)
        if (idx >= snapshot.num_edges())
            throw IndexError("mask keeps edge " + std::to_string(idx) +
                             " but the snapshot stores only " +
                             std::to_string(snapshot.num_edges()));
}

}  // namespace

ExplanationMask topk_edge_mask(const Snapshot& snapshot, const Tensor& gates,
                               double target_sparsity, int snapshot_index) {
    const std::size_t edges = snapshot.num_edges();
    if (edges == 0) throw DataError("topk_edge_mask: snapshot has no edges to rank");
    if (gates.rows() != edges || gates.cols() != 1)
        throw ShapeError("topk_edge_mask: gates " + gates.shape_str() + " do not match " +
                         std::to_string(edges) + " edges");
    if (target_sparsity < 0.0 || target_sparsity > 1.0)
        throw ConfigError("topk_edge_mask: sparsity must lie in [0, 1], got " +
                          std::to_string(target_sparsity));
    auto keep = static_cast<std::size_t>(
        std::ceil((1.0 - target_sparsity) * static_cast<double>(edges)));
    if (keep == 0) {
        std::cerr << "warning: sparsity " << target_sparsity
                  << " rounds to an empty mask, keeping one edge\n";
        keep = 1;
    }
    // stable rank: higher gate first, then the (src, dst)-smaller edge, which
    // is exactly the storage order
    std::vector<std::size_t> order(edges);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&gates](std::size_t a, std::size_t b) { return gates[a] > gates[b]; });
    ExplanationMask mask;
    mask.snapshot = snapshot_index;
    mask.target_sparsity = target_sparsity;
    mask.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(mask.kept.begin(), mask.kept.end());
    return mask;
}

double sparsity(const ExplanationMask& mask, const Snapshot& snapshot) {
    if (snapshot.num_edges() == 0) throw DataError("sparsity: snapshot has no edges");
    check_mask(mask, snapshot);
    return 1.0 - static_cast<double>(mask.kept.size()) /
                     static_cast<double>(snapshot.num_edges());
}

Snapshot masked_snapshot(const Snapshot& snapshot, const ExplanationMask& mask) {
    check_mask(mask, snapshot);
    std::vector<std::pair<int, int>> endpoints;
    std::vector<double> weights;
    endpoints.reserve(mask.kept.size());
    weights.reserve(mask.kept.size());
    for (std::size_t idx : mask.kept) {
        endpoints.emplace_back(snapshot.src[idx], snapshot.dst[idx]);
        weights.push_back(snapshot.weight[idx]);
    }
    return Snapshot::from_edges(snapshot.num_nodes, std::move(endpoints), std::move(weights));
}

Tensor pipeline_scores(Model& model, const std::vector<const Snapshot*>& window,
                       const std::vector<Tensor>& embeddings,
                       const std::vector<std::pair<int, int>>& pairs) {
    if (window.empty()) throw ShapeError("pipeline_scores: empty window");
    if (window.size() != embeddings.size())
        throw ShapeError("pipeline_scores: " + std::to_string(window.size()) +
                         " snapshots but " + std::to_string(embeddings.size()) + " embeddings");
    Tape tape;
    Binding bind(tape, false);
    std::vector<Tape::Var> embeds;
    embeds.reserve(embeddings.size());
    for (const Tensor& h : embeddings) embeds.push_back(tape.constant(h));
    const std::vector<const Tensor*> no_noise(window.size(), nullptr);
    auto ex = model.explainer.forward(bind, window, embeds, no_noise, 1.0);
    return tape.val(model.explainer_head.probabilities(bind, ex.temporal.last, pairs));
}

double fidelity(Model& model, const std::vector<const Snapshot*>& window,
                const std::vector<Tensor>& embeddings, const ExplanationMask& mask,
                const std::vector<std::pair<int, int>>& eval_pairs) {
    if (eval_pairs.empty()) throw DataError("fidelity: no edges to evaluate");
    if (window.empty()) throw ShapeError("fidelity: empty window");
    const Tensor original = pipeline_scores(model, window, embeddings, eval_pairs);
    const Snapshot masked = masked_snapshot(*window.back(), mask);
    std::vector<const Snapshot*> swapped(window);
    swapped.back() = &masked;
    const Tensor restricted = pipeline_scores(model, swapped, embeddings, eval_pairs);
    // accumulate in sorted order so the mean is exactly order-invariant
    std::vector<double> gaps(original.size());
    for (std::size_t i = 0; i < original.size(); ++i)
        gaps[i] = std::abs(original[i] - restricted[i]);
    std::sort(gaps.begin(), gaps.end());
    double total = 0.0;
    for (double g : gaps) total += g;
    return total / static_cast<double>(gaps.size());
}

std::vector<SweepRow> fidelity_sweep(Model& model, const std::vector<const Snapshot*>& window,
                                     const std::vector<Tensor>& embeddings,
                                     const std::vector<double>& grid,
                                     const std::vector<std::pair<int, int>>& eval_pairs) {
    if (window.empty()) throw ShapeError("fidelity_sweep: empty window");
    for (double s : grid)
        if (s < 0.0 || s >= 1.0)
            throw ConfigError("fidelity_sweep: grid value " + std::to_string(s) +
                              " outside [0, 1)");
    const Snapshot& newest = *window.back();
    Tensor gates;
    {
        Tape tape;
        Binding bind(tape, false);
        auto res = model.explainer.structural().attend(bind, newest,
                                                       tape.constant(embeddings.back()),
                                                       nullptr, 1.0);
        if (!res.gates.valid())
            throw DataError("fidelity_sweep: the newest snapshot has no edges to mask");
        gates = tape.val(res.gates);
    }
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (double s : grid) {
        const ExplanationMask mask = topk_edge_mask(newest, gates, s);
        SweepRow row;
        row.sparsity = sparsity(mask, newest);
        row.fidelity = fidelity(model, window, embeddings, mask, eval_pairs);
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "sparsity,fidelity\n";
    for (const SweepRow& row : rows)
        out << format_numeric(row.sparsity) << ',' << format_numeric(row.fidelity) << '\n';
}

void export_structural_csv(std::ostream& out, const DynamicGraph& graph,
                           const std::vector<SnapshotExplanation>& traces,
                           const std::vector<std::pair<int, int>>& tracked) {
    out << "snapshot,src,dst,gate_value\n";
    for (const auto& trace : traces) {
        if (trace.snapshot < 0 ||
            static_cast<std::size_t>(trace.snapshot) >= graph.num_snapshots())
            throw IndexError("export: trace refers to snapshot " +
                             std::to_string(trace.snapshot) + " of " +
                             std::to_string(graph.num_snapshots()));
        const Snapshot& snap = graph.snapshots[static_cast<std::size_t>(trace.snapshot)];
        if (!trace.gates.empty() && trace.gates.size() != snap.num_edges())
            throw ShapeError("export: trace carries " + std::to_string(trace.gates.size()) +
                             " gates for " + std::to_string(snap.num_edges()) + " edges");
        for (const auto& [s, d] : tracked) {
            double gate = 0.0;  // a tracked edge missing from this snapshot
            const auto lo = std::lower_bound(
                snap.src.begin(), snap.src.end(), s);
            for (auto it = lo; it != snap.src.end() && *it == s; ++it) {
                const auto e = static_cast<std::size_t>(it - snap.src.begin());
                if (snap.dst[e] == d) {
                    if (!trace.gates.empty()) gate = trace.gates[e];
                    break;
                }
            }
            out << trace.snapshot << ',' << s << ',' << d << ',' << format_numeric(gate) << '\n';
        }
    }
}

void export_temporal_csv(std::ostream& out, const SnapshotExplanation& trace) {
    out << "node,t_row,t_col,weight\n";
    if (trace.steps == 0) return;
    const Tensor& a = trace.attention;
    if (a.cols() != trace.steps || a.rows() % trace.steps != 0)
        throw ShapeError("export: attention " + a.shape_str() + " does not block into " +
                         std::to_string(trace.steps) + " steps");
    const std::size_t nodes = a.rows() / trace.steps;
    for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t r = 0; r < trace.steps; ++r)
            for (std::size_t c = 0; c < trace.steps; ++c)
                out << i << ',' << r << ',' << c << ','
                    << format_numeric(a.at(i * trace.steps + r, c)) << '\n';
}

}  // namespace dygex
