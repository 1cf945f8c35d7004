#include "dygex/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

#include "json.hpp"

#include "dygex/errors.hpp"
#include "dygex/format.hpp"
#include "dygex/rng.hpp"

namespace dygex {
namespace {

// independent child streams of the dataset seed
constexpr std::uint64_t kStreamPlacement = 1;
constexpr std::uint64_t kStreamTrigger = 2;
constexpr std::uint64_t kStreamNoise = 3;

std::uint64_t snapshot_stream(std::uint64_t seed, std::uint64_t stream, int t) {
    return Rng::derive(Rng::derive(seed, stream), static_cast<std::uint64_t>(t));
}

}  // namespace

std::pair<int, int> planted_effect(const std::pair<int, int>& signal, int num_nodes) {
    return {(signal.second + 1) % num_nodes, signal.first};
}

void PlantedSpec::validate() const {
    if (num_nodes < 2) throw ConfigError("planted spec: need at least 2 nodes");
    if (lag < 1) throw ConfigError("planted spec: lag must be at least 1");
    if (num_snapshots < lag + 2)
        throw ConfigError("planted spec: need lag + 2 snapshots for the trigger to fire");
    if (noise_edges_per_snapshot < 0)
        throw ConfigError("planted spec: negative noise count");
    if (motif.empty()) throw ConfigError("planted spec: empty motif plants nothing");
    if (!(p_signal > 0.5) || p_signal > 1.0)
        throw ConfigError("planted spec: p_signal must lie in (0.5, 1]");
    if (!(signal_density > 0.0) || signal_density > 1.0)
        throw ConfigError("planted spec: signal_density must lie in (0, 1]");

    std::set<std::pair<int, int>> motif_set;
    for (const auto& [u, v] : motif) {
        if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
            throw ConfigError("planted spec: motif edge endpoint out of range");
        if (u == v) throw ConfigError("planted spec: motif self-loop");
        if (!motif_set.insert({u, v}).second)
            throw ConfigError("planted spec: duplicate motif edge");
    }
    for (const auto& edge : motif) {
        const auto eff = planted_effect(edge, num_nodes);
        if (eff.first == eff.second)
            throw ConfigError("planted spec: motif edge triggers a self-loop");
        if (motif_set.count(eff))
            throw ConfigError("planted spec: a triggered link collides with the motif");
    }
    const std::size_t pairs =
        static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(num_nodes - 1);
    if (2 * motif.size() + static_cast<std::size_t>(noise_edges_per_snapshot) > pairs)
        throw ConfigError("planted spec: more edges requested than ordered pairs exist");
}

bool GroundTruth::is_signal(int snapshot, int src, int dst) const {
    if (snapshot < 0 || static_cast<std::size_t>(snapshot) >= signal_edges.size()) return false;
    const auto& edges = signal_edges[static_cast<std::size_t>(snapshot)];
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(src, dst));
}

std::pair<DynamicGraph, GroundTruth> generate_planted(const PlantedSpec& spec) {
    spec.validate();
    const int n = spec.num_nodes;
    const std::size_t motif_size = spec.motif.size();
    std::set<std::pair<int, int>> motif_set(spec.motif.begin(), spec.motif.end());

    // which motif edges exist at each snapshot
    std::vector<std::vector<bool>> present(static_cast<std::size_t>(spec.num_snapshots));
    for (int t = 0; t < spec.num_snapshots; ++t) {
        Rng place(snapshot_stream(spec.seed, kStreamPlacement, t));
        auto& row = present[static_cast<std::size_t>(t)];
        row.resize(motif_size);
        for (std::size_t i = 0; i < motif_size; ++i)
            row[i] = place.bernoulli(spec.signal_density);
    }

    DynamicGraph graph;
    graph.node_ids.resize(static_cast<std::size_t>(n));
    std::iota(graph.node_ids.begin(), graph.node_ids.end(), 0);
    GroundTruth truth;
    truth.lag = spec.lag;
    truth.signal_edges.resize(static_cast<std::size_t>(spec.num_snapshots));

    for (int t = 0; t < spec.num_snapshots; ++t) {
        std::set<std::pair<int, int>> edges;
        auto& signal_here = truth.signal_edges[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < motif_size; ++i)
            if (present[static_cast<std::size_t>(t)][i]) {
                edges.insert(spec.motif[i]);
                signal_here.push_back(spec.motif[i]);
            }
        std::sort(signal_here.begin(), signal_here.end());

        // links caused by the motif firing at t-1 and t-1-lag
        if (t - 1 - spec.lag >= 0) {
            Rng trigger(snapshot_stream(spec.seed, kStreamTrigger, t));
            for (std::size_t i = 0; i < motif_size; ++i) {
                if (!present[static_cast<std::size_t>(t - 1)][i]) continue;
                if (!present[static_cast<std::size_t>(t - 1 - spec.lag)][i]) continue;
                if (trigger.bernoulli(spec.p_signal))
                    edges.insert(planted_effect(spec.motif[i], n));
            }
        }

        // uniform noise over ordered non-motif pairs not already present
        Rng noise(snapshot_stream(spec.seed, kStreamNoise, t));
        for (int k = 0; k < spec.noise_edges_per_snapshot; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
                const int u = noise.index(n);
                const int v = noise.index(n);
                if (u == v) continue;
                const std::pair<int, int> cand{u, v};
                if (motif_set.count(cand) || edges.count(cand)) continue;
                edges.insert(cand);
                placed = true;
            }
            if (placed) continue;
            // dense corner: enumerate what is left and pick uniformly
            std::vector<std::pair<int, int>> open;
            for (int u = 0; u < n; ++u)
                for (int v = 0; v < n; ++v) {
                    if (u == v) continue;
                    const std::pair<int, int> cand{u, v};
                    if (motif_set.count(cand) || edges.count(cand)) continue;
                    open.push_back(cand);
                }
            if (open.empty())
                throw ConfigError("planted spec: snapshot cannot hold the requested noise");
            edges.insert(open[static_cast<std::size_t>(noise.index(
                static_cast<int>(open.size())))]);
        }

        graph.snapshots.push_back(Snapshot::from_edges(
            n, std::vector<std::pair<int, int>>(edges.begin(), edges.end())));
    }
    return {std::move(graph), std::move(truth)};
}

double explanation_auc(const Snapshot& snapshot, const Tensor& gates, const GroundTruth& truth,
                       int snapshot_index) {
    if (snapshot_index < 0 ||
        static_cast<std::size_t>(snapshot_index) >= truth.signal_edges.size())
        throw IndexError("explanation_auc: snapshot " + std::to_string(snapshot_index) +
                         " outside the ground truth");
    const std::size_t edges = snapshot.num_edges();
    if (edges == 0) throw DataError("explanation_auc: snapshot has no edges");
    if (gates.rows() != edges || gates.cols() != 1)
        throw ShapeError("explanation_auc: gates " + gates.shape_str() + " do not match " +
                         std::to_string(edges) + " edges");

    std::vector<bool> positive(edges);
    std::size_t num_pos = 0;
    for (std::size_t e = 0; e < edges; ++e) {
        positive[e] = truth.is_signal(snapshot_index, snapshot.src[e], snapshot.dst[e]);
        if (positive[e]) ++num_pos;
    }
    const std::size_t num_neg = edges - num_pos;
    if (num_pos == 0 || num_neg == 0)
        throw DataError("explanation_auc: snapshot lacks a signal or a non-signal edge");

    // Mann-Whitney via midranks; ties contribute exactly one half per pair
    std::vector<std::size_t> order(edges);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&gates](std::size_t a, std::size_t b) { return gates[a] < gates[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < edges) {
        std::size_t j = i;
        while (j < edges && gates[order[j]] == gates[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j - 1) + 1.0;
        for (std::size_t k = i; k < j; ++k)
            if (positive[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    const double p = static_cast<double>(num_pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(num_neg));
}

bool temporal_recovery(const Tensor& attention, std::size_t steps, int lag) {
    if (lag < 1) throw ConfigError("temporal_recovery: lag must be at least 1");
    if (steps < static_cast<std::size_t>(lag) + 1)
        throw ConfigError("temporal_recovery: buffer of " + std::to_string(steps) +
                          " steps cannot look back " + std::to_string(lag));
    if (attention.rows() == 0 || attention.cols() != steps ||
        attention.rows() % steps != 0)
        throw ShapeError("temporal_recovery: attention " + attention.shape_str() +
                         " is not node-stacked " + std::to_string(steps) + "-step blocks");

    const std::size_t nodes = attention.rows() / steps;
    std::vector<double> mean_last(steps, 0.0);
    for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t c = 0; c < steps; ++c)
            mean_last[c] += attention.at(i * steps + (steps - 1), c);
    for (double& v : mean_last) v /= static_cast<double>(nodes);

    // strict maximum among off-diagonal columns; any tie fails the recovery
    std::size_t best = 0;
    bool unique = true;
    for (std::size_t c = 1; c + 1 < steps; ++c) {
        if (mean_last[c] > mean_last[best]) {
            best = c;
            unique = true;
        } else if (mean_last[c] == mean_last[best]) {
            unique = false;
        }
    }
    const std::size_t offset = steps - 1 - best;
    return unique && offset == static_cast<std::size_t>(lag);
}

void write_edge_stream_csv(std::ostream& out, const DynamicGraph& graph) {
    out << "# src,dst,time,weight\n";
    for (std::size_t t = 0; t < graph.snapshots.size(); ++t) {
        const Snapshot& snap = graph.snapshots[t];
        for (std::size_t e = 0; e < snap.num_edges(); ++e)
            out << graph.node_ids[static_cast<std::size_t>(snap.src[e])] << ','
                << graph.node_ids[static_cast<std::size_t>(snap.dst[e])] << ',' << t << ','
                << format_numeric(snap.weight[e]) << '\n';
    }
}

void write_ground_truth_json(std::ostream& out, const GroundTruth& truth) {
    nlohmann::json doc;
    doc["lag"] = truth.lag;
    auto& all = doc["signal_edges"] = nlohmann::json::array();
    for (const auto& per_snapshot : truth.signal_edges) {
        auto& list = all.emplace_back(nlohmann::json::array());
        for (const auto& [u, v] : per_snapshot) list.push_back({u, v});
    }
    out << doc.dump(2) << '\n';
}

GroundTruth read_ground_truth_json(std::istream& in) {
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ground truth sidecar is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("lag") || !doc.contains("signal_edges"))
        throw DataError("ground truth sidecar needs 'lag' and 'signal_edges'");
    GroundTruth truth;
    truth.lag = doc.at("lag").get<int>();
    for (const auto& list : doc.at("signal_edges")) {
        auto& per_snapshot = truth.signal_edges.emplace_back();
        for (const auto& pair : list) {
            if (!pair.is_array() || pair.size() != 2)
                throw DataError("ground truth sidecar: signal edge is not a pair");
            per_snapshot.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        }
        std::sort(per_snapshot.begin(), per_snapshot.end());
    }
    return truth;
}

}  // namespace dygex
