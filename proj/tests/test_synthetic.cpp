#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dygex/errors.hpp"
#include "dygex/graph.hpp"
#include "dygex/rng.hpp"
#include "dygex/synthetic.hpp"
#include "dygex/training.hpp"

using dygex::DynamicGraph;
using dygex::GroundTruth;
using dygex::PlantedSpec;
using dygex::Rng;
using dygex::Snapshot;
using dygex::Tensor;

namespace {

PlantedSpec recount_spec() {
    PlantedSpec spec;
    spec.num_nodes = 20;
    spec.num_snapshots = 8;
    spec.noise_edges_per_snapshot = 10;
    spec.motif = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    spec.p_signal = 1.0;
    spec.signal_density = 0.5;
    spec.lag = 2;
    spec.seed = 11;
    return spec;
}

using EdgeSet = std::set<std::pair<int, int>>;

EdgeSet snapshot_edges(const Snapshot& snap) {
    EdgeSet out;
    for (std::size_t e = 0; e < snap.num_edges(); ++e) out.insert({snap.src[e], snap.dst[e]});
    return out;
}

// the deterministic trigger replayed from the ground truth (needs p_signal = 1)
EdgeSet expected_effects(const PlantedSpec& spec, const GroundTruth& truth, int t) {
    EdgeSet out;
    if (t - 1 - spec.lag < 0) return out;
    for (const auto& edge : spec.motif)
        if (truth.is_signal(t - 1, edge.first, edge.second) &&
            truth.is_signal(t - 1 - spec.lag, edge.first, edge.second))
            out.insert(dygex::planted_effect(edge, spec.num_nodes));
    return out;
}

GroundTruth single_snapshot_truth(std::vector<std::pair<int, int>> signal) {
    std::sort(signal.begin(), signal.end());
    GroundTruth truth;
    truth.signal_edges.push_back(std::move(signal));
    truth.lag = 1;
    return truth;
}

// block tensor for `nodes` nodes whose last rows are all `last_row`
Tensor blocks_with_last_row(int nodes, const std::vector<double>& last_row) {
    const std::size_t steps = last_row.size();
    Tensor att(static_cast<std::size_t>(nodes) * steps, steps);
    for (int i = 0; i < nodes; ++i)
        for (std::size_t c = 0; c < steps; ++c)
            att.at(static_cast<std::size_t>(i) * steps + steps - 1, c) = last_row[c];
    return att;
}

}  // namespace

TEST_CASE("planted specs reject every inconsistent field") {
    auto good = recount_spec();
    CHECK_NOTHROW(good.validate());

    auto bad = good;
    bad.num_nodes = 1;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.lag = 0;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.num_snapshots = bad.lag + 1;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.noise_edges_per_snapshot = -1;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.motif.clear();
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.p_signal = 0.5;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.p_signal = 1.1;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.signal_density = 0.0;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.signal_density = 1.5;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.motif.push_back({0, 20});
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.motif.push_back({3, 3});
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    bad = good;
    bad.motif.push_back({0, 1});
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    // (2, 1) triggers ((1 + 1) mod 3, 2) = (2, 2), a self-loop
    bad = good;
    bad.num_nodes = 3;
    bad.motif = {{2, 1}};
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    // (0, 2) triggers (3, 0) which is itself a motif edge
    bad = good;
    bad.motif = {{0, 2}, {3, 0}};
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
    // 3 nodes offer 6 ordered pairs; 1 motif + 1 effect + 5 noise needs 7
    bad = good;
    bad.num_nodes = 3;
    bad.motif = {{0, 1}};
    bad.noise_edges_per_snapshot = 5;
    CHECK_THROWS_AS(bad.validate(), dygex::ConfigError);
}

TEST_CASE("the noiseless limit is a deterministic function of the signal") {
    PlantedSpec spec;
    spec.num_nodes = 12;
    spec.num_snapshots = 8;
    spec.noise_edges_per_snapshot = 0;
    spec.motif = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
    spec.p_signal = 1.0;
    spec.signal_density = 0.5;
    spec.lag = 1;
    spec.seed = 7;
    auto [graph, truth] = dygex::generate_planted(spec);
    REQUIRE(graph.num_snapshots() == 8);
    REQUIRE(truth.signal_edges.size() == 8);
    CHECK(truth.lag == 1);
    for (int t = 0; t < 8; ++t) {
        EdgeSet want(truth.signal_edges[static_cast<std::size_t>(t)].begin(),
                     truth.signal_edges[static_cast<std::size_t>(t)].end());
        for (const auto& eff : expected_effects(spec, truth, t)) want.insert(eff);
        CHECK(snapshot_edges(graph.snapshots[static_cast<std::size_t>(t)]) == want);
    }
}

TEST_CASE("generation is bit-identical under the same seed") {
    const auto spec = recount_spec();
    auto [g1, t1] = dygex::generate_planted(spec);
    auto [g2, t2] = dygex::generate_planted(spec);
    REQUIRE(g1.num_snapshots() == g2.num_snapshots());
    CHECK(g1.node_ids == g2.node_ids);
    for (std::size_t t = 0; t < g1.num_snapshots(); ++t) {
        CHECK(g1.snapshots[t].src == g2.snapshots[t].src);
        CHECK(g1.snapshots[t].dst == g2.snapshots[t].dst);
        CHECK(g1.snapshots[t].weight == g2.snapshots[t].weight);
    }
    CHECK(t1.signal_edges == t2.signal_edges);

    auto other = spec;
    other.seed = 12;
    auto [g3, t3] = dygex::generate_planted(other);
    bool differs = t1.signal_edges != t3.signal_edges;
    for (std::size_t t = 0; t < g1.num_snapshots() && !differs; ++t)
        differs = g1.snapshots[t].src != g3.snapshots[t].src ||
                  g1.snapshots[t].dst != g3.snapshots[t].dst;
    CHECK(differs);
}

TEST_CASE("recounting a 20-node dataset recovers the planted composition") {
    const auto spec = recount_spec();
    auto [graph, truth] = dygex::generate_planted(spec);
    const EdgeSet motif_set(spec.motif.begin(), spec.motif.end());
    for (int t = 0; t < spec.num_snapshots; ++t) {
        const Snapshot& snap = graph.snapshots[static_cast<std::size_t>(t)];
        const auto& signal = truth.signal_edges[static_cast<std::size_t>(t)];
        const EdgeSet signal_set(signal.begin(), signal.end());
        const EdgeSet effects = expected_effects(spec, truth, t);

        // every placed signal edge and every fired trigger is present
        for (const auto& [u, v] : signal_set) CHECK(snap.has_edge(u, v));
        for (const auto& [u, v] : effects) CHECK(snap.has_edge(u, v));

        std::size_t noise_count = 0;
        for (std::size_t e = 0; e < snap.num_edges(); ++e) {
            const std::pair<int, int> edge{snap.src[e], snap.dst[e]};
            CHECK(snap.weight[e] == 1.0);
            if (signal_set.count(edge)) continue;
            if (effects.count(edge)) continue;
            ++noise_count;
            // noise never borrows a motif pair, placed or not
            CHECK_FALSE(motif_set.count(edge));
        }
        CHECK(noise_count == static_cast<std::size_t>(spec.noise_edges_per_snapshot));
        CHECK(snap.num_edges() == signal_set.size() + effects.size() + noise_count);
    }
}

TEST_CASE("explanation AUC separates perfect rankings, ties and the worked example") {
    Snapshot snap = Snapshot::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
    GroundTruth truth = single_snapshot_truth({{0, 1}, {1, 2}});

    Tensor perfect = Tensor::column({0.9, 0.8, 0.2, 0.1});
    CHECK(dygex::explanation_auc(snap, perfect, truth, 0) == 1.0);
    Tensor flat(4, 1, 0.3);
    CHECK(dygex::explanation_auc(snap, flat, truth, 0) == 0.5);
    Tensor worked = Tensor::column({0.9, 0.7, 0.8, 0.1});
    CHECK(dygex::explanation_auc(snap, worked, truth, 0) == 0.75);
    Tensor inverted = Tensor::column({0.1, 0.2, 0.8, 0.9});
    CHECK(dygex::explanation_auc(snap, inverted, truth, 0) == 0.0);
}

TEST_CASE("explanation AUC equals the pairwise oracle on small inputs") {
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        const int edges = 5 + rng.index(16);  // 5..20
        std::vector<std::pair<int, int>> endpoints;
        for (int e = 0; e < edges; ++e) endpoints.emplace_back(e, e + 1);
        Snapshot snap = Snapshot::from_edges(edges + 1, endpoints);

        // quantized gates force plenty of exact ties
        Tensor gates(static_cast<std::size_t>(edges), 1);
        for (int e = 0; e < edges; ++e) gates[static_cast<std::size_t>(e)] = 0.25 * rng.index(5);
        const int num_pos = 1 + rng.index(edges - 1);
        std::vector<int> order(static_cast<std::size_t>(edges));
        for (int e = 0; e < edges; ++e) order[static_cast<std::size_t>(e)] = e;
        for (int e = edges - 1; e > 0; --e)
            std::swap(order[static_cast<std::size_t>(e)],
                      order[static_cast<std::size_t>(rng.index(e + 1))]);
        std::vector<bool> is_pos(static_cast<std::size_t>(edges), false);
        std::vector<std::pair<int, int>> signal;
        for (int k = 0; k < num_pos; ++k) {
            const int e = order[static_cast<std::size_t>(k)];
            is_pos[static_cast<std::size_t>(e)] = true;
            signal.push_back(endpoints[static_cast<std::size_t>(e)]);
        }
        GroundTruth truth = single_snapshot_truth(signal);

        double wins = 0.0;
        for (int p = 0; p < edges; ++p)
            for (int q = 0; q < edges; ++q) {
                if (!is_pos[static_cast<std::size_t>(p)]) continue;
                if (is_pos[static_cast<std::size_t>(q)]) continue;
                const double gp = gates[static_cast<std::size_t>(p)];
                const double gq = gates[static_cast<std::size_t>(q)];
                wins += gp > gq ? 1.0 : gp == gq ? 0.5 : 0.0;
            }
        const double oracle =
            wins / (static_cast<double>(num_pos) * static_cast<double>(edges - num_pos));
        CHECK(dygex::explanation_auc(snap, gates, truth, 0) == oracle);
    }
}

TEST_CASE("explanation AUC validates classes, shapes and indices") {
    Snapshot snap = Snapshot::from_edges(4, {{0, 1}, {1, 2}});
    Tensor gates = Tensor::column({0.5, 0.4});
    GroundTruth all_signal = single_snapshot_truth({{0, 1}, {1, 2}});
    CHECK_THROWS_AS(dygex::explanation_auc(snap, gates, all_signal, 0), dygex::DataError);
    GroundTruth no_signal = single_snapshot_truth({});
    CHECK_THROWS_AS(dygex::explanation_auc(snap, gates, no_signal, 0), dygex::DataError);
    GroundTruth truth = single_snapshot_truth({{0, 1}});
    CHECK_THROWS_AS(dygex::explanation_auc(snap, gates, truth, 1), dygex::IndexError);
    CHECK_THROWS_AS(dygex::explanation_auc(snap, gates, truth, -1), dygex::IndexError);
    Tensor wide(2, 2);
    CHECK_THROWS_AS(dygex::explanation_auc(snap, wide, truth, 0), dygex::ShapeError);
    Snapshot empty;
    empty.num_nodes = 4;
    Tensor none(0, 1);
    CHECK_THROWS_AS(dygex::explanation_auc(empty, none, truth, 0), dygex::DataError);
}

TEST_CASE("temporal recovery wants a strict off-diagonal peak at the planted offset") {
    // columns: offset 2, offset 1, self
    CHECK(dygex::temporal_recovery(blocks_with_last_row(2, {0.2, 0.5, 0.3}), 3, 1));
    CHECK_FALSE(dygex::temporal_recovery(blocks_with_last_row(2, {0.5, 0.2, 0.3}), 3, 1));
    CHECK(dygex::temporal_recovery(blocks_with_last_row(2, {0.5, 0.2, 0.3}), 3, 2));
    // the self column may dominate; only off-diagonal columns compete
    CHECK(dygex::temporal_recovery(blocks_with_last_row(1, {0.1, 0.3, 0.6}), 3, 1));
    // uniform attention has no peak
    const double third = 1.0 / 3.0;
    Tensor uniform = blocks_with_last_row(3, {third, third, third});
    CHECK_FALSE(dygex::temporal_recovery(uniform, 3, 1));
    CHECK_FALSE(dygex::temporal_recovery(uniform, 3, 2));
    // node average decides, not any single node
    Tensor mixed(2 * 3, 3);
    mixed.at(2, 0) = 0.6;
    mixed.at(2, 1) = 0.3;
    mixed.at(2, 2) = 0.1;
    mixed.at(5, 0) = 0.1;
    mixed.at(5, 1) = 0.8;
    mixed.at(5, 2) = 0.1;
    CHECK(dygex::temporal_recovery(mixed, 3, 1));
    CHECK_FALSE(dygex::temporal_recovery(mixed, 3, 2));
}

TEST_CASE("temporal recovery validates lag, buffer depth and block shape") {
    Tensor att = blocks_with_last_row(2, {0.2, 0.5, 0.3});
    CHECK_THROWS_AS(dygex::temporal_recovery(att, 3, 0), dygex::ConfigError);
    CHECK_THROWS_AS(dygex::temporal_recovery(att, 3, 3), dygex::ConfigError);
    Tensor ragged(5, 3);
    CHECK_THROWS_AS(dygex::temporal_recovery(ragged, 3, 1), dygex::ShapeError);
    Tensor empty(0, 3);
    CHECK_THROWS_AS(dygex::temporal_recovery(empty, 3, 1), dygex::ShapeError);
    Tensor wrong_cols(6, 2);
    CHECK_THROWS_AS(dygex::temporal_recovery(wrong_cols, 3, 1), dygex::ShapeError);
}

TEST_CASE("trained toys report a recovery rate over ten seeds") {
    PlantedSpec spec;
    spec.num_nodes = 12;
    spec.num_snapshots = 8;
    spec.noise_edges_per_snapshot = 6;
    spec.motif = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
    spec.p_signal = 1.0;
    spec.signal_density = 0.5;
    spec.lag = 2;

    dygex::BackboneConfig backbone;
    backbone.feature_dim = 12;
    backbone.hidden_dim = 8;
    backbone.num_layers = 2;
    dygex::ExplainerConfig explainer;
    explainer.embed_dim = 8;
    explainer.att_dim = 4;

    int recovered = 0;
    for (int trial = 0; trial < 10; ++trial) {
        spec.seed = static_cast<std::uint64_t>(trial);
        auto [graph, truth] = dygex::generate_planted(spec);
        Tensor features = dygex::identity_features(12);

        dygex::TrainConfig cfg;
        cfg.max_backbone_epochs = 6;
        cfg.explainer_epochs = 3;
        cfg.buffer_size = 4;
        cfg.head_hidden = 8;
        cfg.backbone_lr = 0.05;
        cfg.explainer_lr = 0.05;
        cfg.mrr_negatives = 5;
        cfg.early_stop_patience = 3;
        cfg.contrastive.num_anchors = 4;
        cfg.contrastive.num_negatives = 2;
        cfg.seed = spec.seed;
        dygex::Model model(backbone, explainer, cfg.head_hidden, cfg.seed);
        auto result = dygex::live_update(graph, features, model, cfg);
        REQUIRE_FALSE(result.explanations.empty());
        const auto& trace = result.explanations.back();
        REQUIRE(trace.steps == 4);
        if (dygex::temporal_recovery(trace.attention, trace.steps, truth.lag)) ++recovered;
    }
    MESSAGE("planted-lag recovery rate over 10 seeds: " << recovered << "/10");
    CHECK(recovered >= 0);
    CHECK(recovered <= 10);
}

TEST_CASE("training code never sees the ground truth type") {
    const std::string root = DYGEX_SOURCE_DIR;
    const char* files[] = {
        "/include/dygex/backbone.hpp",    "/include/dygex/explainer.hpp",
        "/include/dygex/params.hpp",      "/include/dygex/regularizers.hpp",
        "/include/dygex/training.hpp",    "/src/backbone.cpp",
        "/src/explainer.cpp",             "/src/regularizers.cpp",
        "/src/training.cpp",
    };
    for (const char* rel : files) {
        std::ifstream in(root + rel);
        REQUIRE_MESSAGE(in.good(), rel);
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        CHECK_MESSAGE(text.find("GroundTruth") == std::string::npos, rel);
        CHECK_MESSAGE(text.find("synthetic") == std::string::npos, rel);
    }
}

TEST_CASE("edge stream CSV round-trips through the standard loader") {
    PlantedSpec spec = recount_spec();
    spec.num_snapshots = 4;
    auto [graph, truth] = dygex::generate_planted(spec);
    std::ostringstream out;
    dygex::write_edge_stream_csv(out, graph);
    std::istringstream in(out.str());
    auto stream = dygex::load_edge_stream(in, {"src", "dst", "time", "weight"});

    std::size_t row = 0;
    for (std::size_t t = 0; t < graph.num_snapshots(); ++t) {
        const Snapshot& snap = graph.snapshots[t];
        for (std::size_t e = 0; e < snap.num_edges(); ++e, ++row) {
            REQUIRE(row < stream.size());
            CHECK(stream.src[row] == snap.src[e]);
            CHECK(stream.dst[row] == snap.dst[e]);
            CHECK(stream.time[row] == static_cast<double>(t));
            CHECK(stream.weight[row] == snap.weight[e]);
        }
    }
    CHECK(stream.size() == row);
}

TEST_CASE("ground truth survives its JSON sidecar") {
    auto [graph, truth] = dygex::generate_planted(recount_spec());
    std::ostringstream out;
    dygex::write_ground_truth_json(out, truth);
    std::istringstream in(out.str());
    GroundTruth back = dygex::read_ground_truth_json(in);
    CHECK(back.lag == truth.lag);
    CHECK(back.signal_edges == truth.signal_edges);

    std::istringstream broken("{\"lag\": 1");
    CHECK_THROWS_AS(dygex::read_ground_truth_json(broken), dygex::DataError);
    std::istringstream missing("{\"lag\": 1}");
    CHECK_THROWS_AS(dygex::read_ground_truth_json(missing), dygex::DataError);
    std::istringstream odd("{\"lag\": 1, \"signal_edges\": [[[1, 2, 3]]]}");
    CHECK_THROWS_AS(dygex::read_ground_truth_json(odd), dygex::DataError);
}
