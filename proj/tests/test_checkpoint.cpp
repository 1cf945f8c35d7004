#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dygex/checkpoint.hpp"
#include "dygex/errors.hpp"
#include "dygex/training.hpp"

using dygex::BackboneConfig;
using dygex::Checkpoint;
using dygex::DynamicGraph;
using dygex::ExplainerConfig;
using dygex::LiveUpdateResult;
using dygex::Model;
using dygex::Snapshot;
using dygex::Tensor;
using dygex::TrainConfig;

namespace {

Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

DynamicGraph toy_graph() {
    DynamicGraph g;
    g.node_ids = {0, 1, 2, 3, 4, 5};
    g.snapshots.push_back(Snapshot::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}));
    g.snapshots.push_back(Snapshot::from_edges(6, {{0, 2}, {1, 3}, {2, 4}, {3, 5}, {5, 0}}));
    g.snapshots.push_back(Snapshot::from_edges(6, {{0, 1}, {2, 5}, {4, 1}, {5, 3}}));
    g.snapshots.push_back(Snapshot::from_edges(6, {{1, 0}, {2, 3}, {3, 0}, {4, 2}}));
    return g;
}

BackboneConfig toy_backbone_config() {
    BackboneConfig cfg;
    cfg.feature_dim = 6;
    cfg.hidden_dim = 4;
    cfg.num_layers = 2;
    return cfg;
}

ExplainerConfig toy_explainer_config() {
    ExplainerConfig cfg;
    cfg.embed_dim = 4;
    cfg.att_dim = 3;
    return cfg;
}

TrainConfig toy_train_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.max_backbone_epochs = 4;
    cfg.explainer_epochs = 2;
    cfg.buffer_size = 2;
    cfg.head_hidden = 4;
    cfg.backbone_lr = 0.05;
    cfg.explainer_lr = 0.05;
    cfg.mrr_negatives = 5;
    cfg.early_stop_patience = 2;
    cfg.contrastive.num_anchors = 3;
    cfg.contrastive.num_negatives = 2;
    cfg.seed = seed;
    return cfg;
}

struct TrainedToy {
    DynamicGraph graph;
    Tensor features;
    TrainConfig cfg;
    Model model;
    LiveUpdateResult result;

    explicit TrainedToy(std::uint64_t seed)
        : graph(toy_graph()),
          features(identity(6)),
          cfg(toy_train_config(seed)),
          model(toy_backbone_config(), toy_explainer_config(), cfg.head_hidden, cfg.seed) {
        result = dygex::live_update(graph, features, model, cfg);
    }
};

bool same_metrics(const std::vector<dygex::MetricsRecord>& a,
                  const std::vector<dygex::MetricsRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].snapshot != b[i].snapshot || a[i].has_mrr != b[i].has_mrr) return false;
        if (a[i].mrr != b[i].mrr) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("frozen evaluation never touches a parameter or a label") {
    TrainedToy toy(51);
    std::vector<Tensor> before;
    for (const auto& param : toy.model.store.all()) before.push_back(param->value);

    LiveUpdateResult frozen = dygex::frozen_evaluate(toy.graph, toy.features, toy.model, toy.cfg);
    CHECK(frozen.labels_seen == -1);
    REQUIRE(frozen.metrics.size() == toy.result.metrics.size());
    REQUIRE(frozen.explanations.size() == toy.result.explanations.size());

    const auto& after = toy.model.store.all();
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        REQUIRE(after[i]->value.size() == before[i].size());
        for (std::size_t k = 0; k < before[i].size(); ++k)
            CHECK(after[i]->value[k] == before[i][k]);
    }

    // frozen replay is deterministic
    LiveUpdateResult again = dygex::frozen_evaluate(toy.graph, toy.features, toy.model, toy.cfg);
    CHECK(same_metrics(frozen.metrics, again.metrics));
}

TEST_CASE("a fresh model scores its first snapshot like the training loop") {
    DynamicGraph g = toy_graph();
    Tensor features = identity(6);
    TrainConfig cfg = toy_train_config(53);

    Model trained(toy_backbone_config(), toy_explainer_config(), cfg.head_hidden, cfg.seed);
    LiveUpdateResult live = dygex::live_update(g, features, trained, cfg);

    Model fresh(toy_backbone_config(), toy_explainer_config(), cfg.head_hidden, cfg.seed);
    LiveUpdateResult frozen = dygex::frozen_evaluate(g, features, fresh, cfg);

    // before any training the two protocols see identical weights and draws
    REQUIRE(frozen.metrics.size() == live.metrics.size());
    CHECK(frozen.metrics[0].mrr == live.metrics[0].mrr);
}

TEST_CASE("checkpoints round-trip weights, window and configs exactly") {
    TrainedToy toy(55);
    Checkpoint ckpt = dygex::capture_checkpoint(toy.model, toy.cfg, toy.result);
    std::stringstream bytes(std::ios::in | std::ios::out | std::ios::binary);
    dygex::write_checkpoint(bytes, ckpt);
    Checkpoint back = dygex::read_checkpoint(bytes);

    CHECK(back.backbone.feature_dim == 6);
    CHECK(back.backbone.hidden_dim == 4);
    CHECK(back.explainer.att_dim == 3);
    CHECK(back.train.seed == 55);
    CHECK(back.train.buffer_size == toy.cfg.buffer_size);
    CHECK(back.labels_seen == toy.result.labels_seen);
    CHECK(back.window == toy.result.final_window);

    REQUIRE(back.params.size() == ckpt.params.size());
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        CHECK(back.params[i].first == ckpt.params[i].first);
        REQUIRE(back.params[i].second.size() == ckpt.params[i].second.size());
        for (std::size_t k = 0; k < ckpt.params[i].second.size(); ++k)
            CHECK(back.params[i].second[k] == ckpt.params[i].second[k]);
    }
    REQUIRE(back.embeddings.size() == ckpt.embeddings.size());
    for (std::size_t i = 0; i < ckpt.embeddings.size(); ++i)
        for (std::size_t k = 0; k < ckpt.embeddings[i].size(); ++k)
            CHECK(back.embeddings[i][k] == ckpt.embeddings[i][k]);
}

TEST_CASE("a restored model reproduces the donor's frozen evaluation bit for bit") {
    TrainedToy toy(57);
    Checkpoint ckpt = dygex::capture_checkpoint(toy.model, toy.cfg, toy.result);
    std::stringstream bytes(std::ios::in | std::ios::out | std::ios::binary);
    dygex::write_checkpoint(bytes, ckpt);
    Checkpoint back = dygex::read_checkpoint(bytes);

    Model clone(back.backbone, back.explainer, back.train.head_hidden, back.train.seed);
    dygex::restore_weights(back, clone);

    LiveUpdateResult a = dygex::frozen_evaluate(toy.graph, toy.features, toy.model, toy.cfg);
    LiveUpdateResult b = dygex::frozen_evaluate(toy.graph, toy.features, clone, back.train);
    REQUIRE(same_metrics(a.metrics, b.metrics));
    REQUIRE(a.explanations.size() == b.explanations.size());
    for (std::size_t i = 0; i < a.explanations.size(); ++i) {
        const auto& ta = a.explanations[i];
        const auto& tb = b.explanations[i];
        REQUIRE(ta.attention.size() == tb.attention.size());
        for (std::size_t k = 0; k < ta.attention.size(); ++k)
            CHECK(ta.attention[k] == tb.attention[k]);
        REQUIRE(ta.gates.size() == tb.gates.size());
        for (std::size_t k = 0; k < ta.gates.size(); ++k) CHECK(ta.gates[k] == tb.gates[k]);
    }
}

TEST_CASE("checkpoint reading rejects corruption") {
    TrainedToy toy(59);
    Checkpoint ckpt = dygex::capture_checkpoint(toy.model, toy.cfg, toy.result);
    std::stringstream bytes(std::ios::in | std::ios::out | std::ios::binary);
    dygex::write_checkpoint(bytes, ckpt);
    const std::string blob = bytes.str();

    std::istringstream empty("");
    CHECK_THROWS_AS(dygex::read_checkpoint(empty), dygex::DataError);
    std::istringstream header_cut(blob.substr(0, 10));
    CHECK_THROWS_AS(dygex::read_checkpoint(header_cut), dygex::DataError);
    std::istringstream payload_cut(blob.substr(0, blob.size() - 16));
    CHECK_THROWS_AS(dygex::read_checkpoint(payload_cut), dygex::DataError);

    std::string junk = blob;
    junk[4] = 'x';  // first header byte: breaks the JSON
    std::istringstream broken(junk);
    CHECK_THROWS_AS(dygex::read_checkpoint(broken), dygex::DataError);

    CHECK_THROWS_AS(dygex::read_checkpoint_file("/nonexistent/checkpoint.bin"),
                    dygex::DataError);
}

TEST_CASE("weight restoration demands an exact parameter inventory") {
    TrainedToy toy(61);
    Checkpoint ckpt = dygex::capture_checkpoint(toy.model, toy.cfg, toy.result);

    Model clone(ckpt.backbone, ckpt.explainer, ckpt.train.head_hidden, ckpt.train.seed);
    Checkpoint renamed = ckpt;
    renamed.params[0].first = "nobody.w";
    CHECK_THROWS_AS(dygex::restore_weights(renamed, clone), dygex::DataError);

    Checkpoint missing = ckpt;
    missing.params.pop_back();
    CHECK_THROWS_AS(dygex::restore_weights(missing, clone), dygex::DataError);

    Checkpoint doubled = ckpt;
    doubled.params.push_back(doubled.params[0]);
    CHECK_THROWS_AS(dygex::restore_weights(doubled, clone), dygex::DataError);

    Checkpoint reshaped = ckpt;
    reshaped.params[0].second = Tensor(1, 1, 0.5);
    CHECK_THROWS_AS(dygex::restore_weights(reshaped, clone), dygex::ShapeError);
}
