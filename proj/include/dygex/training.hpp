#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dygex/backbone.hpp"
#include "dygex/explainer.hpp"
#include "dygex/graph.hpp"
#include "dygex/params.hpp"
#include "dygex/regularizers.hpp"
#include "dygex/rng.hpp"

namespace dygex {

// Gathers [h_i ‖ h_j] rows for every requested pair.
Tape::Var pair_features(Tape& tape, Tape::Var embeddings,
                        const std::vector<std::pair<int, int>>& pairs);

// Two-layer perceptron scoring node pairs from concatenated embeddings.
class LinkHead {
public:
    LinkHead(const std::string& prefix, int embed_dim, int hidden_dim, ParamStore& store,
             Rng& rng);

    // probability of a future edge per pair, via the logistic of the score
    Tape::Var probabilities(Binding& bind, Tape::Var embeddings,
                            const std::vector<std::pair<int, int>>& pairs) const;

    int embed_dim() const { return embed_dim_; }
    int hidden_dim() const { return hidden_dim_; }

private:
    int embed_dim_;
    int hidden_dim_;
    Param* w1_;
    Param* b1_;
    Param* w2_;
    Param* b2_;
};

// Deterministic pair probabilities on a scratch tape.
Tensor link_scores(const Tensor& embeddings, const std::vector<std::pair<int, int>>& pairs,
                   const LinkHead& head);

// Uniform draw over destinations d with (source, d) absent from the snapshot.
// Falls back to an unconstrained draw for sources connected to every node.
int sample_non_destination(const Snapshot& snapshot, int source, Rng& rng);

// Mean binary cross-entropy over the future snapshot's edges (label 1) plus,
// per positive, `negatives_per_positive` same-source non-edges (label 0).
Tape::Var bce_with_negatives(Binding& bind, Tape::Var embeddings, const Snapshot& future,
                             const LinkHead& head, int negatives_per_positive, Rng& rng);

// Mean reciprocal rank of each test edge among `num_negatives` same-source
// corruptions; ties rank the positive below every equal score.
double mrr(const Tensor& embeddings, const Snapshot& test_edges, const LinkHead& head,
           int num_negatives, Rng& rng);

struct TrainConfig {
    int max_backbone_epochs = 100;
    int explainer_epochs = 4;  // 0 disables the attention stage entirely
    int buffer_size = 5;
    int head_hidden = 16;
    double backbone_lr = 0.01;
    double explainer_lr = 0.01;
    double momentum = 0.9;
    double alpha = 0.1;  // weight of the structural-consistency term
    double beta = 0.1;   // weight of the temporal-continuity term
    int negatives_per_positive = 1;
    int mrr_negatives = 100;
    int early_stop_patience = 10;
    double tau_end = 0.1;      // gate temperature anneals from 1 toward this
    int history_capacity = 0;  // 0 means 4 * buffer_size
    ContrastiveConfig contrastive;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MetricsRecord {
    int snapshot = 0;  // index of the predicted snapshot within the stream
    bool has_mrr = false;
    double mrr = 0.0;
    double ce = 0.0;
    double cons = 0.0;
    double cont = 0.0;
    double backbone_loss = 0.0;
    int backbone_epochs = 0;
    double wall_seconds = 0.0;
};

// The full trainable bundle: recurrent encoder, attention stages, and one
// link-prediction head per stage. All weights live in `store`; every init
// stream is derived from the single seed.
struct Model {
    Model(const BackboneConfig& backbone_config, const ExplainerConfig& explainer_config,
          int head_hidden, std::uint64_t seed);

    ParamStore store;
    Backbone backbone;
    Explainer explainer;
    LinkHead backbone_head;
    LinkHead explainer_head;
};

// Deterministic per-snapshot explanation artifacts (inference-mode gates and
// step attention) captured after each snapshot's fine-tuning.
struct SnapshotExplanation {
    int snapshot = 0;
    Tensor gates;  // one value per stored edge; empty when the snapshot has none
    Tensor attention;  // (num_nodes * steps) x steps block rows
    std::size_t steps = 0;
};

struct LiveUpdateResult {
    std::vector<MetricsRecord> metrics;          // one per predicted snapshot
    std::vector<SnapshotExplanation> explanations;  // one per processed snapshot
    int labels_seen = -1;  // highest snapshot index whose labels reached training
    std::vector<int> final_window;         // snapshot indices left in the buffer
    std::vector<Tensor> final_embeddings;  // their committed embeddings, oldest first
};

// Streaming protocol over snapshots 0..T-2: score the next snapshot's edges
// before their labels are revealed, train the encoder on them with early
// stopping, push the committed embedding into the buffer, then fine-tune the
// attention stages and their head for explainer_epochs rounds against the
// weighted objective. Snapshots with no future positives record no rank
// metric. `features` rows are shared by all snapshots.
LiveUpdateResult live_update(const DynamicGraph& graph, const Tensor& features, Model& model,
                             const TrainConfig& config);

// Inference-only replay of the live-update protocol: identical windows,
// scoring paths and rank streams, but no parameter ever changes and no label
// is consumed (labels_seen stays -1). explainer_epochs > 0 selects the
// attention scoring path, mirroring how the model was trained.
LiveUpdateResult frozen_evaluate(const DynamicGraph& graph, const Tensor& features,
                                 Model& model, const TrainConfig& config);

// Reference loop without buffer or attention stages: encode, score, train
// with early stopping, carry state. Uses the same seed-derived streams as
// live_update so a run with explainer_epochs == 0 must reproduce it exactly.
std::vector<MetricsRecord> backbone_only_live_update(const DynamicGraph& graph,
                                                     const Tensor& features,
                                                     const BackboneConfig& backbone_config,
                                                     int head_hidden, const TrainConfig& config);

// Mean rank metric over the most recent 60% of scored snapshots.
double headline_mrr(const std::vector<MetricsRecord>& metrics);

}  // namespace dygex
