#include "dygex/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "dygex/errors.hpp"

namespace dygex {
namespace {

// Seed-stream layout. Every random consumer owns its own derived stream, and
// per-snapshot (or per-epoch) children are derived from that, so turning one
// stage off never shifts the draws of another stage.
constexpr std::uint64_t kInitBackbone = 10;
constexpr std::uint64_t kInitExplainer = 12;
constexpr std::uint64_t kInitBackboneHead = 13;
constexpr std::uint64_t kInitExplainerHead = 14;
constexpr std::uint64_t kStreamBackboneNegatives = 20;
constexpr std::uint64_t kStreamRank = 21;
constexpr std::uint64_t kStreamGateNoise = 22;
constexpr std::uint64_t kStreamAnchors = 23;
constexpr std::uint64_t kStreamContinuity = 24;
constexpr std::uint64_t kStreamExplainerNegatives = 25;

Rng snapshot_stream(std::uint64_t seed, std::uint64_t stream, int snapshot) {
    return Rng(Rng::derive(Rng::derive(seed, stream), static_cast<std::uint64_t>(snapshot)));
}

Rng epoch_stream(std::uint64_t seed, std::uint64_t stream, int snapshot, int epoch) {
    return Rng(Rng::derive(Rng::derive(Rng::derive(seed, stream),
                                       static_cast<std::uint64_t>(snapshot)),
                           static_cast<std::uint64_t>(epoch)));
}

Backbone make_backbone(const BackboneConfig& backbone_config,
                       const ExplainerConfig& explainer_config, ParamStore& store,
                       std::uint64_t seed) {
    backbone_config.validate();
    explainer_config.validate();
    if (explainer_config.embed_dim != backbone_config.hidden_dim)
        throw ConfigError("model: attention embed_dim " +
                          std::to_string(explainer_config.embed_dim) +
                          " must equal encoder hidden_dim " +
                          std::to_string(backbone_config.hidden_dim));
    Rng rng(Rng::derive(seed, kInitBackbone));
    return Backbone(backbone_config, store, rng);
}

Explainer make_explainer(const ExplainerConfig& config, ParamStore& store, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, kInitExplainer));
    return Explainer(config, store, rng);
}

LinkHead make_head(const std::string& prefix, int embed_dim, int hidden, ParamStore& store,
                   std::uint64_t seed, std::uint64_t stream) {
    Rng rng(Rng::derive(seed, stream));
    return LinkHead(prefix, embed_dim, hidden, store, rng);
}

// Values (not momentum) of every parameter bound into a training tape, for
// restoring the best epoch after early stopping.
struct WeightSnapshot {
    std::vector<std::pair<Param*, Tensor>> values;

    void capture(const std::vector<std::pair<Param*, Tape::Var>>& bound) {
        values.clear();
        values.reserve(bound.size());
        for (const auto& [param, var] : bound) values.emplace_back(param, param->value);
    }

    void restore() const {
        for (const auto& [param, tensor] : values) param->value = tensor;
    }
};

struct PhaseResult {
    double loss = 0.0;  // best training loss reached (the restored weights)
    int epochs = 0;
};

// One snapshot's encoder training: full-batch momentum SGD against the future
// edges, stopping after `patience` epochs without improvement and restoring
// the best weights. The caller re-encodes afterwards to commit state.
PhaseResult train_backbone_phase(const Backbone& backbone, const LinkHead& head,
                                 const Snapshot& current, const Snapshot& future,
                                 const Tensor& features, const Backbone::State& prev,
                                 const TrainConfig& config, Rng& negative_rng) {
    WeightSnapshot best_weights;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    int epochs = 0;
    for (int epoch = 0; epoch < config.max_backbone_epochs; ++epoch) {
        Tape tape;
        Binding bind(tape, true);
        auto layers = backbone.encode(bind, current, features, prev);
        auto loss = bce_with_negatives(bind, layers.back(), future, head,
                                       config.negatives_per_positive, negative_rng);
        ++epochs;
        const double value = tape.val(loss).item();
        if (value < best) {
            best = value;
            stale = 0;
            best_weights.capture(bind.bound());
        } else if (++stale >= config.early_stop_patience) {
            break;  // this epoch's step would be discarded by the restore anyway
        }
        tape.backward(loss);
        sgd_step(tape, bind, config.backbone_lr, config.momentum);
    }
    best_weights.restore();
    return {best, epochs};
}

}  // namespace

Tape::Var pair_features(Tape& tape, Tape::Var embeddings,
                        const std::vector<std::pair<int, int>>& pairs) {
    if (pairs.empty()) throw ShapeError("pair_features: no pairs requested");
    std::vector<int> lhs;
    std::vector<int> rhs;
    lhs.reserve(pairs.size());
    rhs.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
        lhs.push_back(i);
        rhs.push_back(j);
    }
    return tape.concat_cols(tape.gather_rows(embeddings, std::move(lhs)),
                            tape.gather_rows(embeddings, std::move(rhs)));
}

LinkHead::LinkHead(const std::string& prefix, int embed_dim, int hidden_dim, ParamStore& store,
                   Rng& rng)
    : embed_dim_(embed_dim), hidden_dim_(hidden_dim) {
    if (embed_dim < 1 || hidden_dim < 1)
        throw ConfigError("link head dims must be positive, got " + std::to_string(embed_dim) +
                          " and " + std::to_string(hidden_dim));
    const auto in = static_cast<std::size_t>(2 * embed_dim);
    const auto hidden = static_cast<std::size_t>(hidden_dim);
    w1_ = &store.create(prefix + ".w1", glorot_uniform(hidden, in, rng));
    b1_ = &store.create(prefix + ".b1", Tensor(1, hidden));
    w2_ = &store.create(prefix + ".w2", glorot_uniform(1, hidden, rng));
    b2_ = &store.create(prefix + ".b2", Tensor(1, 1));
}

Tape::Var LinkHead::probabilities(Binding& bind, Tape::Var embeddings,
                                  const std::vector<std::pair<int, int>>& pairs) const {
    Tape& tape = bind.tape();
    const Tensor& h = tape.val(embeddings);
    if (h.cols() != static_cast<std::size_t>(embed_dim_))
        throw ShapeError("link head expects " + std::to_string(embed_dim_) +
                         "-wide embeddings, got " + h.shape_str());
    auto feats = pair_features(tape, embeddings, pairs);
    auto hidden = tape.relu(tape.add_rowvec(tape.linear(feats, bind(*w1_)), bind(*b1_)));
    auto score = tape.add_rowvec(tape.linear(hidden, bind(*w2_)), bind(*b2_));
    return tape.logistic(score);
}

Tensor link_scores(const Tensor& embeddings, const std::vector<std::pair<int, int>>& pairs,
                   const LinkHead& head) {
    Tape tape;
    Binding bind(tape, false);
    return tape.val(head.probabilities(bind, tape.constant(embeddings), pairs));
}

int sample_non_destination(const Snapshot& snapshot, int source, Rng& rng) {
    const int n = snapshot.num_nodes;
    if (n < 1) throw DataError("sample_non_destination: snapshot has no nodes");
    if (source < 0 || source >= n)
        throw IndexError("sample_non_destination: source " + std::to_string(source) +
                         " outside [0, " + std::to_string(n) + ")");
    // rejection stays exactly uniform over non-destinations; the scan below
    // covers near-complete rows without biasing the accepted draws
    for (int attempt = 0; attempt < 64; ++attempt) {
        const int d = rng.index(n);
        if (!snapshot.has_edge(source, d)) return d;
    }
    std::vector<int> candidates;
    for (int d = 0; d < n; ++d)
        if (!snapshot.has_edge(source, d)) candidates.push_back(d);
    if (candidates.empty()) return rng.index(n);  // saturated source: global draw
    return candidates[rng.index(static_cast<int>(candidates.size()))];
}

Tape::Var bce_with_negatives(Binding& bind, Tape::Var embeddings, const Snapshot& future,
                             const LinkHead& head, int negatives_per_positive, Rng& rng) {
    if (negatives_per_positive < 0)
        throw ConfigError("bce_with_negatives: negative count must be non-negative");
    const std::size_t positives = future.num_edges();
    if (positives == 0) throw DataError("bce_with_negatives: future snapshot has no edges");
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> labels;
    pairs.reserve(positives * (1 + negatives_per_positive));
    labels.reserve(pairs.capacity());
    for (std::size_t e = 0; e < positives; ++e) {
        pairs.emplace_back(future.src[e], future.dst[e]);
        labels.push_back(1.0);
    }
    for (std::size_t e = 0; e < positives; ++e) {
        for (int k = 0; k < negatives_per_positive; ++k) {
            pairs.emplace_back(future.src[e], sample_non_destination(future, future.src[e], rng));
            labels.push_back(0.0);
        }
    }
    Tape& tape = bind.tape();
    auto probs = head.probabilities(bind, embeddings, pairs);
    return tape.bce_from_probs(probs, Tensor::column(std::move(labels)));
}

double mrr(const Tensor& embeddings, const Snapshot& test_edges, const LinkHead& head,
           int num_negatives, Rng& rng) {
    if (num_negatives < 1) throw ConfigError("mrr: need at least one corruption per edge");
    const std::size_t positives = test_edges.num_edges();
    if (positives == 0) throw DataError("mrr: test snapshot has no edges");
    if (embeddings.rows() != static_cast<std::size_t>(test_edges.num_nodes))
        throw ShapeError("mrr: embeddings " + embeddings.shape_str() + " do not cover " +
                         std::to_string(test_edges.num_nodes) + " nodes");
    const std::size_t stride = 1 + static_cast<std::size_t>(num_negatives);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(positives * stride);
    for (std::size_t e = 0; e < positives; ++e) {
        const int s = test_edges.src[e];
        pairs.emplace_back(s, test_edges.dst[e]);
        for (int k = 0; k < num_negatives; ++k)
            pairs.emplace_back(s, sample_non_destination(test_edges, s, rng));
    }
    Tape tape;
    Binding bind(tape, false);
    const Tensor& probs = tape.val(head.probabilities(bind, tape.constant(embeddings), pairs));
    double total = 0.0;
    for (std::size_t e = 0; e < positives; ++e) {
        const double positive = probs[e * stride];
        int rank = 1;  // ties count against the positive
        for (std::size_t k = 1; k < stride; ++k)
            if (probs[e * stride + k] >= positive) ++rank;
        total += 1.0 / rank;
    }
    return total / static_cast<double>(positives);
}

void TrainConfig::validate() const {
    if (max_backbone_epochs < 1) throw ConfigError("train: max_backbone_epochs must be >= 1");
    if (explainer_epochs < 0) throw ConfigError("train: explainer_epochs must be >= 0");
    if (buffer_size < 1) throw ConfigError("train: buffer_size must be >= 1");
    if (head_hidden < 1) throw ConfigError("train: head_hidden must be >= 1");
    if (backbone_lr <= 0.0 || explainer_lr <= 0.0)
        throw ConfigError("train: learning rates must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
    if (alpha < 0.0 || beta < 0.0 || alpha + beta > 1.0)
        throw ConfigError("train: need alpha >= 0, beta >= 0 and alpha + beta <= 1");
    if (negatives_per_positive < 1)
        throw ConfigError("train: negatives_per_positive must be >= 1");
    if (mrr_negatives < 1) throw ConfigError("train: mrr_negatives must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("train: early_stop_patience must be >= 1");
    if (tau_end <= 0.0 || tau_end > 1.0) throw ConfigError("train: tau_end must lie in (0, 1]");
    if (history_capacity < 0) throw ConfigError("train: history_capacity must be >= 0");
    contrastive.validate();
}

Model::Model(const BackboneConfig& backbone_config, const ExplainerConfig& explainer_config,
             int head_hidden, std::uint64_t seed)
    : backbone(make_backbone(backbone_config, explainer_config, store, seed)),
      explainer(make_explainer(explainer_config, store, seed)),
      backbone_head(make_head("backbone_head", backbone_config.hidden_dim, head_hidden, store,
                              seed, kInitBackboneHead)),
      explainer_head(make_head("explainer_head", explainer_config.att_dim, head_hidden, store,
                               seed, kInitExplainerHead)) {}

LiveUpdateResult live_update(const DynamicGraph& graph, const Tensor& features, Model& model,
                             const TrainConfig& config) {
    config.validate();
    const int total = static_cast<int>(graph.num_snapshots());
    if (total < 2) throw DataError("live_update: need at least two snapshots");
    const int n = graph.num_nodes();
    if (features.rows() != static_cast<std::size_t>(n))
        throw ShapeError("live_update: features " + features.shape_str() + " do not cover " +
                         std::to_string(n) + " nodes");
    if (features.cols() != static_cast<std::size_t>(model.backbone.config().feature_dim))
        throw ShapeError("live_update: features " + features.shape_str() +
                         " do not match encoder feature_dim " +
                         std::to_string(model.backbone.config().feature_dim));

    const auto buffer_capacity = static_cast<std::size_t>(config.buffer_size);
    const std::size_t history_capacity =
        config.history_capacity > 0 ? static_cast<std::size_t>(config.history_capacity)
                                    : 4 * buffer_capacity;
    const bool use_explainer = config.explainer_epochs > 0;
    const int mask_window = model.explainer.config().window;

    EmbeddingBuffer buffer(buffer_capacity);
    std::deque<const Snapshot*> buffered_snaps;
    std::deque<int> buffered_idx;
    AttentionHistory history(history_capacity);
    Backbone::State carried = model.backbone.initial_state(n);
    LiveUpdateResult result;
    int labels_seen = -1;

    for (int t = 0; t + 1 < total; ++t) {
        const auto started = std::chrono::steady_clock::now();
        const Snapshot& current = graph.snapshots[static_cast<std::size_t>(t)];
        const Snapshot& future = graph.snapshots[static_cast<std::size_t>(t) + 1];
        MetricsRecord rec;
        rec.snapshot = t + 1;

        // -- score the future edges before their labels reach any training --
        if (labels_seen >= t + 1)
            throw std::logic_error("live_update: labels observed before evaluation");
        if (future.num_edges() > 0) {
            Rng rank_rng = snapshot_stream(config.seed, kStreamRank, t);
            Tape tape;
            Binding bind(tape, false);
            auto layers = model.backbone.encode(bind, current, features, carried);
            if (use_explainer) {
                // provisional buffer view: committed entries plus the current
                // snapshot's embedding at the carried weights
                std::vector<const Snapshot*> snaps;
                std::vector<Tape::Var> embeds;
                const auto ordered = buffer.ordered();
                const std::size_t skip =
                    ordered.size() + 1 > buffer_capacity ? ordered.size() + 1 - buffer_capacity
                                                         : 0;
                for (std::size_t k = skip; k < ordered.size(); ++k) {
                    snaps.push_back(buffered_snaps[k]);
                    embeds.push_back(tape.constant(ordered[k]));
                }
                snaps.push_back(&current);
                embeds.push_back(layers.back());
                const std::vector<const Tensor*> no_noise(snaps.size(), nullptr);
                auto ex = model.explainer.forward(bind, snaps, embeds, no_noise, 1.0);
                rec.mrr = mrr(tape.val(ex.temporal.last), future, model.explainer_head,
                              config.mrr_negatives, rank_rng);
            } else {
                rec.mrr = mrr(tape.val(layers.back()), future, model.backbone_head,
                              config.mrr_negatives, rank_rng);
            }
            rec.has_mrr = true;
        }

        // -- reveal the labels and train the encoder on them --
        labels_seen = t + 1;
        result.labels_seen = labels_seen;
        if (future.num_edges() > 0) {
            Rng negative_rng = snapshot_stream(config.seed, kStreamBackboneNegatives, t);
            const auto phase = train_backbone_phase(model.backbone, model.backbone_head, current,
                                                    future, features, carried, config,
                                                    negative_rng);
            rec.backbone_loss = phase.loss;
            rec.backbone_epochs = phase.epochs;
        }

        // -- commit: re-encode at the settled weights, push, carry forward --
        {
            Tape tape;
            Binding bind(tape, false);
            auto layers = model.backbone.encode(bind, current, features, carried);
            Backbone::State next = model.backbone.detach(tape, layers);
            buffer.push(tape.val(layers.back()));
            carried = std::move(next);
        }
        buffered_snaps.push_back(&current);
        buffered_idx.push_back(t);
        if (buffered_snaps.size() > buffer_capacity) {
            buffered_snaps.pop_front();
            buffered_idx.pop_front();
        }

        if (use_explainer) {
            const std::vector<const Snapshot*> snaps(buffered_snaps.begin(),
                                                     buffered_snaps.end());
            const std::size_t steps = snaps.size();
            const int effective =
                mask_window > 0 ? std::min<int>(mask_window, static_cast<int>(steps))
                                : static_cast<int>(steps);
            const int window_start = t - effective + 1;
            const bool stochastic_gates =
                model.explainer.config().hard_gates && !model.explainer.config().unit_gates;

            // -- fine-tune the attention stages and their head; without
            // future positives there is no task signal, so only archive --
            const int epochs_here = future.num_edges() > 0 ? config.explainer_epochs : 0;
            for (int epoch = 0; epoch < epochs_here; ++epoch) {
                const double tau = std::pow(
                    config.tau_end,
                    static_cast<double>(epoch + 1) / static_cast<double>(config.explainer_epochs));
                Rng noise_rng = epoch_stream(config.seed, kStreamGateNoise, t, epoch);
                Rng anchor_rng = epoch_stream(config.seed, kStreamAnchors, t, epoch);
                Rng continuity_rng = epoch_stream(config.seed, kStreamContinuity, t, epoch);
                Rng ce_rng = epoch_stream(config.seed, kStreamExplainerNegatives, t, epoch);

                Tape tape;
                Binding bind(tape, true);
                std::vector<Tape::Var> embeds;
                for (const Tensor& entry : buffer.ordered()) embeds.push_back(tape.constant(entry));
                std::vector<Tensor> noise_store;
                noise_store.reserve(steps);
                std::vector<const Tensor*> noise(steps, nullptr);
                if (stochastic_gates) {
                    for (std::size_t k = 0; k < steps; ++k) {
                        const std::size_t edges = snaps[k]->num_edges();
                        if (edges == 0) continue;
                        Tensor u(edges, 1);
                        for (std::size_t e = 0; e < edges; ++e) u[e] = noise_rng.uniform_open();
                        noise_store.push_back(std::move(u));
                        noise[k] = &noise_store.back();
                    }
                }
                auto ex = model.explainer.forward(bind, snaps, embeds, noise, tau);
                auto ce = bce_with_negatives(bind, ex.temporal.last, future, model.explainer_head,
                                             config.negatives_per_positive, ce_rng);
                auto consistency = tape.constant(Tensor::scalar(0.0));
                if (config.alpha > 0.0 && current.num_edges() > 0) {
                    std::vector<ConsistencyAnchor> anchors;
                    try {
                        anchors = sample_consistency_anchors(current, config.contrastive,
                                                             anchor_rng);
                    } catch (const DataError&) {
                        // snapshot too sparse for any usable anchor; the term
                        // simply contributes nothing this epoch
                        std::cerr << "warning: snapshot " << t
                                  << " offers no consistency anchors\n";
                    }
                    if (!anchors.empty())
                        consistency = consistency_loss(tape, ex.structural.back().gates, current,
                                                       anchors, config.contrastive.temperature);
                }
                auto continuity = tape.constant(Tensor::scalar(0.0));
                if (config.beta > 0.0)
                    continuity = continuity_loss(tape, ex.temporal.attention, steps, t,
                                                 window_start, buffer_capacity, history,
                                                 config.contrastive, continuity_rng);
                auto loss = total_loss(tape, ce, consistency, continuity, config.alpha,
                                       config.beta);
                rec.ce = tape.val(ce).item();
                rec.cons = tape.val(consistency).item();
                rec.cont = tape.val(continuity).item();
                tape.backward(loss);
                sgd_step(tape, bind, config.explainer_lr, config.momentum);
            }

            // -- deterministic pass: archive the attention, keep the traces --
            Tape tape;
            Binding bind(tape, false);
            std::vector<Tape::Var> embeds;
            for (const Tensor& entry : buffer.ordered()) embeds.push_back(tape.constant(entry));
            const std::vector<const Tensor*> no_noise(steps, nullptr);
            auto ex = model.explainer.forward(bind, snaps, embeds, no_noise, 1.0);
            history.push(t, steps, tape.val(ex.temporal.attention));
            SnapshotExplanation trace;
            trace.snapshot = t;
            trace.steps = steps;
            trace.attention = tape.val(ex.temporal.attention);
            if (current.num_edges() > 0) trace.gates = tape.val(ex.structural.back().gates);
            result.explanations.push_back(std::move(trace));
        }

        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.metrics.push_back(rec);
    }
    result.final_window.assign(buffered_idx.begin(), buffered_idx.end());
    result.final_embeddings = buffer.ordered();
    return result;
}

LiveUpdateResult frozen_evaluate(const DynamicGraph& graph, const Tensor& features,
                                 Model& model, const TrainConfig& config) {
    config.validate();
    const int total = static_cast<int>(graph.num_snapshots());
    if (total < 2) throw DataError("frozen_evaluate: need at least two snapshots");
    const int n = graph.num_nodes();
    if (features.rows() != static_cast<std::size_t>(n))
        throw ShapeError("frozen_evaluate: features " + features.shape_str() +
                         " do not cover " + std::to_string(n) + " nodes");
    if (features.cols() != static_cast<std::size_t>(model.backbone.config().feature_dim))
        throw ShapeError("frozen_evaluate: features " + features.shape_str() +
                         " do not match encoder feature_dim " +
                         std::to_string(model.backbone.config().feature_dim));

    const auto buffer_capacity = static_cast<std::size_t>(config.buffer_size);
    const bool use_explainer = config.explainer_epochs > 0;

    EmbeddingBuffer buffer(buffer_capacity);
    std::deque<const Snapshot*> buffered_snaps;
    std::deque<int> buffered_idx;
    Backbone::State carried = model.backbone.initial_state(n);
    LiveUpdateResult result;

    for (int t = 0; t + 1 < total; ++t) {
        const auto started = std::chrono::steady_clock::now();
        const Snapshot& current = graph.snapshots[static_cast<std::size_t>(t)];
        const Snapshot& future = graph.snapshots[static_cast<std::size_t>(t) + 1];
        MetricsRecord rec;
        rec.snapshot = t + 1;

        // one frozen encoding serves the scoring, the commit and the archive
        Tape tape;
        Binding bind(tape, false);
        auto layers = model.backbone.encode(bind, current, features, carried);

        if (future.num_edges() > 0) {
            Rng rank_rng = snapshot_stream(config.seed, kStreamRank, t);
            if (use_explainer) {
                std::vector<const Snapshot*> snaps;
                std::vector<Tape::Var> embeds;
                const auto ordered = buffer.ordered();
                const std::size_t skip =
                    ordered.size() + 1 > buffer_capacity ? ordered.size() + 1 - buffer_capacity
                                                         : 0;
                for (std::size_t k = skip; k < ordered.size(); ++k) {
                    snaps.push_back(buffered_snaps[k]);
                    embeds.push_back(tape.constant(ordered[k]));
                }
                snaps.push_back(&current);
                embeds.push_back(layers.back());
                const std::vector<const Tensor*> no_noise(snaps.size(), nullptr);
                auto ex = model.explainer.forward(bind, snaps, embeds, no_noise, 1.0);
                rec.mrr = mrr(tape.val(ex.temporal.last), future, model.explainer_head,
                              config.mrr_negatives, rank_rng);
            } else {
                rec.mrr = mrr(tape.val(layers.back()), future, model.backbone_head,
                              config.mrr_negatives, rank_rng);
            }
            rec.has_mrr = true;
        }

        buffer.push(tape.val(layers.back()));
        carried = model.backbone.detach(tape, layers);
        buffered_snaps.push_back(&current);
        buffered_idx.push_back(t);
        if (buffered_snaps.size() > buffer_capacity) {
            buffered_snaps.pop_front();
            buffered_idx.pop_front();
        }

        if (use_explainer) {
            const std::vector<const Snapshot*> snaps(buffered_snaps.begin(),
                                                     buffered_snaps.end());
            const std::size_t steps = snaps.size();
            Tape archive_tape;
            Binding archive_bind(archive_tape, false);
            std::vector<Tape::Var> embeds;
            for (const Tensor& entry : buffer.ordered())
                embeds.push_back(archive_tape.constant(entry));
            const std::vector<const Tensor*> no_noise(steps, nullptr);
            auto ex = model.explainer.forward(archive_bind, snaps, embeds, no_noise, 1.0);
            SnapshotExplanation trace;
            trace.snapshot = t;
            trace.steps = steps;
            trace.attention = archive_tape.val(ex.temporal.attention);
            if (current.num_edges() > 0)
                trace.gates = archive_tape.val(ex.structural.back().gates);
            result.explanations.push_back(std::move(trace));
        }

        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.metrics.push_back(rec);
    }
    result.final_window.assign(buffered_idx.begin(), buffered_idx.end());
    result.final_embeddings = buffer.ordered();
    return result;
}

std::vector<MetricsRecord> backbone_only_live_update(const DynamicGraph& graph,
                                                     const Tensor& features,
                                                     const BackboneConfig& backbone_config,
                                                     int head_hidden, const TrainConfig& config) {
    config.validate();
    backbone_config.validate();
    const int total = static_cast<int>(graph.num_snapshots());
    if (total < 2) throw DataError("backbone_only_live_update: need at least two snapshots");
    const int n = graph.num_nodes();
    if (features.rows() != static_cast<std::size_t>(n) ||
        features.cols() != static_cast<std::size_t>(backbone_config.feature_dim))
        throw ShapeError("backbone_only_live_update: features " + features.shape_str() +
                         " do not match the node set or feature_dim");

    ParamStore store;
    Rng backbone_rng(Rng::derive(config.seed, kInitBackbone));
    Backbone backbone(backbone_config, store, backbone_rng);
    Rng head_rng(Rng::derive(config.seed, kInitBackboneHead));
    LinkHead head("backbone_head", backbone_config.hidden_dim, head_hidden, store, head_rng);
    Backbone::State carried = backbone.initial_state(n);

    std::vector<MetricsRecord> records;
    for (int t = 0; t + 1 < total; ++t) {
        const auto started = std::chrono::steady_clock::now();
        const Snapshot& current = graph.snapshots[static_cast<std::size_t>(t)];
        const Snapshot& future = graph.snapshots[static_cast<std::size_t>(t) + 1];
        MetricsRecord rec;
        rec.snapshot = t + 1;
        if (future.num_edges() > 0) {
            Rng rank_rng = snapshot_stream(config.seed, kStreamRank, t);
            Tape tape;
            Binding bind(tape, false);
            auto layers = backbone.encode(bind, current, features, carried);
            rec.mrr = mrr(tape.val(layers.back()), future, head, config.mrr_negatives, rank_rng);
            rec.has_mrr = true;

            Rng negative_rng = snapshot_stream(config.seed, kStreamBackboneNegatives, t);
            const auto phase = train_backbone_phase(backbone, head, current, future, features,
                                                    carried, config, negative_rng);
            rec.backbone_loss = phase.loss;
            rec.backbone_epochs = phase.epochs;
        }
        Tape tape;
        Binding bind(tape, false);
        auto layers = backbone.encode(bind, current, features, carried);
        carried = backbone.detach(tape, layers);
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        records.push_back(rec);
    }
    return records;
}

double headline_mrr(const std::vector<MetricsRecord>& metrics) {
    std::vector<double> scored;
    for (const auto& rec : metrics)
        if (rec.has_mrr) scored.push_back(rec.mrr);
    if (scored.empty()) throw DataError("headline_mrr: no snapshot recorded a rank metric");
    const std::size_t skip = scored.size() * 2 / 5;  // keep the most recent 60%
    double total = 0.0;
    for (std::size_t i = skip; i < scored.size(); ++i) total += scored[i];
    return total / static_cast<double>(scored.size() - skip);
}

}  // namespace dygex
