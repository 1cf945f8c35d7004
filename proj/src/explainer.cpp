#include "dygex/explainer.hpp"

#include <numeric>
#include <string>

#include "dygex/errors.hpp"

namespace dygex {

void ExplainerConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("explainer embed_dim must be at least 1");
    if (att_dim < 1) throw ConfigError("explainer att_dim must be at least 1");
    if (leaky_slope < 0.0 || leaky_slope >= 1.0)
        throw ConfigError("explainer leaky_slope must lie in [0, 1)");
    if (window < 0) throw ConfigError("explainer window must be non-negative");
    gate_params(1.0).validate();
}

namespace {

// splits the 2K x 1 attention vector into its source and destination halves
std::pair<Tape::Var, Tape::Var> split_halves(Tape& tape, Tape::Var a, int att_dim) {
    std::vector<int> top(att_dim), bot(att_dim);
    std::iota(top.begin(), top.end(), 0);
    std::iota(bot.begin(), bot.end(), att_dim);
    return {tape.gather_rows(a, top), tape.gather_rows(a, bot)};
}

}  // namespace

StructuralAttention::StructuralAttention(const ExplainerConfig& config, ParamStore& store,
                                         Rng& rng)
    : config_(&config) {
    config.validate();
    const auto k = static_cast<std::size_t>(config.att_dim);
    const auto f = static_cast<std::size_t>(config.embed_dim);
    w_proj = &store.create("explainer.structural.w", glorot_uniform(k, f, rng));
    a_vec = &store.create("explainer.structural.a", glorot_uniform(2 * k, 1, rng));
}

Tape::Var StructuralAttention::edge_logits(Binding& bind, const Snapshot& snapshot,
                                           Tape::Var h) const {
    Tape& tape = bind.tape();
    if (snapshot.num_edges() == 0)
        throw ShapeError("edge_logits: snapshot has no edges to score");
    const Tensor& hv = tape.val(h);
    if (hv.rows() != static_cast<std::size_t>(snapshot.num_nodes) ||
        hv.cols() != static_cast<std::size_t>(config_->embed_dim))
        throw ShapeError("edge_logits: embeddings " + hv.shape_str() + " do not match " +
                         std::to_string(snapshot.num_nodes) + " nodes x " +
                         std::to_string(config_->embed_dim));

    auto hw = tape.linear(h, bind(*w_proj));
    auto [a_src, a_dst] = split_halves(tape, bind(*a_vec), config_->att_dim);
    auto u = tape.matmul(hw, a_src);
    auto v = tape.matmul(hw, a_dst);
    auto score = tape.add(tape.gather_rows(u, snapshot.src), tape.gather_rows(v, snapshot.dst));
    return tape.leaky_relu(score, config_->leaky_slope);
}

Tape::Var StructuralAttention::aggregate_with_gates(Binding& bind, const Snapshot& snapshot,
                                                    Tape::Var h, Tape::Var gates) const {
    Tape& tape = bind.tape();
    auto hw = tape.linear(h, bind(*w_proj));
    if (snapshot.num_edges() == 0)
        return tape.constant(
            Tensor(static_cast<std::size_t>(snapshot.num_nodes),
                   static_cast<std::size_t>(config_->att_dim)));
    std::vector<int> to(snapshot.src.begin(), snapshot.src.end());
    std::vector<int> from(snapshot.dst.begin(), snapshot.dst.end());
    return tape.relu(tape.edge_combine(gates, hw, std::move(to), std::move(from),
                                       static_cast<std::size_t>(snapshot.num_nodes)));
}

StructuralAttention::Result StructuralAttention::attend(Binding& bind, const Snapshot& snapshot,
                                                        Tape::Var h, const Tensor* noise,
                                                        double tau) const {
    Tape& tape = bind.tape();
    Result res;
    if (snapshot.num_edges() == 0) {
        res.embedded = tape.constant(
            Tensor(static_cast<std::size_t>(snapshot.num_nodes),
                   static_cast<std::size_t>(config_->att_dim)));
        return res;
    }
    if (config_->unit_gates) {
        // ablation: every stored edge passes untouched and no gate is learned
        res.gates = tape.constant(Tensor(snapshot.num_edges(), 1, 1.0));
        res.embedded = aggregate_with_gates(bind, snapshot, h, res.gates);
        return res;
    }
    res.logits = edge_logits(bind, snapshot, h);
    if (config_->hard_gates) {
        res.gates = noise != nullptr
                        ? concrete_gates(tape, res.logits, *noise, config_->gate_params(tau))
                        : deterministic_gates(tape, res.logits, config_->gate_params(1.0));
    } else {
        // ablation: normalize scores across each message destination instead
        std::vector<int> segments(snapshot.src.begin(), snapshot.src.end());
        res.gates = tape.segment_softmax(res.logits, std::move(segments), snapshot.num_nodes);
    }
    res.embedded = aggregate_with_gates(bind, snapshot, h, res.gates);
    return res;
}

TemporalAttention::TemporalAttention(const ExplainerConfig& config, ParamStore& store, Rng& rng)
    : config_(&config) {
    config.validate();
    const auto k = static_cast<std::size_t>(config.att_dim);
    w_proj = &store.create("explainer.temporal.w", glorot_uniform(k, k, rng));
    a_vec = &store.create("explainer.temporal.a", glorot_uniform(2 * k, 1, rng));
}

Tensor causal_mask(std::size_t steps, int window) {
    if (steps == 0) throw ShapeError("causal_mask: need at least one step");
    if (window < 0) throw ConfigError("causal_mask: window must be non-negative");
    Tensor mask(steps, steps);
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t j = 0; j <= k; ++j)
            if (window == 0 || k - j < static_cast<std::size_t>(window)) mask.at(k, j) = 1.0;
    return mask;
}

TemporalAttention::Result TemporalAttention::attend(Binding& bind,
                                                    const std::vector<Tape::Var>& buffered) const {
    Tape& tape = bind.tape();
    if (buffered.empty()) throw ShapeError("temporal attention: empty buffer");
    const std::size_t b = buffered.size();
    const Tensor& first = tape.val(buffered.front());
    const std::size_t n = first.rows();
    for (Tape::Var v : buffered)
        if (!tape.val(v).same_shape(first))
            throw ShapeError("temporal attention: buffered shapes differ, " +
                             tape.val(v).shape_str() + " vs " + first.shape_str());
    if (first.cols() != static_cast<std::size_t>(config_->att_dim))
        throw ShapeError("temporal attention: buffered width " + first.shape_str() +
                         " does not match att_dim " + std::to_string(config_->att_dim));

    auto [a_src, a_dst] = split_halves(tape, bind(*a_vec), config_->att_dim);
    std::vector<Tape::Var> projected, queries, keys;
    projected.reserve(b);
    for (Tape::Var h : buffered) {
        auto hw = tape.linear(h, bind(*w_proj));
        projected.push_back(hw);
        queries.push_back(tape.matmul(hw, a_src));
        keys.push_back(tape.matmul(hw, a_dst));
    }
    auto scores = tape.leaky_relu(
        tape.rows_outer_sum(tape.hstack(queries), tape.hstack(keys)), config_->leaky_slope);

    const Tensor step_mask = causal_mask(b, config_->window);
    Tensor tiled(n * b, b);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < b; ++k)
            for (std::size_t j = 0; j < b; ++j) tiled.at(i * b + k, j) = step_mask.at(k, j);

    Result res;
    res.attention = tape.masked_softmax(scores, std::move(tiled));
    res.mixed = tape.relu(tape.block_matmul(res.attention, tape.interleave_rows(projected), b));
    std::vector<int> last_rows(n);
    for (std::size_t i = 0; i < n; ++i) last_rows[i] = static_cast<int>(i * b + b - 1);
    res.last = tape.gather_rows(res.mixed, last_rows);
    return res;
}

Explainer::Explainer(const ExplainerConfig& config, ParamStore& store, Rng& rng)
    : config_(config), structural_(config_, store, rng), temporal_(config_, store, rng) {}

Explainer::Result Explainer::forward(Binding& bind, const std::vector<const Snapshot*>& snapshots,
                                     const std::vector<Tape::Var>& embeddings,
                                     const std::vector<const Tensor*>& noise, double tau) const {
    if (snapshots.empty() || snapshots.size() != embeddings.size() ||
        snapshots.size() != noise.size())
        throw ShapeError("explainer forward: snapshots, embeddings and noise must align");
    Result res;
    std::vector<Tape::Var> structural_out;
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        res.structural.push_back(
            structural_.attend(bind, *snapshots[k], embeddings[k], noise[k], tau));
        structural_out.push_back(res.structural.back().embedded);
    }
    res.temporal = temporal_.attend(bind, structural_out);
    return res;
}

}  // namespace dygex
