#include "dygex/backbone.hpp"

#include <string>

#include "dygex/errors.hpp"

namespace dygex {

void BackboneConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("backbone feature_dim must be at least 1");
    if (hidden_dim < 1) throw ConfigError("backbone hidden_dim must be at least 1");
    if (num_layers < 1) throw ConfigError("backbone num_layers must be at least 1");
}

Tape::Var gnn_layer(Tape& tape, Tape::Var h, const Snapshot& snapshot, Tape::Var w_self,
                    Tape::Var w_nbr) {
    const Tensor& hv = tape.val(h);
    if (hv.rows() != static_cast<std::size_t>(snapshot.num_nodes))
        throw ShapeError("gnn_layer: " + hv.shape_str() + " embeddings for " +
                         std::to_string(snapshot.num_nodes) + " nodes");

    const auto adjacency = symmetric_adjacency(snapshot);
    std::vector<int> to, from;
    std::vector<double> coef;
    for (int i = 0; i < snapshot.num_nodes; ++i) {
        const double inv = adjacency[i].empty() ? 0.0 : 1.0 / adjacency[i].size();
        for (int j : adjacency[i]) {
            to.push_back(i);
            from.push_back(j);
            coef.push_back(inv);
        }
    }

    Tape::Var msg;
    if (to.empty()) {
        msg = tape.constant(Tensor(hv.rows(), hv.cols()));
    } else {
        msg = tape.edge_combine(tape.constant(Tensor::column(std::move(coef))), h,
                                std::move(to), std::move(from), hv.rows());
    }
    return tape.relu(tape.add(tape.linear(h, w_self), tape.linear(msg, w_nbr)));
}

Tape::Var gru_update(Tape& tape, Tape::Var x, Tape::Var h, const GruVars& g) {
    auto z = tape.logistic(
        tape.add_rowvec(tape.add(tape.linear(x, g.wz), tape.linear(h, g.uz)), g.bz));
    auto r = tape.logistic(
        tape.add_rowvec(tape.add(tape.linear(x, g.wr), tape.linear(h, g.ur)), g.br));
    auto cand = tape.tanh(tape.add_rowvec(
        tape.add(tape.linear(x, g.wh), tape.linear(tape.mul(r, h), g.uh)), g.bh));
    // h' = h + z * (cand - h)
    return tape.add(h, tape.mul(z, tape.sub(cand, h)));
}

Backbone::Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng)
    : config_(config) {
    config_.validate();
    const auto hid = static_cast<std::size_t>(config_.hidden_dim);
    for (int l = 0; l < config_.num_layers; ++l) {
        const auto in =
            static_cast<std::size_t>(l == 0 ? config_.feature_dim : config_.hidden_dim);
        const std::string prefix = "backbone.l" + std::to_string(l) + ".";
        LayerParams lp;
        lp.w_self = &store.create(prefix + "w_self", glorot_uniform(hid, in, rng));
        lp.w_nbr = &store.create(prefix + "w_nbr", glorot_uniform(hid, in, rng));
        lp.wz = &store.create(prefix + "gru.wz", glorot_uniform(hid, hid, rng));
        lp.uz = &store.create(prefix + "gru.uz", glorot_uniform(hid, hid, rng));
        lp.bz = &store.create(prefix + "gru.bz", Tensor(1, hid));
        lp.wr = &store.create(prefix + "gru.wr", glorot_uniform(hid, hid, rng));
        lp.ur = &store.create(prefix + "gru.ur", glorot_uniform(hid, hid, rng));
        lp.br = &store.create(prefix + "gru.br", Tensor(1, hid));
        lp.wh = &store.create(prefix + "gru.wh", glorot_uniform(hid, hid, rng));
        lp.uh = &store.create(prefix + "gru.uh", glorot_uniform(hid, hid, rng));
        lp.bh = &store.create(prefix + "gru.bh", Tensor(1, hid));
        layers_.push_back(lp);
    }
}

Backbone::State Backbone::initial_state(int num_nodes) const {
    if (num_nodes < 1) throw DataError("backbone state requires a positive node count");
    State state;
    for (int l = 0; l < config_.num_layers; ++l)
        state.layer_hidden.emplace_back(static_cast<std::size_t>(num_nodes),
                                        static_cast<std::size_t>(config_.hidden_dim));
    return state;
}

std::vector<Tape::Var> Backbone::encode(Binding& bind, const Snapshot& snapshot,
                                        const Tensor& features, const State& prev) const {
    const auto n = static_cast<std::size_t>(snapshot.num_nodes);
    if (features.rows() != n || features.cols() != static_cast<std::size_t>(config_.feature_dim))
        throw ShapeError("encode: features " + features.shape_str() + " do not match " +
                         std::to_string(snapshot.num_nodes) + " nodes x " +
                         std::to_string(config_.feature_dim) + " dims");
    if (prev.layer_hidden.size() != layers_.size())
        throw ShapeError("encode: carried state has " +
                         std::to_string(prev.layer_hidden.size()) + " layers, expected " +
                         std::to_string(layers_.size()));

    Tape& tape = bind.tape();
    std::vector<Tape::Var> outputs;
    Tape::Var h = tape.constant(features);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Tensor& carried = prev.layer_hidden[l];
        if (carried.rows() != n || carried.cols() != static_cast<std::size_t>(config_.hidden_dim))
            throw ShapeError("encode: carried state " + carried.shape_str() +
                             " does not match layer " + std::to_string(l));
        const LayerParams& lp = layers_[l];
        Tape::Var mixed = gnn_layer(tape, h, snapshot, bind(*lp.w_self), bind(*lp.w_nbr));
        if (config_.skip_connections &&
            tape.val(h).cols() == static_cast<std::size_t>(config_.hidden_dim))
            mixed = tape.add(mixed, h);
        GruVars gru{bind(*lp.wz), bind(*lp.uz), bind(*lp.bz),
                    bind(*lp.wr), bind(*lp.ur), bind(*lp.br),
                    bind(*lp.wh), bind(*lp.uh), bind(*lp.bh)};
        h = gru_update(tape, mixed, tape.constant(carried), gru);
        outputs.push_back(h);
    }
    return outputs;
}

Backbone::State Backbone::detach(const Tape& tape, const std::vector<Tape::Var>& layers) const {
    if (layers.size() != layers_.size())
        throw ShapeError("detach: expected " + std::to_string(layers_.size()) + " layers, got " +
                         std::to_string(layers.size()));
    State state;
    for (Tape::Var v : layers) state.layer_hidden.push_back(tape.val(v));
    return state;
}

EmbeddingBuffer::EmbeddingBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("embedding buffer capacity must be at least 1");
}

void EmbeddingBuffer::push(Tensor embedding) {
    if (!entries_.empty() && entries_.front().rows() != embedding.rows())
        throw ShapeError("embedding buffer: node count changed from " +
                         std::to_string(entries_.front().rows()) + " to " +
                         std::to_string(embedding.rows()));
    entries_.push_back(std::move(embedding));
    if (entries_.size() > capacity_) entries_.pop_front();
}

const Tensor& EmbeddingBuffer::at(std::size_t i) const {
    if (i >= entries_.size())
        throw IndexError("embedding buffer index " + std::to_string(i) + " out of range " +
                         std::to_string(entries_.size()));
    return entries_[i];
}

}  // namespace dygex
