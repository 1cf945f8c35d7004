#pragma once

#include <deque>
#include <vector>

#include "dygex/graph.hpp"
#include "dygex/params.hpp"

namespace dygex {

struct BackboneConfig {
    int feature_dim = 0;
    int hidden_dim = 128;
    int num_layers = 2;
    bool skip_connections = true;

    void validate() const;
};

struct GruVars {
    Tape::Var wz, uz, bz;
    Tape::Var wr, ur, br;
    Tape::Var wh, uh, bh;
};

// One message-passing layer: relu(H W_self^T + M W_nbr^T) where row i of M is
// the mean of H over i's symmetrized neighbors (zero for isolated nodes).
Tape::Var gnn_layer(Tape& tape, Tape::Var h, const Snapshot& snapshot, Tape::Var w_self,
                    Tape::Var w_nbr);

// Node-wise GRU: the layer output is the input, the previous snapshot's
// embedding is the hidden state.
Tape::Var gru_update(Tape& tape, Tape::Var x, Tape::Var h, const GruVars& g);

// Stacked recurrent encoder. Each layer's output is merged with its own
// hidden state from the previous snapshot, so embeddings evolve smoothly.
class Backbone {
public:
    Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng);

    struct State {
        std::vector<Tensor> layer_hidden;  // one N x hidden tensor per layer
    };

    State initial_state(int num_nodes) const;  // zeros

    // Per-layer embeddings for one snapshot; .back() is the snapshot
    // embedding consumed downstream.
    std::vector<Tape::Var> encode(Binding& bind, const Snapshot& snapshot,
                                  const Tensor& features, const State& prev) const;

    // Copies the per-layer values out of the tape as the next carried state.
    State detach(const Tape& tape, const std::vector<Tape::Var>& layers) const;

    const BackboneConfig& config() const { return config_; }

private:
    struct LayerParams {
        Param* w_self;
        Param* w_nbr;
        Param* wz;
        Param* uz;
        Param* bz;
        Param* wr;
        Param* ur;
        Param* br;
        Param* wh;
        Param* uh;
        Param* bh;
    };

    BackboneConfig config_;
    std::vector<LayerParams> layers_;
};

// Fixed-capacity FIFO of the most recent snapshot embeddings (oldest first).
class EmbeddingBuffer {
public:
    explicit EmbeddingBuffer(std::size_t capacity);

    void push(Tensor embedding);
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool full() const { return entries_.size() == capacity_; }
    const Tensor& at(std::size_t i) const;  // 0 is the oldest entry
    std::vector<Tensor> ordered() const { return {entries_.begin(), entries_.end()}; }
    void clear() { entries_.clear(); }

private:
    std::size_t capacity_;
    std::deque<Tensor> entries_;
};

}  // namespace dygex
