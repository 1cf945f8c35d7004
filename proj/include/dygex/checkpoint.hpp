#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dygex/training.hpp"

namespace dygex {

// JSON views of the config structs, used by checkpoints, manifests and the
// command line loader. from_json leaves fields absent from the document at
// their current values; range checking stays with each struct's validate().
void to_json(nlohmann::json& j, const BackboneConfig& cfg);
void from_json(const nlohmann::json& j, BackboneConfig& cfg);
void to_json(nlohmann::json& j, const ExplainerConfig& cfg);
void from_json(const nlohmann::json& j, ExplainerConfig& cfg);
void to_json(nlohmann::json& j, const ContrastiveConfig& cfg);
void from_json(const nlohmann::json& j, ContrastiveConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Everything needed to rebuild a trained model and its buffered window:
// architecture, training configuration, named weight tensors in creation
// order, and the final committed embeddings.
struct Checkpoint {
    BackboneConfig backbone;
    ExplainerConfig explainer;
    TrainConfig train;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<int> window;         // snapshot indices left in the buffer
    std::vector<Tensor> embeddings;  // their committed embeddings, oldest first
    int labels_seen = -1;
};

Checkpoint capture_checkpoint(const Model& model, const TrainConfig& config,
                              const LiveUpdateResult& result);

// Layout: 4-byte little-endian header length, a JSON header placing every
// tensor, then the concatenated row-major float64 payload.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint_file(const std::string& path);

// Overwrites the weights of a freshly constructed model of the checkpoint's
// architecture; the stored names must cover the parameter store exactly.
void restore_weights(const Checkpoint& ckpt, Model& model);

}  // namespace dygex
