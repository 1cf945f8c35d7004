#include "dygex/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>

#include "dygex/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as raw little-endian doubles");

namespace dygex {
namespace {

constexpr int kFormatVersion = 1;

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& value) {
    if (j.contains(key)) j.at(key).get_to(value);
}

nlohmann::json tensor_placement(const Tensor& t, std::size_t offset) {
    return {{"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}};
}

Tensor placed_tensor(const nlohmann::json& j, const std::vector<double>& payload) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto offset = j.at("offset").get<std::size_t>();
    if (offset + rows * cols > payload.size())
        throw DataError("checkpoint: tensor placement outside the payload");
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) t[i] = payload[offset + i];
    return t;
}

}  // namespace

void to_json(nlohmann::json& j, const BackboneConfig& cfg) {
    j = {{"feature_dim", cfg.feature_dim},
         {"hidden_dim", cfg.hidden_dim},
         {"num_layers", cfg.num_layers},
         {"skip_connections", cfg.skip_connections}};
}

void from_json(const nlohmann::json& j, BackboneConfig& cfg) {
    read_field(j, "feature_dim", cfg.feature_dim);
    read_field(j, "hidden_dim", cfg.hidden_dim);
    read_field(j, "num_layers", cfg.num_layers);
    read_field(j, "skip_connections", cfg.skip_connections);
}

void to_json(nlohmann::json& j, const ExplainerConfig& cfg) {
    j = {{"embed_dim", cfg.embed_dim}, {"att_dim", cfg.att_dim},
         {"leaky_slope", cfg.leaky_slope}, {"gamma", cfg.gamma},
         {"zeta", cfg.zeta},             {"hard_gates", cfg.hard_gates},
         {"unit_gates", cfg.unit_gates}, {"window", cfg.window}};
}

void from_json(const nlohmann::json& j, ExplainerConfig& cfg) {
    read_field(j, "embed_dim", cfg.embed_dim);
    read_field(j, "att_dim", cfg.att_dim);
    read_field(j, "leaky_slope", cfg.leaky_slope);
    read_field(j, "gamma", cfg.gamma);
    read_field(j, "zeta", cfg.zeta);
    read_field(j, "hard_gates", cfg.hard_gates);
    read_field(j, "unit_gates", cfg.unit_gates);
    read_field(j, "window", cfg.window);
}

void to_json(nlohmann::json& j, const ContrastiveConfig& cfg) {
    j = {{"num_anchors", cfg.num_anchors},
         {"num_negatives", cfg.num_negatives},
         {"temperature", cfg.temperature}};
}

void from_json(const nlohmann::json& j, ContrastiveConfig& cfg) {
    read_field(j, "num_anchors", cfg.num_anchors);
    read_field(j, "num_negatives", cfg.num_negatives);
    read_field(j, "temperature", cfg.temperature);
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = {{"max_backbone_epochs", cfg.max_backbone_epochs},
         {"explainer_epochs", cfg.explainer_epochs},
         {"buffer_size", cfg.buffer_size},
         {"head_hidden", cfg.head_hidden},
         {"backbone_lr", cfg.backbone_lr},
         {"explainer_lr", cfg.explainer_lr},
         {"momentum", cfg.momentum},
         {"alpha", cfg.alpha},
         {"beta", cfg.beta},
         {"negatives_per_positive", cfg.negatives_per_positive},
         {"mrr_negatives", cfg.mrr_negatives},
         {"early_stop_patience", cfg.early_stop_patience},
         {"tau_end", cfg.tau_end},
         {"history_capacity", cfg.history_capacity},
         {"contrastive", cfg.contrastive},
         {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    read_field(j, "max_backbone_epochs", cfg.max_backbone_epochs);
    read_field(j, "explainer_epochs", cfg.explainer_epochs);
    read_field(j, "buffer_size", cfg.buffer_size);
    read_field(j, "head_hidden", cfg.head_hidden);
    read_field(j, "backbone_lr", cfg.backbone_lr);
    read_field(j, "explainer_lr", cfg.explainer_lr);
    read_field(j, "momentum", cfg.momentum);
    read_field(j, "alpha", cfg.alpha);
    read_field(j, "beta", cfg.beta);
    read_field(j, "negatives_per_positive", cfg.negatives_per_positive);
    read_field(j, "mrr_negatives", cfg.mrr_negatives);
    read_field(j, "early_stop_patience", cfg.early_stop_patience);
    read_field(j, "tau_end", cfg.tau_end);
    read_field(j, "history_capacity", cfg.history_capacity);
    if (j.contains("contrastive")) j.at("contrastive").get_to(cfg.contrastive);
    read_field(j, "seed", cfg.seed);
}

Checkpoint capture_checkpoint(const Model& model, const TrainConfig& config,
                              const LiveUpdateResult& result) {
    Checkpoint ckpt;
    ckpt.backbone = model.backbone.config();
    ckpt.explainer = model.explainer.config();
    ckpt.train = config;
    for (const auto& param : model.store.all())
        ckpt.params.emplace_back(param->name, param->value);
    ckpt.window = result.final_window;
    ckpt.embeddings = result.final_embeddings;
    ckpt.labels_seen = result.labels_seen;
    return ckpt;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = kFormatVersion;
    header["backbone"] = ckpt.backbone;
    header["explainer"] = ckpt.explainer;
    header["train"] = ckpt.train;
    header["labels_seen"] = ckpt.labels_seen;

    std::size_t offset = 0;
    auto& params = header["params"] = nlohmann::json::array();
    for (const auto& [name, tensor] : ckpt.params) {
        auto entry = tensor_placement(tensor, offset);
        entry["name"] = name;
        params.push_back(std::move(entry));
        offset += tensor.size();
    }
    auto& buffer = header["buffer"] = nlohmann::json::object();
    buffer["window"] = ckpt.window;
    auto& embeds = buffer["embeddings"] = nlohmann::json::array();
    for (const Tensor& tensor : ckpt.embeddings) {
        embeds.push_back(tensor_placement(tensor, offset));
        offset += tensor.size();
    }
    header["payload_doubles"] = offset;

    const std::string text = header.dump();
    if (text.size() > 0x7fffffffu) throw DataError("checkpoint: header too large");
    const auto len = static_cast<std::uint32_t>(text.size());
    const unsigned char raw[4] = {
        static_cast<unsigned char>(len & 0xff),
        static_cast<unsigned char>((len >> 8) & 0xff),
        static_cast<unsigned char>((len >> 16) & 0xff),
        static_cast<unsigned char>((len >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(raw), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : ckpt.params)
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    for (const Tensor& tensor : ckpt.embeddings)
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!out) throw DataError("checkpoint: write failed");
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    write_checkpoint(out, ckpt);
}

Checkpoint read_checkpoint(std::istream& in) {
    unsigned char raw[4];
    if (!in.read(reinterpret_cast<char*>(raw), 4))
        throw DataError("checkpoint: missing header length");
    const std::uint32_t len = static_cast<std::uint32_t>(raw[0]) |
                              (static_cast<std::uint32_t>(raw[1]) << 8) |
                              (static_cast<std::uint32_t>(raw[2]) << 16) |
                              (static_cast<std::uint32_t>(raw[3]) << 24);
    if (len == 0 || len > (1u << 28)) throw DataError("checkpoint: implausible header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len)))
        throw DataError("checkpoint: truncated header");

    Checkpoint ckpt;
    try {
        const nlohmann::json header = nlohmann::json::parse(text);
        if (header.at("format").get<int>() != kFormatVersion)
            throw DataError("checkpoint: unsupported format version");
        header.at("backbone").get_to(ckpt.backbone);
        header.at("explainer").get_to(ckpt.explainer);
        header.at("train").get_to(ckpt.train);
        ckpt.labels_seen = header.at("labels_seen").get<int>();

        const auto payload_doubles = header.at("payload_doubles").get<std::size_t>();
        std::vector<double> payload(payload_doubles);
        if (!in.read(reinterpret_cast<char*>(payload.data()),
                     static_cast<std::streamsize>(payload_doubles * sizeof(double))))
            throw DataError("checkpoint: truncated payload");

        for (const auto& entry : header.at("params"))
            ckpt.params.emplace_back(entry.at("name").get<std::string>(),
                                     placed_tensor(entry, payload));
        const auto& buffer = header.at("buffer");
        buffer.at("window").get_to(ckpt.window);
        for (const auto& entry : buffer.at("embeddings"))
            ckpt.embeddings.push_back(placed_tensor(entry, payload));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return ckpt;
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    return read_checkpoint(in);
}

void restore_weights(const Checkpoint& ckpt, Model& model) {
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, tensor] : ckpt.params)
        if (!stored.emplace(name, &tensor).second)
            throw DataError("checkpoint: duplicate parameter '" + name + "'");
    if (stored.size() != model.store.all().size())
        throw DataError("checkpoint: stores " + std::to_string(stored.size()) +
                        " tensors but the architecture owns " +
                        std::to_string(model.store.all().size()));
    for (const auto& param : model.store.all()) {
        const auto it = stored.find(param->name);
        if (it == stored.end())
            throw DataError("checkpoint: missing parameter '" + param->name + "'");
        if (!param->value.same_shape(*it->second))
            throw ShapeError("checkpoint: parameter '" + param->name + "' is " +
                             it->second->shape_str() + " but the architecture expects " +
                             param->value.shape_str());
        param->value = *it->second;
    }
}

}  // namespace dygex
