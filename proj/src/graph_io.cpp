#include "dygex/graph_io.hpp"

#include <fstream>

#include "dygex/errors.hpp"

namespace dygex {

namespace {
constexpr const char* kFormat = "dygex-graph";
constexpr int kVersion = 1;
}  // namespace

nlohmann::json graph_to_json(const DynamicGraph& graph) {
    nlohmann::json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["node_ids"] = graph.node_ids;
    j["snapshots"] = nlohmann::json::array();
    for (const Snapshot& s : graph.snapshots) {
        j["snapshots"].push_back(
            {{"src", s.src}, {"dst", s.dst}, {"weight", s.weight}});
    }
    return j;
}

DynamicGraph graph_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != kFormat)
        throw DataError("not a serialized dynamic graph (missing format marker)");
    if (j.value("version", 0) != kVersion)
        throw DataError("unsupported graph version " + std::to_string(j.value("version", 0)));
    DynamicGraph graph;
    try {
        graph.node_ids = j.at("node_ids").get<std::vector<std::int64_t>>();
        if (graph.node_ids.empty()) throw DataError("graph has no nodes");
        for (const auto& js : j.at("snapshots")) {
            auto src = js.at("src").get<std::vector<int>>();
            auto dst = js.at("dst").get<std::vector<int>>();
            auto weight = js.at("weight").get<std::vector<double>>();
            if (src.size() != dst.size() || src.size() != weight.size())
                throw DataError("snapshot arrays have mismatched lengths");
            if (src.empty()) {
                Snapshot empty;
                empty.num_nodes = graph.num_nodes();
                graph.snapshots.push_back(std::move(empty));
                continue;
            }
            std::vector<std::pair<int, int>> endpoints(src.size());
            for (std::size_t e = 0; e < src.size(); ++e) endpoints[e] = {src[e], dst[e]};
            graph.snapshots.push_back(
                Snapshot::from_edges(graph.num_nodes(), std::move(endpoints), std::move(weight)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed graph JSON: ") + e.what());
    }
    if (graph.snapshots.empty()) throw DataError("graph has no snapshots");
    return graph;
}

void save_graph(const DynamicGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write graph file: " + path);
    out << graph_to_json(graph).dump(2) << "\n";
}

DynamicGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open graph file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse graph file " + path + ": " + e.what());
    }
    return graph_from_json(j);
}

nlohmann::json graph_summary(const DynamicGraph& graph) {
    nlohmann::json edges = nlohmann::json::array();
    std::size_t total = 0;
    for (const Snapshot& s : graph.snapshots) {
        edges.push_back(s.num_edges());
        total += s.num_edges();
    }
    return {{"num_nodes", graph.num_nodes()},
            {"num_snapshots", graph.num_snapshots()},
            {"edges_per_snapshot", edges},
            {"total_edges", total}};
}

}  // namespace dygex
