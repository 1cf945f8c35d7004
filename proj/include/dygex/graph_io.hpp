#pragma once

#include <string>

#include "json.hpp"

#include "dygex/graph.hpp"

namespace dygex {

// Round-trippable JSON form of a dynamic graph.
nlohmann::json graph_to_json(const DynamicGraph& graph);
DynamicGraph graph_from_json(const nlohmann::json& j);

void save_graph(const DynamicGraph& graph, const std::string& path);
DynamicGraph load_graph(const std::string& path);

// Human-facing digest: node count, snapshot count, edges per snapshot.
nlohmann::json graph_summary(const DynamicGraph& graph);

}  // namespace dygex
