#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dygex/tensor.hpp"

namespace dygex {

// One time bucket of the dynamic graph. Edges are directed, deduplicated and
// sorted by (src, dst); structural explanations refer to exactly these edges.
struct Snapshot {
    int num_nodes = 0;
    std::vector<int> src;
    std::vector<int> dst;
    std::vector<double> weight;

    std::size_t num_edges() const { return src.size(); }

    // Normalizing constructor: sorts, validates endpoints against num_nodes
    // and keeps the largest weight among duplicate (src, dst) pairs.
    static Snapshot from_edges(int num_nodes,
                               std::vector<std::pair<int, int>> endpoints,
                               std::vector<double> weights = {});

    bool has_edge(int s, int d) const;  // binary search over the sorted edges
};

// Sorted unique neighbor lists over the symmetrized edge set (out union in).
std::vector<std::vector<int>> symmetric_adjacency(const Snapshot& snapshot);

struct DynamicGraph {
    std::vector<std::int64_t> node_ids;  // dense index -> raw id, sorted
    std::vector<Snapshot> snapshots;

    int num_nodes() const { return static_cast<int>(node_ids.size()); }
    std::size_t num_snapshots() const { return snapshots.size(); }
};

// Raw timestamped edge rows before bucketing.
struct EdgeStream {
    std::vector<std::int64_t> src;
    std::vector<std::int64_t> dst;
    std::vector<double> time;
    std::vector<double> weight;

    std::size_t size() const { return src.size(); }
};

// Parses delimiter-separated rows. `columns` assigns a meaning to each field:
// src, dst, time (or timestamp), weight (or rating), label, skip. Lines are
// split on commas when one is present, otherwise on whitespace; '#' starts a
// comment. Malformed rows raise DataError with the line number.
EdgeStream load_edge_stream(std::istream& in, const std::vector<std::string>& columns);
EdgeStream load_edge_stream_file(const std::string& path,
                                 const std::vector<std::string>& columns);

struct BucketSpec {
    enum class Mode { kCount, kDuration };
    Mode mode = Mode::kCount;
    int count = 0;        // number of equal-width buckets when mode == kCount
    double duration = 0;  // bucket width in time units when mode == kDuration
};

// Splits the stream into snapshots along the time axis. Node ids are the
// sorted distinct raw ids; every snapshot covers the full node set.
DynamicGraph bucket_snapshots(const EdgeStream& stream, const BucketSpec& spec);

// Re-embeds a graph whose raw ids already lie in [0, num_nodes) onto that
// full range, so declared-but-isolated nodes keep their positions. Raw ids
// outside the range raise DataError.
DynamicGraph with_node_range(const DynamicGraph& graph, int num_nodes);

// Node features, constant across snapshots.
//   identity:   one-hot node id (N x N), only sensible for small graphs
//   degree:     one-hot log2 bucket of the symmetrized degree in the first
//               snapshot; bin 0 is reserved for isolated nodes
Tensor identity_features(int num_nodes);
Tensor degree_bucket_features(const DynamicGraph& graph, int bins = 16);
Tensor build_features(const DynamicGraph& graph, const std::string& kind, int degree_bins = 16);

}  // namespace dygex
