#include "dygex/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "dygex/errors.hpp"

namespace dygex {

Snapshot Snapshot::from_edges(int num_nodes, std::vector<std::pair<int, int>> endpoints,
                              std::vector<double> weights) {
    if (num_nodes <= 0) throw DataError("snapshot requires a positive node count");
    if (!weights.empty() && weights.size() != endpoints.size())
        throw ShapeError("snapshot: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(endpoints.size()) + " edges");
    for (const auto& [s, d] : endpoints)
        if (s < 0 || s >= num_nodes || d < 0 || d >= num_nodes)
            throw IndexError("snapshot: edge (" + std::to_string(s) + ", " + std::to_string(d) +
                             ") outside node range 0.." + std::to_string(num_nodes - 1));

    std::vector<std::size_t> order(endpoints.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return endpoints[a] < endpoints[b];
    });

    Snapshot snap;
    snap.num_nodes = num_nodes;
    for (std::size_t i : order) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!snap.src.empty() && snap.src.back() == endpoints[i].first &&
            snap.dst.back() == endpoints[i].second) {
            // duplicate pair within one bucket: keep the strongest weight
            snap.weight.back() = std::max(snap.weight.back(), w);
            continue;
        }
        snap.src.push_back(endpoints[i].first);
        snap.dst.push_back(endpoints[i].second);
        snap.weight.push_back(w);
    }
    return snap;
}

bool Snapshot::has_edge(int s, int d) const {
    const std::pair<int, int> key{s, d};
    std::size_t lo = 0, hi = src.size();
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        const std::pair<int, int> cur{src[mid], dst[mid]};
        if (cur < key)
            lo = mid + 1;
        else
            hi = mid;
    }
    return lo < src.size() && src[lo] == s && dst[lo] == d;
}

std::vector<std::vector<int>> symmetric_adjacency(const Snapshot& snapshot) {
    std::vector<std::set<int>> nbr(snapshot.num_nodes);
    for (std::size_t e = 0; e < snapshot.num_edges(); ++e) {
        nbr[snapshot.src[e]].insert(snapshot.dst[e]);
        nbr[snapshot.dst[e]].insert(snapshot.src[e]);
    }
    std::vector<std::vector<int>> out(snapshot.num_nodes);
    for (int i = 0; i < snapshot.num_nodes; ++i) out[i].assign(nbr[i].begin(), nbr[i].end());
    return out;
}

namespace {

enum class Column { kSrc, kDst, kTime, kWeight, kLabel, kSkip };

Column parse_column(const std::string& token) {
    if (token == "src") return Column::kSrc;
    if (token == "dst") return Column::kDst;
    if (token == "time" || token == "timestamp") return Column::kTime;
    if (token == "weight" || token == "rating") return Column::kWeight;
    if (token == "label") return Column::kLabel;
    if (token == "skip") return Column::kSkip;
    throw ConfigError("unknown column token '" + token +
                      "' (expected src, dst, time, weight, label or skip)");
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    if (line.find(',') != std::string::npos) {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            // trim surrounding blanks
            const auto b = field.find_first_not_of(" \t\r");
            const auto e = field.find_last_not_of(" \t\r");
            fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
        }
    } else {
        std::stringstream ss(line);
        std::string field;
        while (ss >> field) fields.push_back(field);
    }
    return fields;
}

}  // namespace

EdgeStream load_edge_stream(std::istream& in, const std::vector<std::string>& columns) {
    std::vector<Column> cols;
    cols.reserve(columns.size());
    int n_src = 0, n_dst = 0, n_time = 0;
    for (const std::string& token : columns) {
        cols.push_back(parse_column(token));
        n_src += cols.back() == Column::kSrc;
        n_dst += cols.back() == Column::kDst;
        n_time += cols.back() == Column::kTime;
    }
    if (n_src != 1 || n_dst != 1 || n_time != 1)
        throw ConfigError("column spec must name src, dst and time exactly once");

    EdgeStream stream;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::vector<std::string> fields = split_fields(line);
        if (fields.empty()) continue;
        if (fields.size() != cols.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(cols.size()) + " fields, found " +
                            std::to_string(fields.size()));
        std::int64_t src = 0, dst = 0;
        double time = 0.0, weight = 1.0;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (cols[c] == Column::kSkip || cols[c] == Column::kLabel) continue;
            try {
                std::size_t used = 0;
                if (cols[c] == Column::kSrc || cols[c] == Column::kDst) {
                    const std::int64_t v = std::stoll(fields[c], &used);
                    if (used != fields[c].size()) throw std::invalid_argument(fields[c]);
                    (cols[c] == Column::kSrc ? src : dst) = v;
                } else {
                    const double v = std::stod(fields[c], &used);
                    if (used != fields[c].size()) throw std::invalid_argument(fields[c]);
                    (cols[c] == Column::kTime ? time : weight) = v;
                }
            } catch (const std::exception&) {
                throw DataError("line " + std::to_string(line_no) + ": cannot parse '" +
                                fields[c] + "' as " +
                                (cols[c] == Column::kSrc || cols[c] == Column::kDst
                                     ? "an integer id"
                                     : "a number"));
            }
        }
        stream.src.push_back(src);
        stream.dst.push_back(dst);
        stream.time.push_back(time);
        stream.weight.push_back(weight);
    }
    if (stream.size() == 0) throw DataError("edge stream contains no edges");
    return stream;
}

EdgeStream load_edge_stream_file(const std::string& path,
                                 const std::vector<std::string>& columns) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge file: " + path);
    return load_edge_stream(in, columns);
}

DynamicGraph bucket_snapshots(const EdgeStream& stream, const BucketSpec& spec) {
    if (stream.size() == 0) throw DataError("edge stream contains no edges");
    if (stream.dst.size() != stream.size() || stream.time.size() != stream.size() ||
        stream.weight.size() != stream.size())
        throw ShapeError("edge stream columns disagree on length");

    std::vector<std::int64_t> ids;
    ids.reserve(stream.size() * 2);
    ids.insert(ids.end(), stream.src.begin(), stream.src.end());
    ids.insert(ids.end(), stream.dst.begin(), stream.dst.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::map<std::int64_t, int> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<int>(i);

    const auto [tmin_it, tmax_it] = std::minmax_element(stream.time.begin(), stream.time.end());
    const double t_min = *tmin_it;
    const double t_max = *tmax_it;

    std::size_t num_buckets = 0;
    std::function<std::size_t(double)> bucket_of;
    if (spec.mode == BucketSpec::Mode::kCount) {
        if (spec.count < 1) throw ConfigError("bucket count must be at least 1");
        std::set<double> distinct(stream.time.begin(), stream.time.end());
        if (static_cast<std::size_t>(spec.count) > distinct.size())
            throw DataError("cannot split " + std::to_string(distinct.size()) +
                            " distinct timestamps into " + std::to_string(spec.count) +
                            " buckets");
        num_buckets = static_cast<std::size_t>(spec.count);
        const double span = t_max - t_min;
        bucket_of = [=](double t) -> std::size_t {
            if (span == 0.0) return 0;
            const auto b = static_cast<std::size_t>((t - t_min) / span *
                                                    static_cast<double>(num_buckets));
            return std::min(num_buckets - 1, b);
        };
    } else {
        if (!(spec.duration > 0.0)) throw ConfigError("bucket duration must be positive");
        num_buckets = static_cast<std::size_t>((t_max - t_min) / spec.duration) + 1;
        bucket_of = [=](double t) -> std::size_t {
            return std::min(num_buckets - 1,
                            static_cast<std::size_t>((t - t_min) / spec.duration));
        };
    }

    std::vector<std::vector<std::pair<int, int>>> endpoints(num_buckets);
    std::vector<std::vector<double>> weights(num_buckets);
    for (std::size_t e = 0; e < stream.size(); ++e) {
        const std::size_t b = bucket_of(stream.time[e]);
        endpoints[b].emplace_back(index.at(stream.src[e]), index.at(stream.dst[e]));
        weights[b].push_back(stream.weight[e]);
    }

    DynamicGraph graph;
    graph.node_ids = std::move(ids);
    graph.snapshots.reserve(num_buckets);
    for (std::size_t b = 0; b < num_buckets; ++b) {
        if (endpoints[b].empty()) {
            Snapshot empty;
            empty.num_nodes = graph.num_nodes();
            graph.snapshots.push_back(std::move(empty));
        } else {
            graph.snapshots.push_back(Snapshot::from_edges(
                graph.num_nodes(), std::move(endpoints[b]), std::move(weights[b])));
        }
    }
    return graph;
}

DynamicGraph with_node_range(const DynamicGraph& graph, int num_nodes) {
    if (num_nodes < 1) throw ConfigError("node range must be positive");
    DynamicGraph out;
    out.node_ids.resize(static_cast<std::size_t>(num_nodes));
    std::iota(out.node_ids.begin(), out.node_ids.end(), 0);
    out.snapshots.reserve(graph.snapshots.size());
    for (const Snapshot& snap : graph.snapshots) {
        std::vector<std::pair<int, int>> endpoints;
        endpoints.reserve(snap.num_edges());
        for (std::size_t e = 0; e < snap.num_edges(); ++e) {
            const std::int64_t u = graph.node_ids[static_cast<std::size_t>(snap.src[e])];
            const std::int64_t v = graph.node_ids[static_cast<std::size_t>(snap.dst[e])];
            if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
                throw DataError("node id " + std::to_string(u < 0 || u >= num_nodes ? u : v) +
                                " falls outside the declared range of " +
                                std::to_string(num_nodes));
            endpoints.emplace_back(static_cast<int>(u), static_cast<int>(v));
        }
        out.snapshots.push_back(
            Snapshot::from_edges(num_nodes, std::move(endpoints), snap.weight));
    }
    return out;
}

Tensor identity_features(int num_nodes) {
    if (num_nodes <= 0) throw DataError("identity features require a positive node count");
    Tensor f(num_nodes, num_nodes);
    for (int i = 0; i < num_nodes; ++i) f.at(i, i) = 1.0;
    return f;
}

Tensor degree_bucket_features(const DynamicGraph& graph, int bins) {
    if (graph.num_snapshots() == 0) throw DataError("graph has no snapshots");
    if (bins < 2) throw ConfigError("degree features need at least 2 bins");
    const auto adjacency = symmetric_adjacency(graph.snapshots.front());
    Tensor f(graph.num_nodes(), bins);
    for (int i = 0; i < graph.num_nodes(); ++i) {
        const std::size_t deg = adjacency[i].size();
        const int bin =
            deg == 0 ? 0
                     : std::min(bins - 1, 1 + static_cast<int>(std::log2(
                                                  static_cast<double>(deg))));
        f.at(i, bin) = 1.0;
    }
    return f;
}

Tensor build_features(const DynamicGraph& graph, const std::string& kind, int degree_bins) {
    if (kind == "identity") return identity_features(graph.num_nodes());
    if (kind == "degree") return degree_bucket_features(graph, degree_bins);
    throw ConfigError("unknown feature kind '" + kind + "' (expected identity or degree)");
}

}  // namespace dygex
