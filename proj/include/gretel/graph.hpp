#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gretel/matrix.hpp"

namespace gretel {

using NodeId = int32_t;
using EdgeId = int32_t;

constexpr EdgeId kNoEdge = -1;

// Immutable directed graph with per-node / per-edge feature vectors and
// stable edge ids (assigned by input order). Simple digraph: at most one
// edge per ordered (src, dst) pair, no self loops in input data.
class Graph {
public:
    struct Edge {
        NodeId src;
        NodeId dst;
    };

    Graph(int node_count, std::vector<Edge> edges, Matrix node_features, Matrix edge_features);

    int node_count() const { return node_count_; }
    int edge_count() const { return static_cast<int>(edges_.size()); }

    const Edge& edge(EdgeId e) const { return edges_[static_cast<size_t>(e)]; }
    const std::vector<Edge>& edges() const { return edges_; }

    // sorted lists of edge ids
    const std::vector<EdgeId>& out_edges(NodeId v) const { return out_adj_[static_cast<size_t>(v)]; }
    const std::vector<EdgeId>& in_edges(NodeId v) const { return in_adj_[static_cast<size_t>(v)]; }
    const std::vector<std::vector<EdgeId>>& out_adjacency() const { return out_adj_; }

    int out_degree(NodeId v) const { return static_cast<int>(out_edges(v).size()); }
    int in_degree(NodeId v) const { return static_cast<int>(in_edges(v).size()); }

    // edge id of (dst -> src) if present, kNoEdge otherwise; involution where defined
    EdgeId reverse_edge(EdgeId e) const { return reverse_[static_cast<size_t>(e)]; }

    std::optional<EdgeId> find_edge(NodeId src, NodeId dst) const;

    const Matrix& node_features() const { return node_features_; }
    const Matrix& edge_features() const { return edge_features_; }
    int node_feature_dim() const { return node_features_.cols; }
    int edge_feature_dim() const { return edge_features_.cols; }

    // value copy with a different edge feature matrix (row count must match)
    Graph with_edge_features(Matrix edge_features) const;

private:
    int node_count_;
    std::vector<Edge> edges_;
    std::vector<std::vector<EdgeId>> out_adj_;
    std::vector<std::vector<EdgeId>> in_adj_;
    std::vector<EdgeId> reverse_;
    std::unordered_map<uint64_t, EdgeId> edge_index_;
    Matrix node_features_;
    Matrix edge_features_;
};

// Sparse distribution over nodes; masses >= 0 and sum to 1 (within 1e-9).
// Entries are kept sorted by node id.
struct NodeDistribution {
    std::vector<std::pair<NodeId, double>> entries;

    double mass(NodeId v) const;
    double total_mass() const;

    // validates node range, nonnegativity and normalization
    static NodeDistribution from_entries(const Graph& g, std::vector<std::pair<NodeId, double>> entries);
    // rescales nonnegative masses to sum 1
    static NodeDistribution normalized(const Graph& g, std::vector<std::pair<NodeId, double>> entries);
};

// Sub-sequence of per-step node distributions with their observation times.
struct Trajectory {
    std::vector<NodeDistribution> observations;
    std::vector<int64_t> indices;  // strictly increasing

    void validate() const;
};

// Sequence of pairwise-adjacent nodes.
struct PathSample {
    std::vector<NodeId> nodes;
};

// --- operations ---

// Loads the TSV pair (nodes: `id f1..fdv`, edges: `src dst f1..fde`).
// Malformed rows, dangling endpoints and duplicate (src,dst) pairs raise
// DataError naming the offending line.
Graph load_graph(const std::string& nodes_file, const std::string& edges_file);

// Forward edge ids along p; length |nodes| - 1. Non-adjacent consecutive
// pair raises std::invalid_argument with the offending index.
std::vector<EdgeId> path_edges(const Graph& g, const PathSample& p);

NodeDistribution dirac(const Graph& g, NodeId v);

// column 0 = in-degree, column 1 = out-degree
Matrix degree_features(const Graph& g);

}  // namespace gretel
