#include "gretel/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gretel/errors.hpp"

namespace gretel {

namespace {

uint64_t pair_key(NodeId src, NodeId dst) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(src)) << 32) |
           static_cast<uint64_t>(static_cast<uint32_t>(dst));
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& tok, const std::string& file, int line_no) {
    try {
        size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError(file + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
    }
}

long parse_long(const std::string& tok, const std::string& file, int line_no) {
    try {
        size_t pos = 0;
        long v = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError(file + ":" + std::to_string(line_no) + ": bad integer '" + tok + "'");
    }
}

}  // namespace

Graph::Graph(int node_count, std::vector<Edge> edges, Matrix node_features, Matrix edge_features)
    : node_count_(node_count),
      edges_(std::move(edges)),
      node_features_(std::move(node_features)),
      edge_features_(std::move(edge_features)) {
    if (node_count_ < 0) throw std::invalid_argument("negative node count");
    if (node_features_.rows != node_count_)
        throw std::invalid_argument("node feature row count does not match node count");
    if (edge_features_.rows != static_cast<int>(edges_.size()))
        throw std::invalid_argument("edge feature row count does not match edge count");

    out_adj_.assign(static_cast<size_t>(node_count_), {});
    in_adj_.assign(static_cast<size_t>(node_count_), {});
    reverse_.assign(edges_.size(), kNoEdge);
    edge_index_.reserve(edges_.size() * 2);

    for (EdgeId e = 0; e < static_cast<EdgeId>(edges_.size()); ++e) {
        const Edge& ed = edges_[static_cast<size_t>(e)];
        if (ed.src < 0 || ed.src >= node_count_ || ed.dst < 0 || ed.dst >= node_count_)
            throw std::invalid_argument("edge endpoint out of range");
        if (!edge_index_.emplace(pair_key(ed.src, ed.dst), e).second)
            throw std::invalid_argument("duplicate edge");
        out_adj_[static_cast<size_t>(ed.src)].push_back(e);
        in_adj_[static_cast<size_t>(ed.dst)].push_back(e);
    }
    // edge ids are appended in increasing order, so adjacency lists are sorted
    for (EdgeId e = 0; e < static_cast<EdgeId>(edges_.size()); ++e) {
        const Edge& ed = edges_[static_cast<size_t>(e)];
        auto it = edge_index_.find(pair_key(ed.dst, ed.src));
        if (it != edge_index_.end()) reverse_[static_cast<size_t>(e)] = it->second;
    }
}

std::optional<EdgeId> Graph::find_edge(NodeId src, NodeId dst) const {
    if (src < 0 || src >= node_count_ || dst < 0 || dst >= node_count_) return std::nullopt;
    auto it = edge_index_.find(pair_key(src, dst));
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
}

Graph Graph::with_edge_features(Matrix edge_features) const {
    return Graph(node_count_, edges_, node_features_, std::move(edge_features));
}

double NodeDistribution::mass(NodeId v) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), v,
                               [](const auto& e, NodeId x) { return e.first < x; });
    if (it != entries.end() && it->first == v) return it->second;
    return 0.0;
}

double NodeDistribution::total_mass() const {
    double s = 0.0;
    for (const auto& [v, m] : entries) s += m;
    return s;
}

NodeDistribution NodeDistribution::from_entries(const Graph& g,
                                                std::vector<std::pair<NodeId, double>> entries) {
    std::sort(entries.begin(), entries.end());
    double total = 0.0;
    NodeId prev = -1;
    for (const auto& [v, m] : entries) {
        if (v < 0 || v >= g.node_count()) throw std::invalid_argument("distribution node out of range");
        if (v == prev) throw std::invalid_argument("duplicate node in distribution");
        if (m < 0.0) throw std::invalid_argument("negative mass");
        prev = v;
        total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("distribution mass must sum to 1");
    return NodeDistribution{std::move(entries)};
}

NodeDistribution NodeDistribution::normalized(const Graph& g,
                                              std::vector<std::pair<NodeId, double>> entries) {
    double total = 0.0;
    for (const auto& [v, m] : entries) {
        if (m < 0.0) throw std::invalid_argument("negative mass");
        total += m;
    }
    if (total <= 0.0) throw std::invalid_argument("cannot normalize zero mass");
    for (auto& [v, m] : entries) m /= total;
    return from_entries(g, std::move(entries));
}

void Trajectory::validate() const {
    if (observations.empty() || observations.size() != indices.size())
        throw std::invalid_argument("trajectory needs matching non-empty observations and indices");
    for (size_t i = 1; i < indices.size(); ++i)
        if (indices[i] <= indices[i - 1])
            throw std::invalid_argument("trajectory indices must be strictly increasing");
}

Graph load_graph(const std::string& nodes_file, const std::string& edges_file) {
    std::ifstream nf(nodes_file);
    if (!nf) throw DataError("cannot open " + nodes_file);

    std::string line;
    int line_no = 0;
    if (!std::getline(nf, line)) throw DataError(nodes_file + ": empty file");
    ++line_no;
    auto header = split_ws(line);
    if (header.empty() || header[0] != "id")
        throw DataError(nodes_file + ":1: header must start with 'id'");
    const int dv = static_cast<int>(header.size()) - 1;

    std::vector<std::vector<double>> node_rows;
    while (std::getline(nf, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto toks = split_ws(line);
        if (static_cast<int>(toks.size()) != dv + 1)
            throw DataError(nodes_file + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(dv + 1) + " columns, got " + std::to_string(toks.size()));
        long id = parse_long(toks[0], nodes_file, line_no);
        if (id != static_cast<long>(node_rows.size()))
            throw DataError(nodes_file + ":" + std::to_string(line_no) +
                            ": node ids must be contiguous from 0, got " + toks[0]);
        std::vector<double> feats(dv);
        for (int c = 0; c < dv; ++c) feats[static_cast<size_t>(c)] = parse_double(toks[static_cast<size_t>(c) + 1], nodes_file, line_no);
        node_rows.push_back(std::move(feats));
    }
    const int n = static_cast<int>(node_rows.size());
    Matrix node_features(n, dv);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < dv; ++c) node_features.at(i, c) = node_rows[static_cast<size_t>(i)][static_cast<size_t>(c)];

    std::ifstream ef(edges_file);
    if (!ef) throw DataError("cannot open " + edges_file);
    line_no = 0;
    if (!std::getline(ef, line)) throw DataError(edges_file + ": empty file");
    ++line_no;
    header = split_ws(line);
    if (header.size() < 2 || header[0] != "src" || header[1] != "dst")
        throw DataError(edges_file + ":1: header must start with 'src dst'");
    const int de = static_cast<int>(header.size()) - 2;

    std::vector<Graph::Edge> edges;
    std::vector<std::vector<double>> edge_rows;
    std::unordered_map<uint64_t, int> seen;
    while (std::getline(ef, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto toks = split_ws(line);
        if (static_cast<int>(toks.size()) != de + 2)
            throw DataError(edges_file + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(de + 2) + " columns, got " + std::to_string(toks.size()));
        long src = parse_long(toks[0], edges_file, line_no);
        long dst = parse_long(toks[1], edges_file, line_no);
        if (src < 0 || src >= n || dst < 0 || dst >= n)
            throw DataError(edges_file + ":" + std::to_string(line_no) + ": endpoint out of range");
        uint64_t key = pair_key(static_cast<NodeId>(src), static_cast<NodeId>(dst));
        auto [it, fresh] = seen.emplace(key, line_no);
        if (!fresh)
            throw DataError(edges_file + ":" + std::to_string(line_no) + ": duplicate edge (" +
                            toks[0] + "," + toks[1] + "), first at line " + std::to_string(it->second));
        std::vector<double> feats(de);
        for (int c = 0; c < de; ++c) feats[static_cast<size_t>(c)] = parse_double(toks[static_cast<size_t>(c) + 2], edges_file, line_no);
        edges.push_back({static_cast<NodeId>(src), static_cast<NodeId>(dst)});
        edge_rows.push_back(std::move(feats));
    }
    const int m = static_cast<int>(edges.size());
    Matrix edge_features(m, de);
    for (int e = 0; e < m; ++e)
        for (int c = 0; c < de; ++c) edge_features.at(e, c) = edge_rows[static_cast<size_t>(e)][static_cast<size_t>(c)];

    return Graph(n, std::move(edges), std::move(node_features), std::move(edge_features));
}

std::vector<EdgeId> path_edges(const Graph& g, const PathSample& p) {
    std::vector<EdgeId> out;
    if (p.nodes.empty()) return out;
    out.reserve(p.nodes.size() - 1);
    for (size_t i = 0; i + 1 < p.nodes.size(); ++i) {
        auto e = g.find_edge(p.nodes[i], p.nodes[i + 1]);
        if (!e)
            throw std::invalid_argument("path nodes at position " + std::to_string(i) +
                                        " are not adjacent");
        out.push_back(*e);
    }
    return out;
}

NodeDistribution dirac(const Graph& g, NodeId v) {
    if (v < 0 || v >= g.node_count()) throw std::invalid_argument("dirac node out of range");
    return NodeDistribution{{{v, 1.0}}};
}

Matrix degree_features(const Graph& g) {
    Matrix m(g.node_count(), 2);
    for (NodeId v = 0; v < g.node_count(); ++v) {
        m.at(v, 0) = static_cast<double>(g.in_degree(v));
        m.at(v, 1) = static_cast<double>(g.out_degree(v));
    }
    return m;
}

}  // namespace gretel
