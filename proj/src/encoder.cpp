#include "gretel/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace gretel {

void EncoderConfig::validate() const {
    if (gcn_layers <= 0 || gcn_dim <= 0 || num_observations <= 0 || diffusion_steps <= 0)
        throw std::invalid_argument("encoder config values must be positive");
    for (int h : mlp_hidden)
        if (h <= 0) throw std::invalid_argument("encoder mlp_hidden values must be positive");
}

void validate_latent(const LatentGraph& lat) {
    const Graph& g = *lat.graph;
    if (static_cast<int>(lat.edge_weights.size()) != g.edge_count())
        throw std::invalid_argument("latent graph weight count mismatch");
    for (double w : lat.edge_weights)
        if (!(w > 0.0) || w > 1.0)
            throw std::invalid_argument("latent edge weight outside (0,1]");
    for (NodeId v = 0; v < g.node_count(); ++v) {
        if (g.out_degree(v) == 0) continue;
        double s = 0.0;
        for (EdgeId e : g.out_edges(v)) s += lat.edge_weights[static_cast<size_t>(e)];
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("outgoing weights of node " + std::to_string(v) +
                                        " sum to " + std::to_string(s));
    }
}

Matrix diffusion_pseudo_coordinates(const Graph& g, const Trajectory& traj, int steps) {
    if (steps < 1) throw std::invalid_argument("diffusion steps must be >= 1");
    const int n = g.node_count();
    const int obs = static_cast<int>(traj.observations.size());
    Matrix coords(n, obs * steps);
    std::vector<double> x(static_cast<size_t>(n)), next(static_cast<size_t>(n));
    for (int t = 0; t < obs; ++t) {
        std::fill(x.begin(), x.end(), 0.0);
        for (const auto& [v, mass] : traj.observations[static_cast<size_t>(t)].entries)
            x[static_cast<size_t>(v)] = mass;
        for (int s = 0; s < steps; ++s) {
            std::fill(next.begin(), next.end(), 0.0);
            for (NodeId i = 0; i < n; ++i) {
                const double xi = x[static_cast<size_t>(i)];
                if (xi == 0.0) continue;
                const double share = xi / static_cast<double>(g.out_degree(i) + 1);
                next[static_cast<size_t>(i)] += share;
                for (EdgeId e : g.out_edges(i)) next[static_cast<size_t>(g.edge(e).dst)] += share;
            }
            x.swap(next);
            for (NodeId i = 0; i < n; ++i) coords.at(i, t * steps + s) = x[static_cast<size_t>(i)];
        }
    }
    return coords;
}

Encoder::Encoder(const Graph& g, EncoderConfig config) : g_(&g), config_(std::move(config)) {
    config_.validate();
    const int dv = g.node_feature_dim();
    const int de = g.edge_feature_dim();
    init_mlp_ = Mlp("enc.init", std::max(1, 2 * dv + de), config_.mlp_hidden, 1);
    score_mlp_ = Mlp("enc.score", score_input_dim(), config_.mlp_hidden, 1);
    for (NodeId v = 0; v < g.node_count(); ++v)
        if (g.out_degree(v) > 0) softmax_groups_.push_back(g.out_edges(v));
}

int Encoder::coord_dim() const {
    const int per_obs = config_.encoder_kind == EncoderKind::learned_gcn ? config_.gcn_dim
                                                                         : config_.diffusion_steps;
    return config_.num_observations * per_obs;
}

int Encoder::score_input_dim() const {
    return 2 * coord_dim() + 2 * g_->node_feature_dim() + g_->edge_feature_dim();
}

void Encoder::register_params(ParamStore& store, Rng& rng) const {
    if (config_.encoder_kind == EncoderKind::learned_gcn) {
        init_mlp_.register_params(store, rng);
        store.add("enc.gcn.W1", 1, config_.gcn_dim);
        store.glorot_init("enc.gcn.W1", rng);
        for (int k = 2; k <= config_.gcn_layers; ++k) {
            std::string name = "enc.gcn.W" + std::to_string(k);
            store.add(name, config_.gcn_dim, config_.gcn_dim);
            store.glorot_init(name, rng);
        }
    }
    // zero head: the scoring MLP starts at score 0 everywhere, so the latent
    // graph starts as the uniform out-edge distribution
    score_mlp_.register_params(store, rng, /*zero_head=*/true);
}

Trajectory Encoder::fit_observations(const Trajectory& traj) const {
    traj.validate();
    const int want = config_.num_observations;
    const int have = static_cast<int>(traj.observations.size());
    Trajectory out;
    if (have >= want) {
        out.observations.assign(traj.observations.end() - want, traj.observations.end());
        out.indices.assign(traj.indices.end() - want, traj.indices.end());
    } else {
        // left-pad with copies of the earliest observation
        int64_t first_index = traj.indices.front();
        for (int i = 0; i < want - have; ++i) {
            out.observations.push_back(traj.observations.front());
            out.indices.push_back(first_index - (want - have) + i);
        }
        for (int i = 0; i < have; ++i) {
            out.observations.push_back(traj.observations[static_cast<size_t>(i)]);
            out.indices.push_back(traj.indices[static_cast<size_t>(i)]);
        }
    }
    return out;
}

ValueRef Encoder::initial_edge_weights(Tape& tape) const {
    const int dv = g_->node_feature_dim();
    const int de = g_->edge_feature_dim();
    ValueRef input;
    if (2 * dv + de == 0) {
        // featureless graph: feed the MLP a constant 1 per edge
        Matrix ones(g_->edge_count(), 1);
        std::fill(ones.data.begin(), ones.data.end(), 1.0);
        input = tape.constant(std::move(ones));
    } else {
        Matrix empty_coords(g_->node_count(), 0);
        input = tape.edge_input_concat(g_, ValueRef{}, &empty_coords);
    }
    return tape.sigmoid(init_mlp_.forward(tape, input));
}

ValueRef Encoder::gcn_pseudo_coordinates(Tape& tape, const Trajectory& traj, ValueRef init_w) const {
    if (static_cast<int>(traj.observations.size()) != config_.num_observations)
        throw std::invalid_argument("gcn: trajectory must have exactly " +
                                    std::to_string(config_.num_observations) + " observations");
    const int n = g_->node_count();
    std::vector<ValueRef> per_obs;
    for (const NodeDistribution& obs : traj.observations) {
        Matrix x0(n, 1);
        for (const auto& [v, mass] : obs.entries) x0.at(v, 0) = mass;
        ValueRef x = tape.constant(std::move(x0));
        for (int k = 1; k <= config_.gcn_layers; ++k) {
            ValueRef agg = tape.graph_aggregate(init_w, x, g_);
            x = tape.relu(tape.linear(agg, "enc.gcn.W" + std::to_string(k), ""));
        }
        per_obs.push_back(x);
    }
    return tape.hconcat(per_obs);
}

LatentGraph Encoder::encode(Tape& tape, const Trajectory& traj) const {
    Trajectory fitted = fit_observations(traj);
    ValueRef input;
    Matrix diff_coords;
    if (config_.encoder_kind == EncoderKind::learned_gcn) {
        ValueRef init_w = initial_edge_weights(tape);
        ValueRef coords = gcn_pseudo_coordinates(tape, fitted, init_w);
        input = tape.edge_input_concat(g_, coords, nullptr);
    } else {
        diff_coords = diffusion_pseudo_coordinates(*g_, fitted, config_.diffusion_steps);
        input = tape.edge_input_concat(g_, ValueRef{}, &diff_coords);
    }
    ValueRef scores = score_mlp_.forward(tape, input);
    ValueRef w = config_.softmax_kind == SoftmaxKind::true_softmax
                     ? tape.grouped_softmax(scores, &softmax_groups_)
                     : tape.ratio_normalize(scores, &softmax_groups_);
    LatentGraph lat;
    lat.graph = g_;
    lat.edge_weights = tape.value(w).data;
    lat.weights_ref = w;
    validate_latent(lat);
    return lat;
}

LatentGraph Encoder::encode_eval(ParamStore& params, const Trajectory& traj) const {
    Tape tape(&params);
    LatentGraph lat = encode(tape, traj);
    lat.weights_ref = ValueRef{};  // the tape dies here
    return lat;
}

}  // namespace gretel
