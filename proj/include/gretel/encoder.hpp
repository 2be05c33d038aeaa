#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gretel/graph.hpp"
#include "gretel/nn.hpp"

namespace gretel {

enum class EncoderKind { learned_gcn, nonparametric_diffusion };
enum class SoftmaxKind { true_softmax, ratio };

struct EncoderConfig {
    int gcn_layers = 3;
    int gcn_dim = 8;
    std::vector<int> mlp_hidden = {32, 32};
    int num_observations = 5;
    EncoderKind encoder_kind = EncoderKind::nonparametric_diffusion;
    int diffusion_steps = 3;
    SoftmaxKind softmax_kind = SoftmaxKind::true_softmax;

    void validate() const;
};

// Input graph plus learned per-edge weights forming a categorical
// distribution over each node's outgoing edges.
struct LatentGraph {
    const Graph* graph = nullptr;
    std::vector<double> edge_weights;  // length m, each in (0,1]
    // set when the weights were recorded on a live tape
    ValueRef weights_ref{};
    // true only for the plain random-walk baseline
    bool allow_backtracking = false;
};

// checks the (0,1] range and per-node sum-to-1 invariants
void validate_latent(const LatentGraph& lat);

// c_{i,tau} stacked over s = 1..steps of [D^s x_tau]_i, where D spreads each
// node's mass uniformly over its out-neighbors plus itself. No parameters.
Matrix diffusion_pseudo_coordinates(const Graph& g, const Trajectory& traj, int steps);

// f_theta(G, phi): pseudo-coordinates -> per-edge scores -> softmax over
// outgoing edges. Parameter layout is fixed at construction.
class Encoder {
public:
    Encoder(const Graph& g, EncoderConfig config);

    const EncoderConfig& config() const { return config_; }
    // per-node pseudo-coordinate length |I| * d_c
    int coord_dim() const;
    // scoring MLP input width
    int score_input_dim() const;

    void register_params(ParamStore& store, Rng& rng) const;

    // truncates to the last num_observations observations, left-padding with
    // copies of the earliest when the trajectory is shorter
    Trajectory fit_observations(const Trajectory& traj) const;

    // sigmoid(MLP(f_i, f_j, f_ij)) per edge, recorded on the tape
    ValueRef initial_edge_weights(Tape& tape) const;

    // k-layer recursion X_k = ReLU((sum_in w X_prev + X_self) W_k) run per
    // observation, rows concatenated across observations; traj must already
    // have exactly num_observations observations
    ValueRef gcn_pseudo_coordinates(Tape& tape, const Trajectory& traj, ValueRef init_w) const;

    // full encode on a tape (training path)
    LatentGraph encode(Tape& tape, const Trajectory& traj) const;

    // forward-only encode (evaluation path)
    LatentGraph encode_eval(ParamStore& params, const Trajectory& traj) const;

private:
    const Graph* g_;
    EncoderConfig config_;
    Mlp init_mlp_;
    Mlp score_mlp_;
    IndexGroups softmax_groups_;  // out-edge lists of nodes with out-degree >= 1
};

}  // namespace gretel
