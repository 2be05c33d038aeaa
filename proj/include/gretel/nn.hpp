#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gretel/matrix.hpp"
#include "gretel/rng.hpp"

namespace gretel {

class Graph;
struct NodeDistribution;

// Index groups for grouped softmax, e.g. the per-node outgoing edge lists.
using IndexGroups = std::vector<std::vector<int32_t>>;

// Named trainable arrays backed by one flat buffer, with a matching flat
// gradient buffer. Registration order is fixed, so the flat layout (and the
// checkpoint bytes) are deterministic.
class ParamStore {
public:
    struct Entry {
        std::string name;
        size_t offset;
        int rows;
        int cols;
    };

    // returns flat offset of the new array
    size_t add(const std::string& name, int rows, int cols);

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const Entry& entry(const std::string& name) const;
    const std::vector<Entry>& entries() const { return entries_; }

    std::span<double> values(const std::string& name);
    std::span<const double> values(const std::string& name) const;
    std::span<double> grad(const std::string& name);

    std::span<double> flat_values() { return values_; }
    std::span<const double> flat_values() const { return values_; }
    std::span<double> flat_grad() { return grad_; }
    size_t size() const { return values_.size(); }

    void zero_grad();

    // uniform in +-sqrt(6 / (fan_in + fan_out))
    void glorot_init(const std::string& name, Rng& rng);
    void zero_init(const std::string& name);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<double> values_;
    std::vector<double> grad_;
};

// Handle to a value recorded on a Tape.
struct ValueRef {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. A forward pass records primitive operations in order;
// backward() replays them in exact reverse order, accumulating parameter
// gradients into the bound ParamStore. One tape per thread of execution.
class Tape {
public:
    explicit Tape(ParamStore* params) : params_(params) {}

    ParamStore& params() { return *params_; }

    ValueRef constant(Matrix m);

    // Y = X W + b (b_name may be empty); X cols must equal W rows. Rows of X
    // whose output gradient is all zero are skipped in the backward pass.
    ValueRef linear(ValueRef x, const std::string& w_name, const std::string& b_name);

    ValueRef relu(ValueRef x);
    ValueRef sigmoid(ValueRef x);
    // y = c * x, elementwise
    ValueRef scale(ValueRef x, double c);
    ValueRef add(ValueRef a, ValueRef b);
    // column-wise concatenation of matrices with equal row counts
    ValueRef hconcat(const std::vector<ValueRef>& parts);

    // Softmax within each index group (max-subtracted). `groups` must
    // partition [0, len) with no empty group; borrowed for the tape's life.
    ValueRef grouped_softmax(ValueRef scores, const IndexGroups* groups);
    // literal ratio normalization z_i / sum(z_j) with z clamped to >= 1e-12
    ValueRef ratio_normalize(ValueRef scores, const IndexGroups* groups);

    // Y[i,:] = sum over in-edges e=(j->i) of w[e] X[j,:]  +  X[i,:] (self loop)
    ValueRef graph_aggregate(ValueRef w, ValueRef x, const Graph* g);

    // m x (2 coord_cols + 2 dv + de) matrix of per-edge MLP inputs
    // [c_src, c_dst, f_src, f_dst, f_edge]; coords come either from the tape
    // (coords_ref valid) or from a constant matrix.
    ValueRef edge_input_concat(const Graph* g, ValueRef coords_ref, const Matrix* coords_const);

    // y = A x for a constant matrix A (x holds a length-A.cols vector)
    ValueRef const_matmul(const Matrix* a, ValueRef x);

    // y = -log(x + eps), scalar
    ValueRef neg_log(ValueRef x, double eps);
    // y = -sum_v target[v] log(xhat[v] + eps); xhat is an n x 1 vector
    ValueRef cross_entropy(ValueRef xhat, const NodeDistribution* target, double eps);

    const Matrix& value(ValueRef r) const { return nodes_[static_cast<size_t>(r.idx)].value; }
    Matrix& grad_of(ValueRef r) { return nodes_[static_cast<size_t>(r.idx)].grad; }

    // Seeds the last recorded value (must be scalar) with `seed`, zeroes the
    // parameter gradient buffer, then accumulates dLoss/dtheta. Consumes the
    // tape: a second backward() is an error.
    void backward(double seed = 1.0);
    // Same but accumulates into `grad_out` (params flat size) without zeroing
    // it first and without touching the store's own gradient buffer.
    void backward_into(std::span<double> grad_out, double seed = 1.0);

    size_t node_count() const { return nodes_.size(); }

    // raw-op interface used by the walk operators
    ValueRef push(Matrix value, std::function<void(Tape&)> vjp);
    void ensure_grad(int idx);
    std::span<double> active_param_grad() { return active_grad_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> vjp;  // null for leaves
    };

    void run_backward(double seed);

    ParamStore* params_;
    std::vector<Node> nodes_;
    std::span<double> active_grad_;  // parameter gradient target during backward
    bool consumed_ = false;
};

// Feed-forward net: dense layers with ReLU between hidden layers, linear
// final layer. Parameters live in a ParamStore under `prefix.W0/b0, ...`.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::string prefix, int in_dim, std::vector<int> hidden, int out_dim);

    // registers and initializes parameters; `zero_head` zeroes the final
    // layer so the initial output is exactly 0
    void register_params(ParamStore& store, Rng& rng, bool zero_head = false) const;

    // batched: x is r x in_dim, result r x out_dim
    ValueRef forward(Tape& tape, ValueRef x) const;

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }

private:
    std::string prefix_;
    int in_dim_ = 0;
    int out_dim_ = 0;
    std::vector<int> dims_;  // in, hidden..., out
};

// single-vector convenience wrapper over Mlp
std::vector<double> mlp_forward(Tape& tape, const Mlp& mlp, std::span<const double> input);

// Adam with bias correction; moment buffers persist across steps.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // applies one update; throws NumericError on a non-finite gradient
    // without touching the parameters
    void step(ParamStore& params);
    void step(ParamStore& params, std::span<const double> grad);

    int steps_taken() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

// Central-difference gradient check on n_probe seeded coordinates.
// loss_fn(true) must return the loss and leave the analytic gradient in
// params' gradient buffer; loss_fn(false) only returns the loss. Returns the
// max relative error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<double(bool)>& loss_fn, ParamStore& params,
                         double h, int n_probe, uint64_t seed);

// checkpoint: header (names, shapes, seed, config hash) + little-endian f64s
void save_checkpoint(const std::string& path, const ParamStore& params, uint64_t seed,
                     const std::string& config_hash);
// shapes and names must match the already-registered layout
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace gretel
