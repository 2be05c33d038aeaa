#include "gretel/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gretel/errors.hpp"
#include "gretel/graph.hpp"

namespace gretel {

namespace {

bool row_all_zero(const double* p, int n) {
    for (int i = 0; i < n; ++i)
        if (p[i] != 0.0) return false;
    return true;
}

constexpr double kRatioClamp = 1e-12;

}  // namespace

// --- ParamStore ---

size_t ParamStore::add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' already registered");
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter shape must be positive");
    size_t offset = values_.size();
    entries_.push_back({name, offset, rows, cols});
    index_.emplace(name, entries_.size() - 1);
    values_.resize(offset + static_cast<size_t>(rows) * cols, 0.0);
    grad_.resize(values_.size(), 0.0);
    return offset;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return entries_[it->second];
}

std::span<double> ParamStore::values(const std::string& name) {
    const Entry& e = entry(name);
    return {values_.data() + e.offset, static_cast<size_t>(e.rows) * e.cols};
}

std::span<const double> ParamStore::values(const std::string& name) const {
    const Entry& e = entry(name);
    return {values_.data() + e.offset, static_cast<size_t>(e.rows) * e.cols};
}

std::span<double> ParamStore::grad(const std::string& name) {
    const Entry& e = entry(name);
    return {grad_.data() + e.offset, static_cast<size_t>(e.rows) * e.cols};
}

void ParamStore::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void ParamStore::glorot_init(const std::string& name, Rng& rng) {
    const Entry& e = entry(name);
    double bound = std::sqrt(6.0 / (e.rows + e.cols));
    auto v = values(name);
    for (double& x : v) x = rng.uniform(-bound, bound);
}

void ParamStore::zero_init(const std::string& name) {
    auto v = values(name);
    std::fill(v.begin(), v.end(), 0.0);
}

// --- Tape ---

ValueRef Tape::push(Matrix value, std::function<void(Tape&)> vjp) {
    nodes_.push_back({std::move(value), Matrix(), std::move(vjp)});
    return {static_cast<int>(nodes_.size()) - 1};
}

void Tape::ensure_grad(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.grad.rows == 0) n.grad = Matrix(n.value.rows, n.value.cols);
}

ValueRef Tape::constant(Matrix m) { return push(std::move(m), nullptr); }

ValueRef Tape::linear(ValueRef x, const std::string& w_name, const std::string& b_name) {
    const Matrix& xv = value(x);
    const auto& we = params_->entry(w_name);
    if (xv.cols != we.rows)
        throw std::invalid_argument("linear: input cols " + std::to_string(xv.cols) +
                                    " != weight rows " + std::to_string(we.rows));
    const bool has_b = !b_name.empty();
    size_t b_off = 0;
    if (has_b) {
        const auto& be = params_->entry(b_name);
        if (be.rows * be.cols != we.cols) throw std::invalid_argument("linear: bias size mismatch");
        b_off = be.offset;
    }
    const size_t w_off = we.offset;
    const int in = we.rows, out = we.cols, r = xv.rows;

    Matrix y(r, out);
    {
        const double* w = params_->flat_values().data() + w_off;
        const double* b = has_b ? params_->flat_values().data() + b_off : nullptr;
        for (int i = 0; i < r; ++i) {
            const double* xi = xv.row(i);
            double* yi = y.row(i);
            if (b)
                std::memcpy(yi, b, sizeof(double) * static_cast<size_t>(out));
            for (int c = 0; c < in; ++c) {
                double xc = xi[c];
                if (xc == 0.0) continue;
                const double* wc = w + static_cast<size_t>(c) * out;
                for (int k = 0; k < out; ++k) yi[k] += xc * wc[k];
            }
        }
    }

    int xi_idx = x.idx;
    ValueRef ref = push(std::move(y), nullptr);
    int self_idx = ref.idx;
    nodes_[static_cast<size_t>(self_idx)].vjp = [self_idx, xi_idx, w_off, b_off, has_b, in,
                                                 out](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self_idx)].grad;
        const Matrix& xv = t.nodes_[static_cast<size_t>(xi_idx)].value;
        t.ensure_grad(xi_idx);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi_idx)].grad;
        const double* w = t.params_->flat_values().data() + w_off;
        double* dw = t.active_grad_.data() + w_off;
        double* db = has_b ? t.active_grad_.data() + b_off : nullptr;
        for (int i = 0; i < dy.rows; ++i) {
            const double* dyi = dy.row(i);
            if (row_all_zero(dyi, out)) continue;
            const double* xi = xv.row(i);
            double* dxi = dx.row(i);
            for (int c = 0; c < in; ++c) {
                const double* wc = w + static_cast<size_t>(c) * out;
                double* dwc = dw + static_cast<size_t>(c) * out;
                double acc = 0.0;
                const double xc = xi[c];
                for (int k = 0; k < out; ++k) {
                    acc += dyi[k] * wc[k];
                    dwc[k] += xc * dyi[k];
                }
                dxi[c] += acc;
            }
            if (db)
                for (int k = 0; k < out; ++k) db[k] += dyi[k];
        }
    };
    return ref;
}

ValueRef Tape::relu(ValueRef x) {
    Matrix y = value(x);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        const Matrix& xv = t.nodes_[static_cast<size_t>(xi)].value;
        t.ensure_grad(xi);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (size_t i = 0; i < dy.data.size(); ++i)
            if (xv.data[i] > 0.0) dx.data[i] += dy.data[i];
    };
    return ref;
}

ValueRef Tape::sigmoid(ValueRef x) {
    Matrix y = value(x);
    for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        const Matrix& yv = t.nodes_[static_cast<size_t>(self)].value;
        t.ensure_grad(xi);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (size_t i = 0; i < dy.data.size(); ++i)
            dx.data[i] += dy.data[i] * yv.data[i] * (1.0 - yv.data[i]);
    };
    return ref;
}

ValueRef Tape::scale(ValueRef x, double c) {
    Matrix y = value(x);
    for (double& v : y.data) v *= c;
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi, c](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        t.ensure_grad(xi);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += c * dy.data[i];
    };
    return ref;
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows != bv.rows || av.cols != bv.cols) throw std::invalid_argument("add: shape mismatch");
    Matrix y = av;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv.data[i];
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, ai = a.idx, bi = b.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, ai, bi](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        t.ensure_grad(ai);
        t.ensure_grad(bi);
        Matrix& da = t.nodes_[static_cast<size_t>(ai)].grad;
        Matrix& db = t.nodes_[static_cast<size_t>(bi)].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) {
            da.data[i] += dy.data[i];
            db.data[i] += dy.data[i];
        }
    };
    return ref;
}

ValueRef Tape::hconcat(const std::vector<ValueRef>& parts) {
    if (parts.empty()) throw std::invalid_argument("hconcat: no inputs");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    for (ValueRef p : parts) {
        if (value(p).rows != rows) throw std::invalid_argument("hconcat: row count mismatch");
        cols += value(p).cols;
    }
    Matrix y(rows, cols);
    {
        int col0 = 0;
        for (ValueRef p : parts) {
            const Matrix& pv = value(p);
            for (int r = 0; r < rows; ++r)
                std::memcpy(y.row(r) + col0, pv.row(r), sizeof(double) * static_cast<size_t>(pv.cols));
            col0 += pv.cols;
        }
    }
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx;
    std::vector<int> part_idx;
    for (ValueRef p : parts) part_idx.push_back(p.idx);
    nodes_[static_cast<size_t>(self)].vjp = [self, part_idx](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        int col0 = 0;
        for (int pi : part_idx) {
            t.ensure_grad(pi);
            Matrix& dp = t.nodes_[static_cast<size_t>(pi)].grad;
            for (int r = 0; r < dy.rows; ++r) {
                const double* src = dy.row(r) + col0;
                double* dst = dp.row(r);
                for (int c = 0; c < dp.cols; ++c) dst[c] += src[c];
            }
            col0 += dp.cols;
        }
    };
    return ref;
}

namespace {

void check_partition(const IndexGroups& groups, size_t len) {
    std::vector<char> seen(len, 0);
    size_t covered = 0;
    for (const auto& g : groups) {
        if (g.empty()) throw std::invalid_argument("grouped softmax: empty group");
        for (int32_t i : g) {
            if (i < 0 || static_cast<size_t>(i) >= len || seen[static_cast<size_t>(i)])
                throw std::invalid_argument("grouped softmax: groups must partition the index set");
            seen[static_cast<size_t>(i)] = 1;
            ++covered;
        }
    }
    if (covered != len)
        throw std::invalid_argument("grouped softmax: groups must cover every index");
}

}  // namespace

ValueRef Tape::grouped_softmax(ValueRef scores, const IndexGroups* groups) {
    const Matrix& sv = value(scores);
    check_partition(*groups, sv.data.size());
    Matrix y(sv.rows, sv.cols);
    for (const auto& g : *groups) {
        double mx = sv.data[static_cast<size_t>(g[0])];
        for (int32_t i : g) mx = std::max(mx, sv.data[static_cast<size_t>(i)]);
        double sum = 0.0;
        for (int32_t i : g) {
            double e = std::exp(sv.data[static_cast<size_t>(i)] - mx);
            y.data[static_cast<size_t>(i)] = e;
            sum += e;
        }
        for (int32_t i : g) y.data[static_cast<size_t>(i)] /= sum;
    }
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, si = scores.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, si, groups](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        const Matrix& yv = t.nodes_[static_cast<size_t>(self)].value;
        t.ensure_grad(si);
        Matrix& ds = t.nodes_[static_cast<size_t>(si)].grad;
        for (const auto& g : *groups) {
            double dot = 0.0;
            bool touched = false;
            for (int32_t i : g) {
                double d = dy.data[static_cast<size_t>(i)];
                if (d != 0.0) touched = true;
                dot += yv.data[static_cast<size_t>(i)] * d;
            }
            if (!touched) continue;
            for (int32_t i : g)
                ds.data[static_cast<size_t>(i)] +=
                    yv.data[static_cast<size_t>(i)] * (dy.data[static_cast<size_t>(i)] - dot);
        }
    };
    return ref;
}

ValueRef Tape::ratio_normalize(ValueRef scores, const IndexGroups* groups) {
    const Matrix& sv = value(scores);
    check_partition(*groups, sv.data.size());
    Matrix y(sv.rows, sv.cols);
    for (const auto& g : *groups) {
        double sum = 0.0;
        for (int32_t i : g) sum += std::max(sv.data[static_cast<size_t>(i)], kRatioClamp);
        for (int32_t i : g)
            y.data[static_cast<size_t>(i)] = std::max(sv.data[static_cast<size_t>(i)], kRatioClamp) / sum;
    }
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, si = scores.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, si, groups](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        const Matrix& yv = t.nodes_[static_cast<size_t>(self)].value;
        const Matrix& sv = t.nodes_[static_cast<size_t>(si)].value;
        t.ensure_grad(si);
        Matrix& ds = t.nodes_[static_cast<size_t>(si)].grad;
        for (const auto& g : *groups) {
            double sum = 0.0, dot = 0.0;
            bool touched = false;
            for (int32_t i : g) {
                sum += std::max(sv.data[static_cast<size_t>(i)], kRatioClamp);
                double d = dy.data[static_cast<size_t>(i)];
                if (d != 0.0) touched = true;
                dot += yv.data[static_cast<size_t>(i)] * d;
            }
            if (!touched) continue;
            for (int32_t i : g) {
                if (sv.data[static_cast<size_t>(i)] <= kRatioClamp) continue;  // clamped: flat
                ds.data[static_cast<size_t>(i)] += (dy.data[static_cast<size_t>(i)] - dot) / sum;
            }
        }
    };
    return ref;
}

ValueRef Tape::graph_aggregate(ValueRef w, ValueRef x, const Graph* g) {
    const Matrix& wv = value(w);
    const Matrix& xv = value(x);
    if (wv.rows != g->edge_count() || wv.cols != 1)
        throw std::invalid_argument("graph_aggregate: weight vector must be m x 1");
    if (xv.rows != g->node_count())
        throw std::invalid_argument("graph_aggregate: feature rows must match node count");
    const int d = xv.cols;
    Matrix y(xv.rows, d);
    for (NodeId i = 0; i < g->node_count(); ++i) {
        double* yi = y.row(i);
        const double* self_row = xv.row(i);
        for (int c = 0; c < d; ++c) yi[c] = self_row[c];  // self loop, weight 1
        for (EdgeId e : g->in_edges(i)) {
            double we = wv.data[static_cast<size_t>(e)];
            const double* xj = xv.row(g->edge(e).src);
            for (int c = 0; c < d; ++c) yi[c] += we * xj[c];
        }
    }
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, wi = w.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, wi, xi, g, d](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        const Matrix& wv = t.nodes_[static_cast<size_t>(wi)].value;
        const Matrix& xv = t.nodes_[static_cast<size_t>(xi)].value;
        t.ensure_grad(wi);
        t.ensure_grad(xi);
        Matrix& dw = t.nodes_[static_cast<size_t>(wi)].grad;
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (NodeId i = 0; i < g->node_count(); ++i) {
            const double* dyi = dy.row(i);
            if (row_all_zero(dyi, d)) continue;
            double* dxi = dx.row(i);
            for (int c = 0; c < d; ++c) dxi[c] += dyi[c];
            for (EdgeId e : g->in_edges(i)) {
                NodeId j = g->edge(e).src;
                const double* xj = xv.row(j);
                double* dxj = dx.row(j);
                double we = wv.data[static_cast<size_t>(e)];
                double acc = 0.0;
                for (int c = 0; c < d; ++c) {
                    acc += xj[c] * dyi[c];
                    dxj[c] += we * dyi[c];
                }
                dw.data[static_cast<size_t>(e)] += acc;
            }
        }
    };
    return ref;
}

ValueRef Tape::edge_input_concat(const Graph* g, ValueRef coords_ref, const Matrix* coords_const) {
    const Matrix* coords = coords_ref.valid() ? &value(coords_ref) : coords_const;
    if (coords == nullptr) throw std::invalid_argument("edge_input_concat: no coordinates given");
    if (coords->rows != g->node_count())
        throw std::invalid_argument("edge_input_concat: coordinate rows must match node count");
    const int cc = coords->cols;
    const int dv = g->node_feature_dim();
    const int de = g->edge_feature_dim();
    const int m = g->edge_count();
    Matrix y(m, 2 * cc + 2 * dv + de);
    const Matrix& nf = g->node_features();
    const Matrix& ef = g->edge_features();
    for (EdgeId e = 0; e < m; ++e) {
        const auto& ed = g->edge(e);
        double* r = y.row(e);
        if (cc > 0) {
            std::memcpy(r, coords->row(ed.src), sizeof(double) * static_cast<size_t>(cc));
            std::memcpy(r + cc, coords->row(ed.dst), sizeof(double) * static_cast<size_t>(cc));
        }
        if (dv > 0) {
            std::memcpy(r + 2 * cc, nf.row(ed.src), sizeof(double) * static_cast<size_t>(dv));
            std::memcpy(r + 2 * cc + dv, nf.row(ed.dst), sizeof(double) * static_cast<size_t>(dv));
        }
        if (de > 0)
            std::memcpy(r + 2 * cc + 2 * dv, ef.row(e), sizeof(double) * static_cast<size_t>(de));
    }
    ValueRef ref = push(std::move(y), nullptr);
    if (!coords_ref.valid()) return ref;  // pure constant, nothing to propagate
    int self = ref.idx, ci = coords_ref.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, ci, g, cc](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        t.ensure_grad(ci);
        Matrix& dc = t.nodes_[static_cast<size_t>(ci)].grad;
        for (EdgeId e = 0; e < g->edge_count(); ++e) {
            const double* dr = dy.row(e);
            if (row_all_zero(dr, dy.cols)) continue;
            const auto& ed = g->edge(e);
            double* ds = dc.row(ed.src);
            double* dd = dc.row(ed.dst);
            for (int c = 0; c < cc; ++c) {
                ds[c] += dr[c];
                dd[c] += dr[cc + c];
            }
        }
    };
    return ref;
}

ValueRef Tape::const_matmul(const Matrix* a, ValueRef x) {
    const Matrix& xv = value(x);
    if (static_cast<int>(xv.data.size()) != a->cols)
        throw std::invalid_argument("const_matmul: vector length must equal matrix cols");
    Matrix y(a->rows, 1);
    for (int i = 0; i < a->rows; ++i) {
        const double* ai = a->row(i);
        double acc = 0.0;
        for (int c = 0; c < a->cols; ++c) acc += ai[c] * xv.data[static_cast<size_t>(c)];
        y.data[static_cast<size_t>(i)] = acc;
    }
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi, a](Tape& t) {
        const Matrix& dy = t.nodes_[static_cast<size_t>(self)].grad;
        t.ensure_grad(xi);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (int i = 0; i < a->rows; ++i) {
            double d = dy.data[static_cast<size_t>(i)];
            if (d == 0.0) continue;
            const double* ai = a->row(i);
            for (int c = 0; c < a->cols; ++c) dx.data[static_cast<size_t>(c)] += ai[c] * d;
        }
    };
    return ref;
}

ValueRef Tape::neg_log(ValueRef x, double eps) {
    const Matrix& xv = value(x);
    if (xv.data.size() != 1) throw std::invalid_argument("neg_log: input must be scalar");
    Matrix y(1, 1);
    y.data[0] = -std::log(xv.data[0] + eps);
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = x.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi, eps](Tape& t) {
        double dy = t.nodes_[static_cast<size_t>(self)].grad.data[0];
        const Matrix& xv = t.nodes_[static_cast<size_t>(xi)].value;
        t.ensure_grad(xi);
        t.nodes_[static_cast<size_t>(xi)].grad.data[0] += -dy / (xv.data[0] + eps);
    };
    return ref;
}

ValueRef Tape::cross_entropy(ValueRef xhat, const NodeDistribution* target, double eps) {
    const Matrix& xv = value(xhat);
    double loss = 0.0;
    for (const auto& [v, mass] : target->entries) {
        if (v < 0 || v >= xv.rows) throw std::invalid_argument("cross_entropy: target node out of range");
        loss -= mass * std::log(xv.data[static_cast<size_t>(v)] + eps);
    }
    Matrix y(1, 1);
    y.data[0] = loss;
    ValueRef ref = push(std::move(y), nullptr);
    int self = ref.idx, xi = xhat.idx;
    nodes_[static_cast<size_t>(self)].vjp = [self, xi, target, eps](Tape& t) {
        double dy = t.nodes_[static_cast<size_t>(self)].grad.data[0];
        const Matrix& xv = t.nodes_[static_cast<size_t>(xi)].value;
        t.ensure_grad(xi);
        Matrix& dx = t.nodes_[static_cast<size_t>(xi)].grad;
        for (const auto& [v, mass] : target->entries)
            dx.data[static_cast<size_t>(v)] += -dy * mass / (xv.data[static_cast<size_t>(v)] + eps);
    };
    return ref;
}

void Tape::run_backward(double seed) {
    if (consumed_) throw std::invalid_argument("tape already consumed by backward");
    if (nodes_.empty()) throw std::invalid_argument("backward on empty tape");
    Node& last = nodes_.back();
    if (last.value.data.size() != 1)
        throw std::invalid_argument("backward requires a scalar output");
    ensure_grad(static_cast<int>(nodes_.size()) - 1);
    last.grad.data[0] = seed;
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.vjp) continue;
        if (n.grad.rows == 0) continue;  // value never contributed to the output
        n.vjp(*this);
    }
    consumed_ = true;
}

void Tape::backward(double seed) {
    params_->zero_grad();
    active_grad_ = params_->flat_grad();
    run_backward(seed);
}

void Tape::backward_into(std::span<double> grad_out, double seed) {
    if (grad_out.size() != params_->size())
        throw std::invalid_argument("backward_into: gradient buffer size mismatch");
    active_grad_ = grad_out;
    run_backward(seed);
}

// --- Mlp ---

Mlp::Mlp(std::string prefix, int in_dim, std::vector<int> hidden, int out_dim)
    : prefix_(std::move(prefix)), in_dim_(in_dim), out_dim_(out_dim) {
    if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("mlp dims must be positive");
    dims_.push_back(in_dim);
    for (int h : hidden) {
        if (h <= 0) throw std::invalid_argument("mlp hidden dims must be positive");
        dims_.push_back(h);
    }
    dims_.push_back(out_dim);
}

void Mlp::register_params(ParamStore& store, Rng& rng, bool zero_head) const {
    const size_t layers = dims_.size() - 1;
    for (size_t l = 0; l < layers; ++l) {
        std::string w = prefix_ + ".W" + std::to_string(l);
        std::string b = prefix_ + ".b" + std::to_string(l);
        store.add(w, dims_[l], dims_[l + 1]);
        store.add(b, 1, dims_[l + 1]);
        if (zero_head && l == layers - 1) {
            store.zero_init(w);
        } else {
            store.glorot_init(w, rng);
        }
        store.zero_init(b);
    }
}

ValueRef Mlp::forward(Tape& tape, ValueRef x) const {
    const size_t layers = dims_.size() - 1;
    ValueRef cur = x;
    for (size_t l = 0; l < layers; ++l) {
        cur = tape.linear(cur, prefix_ + ".W" + std::to_string(l), prefix_ + ".b" + std::to_string(l));
        if (l + 1 < layers) cur = tape.relu(cur);
    }
    return cur;
}

std::vector<double> mlp_forward(Tape& tape, const Mlp& mlp, std::span<const double> input) {
    if (static_cast<int>(input.size()) != mlp.in_dim())
        throw std::invalid_argument("mlp_forward: input length mismatch");
    Matrix x(1, static_cast<int>(input.size()));
    std::copy(input.begin(), input.end(), x.data.begin());
    ValueRef out = mlp.forward(tape, tape.constant(std::move(x)));
    return tape.value(out).data;
}

// --- Adam ---

void Adam::step(ParamStore& params) { step(params, params.flat_grad()); }

void Adam::step(ParamStore& params, std::span<const double> grad) {
    auto p = params.flat_values();
    if (grad.size() != p.size()) throw std::invalid_argument("adam: gradient size mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient, step aborted");
    if (m_.size() != p.size()) {
        m_.assign(p.size(), 0.0);
        v_.assign(p.size(), 0.0);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

// --- finite differences ---

double finite_diff_check(const std::function<double(bool)>& loss_fn, ParamStore& params,
                         double h, int n_probe, uint64_t seed) {
    loss_fn(true);
    std::vector<double> analytic(params.flat_grad().begin(), params.flat_grad().end());
    Rng rng(seed);
    auto values = params.flat_values();
    double max_rel = 0.0;
    for (int p = 0; p < n_probe; ++p) {
        size_t i = static_cast<size_t>(rng.below(values.size()));
        const double orig = values[i];
        values[i] = orig + h;
        const double lp = loss_fn(false);
        values[i] = orig - h;
        const double lm = loss_fn(false);
        values[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

// --- checkpoint io ---

namespace {

constexpr char kMagic[8] = {'G', 'R', 'T', 'L', 'C', 'K', 'P', 'T'};

void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params, uint64_t seed,
                     const std::string& config_hash) {
    nlohmann::json header;
    auto& names = header["names"];
    auto& shapes = header["shapes"];
    names = nlohmann::json::array();
    shapes = nlohmann::json::array();
    for (const auto& e : params.entries()) {
        names.push_back(e.name);
        shapes.push_back({e.rows, e.cols});
    }
    header["seed"] = seed;
    header["config_hash"] = config_hash;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(kMagic, 8);
    write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (double d : params.flat_values()) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
    }
    if (!out) throw DataError("short write to checkpoint " + path);
}

void load_checkpoint(const std::string& path, ParamStore& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError(path + ": not a checkpoint file");
    uint64_t hlen = read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad header: " + e.what());
    }
    const auto& entries = params.entries();
    const auto& names = header.at("names");
    const auto& shapes = header.at("shapes");
    if (names.size() != entries.size())
        throw DataError(path + ": parameter count mismatch");
    for (size_t i = 0; i < entries.size(); ++i) {
        if (names[i].get<std::string>() != entries[i].name ||
            shapes[i][0].get<int>() != entries[i].rows || shapes[i][1].get<int>() != entries[i].cols)
            throw DataError(path + ": parameter layout mismatch at '" + entries[i].name + "'");
    }
    auto values = params.flat_values();
    for (size_t i = 0; i < values.size(); ++i) {
        uint64_t bits = read_u64(in);
        if (!in) throw DataError(path + ": truncated values");
        std::memcpy(&values[i], &bits, 8);
    }
}

}  // namespace gretel
