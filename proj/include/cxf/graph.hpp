#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cxf/ops.hpp"
#include "cxf/rng.hpp"
#include "cxf/tensor.hpp"

namespace cxf {

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by definition, so backward is a single reverse sweep
// visiting each node once. All accumulation is sequential in fixed order:
// equal inputs give bit-identical gradients.
template <typename T>
class Graph {
public:
    using NodeId = std::size_t;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

    NodeId leaf(Tensor<T> value) {
        bool rg = grad_enabled_ && value.requires_grad;
        return push(std::move(value), rg, {});
    }

    NodeId constant(Tensor<T> value) {
        value.requires_grad = false;
        return push(std::move(value), false, {});
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }

    // Zero tensor when the node did not contribute to the loss.
    Tensor<T> grad(NodeId id) const {
        const Node& n = nodes_[id];
        if (n.grad.size() == n.value.size()) return n.grad;
        return Tensor<T>::zeros(n.value.shape);
    }

    // ---- ops ----

    NodeId matmul(NodeId a, NodeId b) {
        NodeId out = push(ops::matmul(nodes_[a].value, nodes_[b].value), needs(a, b),
                          [a, b](Graph& g, NodeId self) {
                              const Tensor<T>& gr = g.nodes_[self].grad;
                              if (g.wants(a)) g.accum(a, ops::matmul_nt(gr, g.nodes_[b].value));
                              if (g.wants(b)) g.accum(b, ops::matmul_tn(g.nodes_[a].value, gr));
                          });
        return out;
    }

    // a @ b^T
    NodeId matmul_nt(NodeId a, NodeId b) {
        return push(ops::matmul_nt(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, ops::matmul(gr, g.nodes_[b].value));
                        if (g.wants(b)) g.accum(b, ops::matmul_tn(gr, g.nodes_[a].value));
                    });
    }

    NodeId transpose(NodeId a) {
        return push(ops::transpose(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (g.wants(a)) g.accum(a, ops::transpose(g.nodes_[self].grad));
        });
    }

    NodeId add(NodeId a, NodeId b) {
        return push(ops::add(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, gr);
                        if (g.wants(b)) g.accum(b, gr);
                    });
    }

    NodeId sub(NodeId a, NodeId b) {
        return push(ops::sub(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, gr);
                        if (g.wants(b)) g.accum(b, ops::scale(gr, T(-1)));
                    });
    }

    NodeId mul(NodeId a, NodeId b) {
        return push(ops::mul(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, ops::mul(gr, g.nodes_[b].value));
                        if (g.wants(b)) g.accum(b, ops::mul(gr, g.nodes_[a].value));
                    });
    }

    NodeId add_rowvec(NodeId a, NodeId v) {
        return push(ops::add_rowvec(nodes_[a].value, nodes_[v].value), needs(a, v),
                    [a, v](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, gr);
                        if (g.wants(v)) {
                            Tensor<T> dv = Tensor<T>::zeros(g.nodes_[v].value.shape);
                            for (std::size_t i = 0; i < gr.rows(); ++i)
                                for (std::size_t j = 0; j < gr.cols(); ++j)
                                    dv.data[j] += gr.at(i, j);
                            g.accum(v, dv);
                        }
                    });
    }

    NodeId scale(NodeId a, T s) {
        return push(ops::scale(nodes_[a].value, s), needs(a), [a, s](Graph& g, NodeId self) {
            if (g.wants(a)) g.accum(a, ops::scale(g.nodes_[self].grad, s));
        });
    }

    NodeId row_softmax(NodeId a) {
        return push(ops::row_softmax(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            const Tensor<T>& y = g.nodes_[self].value;
            const Tensor<T>& gr = g.nodes_[self].grad;
            Tensor<T> dx = Tensor<T>::zeros(y.shape);
            for (std::size_t i = 0; i < y.rows(); ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < y.cols(); ++j) dot += gr.at(i, j) * y.at(i, j);
                for (std::size_t j = 0; j < y.cols(); ++j)
                    dx.at(i, j) = y.at(i, j) * (gr.at(i, j) - dot);
            }
            g.accum(a, dx);
        });
    }

    NodeId logsumexp_rows(NodeId a) {
        return push(ops::logsumexp_rows(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            const Tensor<T>& x = g.nodes_[a].value;
            const Tensor<T>& y = g.nodes_[self].value;
            const Tensor<T>& gr = g.nodes_[self].grad;
            Tensor<T> dx = Tensor<T>::zeros(x.shape);
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j)
                    dx.at(i, j) = gr.at(i, 0) * std::exp(x.at(i, j) - y.at(i, 0));
            g.accum(a, dx);
        });
    }

    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps) {
        auto aux = std::make_shared<ops::LayerNormAux<T>>();
        Tensor<T> y = ops::layer_norm(nodes_[x].value, nodes_[gain].value, nodes_[bias].value,
                                      eps, aux.get());
        return push(std::move(y), needs(x, gain, bias), [x, gain, bias, aux](Graph& g, NodeId self) {
            const Tensor<T>& gr = g.nodes_[self].grad;
            const Tensor<T>& xin = g.nodes_[x].value;
            const Tensor<T>& gn = g.nodes_[gain].value;
            const std::size_t n = xin.rows(), m = xin.cols();
            if (g.wants(gain) || g.wants(bias)) {
                Tensor<T> dgain = Tensor<T>::zeros(gn.shape);
                Tensor<T> dbias = Tensor<T>::zeros(gn.shape);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        T xhat = (xin.at(i, j) - aux->mean[i]) * aux->inv_std[i];
                        dgain.data[j] += gr.at(i, j) * xhat;
                        dbias.data[j] += gr.at(i, j);
                    }
                }
                if (g.wants(gain)) g.accum(gain, dgain);
                if (g.wants(bias)) g.accum(bias, dbias);
            }
            if (g.wants(x)) {
                Tensor<T> dx = Tensor<T>::zeros(xin.shape);
                for (std::size_t i = 0; i < n; ++i) {
                    T sum_dh = T(0), sum_dh_xhat = T(0);
                    for (std::size_t j = 0; j < m; ++j) {
                        T xhat = (xin.at(i, j) - aux->mean[i]) * aux->inv_std[i];
                        T dh = gr.at(i, j) * gn.data[j];
                        sum_dh += dh;
                        sum_dh_xhat += dh * xhat;
                    }
                    for (std::size_t j = 0; j < m; ++j) {
                        T xhat = (xin.at(i, j) - aux->mean[i]) * aux->inv_std[i];
                        T dh = gr.at(i, j) * gn.data[j];
                        dx.at(i, j) = aux->inv_std[i] *
                                      (dh - sum_dh / T(m) - xhat * sum_dh_xhat / T(m));
                    }
                }
                g.accum(x, dx);
            }
        });
    }

    NodeId gelu(NodeId a) {
        return push(ops::gelu(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            const Tensor<T>& x = g.nodes_[a].value;
            const Tensor<T>& gr = g.nodes_[self].grad;
            Tensor<T> dx = Tensor<T>::zeros(x.shape);
            const T c0 = T(0.7978845608028654);
            const T c1 = T(0.044715);
            for (std::size_t i = 0; i < x.size(); ++i) {
                T v = x.data[i];
                T u = c0 * (v + c1 * v * v * v);
                T th = std::tanh(u);
                T du = c0 * (T(1) + T(3) * c1 * v * v);
                T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
                dx.data[i] = gr.data[i] * d;
            }
            g.accum(a, dx);
        });
    }

    NodeId embedding_lookup(NodeId table, std::vector<int> ids) {
        auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
        Tensor<T> y = ops::embedding_lookup<T>(nodes_[table].value, *ids_ptr);
        return push(std::move(y), needs(table), [table, ids_ptr](Graph& g, NodeId self) {
            if (!g.wants(table)) return;
            const Tensor<T>& gr = g.nodes_[self].grad;
            Tensor<T> dt = Tensor<T>::zeros(g.nodes_[table].value.shape);
            for (std::size_t i = 0; i < ids_ptr->size(); ++i)
                for (std::size_t j = 0; j < gr.cols(); ++j)
                    dt.at(static_cast<std::size_t>((*ids_ptr)[i]), j) += gr.at(i, j);
            g.accum(table, dt);
        });
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const std::size_t ra = nodes_[a].value.rows();
        return push(ops::concat_rows(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b, ra](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, ops::slice_rows(gr, 0, ra));
                        if (g.wants(b)) g.accum(b, ops::slice_rows(gr, ra, gr.rows()));
                    });
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const std::size_t ca = nodes_[a].value.cols();
        return push(ops::concat_cols(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b, ca](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        if (g.wants(a)) g.accum(a, ops::slice_cols(gr, 0, ca));
                        if (g.wants(b)) g.accum(b, ops::slice_cols(gr, ca, gr.cols()));
                    });
    }

    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
        return push(ops::slice_rows(nodes_[a].value, r0, r1), needs(a),
                    [a, r0](Graph& g, NodeId self) {
                        if (!g.wants(a)) return;
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        Tensor<T> dx = Tensor<T>::zeros(g.nodes_[a].value.shape);
                        for (std::size_t i = 0; i < gr.rows(); ++i)
                            for (std::size_t j = 0; j < gr.cols(); ++j)
                                dx.at(r0 + i, j) += gr.at(i, j);
                        g.accum(a, dx);
                    });
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
        return push(ops::slice_cols(nodes_[a].value, c0, c1), needs(a),
                    [a, c0](Graph& g, NodeId self) {
                        if (!g.wants(a)) return;
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        Tensor<T> dx = Tensor<T>::zeros(g.nodes_[a].value.shape);
                        for (std::size_t i = 0; i < gr.rows(); ++i)
                            for (std::size_t j = 0; j < gr.cols(); ++j)
                                dx.at(i, c0 + j) += gr.at(i, j);
                        g.accum(a, dx);
                    });
    }

    NodeId masked_fill(NodeId a, std::vector<std::uint8_t> keep, T fill) {
        auto keep_ptr = std::make_shared<std::vector<std::uint8_t>>(std::move(keep));
        Tensor<T> y = ops::masked_fill(nodes_[a].value, *keep_ptr, fill);
        return push(std::move(y), needs(a), [a, keep_ptr](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            Tensor<T> dx = g.nodes_[self].grad;
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (!(*keep_ptr)[i]) dx.data[i] = T(0);
            g.accum(a, dx);
        });
    }

    NodeId l2_normalize_rows(NodeId a) {
        auto norms = std::make_shared<std::vector<T>>();
        Tensor<T> y = ops::l2_normalize_rows(nodes_[a].value, norms.get());
        return push(std::move(y), needs(a), [a, norms](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            const Tensor<T>& y2 = g.nodes_[self].value;
            const Tensor<T>& gr = g.nodes_[self].grad;
            Tensor<T> dx = Tensor<T>::zeros(y2.shape);
            for (std::size_t i = 0; i < y2.rows(); ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < y2.cols(); ++j) dot += gr.at(i, j) * y2.at(i, j);
                for (std::size_t j = 0; j < y2.cols(); ++j)
                    dx.at(i, j) = (gr.at(i, j) - y2.at(i, j) * dot) / (*norms)[i];
            }
            g.accum(a, dx);
        });
    }

    NodeId rows_dot(NodeId a, NodeId b) {
        return push(ops::rows_dot(nodes_[a].value, nodes_[b].value), needs(a, b),
                    [a, b](Graph& g, NodeId self) {
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        const Tensor<T>& av = g.nodes_[a].value;
                        const Tensor<T>& bv = g.nodes_[b].value;
                        if (g.wants(a)) {
                            Tensor<T> da = Tensor<T>::zeros(av.shape);
                            for (std::size_t i = 0; i < av.rows(); ++i)
                                for (std::size_t j = 0; j < av.cols(); ++j)
                                    da.at(i, j) = gr.at(i, 0) * bv.at(i, j);
                            g.accum(a, da);
                        }
                        if (g.wants(b)) {
                            Tensor<T> db = Tensor<T>::zeros(bv.shape);
                            for (std::size_t i = 0; i < bv.rows(); ++i)
                                for (std::size_t j = 0; j < bv.cols(); ++j)
                                    db.at(i, j) = gr.at(i, 0) * av.at(i, j);
                            g.accum(b, db);
                        }
                    });
    }

    NodeId repeat_rows(NodeId a, std::size_t k) {
        return push(ops::repeat_rows(nodes_[a].value, k), needs(a),
                    [a, k](Graph& g, NodeId self) {
                        if (!g.wants(a)) return;
                        const Tensor<T>& gr = g.nodes_[self].grad;
                        const Tensor<T>& av = g.nodes_[a].value;
                        Tensor<T> dx = Tensor<T>::zeros(av.shape);
                        for (std::size_t i = 0; i < av.rows(); ++i)
                            for (std::size_t r = 0; r < k; ++r)
                                for (std::size_t j = 0; j < av.cols(); ++j)
                                    dx.at(i, j) += gr.at(i * k + r, j);
                        g.accum(a, dx);
                    });
    }

    NodeId reshape(NodeId a, Shape s) {
        Shape orig = nodes_[a].value.shape;
        return push(ops::reshape(nodes_[a].value, s), needs(a),
                    [a, orig](Graph& g, NodeId self) {
                        if (g.wants(a)) g.accum(a, ops::reshape(g.nodes_[self].grad, orig));
                    });
    }

    NodeId sum_all(NodeId a) {
        return push(ops::sum_all(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            T gv = g.nodes_[self].grad.data[0];
            g.accum(a, Tensor<T>::full(g.nodes_[a].value.shape, gv));
        });
    }

    NodeId mean_all(NodeId a) {
        return push(ops::mean_all(nodes_[a].value), needs(a), [a](Graph& g, NodeId self) {
            if (!g.wants(a)) return;
            T gv = g.nodes_[self].grad.data[0] / T(g.nodes_[a].value.size());
            g.accum(a, Tensor<T>::full(g.nodes_[a].value.shape, gv));
        });
    }

    // ---- backward ----

    void backward(NodeId loss) {
        if (nodes_[loss].value.size() != 1)
            raise_invariant("NotScalar", "backward: loss has " +
                                             std::to_string(nodes_[loss].value.size()) +
                                             " elements");
        backward_seed(loss, Tensor<T>::full(nodes_[loss].value.shape, T(1)));
    }

    // Seeds d(out) with an externally supplied gradient and sweeps the tape.
    void backward_seed(NodeId out, const Tensor<T>& seed) {
        if (!grad_enabled_)
            raise_invariant("GradDisabled", "backward on a no-grad graph");
        if (seed.shape != nodes_[out].value.shape)
            shape_error("backward_seed", seed.shape, nodes_[out].value.shape);
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad = Tensor<T>::zeros(n.value.shape);
        if (!nodes_[out].requires_grad)
            return;  // nothing downstream of parameters
        nodes_[out].grad = seed;
        for (std::size_t i = out + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.back) n.back(*this, i);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(Graph&, NodeId)> back;
    };

    bool wants(NodeId id) const { return nodes_[id].requires_grad; }

    bool needs(NodeId a) const { return grad_enabled_ && nodes_[a].requires_grad; }
    bool needs(NodeId a, NodeId b) const {
        return grad_enabled_ && (nodes_[a].requires_grad || nodes_[b].requires_grad);
    }
    bool needs(NodeId a, NodeId b, NodeId c) const {
        return grad_enabled_ &&
               (nodes_[a].requires_grad || nodes_[b].requires_grad || nodes_[c].requires_grad);
    }

    void accum(NodeId id, const Tensor<T>& g) {
        Tensor<T>& dst = nodes_[id].grad;
        if (dst.size() != g.size()) shape_error("grad accum", dst.shape, g.shape);
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
    }

    NodeId push(Tensor<T> value, bool requires_grad, std::function<void(Graph&, NodeId)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

// Maximum relative deviation between the analytic gradient of a scalar
// function and fp64-style central differences at step eps. The function is
// supplied once as a graph builder and reused for both evaluations.
// coord_limit caps the number of checked coordinates (seeded choice without
// replacement); 0 means all.
template <typename T, typename BuildFn>
T finite_diff_check(BuildFn&& build, const Tensor<T>& x, T eps, std::size_t coord_limit = 0,
                    std::uint64_t coord_seed = 0x5eedULL) {
    if (eps == T(0)) raise_invariant("StepZero", "finite_diff_check: eps must be nonzero");
    Tensor<T> xg = x;
    xg.requires_grad = true;
    Graph<T> g(true);
    auto xid = g.leaf(xg);
    auto loss = build(g, xid);
    if (g.value(loss).size() != 1)
        raise_invariant("NotScalar", "finite_diff_check: f must be scalar-valued");
    g.backward(loss);
    Tensor<T> analytic = g.grad(xid);

    auto eval = [&](const Tensor<T>& pt) {
        Graph<T> ge(false);
        auto id = ge.leaf(pt);
        return ge.value(build(ge, id)).item();
    };

    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coord_limit > 0 && coord_limit < coords.size()) {
        Rng rng(coord_seed);
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(coord_limit);
    }

    T worst = T(0);
    Tensor<T> probe = x;
    for (std::size_t c : coords) {
        T orig = probe.data[c];
        probe.data[c] = orig + eps;
        T fp = eval(probe);
        probe.data[c] = orig - eps;
        T fm = eval(probe);
        probe.data[c] = orig;
        T fd = (fp - fm) / (T(2) * eps);
        T rel = std::abs(analytic.data[c] - fd) / (std::abs(analytic.data[c]) + T(1e-12));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace cxf
