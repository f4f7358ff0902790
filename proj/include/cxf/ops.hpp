#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cxf/parallel.hpp"
#include "cxf/tensor.hpp"

// Forward kernels. Pure functions of their inputs with fixed sequential
// reduction order, so repeated evaluation is bit-identical. Reductions run
// in ascending index order; parallel kernels partition output rows, never
// reductions.

namespace cxf::ops {

template <typename T>
void check_matrix(const char* op, const Tensor<T>& a) {
    if (a.shape.size() != 2 || a.rows() == 0 || a.cols() == 0) shape_error(op, a.shape);
}

// c = a @ b, (n,m) x (m,p) -> (n,p)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix("matmul", a);
    check_matrix("matmul", b);
    if (a.cols() != b.rows()) shape_error("matmul", a.shape, b.shape);
    const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
    Tensor<T> c = Tensor<T>::zeros({n, p});
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = c.data.data();
    auto row_block = [&](std::size_t i) {
        const T* ai = pa + i * m;
        T* ci = pc + i * p;
        for (std::size_t k = 0; k < m; ++k) {
            const T aik = ai[k];
            const T* bk = pb + k * p;
            for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
        }
    };
    if (n * m * p >= (std::size_t(1) << 18)) {
        parallel_for(n, row_block);
    } else {
        for (std::size_t i = 0; i < n; ++i) row_block(i);
    }
    return c;
}

// c = a @ b^T, (n,m) x (p,m) -> (n,p)
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix("matmul_nt", a);
    check_matrix("matmul_nt", b);
    if (a.cols() != b.cols()) shape_error("matmul_nt", a.shape, b.shape);
    const std::size_t n = a.rows(), m = a.cols(), p = b.rows();
    Tensor<T> c = Tensor<T>::zeros({n, p});
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = c.data.data();
    auto row_block = [&](std::size_t i) {
        const T* ai = pa + i * m;
        T* ci = pc + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const T* bj = pb + j * m;
            T acc = T(0);
            for (std::size_t k = 0; k < m; ++k) acc += ai[k] * bj[k];
            ci[j] = acc;
        }
    };
    if (n * m * p >= (std::size_t(1) << 18)) {
        parallel_for(n, row_block);
    } else {
        for (std::size_t i = 0; i < n; ++i) row_block(i);
    }
    return c;
}

// c = a^T @ b, (m,n) x (m,p) -> (n,p)
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix("matmul_tn", a);
    check_matrix("matmul_tn", b);
    if (a.rows() != b.rows()) shape_error("matmul_tn", a.shape, b.shape);
    const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
    Tensor<T> c = Tensor<T>::zeros({n, p});
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = c.data.data();
    for (std::size_t k = 0; k < m; ++k) {
        const T* ak = pa + k * n;
        const T* bk = pb + k * p;
        for (std::size_t i = 0; i < n; ++i) {
            const T aki = ak[i];
            T* ci = pc + i * p;
            for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    check_matrix("transpose", a);
    Tensor<T> c = Tensor<T>::zeros({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(j, i) = a.at(i, j);
    return c;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) shape_error("add", a.shape, b.shape);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) shape_error("sub", a.shape, b.shape);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) shape_error("mul", a.shape, b.shape);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

// adds row vector (1,m) to every row of (n,m)
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
    check_matrix("add_rowvec", a);
    if (v.size() != a.cols()) shape_error("add_rowvec", a.shape, v.shape);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) += v.data[j];
    return c;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> c = a;
    for (auto& x : c.data) x *= s;
    return c;
}

// numerically stable softmax along each row; -inf entries get probability 0
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& a) {
    check_matrix("row_softmax", a);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
        if (std::isinf(mx) && mx < T(0))
            raise_invariant("DegenerateRow", "row_softmax: fully masked row");
        T denom = T(0);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            T e = std::exp(a.at(i, j) - mx);
            c.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) /= denom;
    }
    return c;
}

// log(sum(exp(row))) with max subtraction, output (n,1)
template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& a) {
    check_matrix("logsumexp_rows", a);
    Tensor<T> c = Tensor<T>::zeros({a.rows(), 1});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
        T acc = T(0);
        for (std::size_t j = 0; j < a.cols(); ++j) acc += std::exp(a.at(i, j) - mx);
        c.at(i, 0) = mx + std::log(acc);
    }
    return c;
}

template <typename T>
struct LayerNormAux {
    // cached per-row statistics for backward
    std::vector<T> mean, inv_std;
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps,
                     LayerNormAux<T>* aux = nullptr) {
    check_matrix("layer_norm", x);
    if (gain.size() != x.cols() || bias.size() != x.cols())
        shape_error("layer_norm", x.shape, gain.shape);
    const std::size_t n = x.rows(), m = x.cols();
    Tensor<T> y = Tensor<T>::zeros({n, m});
    if (aux) {
        aux->mean.assign(n, T(0));
        aux->inv_std.assign(n, T(0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        T mean = T(0);
        for (std::size_t j = 0; j < m; ++j) mean += x.at(i, j);
        mean /= T(m);
        T var = T(0);
        for (std::size_t j = 0; j < m; ++j) {
            T d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= T(m);
        T inv = T(1) / std::sqrt(var + eps);
        if (aux) {
            aux->mean[i] = mean;
            aux->inv_std[i] = inv;
        }
        for (std::size_t j = 0; j < m; ++j)
            y.at(i, j) = (x.at(i, j) - mean) * inv * gain.data[j] + bias.data[j];
    }
    return y;
}

// tanh-approximated gelu
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y = x;
    const T c0 = T(0.7978845608028654);  // sqrt(2/pi)
    const T c1 = T(0.044715);
    for (auto& v : y.data) {
        T u = c0 * (v + c1 * v * v * v);
        v = T(0.5) * v * (T(1) + std::tanh(u));
    }
    return y;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
    check_matrix("embedding_lookup", table);
    Tensor<T> out = Tensor<T>::zeros({ids.size(), table.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
            shape_error("embedding_lookup", table.shape);
        for (std::size_t j = 0; j < table.cols(); ++j)
            out.at(i, j) = table.at(static_cast<std::size_t>(id), j);
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix("concat_rows", a);
    check_matrix("concat_rows", b);
    if (a.cols() != b.cols()) shape_error("concat_rows", a.shape, b.shape);
    Tensor<T> c = Tensor<T>::zeros({a.rows() + b.rows(), a.cols()});
    std::copy(a.data.begin(), a.data.end(), c.data.begin());
    std::copy(b.data.begin(), b.data.end(), c.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return c;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix("concat_cols", a);
    check_matrix("concat_cols", b);
    if (a.rows() != b.rows()) shape_error("concat_cols", a.shape, b.shape);
    Tensor<T> c = Tensor<T>::zeros({a.rows(), a.cols() + b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) = a.at(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j) c.at(i, a.cols() + j) = b.at(i, j);
    }
    return c;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
    check_matrix("slice_rows", a);
    if (r0 > r1 || r1 > a.rows()) shape_error("slice_rows", a.shape);
    Tensor<T> c = Tensor<T>::zeros({r1 - r0, a.cols()});
    std::copy(a.data.begin() + static_cast<std::ptrdiff_t>(r0 * a.cols()),
              a.data.begin() + static_cast<std::ptrdiff_t>(r1 * a.cols()), c.data.begin());
    return c;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    check_matrix("slice_cols", a);
    if (c0 > c1 || c1 > a.cols()) shape_error("slice_cols", a.shape);
    Tensor<T> c = Tensor<T>::zeros({a.rows(), c1 - c0});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = c0; j < c1; ++j) c.at(i, j - c0) = a.at(i, j);
    return c;
}

// mask entries are 0/1 per element of a; positions with mask 0 are replaced
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, const std::vector<std::uint8_t>& keep, T fill) {
    if (keep.size() != a.size()) shape_error("masked_fill", a.shape);
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!keep[i]) c.data[i] = fill;
    return c;
}

// rows scaled to unit L2 norm; zero rows are an upstream bug, not a request
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a, std::vector<T>* norms_out = nullptr) {
    check_matrix("l2_normalize_rows", a);
    Tensor<T> c = a;
    if (norms_out) norms_out->assign(a.rows(), T(0));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a.at(i, j) * a.at(i, j);
        T norm = std::sqrt(acc);
        if (!(norm > T(1e-12)))
            raise_invariant("DegenerateRow",
                            "l2_normalize_rows: zero-norm row " + std::to_string(i));
        if (norms_out) (*norms_out)[i] = norm;
        for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) /= norm;
    }
    return c;
}

// per-row inner product of equally shaped matrices, output (n,1)
template <typename T>
Tensor<T> rows_dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) shape_error("rows_dot", a.shape, b.shape);
    check_matrix("rows_dot", a);
    Tensor<T> c = Tensor<T>::zeros({a.rows(), 1});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a.at(i, j) * b.at(i, j);
        c.at(i, 0) = acc;
    }
    return c;
}

// each row repeated k times in place: [r0,r0,..,r1,r1,..]
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& a, std::size_t k) {
    check_matrix("repeat_rows", a);
    if (k == 0) shape_error("repeat_rows", a.shape);
    Tensor<T> c = Tensor<T>::zeros({a.rows() * k, a.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < a.cols(); ++j) c.at(i * k + r, j) = a.at(i, j);
    return c;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
    if (shape_numel(s) != a.size()) shape_error("reshape", a.shape, s);
    Tensor<T> c = a;
    c.shape = std::move(s);
    return c;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.data) acc += v;
    return Tensor<T>::scalar(acc);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.size() == 0) shape_error("mean_all", a.shape);
    T acc = T(0);
    for (T v : a.data) acc += v;
    return Tensor<T>::scalar(acc / T(a.size()));
}

}  // namespace cxf::ops
