#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cxf/error.hpp"

namespace cxf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Rank 2 everywhere in the model path; scalars are
// stored as (1,1).
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            raise_invariant("ShapeMismatch", "tensor data length does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        std::vector<T> d(shape_numel(s), T(0));
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor full(Shape s, T v) {
        std::vector<T> d(shape_numel(s), v);
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor scalar(T v) { return Tensor({1, 1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T item() const {
        if (size() != 1) raise_invariant("NotScalar", "item() on tensor of shape " + shape_str(shape));
        return data[0];
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> d(data.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(data[i]);
        Tensor<U> out(shape, std::move(d));
        out.requires_grad = requires_grad;
        return out;
    }
};

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    raise_invariant("ShapeMismatch", op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a) {
    raise_invariant("ShapeMismatch", op + ": bad shape " + shape_str(a));
}

}  // namespace cxf
