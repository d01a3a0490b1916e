#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "freezetst/errors.hpp"

namespace freezetst {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor. Rank is dynamic (0-3 used in practice); a tensor
/// of total size 1 acts as a scalar for broadcasting purposes.
template <class Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;

    explicit Tensor(Shape s, Real fill = Real(0)) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(count(shape)), fill);
    }

    Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != static_cast<Index>(data.size()))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

    static Index count(const Shape& s) {
        Index n = 1;
        for (Index d : s) {
            if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    Index size() const { return static_cast<Index>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return size() == 1; }

    Index dim(int i) const {
        if (i < 0 || i >= rank()) throw DimensionError("dimension index out of range");
        return shape[static_cast<std::size_t>(i)];
    }

    Index rows() const { return rank() >= 1 ? shape[0] : 1; }
    Index cols() const { return rank() >= 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

    Real& operator[](Index i) { return data[static_cast<std::size_t>(i)]; }
    Real operator[](Index i) const { return data[static_cast<std::size_t>(i)]; }

    Real& operator()(Index i, Index j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    Real operator()(Index i, Index j) const {
        return data[static_cast<std::size_t>(i * shape[1] + j)];
    }

    Real& operator()(Index i, Index j, Index k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    Real operator()(Index i, Index j, Index k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class Real>
void require_rank(const Tensor<Real>& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape));
}

template <class Real>
void require_finite(const Tensor<Real>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value produced");
}

}  // namespace freezetst
