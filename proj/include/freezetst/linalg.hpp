#pragma once

#include <algorithm>
#include <cmath>

#include "freezetst/rng.hpp"
#include "freezetst/tensor.hpp"

namespace freezetst {

/// Plain value-level linear algebra used outside the autodiff tape: reservoir
/// recurrences, norm estimation, weight initialisation.

template <class Real>
Tensor<Real> matmul_value(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_rank(a, 2, "matmul_value lhs");
    require_rank(b, 2, "matmul_value rhs");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul_value: inner dimensions differ, " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
    const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<Real> c(Shape{m, n});
    for (Index i = 0; i < m; ++i)
        for (Index p = 0; p < k; ++p) {
            const Real aip = a(i, p);
            if (aip == Real(0)) continue;
            for (Index j = 0; j < n; ++j) c(i, j) += aip * b(p, j);
        }
    return c;
}

template <class Real>
Tensor<Real> transpose_value(const Tensor<Real>& a) {
    require_rank(a, 2, "transpose_value");
    Tensor<Real> t(Shape{a.dim(1), a.dim(0)});
    for (Index i = 0; i < a.dim(0); ++i)
        for (Index j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
    return t;
}

/// y = W x for W [m x n] and x a flat vector of length n.
template <class Real>
Tensor<Real> matvec(const Tensor<Real>& w, const Tensor<Real>& x) {
    require_rank(w, 2, "matvec matrix");
    if (x.size() != w.dim(1))
        throw DimensionError("matvec: vector length " + std::to_string(x.size()) +
                             " does not match matrix " + shape_str(w.shape));
    Tensor<Real> y(Shape{w.dim(0)});
    for (Index i = 0; i < w.dim(0); ++i) {
        Real acc = 0;
        for (Index j = 0; j < w.dim(1); ++j) acc += w(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

template <class Real>
Real dot(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    Real acc = 0;
    for (Index i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class Real>
Real norm2(const Tensor<Real>& a) {
    Real acc = 0;
    for (Real v : a.data) acc += v * v;
    return std::sqrt(acc);
}

template <class Real>
Real frobenius_norm(const Tensor<Real>& a) {
    return norm2(a);
}

template <class Real>
Real max_abs(const Tensor<Real>& a) {
    Real m = 0;
    for (Real v : a.data) m = std::max(m, std::abs(v));
    return m;
}

template <class Real>
Tensor<Real> add_value(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.same_shape(b)) throw DimensionError("add_value: shape mismatch");
    Tensor<Real> c = a;
    for (Index i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

template <class Real>
Tensor<Real> sub_value(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.same_shape(b)) throw DimensionError("sub_value: shape mismatch");
    Tensor<Real> c = a;
    for (Index i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

template <class Real>
Tensor<Real> scale_value(const Tensor<Real>& a, Real s) {
    Tensor<Real> c = a;
    for (Real& v : c.data) v *= s;
    return c;
}

template <class Real>
Tensor<Real> fill_normal(Rng& rng, Shape shape, Real mean = Real(0), Real stddev = Real(1)) {
    Tensor<Real> t(std::move(shape));
    for (Real& v : t.data) v = static_cast<Real>(rng.normal(static_cast<double>(mean),
                                                            static_cast<double>(stddev)));
    return t;
}

template <class Real>
Tensor<Real> fill_uniform(Rng& rng, Shape shape, Real lo, Real hi) {
    Tensor<Real> t(std::move(shape));
    for (Real& v : t.data)
        v = static_cast<Real>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
}

/// Gaussian init with variance 1/fan_in for a [rows x cols] matrix applied as
/// y = x W^T, i.e. cols is the fan-in.
template <class Real>
Tensor<Real> xavier_init(Rng& rng, Index rows, Index cols) {
    if (rows <= 0 || cols <= 0) throw DimensionError("xavier_init: dimensions must be positive");
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
    return fill_normal<Real>(rng, Shape{rows, cols}, Real(0), static_cast<Real>(stddev));
}

/// Largest singular value of a 2-D matrix by power iteration on A^T A.
/// Deterministic: the start vector comes from the supplied seed. The estimate
/// is monotonically nondecreasing in the iteration count and never exceeds the
/// true value, so callers that rescale by it push the norm to exactly the
/// target of the estimator itself.
template <class Real>
Real spectral_norm_estimate(const Tensor<Real>& a, int iters = 50, Real tol = Real(1e-9),
                            std::uint64_t seed = 0x5eed) {
    require_rank(a, 2, "spectral_norm_estimate");
    const Index m = a.dim(0), n = a.dim(1);
    if (m == 0 || n == 0) return Real(0);
    Rng rng(seed);
    Tensor<Real> v = fill_normal<Real>(rng, Shape{n});
    Real vn = norm2(v);
    if (vn == Real(0)) return Real(0);
    for (Index i = 0; i < n; ++i) v[i] /= vn;
    Real sigma = 0;
    Tensor<Real> av(Shape{m}), atav(Shape{n});
    for (int it = 0; it < iters; ++it) {
        for (Index i = 0; i < m; ++i) {
            Real acc = 0;
            for (Index j = 0; j < n; ++j) acc += a(i, j) * v[j];
            av[i] = acc;
        }
        const Real s = norm2(av);
        if (s == Real(0)) return Real(0);
        for (Index j = 0; j < n; ++j) {
            Real acc = 0;
            for (Index i = 0; i < m; ++i) acc += a(i, j) * av[i];
            atav[j] = acc;
        }
        const Real an = norm2(atav);
        if (an == Real(0)) return s;
        for (Index j = 0; j < n; ++j) v[j] = atav[j] / an;
        if (tol > Real(0) && it > 0 && std::abs(s - sigma) < tol) {
            sigma = s;
            break;
        }
        sigma = s;
    }
    return sigma;
}

}  // namespace freezetst
