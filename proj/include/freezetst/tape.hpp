#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "freezetst/tensor.hpp"

namespace freezetst {

/// Reverse-mode autodiff over a fixed op vocabulary. Nodes are integer handles
/// into the tape; creation order is the topological order, so the backward
/// pass is a single reverse sweep that visits each node exactly once.
///
/// Broadcasting is deliberately narrow: elementwise binary ops accept either
/// identical shapes or one size-1 operand. Anything richer must be spelled out
/// with explicit ops (add_rowvec, concat, ...), which keeps every gradient
/// rule short enough to audit by hand.
template <class Real>
class Tape {
public:
    using VarId = int;

    /// Register an input tensor. Gradients are tracked only when
    /// requires_grad is set; constants cost nothing during backward.
    VarId leaf(Tensor<Real> value, bool requires_grad = false) {
        require_finite(value, "leaf");
        return push(std::move(value), requires_grad, {});
    }

    VarId constant(Tensor<Real> value) { return leaf(std::move(value), false); }

    const Tensor<Real>& val(VarId id) const { return node(id).value; }

    /// Gradient of the last backward() root with respect to node id.
    /// Valid only after backward(); zero tensor for untouched grad-tracked nodes.
    const Tensor<Real>& grad(VarId id) const {
        const Node& n = node(id);
        if (!n.requires_grad)
            throw DimensionError("grad requested for a node that does not track gradients");
        return n.grad;
    }

    bool requires_grad(VarId id) const { return node(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    VarId matmul(VarId a, VarId b) {
        const Tensor<Real>&A = val(a), &B = val(b);
        require_rank(A, 2, "matmul lhs");
        require_rank(B, 2, "matmul rhs");
        if (A.dim(1) != B.dim(0))
            throw DimensionError("matmul: inner dimensions differ, " + shape_str(A.shape) +
                                 " vs " + shape_str(B.shape));
        const Index m = A.dim(0), k = A.dim(1), n = B.dim(1);
        Tensor<Real> out(Shape{m, n});
        for (Index i = 0; i < m; ++i)
            for (Index p = 0; p < k; ++p) {
                const Real aip = A(i, p);
                if (aip == Real(0)) continue;
                for (Index j = 0; j < n; ++j) out(i, j) += aip * B(p, j);
            }
        return make(std::move(out), {a, b}, "matmul", [this, a, b](const Node& o) {
            const Tensor<Real>&A = val(a), &B = val(b), &G = o.grad;
            const Index m = A.dim(0), k = A.dim(1), n = B.dim(1);
            if (node(a).requires_grad) {  // dA += G B^T
                Tensor<Real>& dA = node(a).grad;
                for (Index i = 0; i < m; ++i)
                    for (Index j = 0; j < n; ++j) {
                        const Real g = G(i, j);
                        if (g == Real(0)) continue;
                        for (Index p = 0; p < k; ++p) dA(i, p) += g * B(p, j);
                    }
            }
            if (node(b).requires_grad) {  // dB += A^T G
                Tensor<Real>& dB = node(b).grad;
                for (Index i = 0; i < m; ++i)
                    for (Index p = 0; p < k; ++p) {
                        const Real av = A(i, p);
                        if (av == Real(0)) continue;
                        for (Index j = 0; j < n; ++j) dB(p, j) += av * G(i, j);
                    }
            }
        });
    }

    VarId transpose(VarId a) {
        const Tensor<Real>& A = val(a);
        require_rank(A, 2, "transpose");
        Tensor<Real> out(Shape{A.dim(1), A.dim(0)});
        for (Index i = 0; i < A.dim(0); ++i)
            for (Index j = 0; j < A.dim(1); ++j) out(j, i) = A(i, j);
        return make(std::move(out), {a}, "transpose", [this, a](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            const Tensor<Real>& G = o.grad;
            for (Index i = 0; i < G.dim(0); ++i)
                for (Index j = 0; j < G.dim(1); ++j) dA(j, i) += G(i, j);
        });
    }

    VarId add(VarId a, VarId b) { return binary(a, b, "add"); }
    VarId sub(VarId a, VarId b) { return binary(a, b, "sub"); }
    VarId mul(VarId a, VarId b) { return binary(a, b, "mul"); }

    /// Multiply by a compile-time constant (no gradient for the scalar).
    VarId scale(VarId a, Real c) {
        Tensor<Real> out = val(a);
        for (Real& v : out.data) v *= c;
        return make(std::move(out), {a}, "scale", [this, a, c](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            for (Index i = 0; i < o.grad.size(); ++i) dA[i] += c * o.grad[i];
        });
    }

    VarId tanh(VarId a) {
        Tensor<Real> out = val(a);
        for (Real& v : out.data) v = std::tanh(v);
        return make(std::move(out), {a}, "tanh", [this, a](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            for (Index i = 0; i < o.grad.size(); ++i) {
                const Real y = o.value[i];
                dA[i] += (Real(1) - y * y) * o.grad[i];
            }
        });
    }

    VarId relu(VarId a) {
        Tensor<Real> out = val(a);
        for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
        return make(std::move(out), {a}, "relu", [this, a](const Node& o) {
            const Tensor<Real>& X = val(a);
            Tensor<Real>& dA = node(a).grad;
            for (Index i = 0; i < o.grad.size(); ++i)
                if (X[i] > Real(0)) dA[i] += o.grad[i];
        });
    }

    /// Exact erf-based gelu: y = x/2 * (1 + erf(x/sqrt(2))).
    VarId gelu(VarId a) {
        Tensor<Real> out = val(a);
        for (Real& v : out.data) v = gelu_fwd(v);
        return make(std::move(out), {a}, "gelu", [this, a](const Node& o) {
            const Tensor<Real>& X = val(a);
            Tensor<Real>& dA = node(a).grad;
            for (Index i = 0; i < o.grad.size(); ++i) dA[i] += gelu_bwd(X[i]) * o.grad[i];
        });
    }

    /// Row-wise softmax of a 2-D tensor, max-subtracted for stability.
    VarId softmax_rows(VarId a) {
        const Tensor<Real>& A = val(a);
        require_rank(A, 2, "softmax_rows");
        Tensor<Real> out(A.shape);
        const Index m = A.dim(0), n = A.dim(1);
        for (Index i = 0; i < m; ++i) {
            Real mx = A(i, 0);
            for (Index j = 1; j < n; ++j) mx = std::max(mx, A(i, j));
            Real sum = 0;
            for (Index j = 0; j < n; ++j) {
                const Real e = std::exp(A(i, j) - mx);
                out(i, j) = e;
                sum += e;
            }
            for (Index j = 0; j < n; ++j) out(i, j) /= sum;
        }
        return make(std::move(out), {a}, "softmax_rows", [this, a](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            const Tensor<Real>&Y = o.value, &G = o.grad;
            const Index m = Y.dim(0), n = Y.dim(1);
            for (Index i = 0; i < m; ++i) {
                Real inner = 0;
                for (Index j = 0; j < n; ++j) inner += G(i, j) * Y(i, j);
                for (Index j = 0; j < n; ++j) dA(i, j) += Y(i, j) * (G(i, j) - inner);
            }
        });
    }

    /// Layer normalisation over the last axis of a 2-D tensor with learnable
    /// per-feature gain and bias (1-D, length = number of columns).
    VarId layer_norm(VarId a, VarId gain, VarId bias, Real eps = Real(1e-5)) {
        const Tensor<Real>&A = val(a), &g = val(gain), &b = val(bias);
        require_rank(A, 2, "layer_norm input");
        if (g.size() != A.dim(1) || b.size() != A.dim(1))
            throw DimensionError("layer_norm: gain/bias length must equal feature width " +
                                 std::to_string(A.dim(1)));
        const Index m = A.dim(0), n = A.dim(1);
        Tensor<Real> out(A.shape);
        Tensor<Real> xhat(A.shape);
        Tensor<Real> inv_sd(Shape{m});
        for (Index i = 0; i < m; ++i) {
            Real mean = 0;
            for (Index j = 0; j < n; ++j) mean += A(i, j);
            mean /= static_cast<Real>(n);
            Real var = 0;
            for (Index j = 0; j < n; ++j) {
                const Real c = A(i, j) - mean;
                var += c * c;
            }
            var /= static_cast<Real>(n);
            const Real inv = Real(1) / std::sqrt(var + eps);
            inv_sd[i] = inv;
            for (Index j = 0; j < n; ++j) {
                const Real xh = (A(i, j) - mean) * inv;
                xhat(i, j) = xh;
                out(i, j) = g[j] * xh + b[j];
            }
        }
        return make(std::move(out), {a, gain, bias}, "layer_norm",
                    [this, a, gain, bias, xh = std::move(xhat),
                     inv = std::move(inv_sd)](const Node& o) {
                        const Tensor<Real>& g = val(gain);
                        const Tensor<Real>& G = o.grad;
                        const Index m = G.dim(0), n = G.dim(1);
                        if (node(gain).requires_grad) {
                            Tensor<Real>& dg = node(gain).grad;
                            for (Index i = 0; i < m; ++i)
                                for (Index j = 0; j < n; ++j) dg[j] += G(i, j) * xh(i, j);
                        }
                        if (node(bias).requires_grad) {
                            Tensor<Real>& db = node(bias).grad;
                            for (Index i = 0; i < m; ++i)
                                for (Index j = 0; j < n; ++j) db[j] += G(i, j);
                        }
                        if (node(a).requires_grad) {
                            Tensor<Real>& dA = node(a).grad;
                            for (Index i = 0; i < m; ++i) {
                                Real mean_t = 0, mean_tx = 0;
                                for (Index j = 0; j < n; ++j) {
                                    const Real t = G(i, j) * g[j];
                                    mean_t += t;
                                    mean_tx += t * xh(i, j);
                                }
                                mean_t /= static_cast<Real>(n);
                                mean_tx /= static_cast<Real>(n);
                                for (Index j = 0; j < n; ++j) {
                                    const Real t = G(i, j) * g[j];
                                    dA(i, j) += (t - mean_t - xh(i, j) * mean_tx) * inv[i];
                                }
                            }
                        }
                    });
    }

    /// Add a 1-D row vector (length n) to every row of a 2-D [m x n] tensor.
    VarId add_rowvec(VarId a, VarId v) {
        const Tensor<Real>&A = val(a), &V = val(v);
        require_rank(A, 2, "add_rowvec input");
        if (V.size() != A.dim(1))
            throw DimensionError("add_rowvec: vector length " + std::to_string(V.size()) +
                                 " does not match width " + std::to_string(A.dim(1)));
        Tensor<Real> out = A;
        for (Index i = 0; i < A.dim(0); ++i)
            for (Index j = 0; j < A.dim(1); ++j) out(i, j) += V[j];
        return make(std::move(out), {a, v}, "add_rowvec", [this, a, v](const Node& o) {
            const Tensor<Real>& G = o.grad;
            if (node(a).requires_grad) {
                Tensor<Real>& dA = node(a).grad;
                for (Index i = 0; i < G.size(); ++i) dA[i] += G[i];
            }
            if (node(v).requires_grad) {
                Tensor<Real>& dV = node(v).grad;
                for (Index i = 0; i < G.dim(0); ++i)
                    for (Index j = 0; j < G.dim(1); ++j) dV[j] += G(i, j);
            }
        });
    }

    /// Columns [c0, c1) of a 2-D tensor.
    VarId slice_cols(VarId a, Index c0, Index c1) {
        const Tensor<Real>& A = val(a);
        require_rank(A, 2, "slice_cols");
        if (c0 < 0 || c1 > A.dim(1) || c0 >= c1)
            throw DimensionError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                 std::to_string(c1) + ") for " + shape_str(A.shape));
        Tensor<Real> out(Shape{A.dim(0), c1 - c0});
        for (Index i = 0; i < A.dim(0); ++i)
            for (Index j = c0; j < c1; ++j) out(i, j - c0) = A(i, j);
        return make(std::move(out), {a}, "slice_cols", [this, a, c0](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            const Tensor<Real>& G = o.grad;
            for (Index i = 0; i < G.dim(0); ++i)
                for (Index j = 0; j < G.dim(1); ++j) dA(i, c0 + j) += G(i, j);
        });
    }

    /// Rows [r0, r1) of a 2-D tensor.
    VarId slice_rows(VarId a, Index r0, Index r1) {
        const Tensor<Real>& A = val(a);
        require_rank(A, 2, "slice_rows");
        if (r0 < 0 || r1 > A.dim(0) || r0 >= r1)
            throw DimensionError("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                 std::to_string(r1) + ") for " + shape_str(A.shape));
        Tensor<Real> out(Shape{r1 - r0, A.dim(1)});
        for (Index i = r0; i < r1; ++i)
            for (Index j = 0; j < A.dim(1); ++j) out(i - r0, j) = A(i, j);
        return make(std::move(out), {a}, "slice_rows", [this, a, r0](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            const Tensor<Real>& G = o.grad;
            for (Index i = 0; i < G.dim(0); ++i)
                for (Index j = 0; j < G.dim(1); ++j) dA(r0 + i, j) += G(i, j);
        });
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    VarId concat_cols(const std::vector<VarId>& parts) {
        if (parts.empty()) throw DimensionError("concat_cols: no operands");
        const Index m = val(parts[0]).dim(0);
        Index total = 0;
        for (VarId p : parts) {
            require_rank(val(p), 2, "concat_cols operand");
            if (val(p).dim(0) != m) throw DimensionError("concat_cols: row counts differ");
            total += val(p).dim(1);
        }
        Tensor<Real> out(Shape{m, total});
        Index off = 0;
        for (VarId p : parts) {
            const Tensor<Real>& P = val(p);
            for (Index i = 0; i < m; ++i)
                for (Index j = 0; j < P.dim(1); ++j) out(i, off + j) = P(i, j);
            off += P.dim(1);
        }
        return make(std::move(out), parts, "concat_cols", [this, parts](const Node& o) {
            const Tensor<Real>& G = o.grad;
            Index off = 0;
            for (VarId p : parts) {
                const Index w = val(p).dim(1);
                if (node(p).requires_grad) {
                    Tensor<Real>& dP = node(p).grad;
                    for (Index i = 0; i < G.dim(0); ++i)
                        for (Index j = 0; j < w; ++j) dP(i, j) += G(i, off + j);
                }
                off += w;
            }
        });
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    VarId concat_rows(const std::vector<VarId>& parts) {
        if (parts.empty()) throw DimensionError("concat_rows: no operands");
        const Index n = val(parts[0]).dim(1);
        Index total = 0;
        for (VarId p : parts) {
            require_rank(val(p), 2, "concat_rows operand");
            if (val(p).dim(1) != n) throw DimensionError("concat_rows: column counts differ");
            total += val(p).dim(0);
        }
        Tensor<Real> out(Shape{total, n});
        Index off = 0;
        for (VarId p : parts) {
            const Tensor<Real>& P = val(p);
            for (Index i = 0; i < P.dim(0); ++i)
                for (Index j = 0; j < n; ++j) out(off + i, j) = P(i, j);
            off += P.dim(0);
        }
        return make(std::move(out), parts, "concat_rows", [this, parts](const Node& o) {
            const Tensor<Real>& G = o.grad;
            Index off = 0;
            for (VarId p : parts) {
                const Index h = val(p).dim(0);
                if (node(p).requires_grad) {
                    Tensor<Real>& dP = node(p).grad;
                    for (Index i = 0; i < h; ++i)
                        for (Index j = 0; j < G.dim(1); ++j) dP(i, j) += G(off + i, j);
                }
                off += h;
            }
        });
    }

    /// Same data, different shape (element count must match).
    VarId reshape(VarId a, Shape shape) {
        const Tensor<Real>& A = val(a);
        if (Tensor<Real>::count(shape) != A.size())
            throw DimensionError("reshape: element count changes, " + shape_str(A.shape) +
                                 " -> " + shape_str(shape));
        Tensor<Real> out(std::move(shape), A.data);
        return make(std::move(out), {a}, "reshape", [this, a](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            for (Index i = 0; i < o.grad.size(); ++i) dA[i] += o.grad[i];
        });
    }

    /// Sum of all elements; yields a scalar (shape []).
    VarId sum(VarId a) {
        const Tensor<Real>& A = val(a);
        Real acc = 0;
        for (Real v : A.data) acc += v;
        return make(Tensor<Real>::scalar(acc), {a}, "sum", [this, a](const Node& o) {
            Tensor<Real>& dA = node(a).grad;
            const Real g = o.grad[0];
            for (Index i = 0; i < dA.size(); ++i) dA[i] += g;
        });
    }

    /// Reverse sweep from a scalar root, seeding with d(root)/d(root) = 1.
    void backward(VarId root) {
        if (!val(root).is_scalar())
            throw DimensionError("backward without a seed requires a scalar root");
        backward(root, Tensor<Real>(val(root).shape, std::vector<Real>{Real(1)}));
    }

    /// Reverse sweep with an explicit cotangent seed (vector-Jacobian product).
    void backward(VarId root, const Tensor<Real>& seed) {
        Node& r = node(root);
        if (!r.requires_grad)
            throw DimensionError("backward from a node that does not track gradients");
        if (!seed.same_shape(r.value))
            throw DimensionError("backward: seed shape " + shape_str(seed.shape) +
                                 " does not match root " + shape_str(r.value.shape));
        for (Node& n : nodes_)
            if (n.requires_grad) n.grad = Tensor<Real>(n.value.shape);
        r.grad = seed;
        for (VarId id = root; id >= 0; --id) {
            Node& n = node(id);
            if (n.requires_grad && n.pull) n.pull(n);
        }
    }

private:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;
        bool requires_grad = false;
        std::function<void(const Node&)> pull;
    };

    Node& node(VarId id) {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw DimensionError("invalid tape node id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& node(VarId id) const { return const_cast<Tape*>(this)->node(id); }

    VarId push(Tensor<Real> value, bool requires_grad, std::function<void(const Node&)> pull) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.pull = std::move(pull);
        nodes_.push_back(std::move(n));
        return static_cast<VarId>(nodes_.size() - 1);
    }

    template <class Pull>
    VarId make(Tensor<Real> value, const std::vector<VarId>& parents, const char* op,
               Pull&& pull) {
        require_finite(value, op);
        bool rg = false;
        for (VarId p : parents) rg = rg || node(p).requires_grad;
        return push(std::move(value), rg,
                    rg ? std::function<void(const Node&)>(std::forward<Pull>(pull))
                       : std::function<void(const Node&)>{});
    }

    /// Elementwise add/sub/mul with identical shapes or a size-1 operand.
    VarId binary(VarId a, VarId b, const char* op) {
        const Tensor<Real>&A = val(a), &B = val(b);
        const bool as = A.is_scalar(), bs = B.is_scalar();
        if (!A.same_shape(B) && !as && !bs)
            throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(A.shape) +
                                 " vs " + shape_str(B.shape) + " (only size-1 broadcast)");
        const char kind = op[0];  // 'a', 's', 'm'
        const Tensor<Real>& big = (as && !bs) ? B : A;
        Tensor<Real> out(big.shape);
        for (Index i = 0; i < out.size(); ++i) {
            const Real x = A[as ? 0 : i], y = B[bs ? 0 : i];
            out[i] = kind == 'a' ? x + y : kind == 's' ? x - y : x * y;
        }
        return make(std::move(out), {a, b}, op, [this, a, b, kind](const Node& o) {
            const Tensor<Real>&A = val(a), &B = val(b), &G = o.grad;
            const bool as = A.is_scalar() && !G.is_scalar();
            const bool bs = B.is_scalar() && !G.is_scalar();
            if (node(a).requires_grad) {
                Tensor<Real>& dA = node(a).grad;
                for (Index i = 0; i < G.size(); ++i) {
                    const Real g = kind == 'm' ? G[i] * B[bs ? 0 : i] : G[i];
                    dA[as ? 0 : i] += g;
                }
            }
            if (node(b).requires_grad) {
                Tensor<Real>& dB = node(b).grad;
                for (Index i = 0; i < G.size(); ++i) {
                    Real g;
                    if (kind == 'm')
                        g = G[i] * A[as ? 0 : i];
                    else if (kind == 's')
                        g = -G[i];
                    else
                        g = G[i];
                    dB[bs ? 0 : i] += g;
                }
            }
        });
    }

    static Real gelu_fwd(Real x) {
        const double xd = static_cast<double>(x);
        return static_cast<Real>(0.5 * xd * (1.0 + std::erf(xd * 0.70710678118654752440)));
    }
    static Real gelu_bwd(Real x) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * 0.70710678118654752440));
        const double pdf = 0.39894228040143267794 * std::exp(-0.5 * xd * xd);
        return static_cast<Real>(cdf + xd * pdf);
    }

    std::vector<Node> nodes_;
};

}  // namespace freezetst
