#pragma once

#include <cmath>
#include <string>

#include "freezetst/digest.hpp"
#include "freezetst/linalg.hpp"
#include "freezetst/param.hpp"
#include "freezetst/rng.hpp"
#include "freezetst/tape.hpp"

namespace freezetst {

enum class ReservoirActivation { tanh, identity, scaled_tanh };

inline ReservoirActivation parse_reservoir_activation(const std::string& s) {
    if (s == "tanh") return ReservoirActivation::tanh;
    if (s == "identity") return ReservoirActivation::identity;
    if (s == "scaled_tanh") return ReservoirActivation::scaled_tanh;
    throw ConfigError("unknown reservoir activation '" + s +
                      "' (expected tanh, identity or scaled_tanh)");
}

template <class Real>
struct ReservoirConfig {
    Index size = 500;                                      ///< units N_h
    Real alpha = Real(0.9);                                ///< recurrent scale target, in (0,1)
    Real leak = Real(0.99);                                ///< state interpolation weight, in (0,1]
    ReservoirActivation phi = ReservoirActivation::tanh;   ///< state nonlinearity
    Real phi_scale = Real(1);                              ///< slope bound for scaled_tanh
    Real input_scale = Real(1);
    std::uint64_t seed = 1;
    /// Ablation switch: scale the recurrent matrix by its spectral radius
    /// instead of its spectral norm. The contraction guarantee only holds in
    /// norm mode.
    bool radius_scaling = false;

    /// Slope bound of the configured nonlinearity.
    Real l_phi() const {
        return phi == ReservoirActivation::scaled_tanh ? phi_scale : Real(1);
    }

    void validate() const {
        if (size < 1) throw ConfigError("reservoir: size must be >= 1");
        if (!(alpha > Real(0) && alpha < Real(1)))
            throw ConfigError("reservoir: alpha must lie in (0, 1)");
        if (!(leak > Real(0) && leak <= Real(1)))
            throw ConfigError("reservoir: leak must lie in (0, 1]");
        if (!(phi_scale > Real(0) && phi_scale <= Real(1)))
            throw ConfigError("reservoir: declared slope bound must lie in (0, 1]");
        if (!(input_scale > Real(0)))
            throw ConfigError("reservoir: input_scale must be positive");
    }
};

/// Spectral radius estimate by plain power iteration with geometric averaging
/// of the growth factor over the trailing iterations; handles the rotating
/// convergence of complex dominant pairs. Approximate, used only by the
/// ablation scaling mode.
template <class Real>
Real spectral_radius_estimate(const Tensor<Real>& a, int iters = 1000,
                              std::uint64_t seed = 0x5eed) {
    require_rank(a, 2, "spectral_radius_estimate");
    if (a.dim(0) != a.dim(1))
        throw DimensionError("spectral_radius_estimate: matrix must be square");
    Rng rng(seed);
    Tensor<Real> v = fill_normal<Real>(rng, Shape{a.dim(0)});
    Real vn = norm2(v);
    for (Index i = 0; i < v.size(); ++i) v[i] /= vn;
    const int tail = iters / 4;
    double log_sum = 0;
    int counted = 0;
    for (int it = 0; it < iters; ++it) {
        Tensor<Real> w = matvec(a, v);
        const Real g = norm2(w);
        if (g == Real(0)) return 0;
        for (Index i = 0; i < w.size(); ++i) w[i] /= g;
        v = std::move(w);
        if (it >= iters - tail) {
            log_sum += std::log(static_cast<double>(g));
            ++counted;
        }
    }
    return static_cast<Real>(std::exp(log_sum / counted));
}

/// Echo-state component: fixed random recurrence over patch tokens with one
/// trainable linear read-out back to model width. The recurrence is a fixed
/// feature map: states are computed outside the tape, so training touches
/// only the read-out (classic echo-state training) and no gradient crosses
/// the reservoir toward earlier layers.
template <class Real>
struct Reservoir {
    ReservoirConfig<Real> cfg;
    Index d_model = 0;
    Tensor<Real> w_res;   ///< [N_h x N_h], fixed
    Tensor<Real> w_in;    ///< [N_h x d_model], fixed
    Tensor<Real> b;       ///< [N_h], fixed
    Param<Real> w_out;    ///< [d_model x N_h], trainable read-out
    Tensor<Real> state;   ///< current h, [N_h]

    void reset() { state = Tensor<Real>(Shape{cfg.size}); }

    Real apply_phi(Real x) const {
        switch (cfg.phi) {
            case ReservoirActivation::tanh: return std::tanh(x);
            case ReservoirActivation::identity: return x;
            case ReservoirActivation::scaled_tanh: return cfg.phi_scale * std::tanh(x);
        }
        return x;
    }

    /// One leaky-integrator update: h <- (1-leak) h + leak phi(Wr h + Wi z + b).
    void step(const Tensor<Real>& z_t) {
        if (z_t.size() != d_model)
            throw DimensionError("reservoir step: input length " + std::to_string(z_t.size()) +
                                 " does not match width " + std::to_string(d_model));
        Tensor<Real> next(Shape{cfg.size});
        for (Index i = 0; i < cfg.size; ++i) {
            Real pre = b[i];
            for (Index j = 0; j < cfg.size; ++j) pre += w_res(i, j) * state[j];
            for (Index j = 0; j < d_model; ++j) pre += w_in(i, j) * z_t[j];
            next[i] = (Real(1) - cfg.leak) * state[i] + cfg.leak * apply_phi(pre);
        }
        state = std::move(next);
    }

    /// Run the recurrence over a token sequence [N x d_model] (state reset
    /// first) and read every state out: output token i = W_out h_i. The state
    /// sequence enters the tape as a constant, so the only gradient path is
    /// through W_out.
    int layer_forward(Tape<Real>& tape, Binder<Real>& bind, int tokens) {
        const Tensor<Real>& z = tape.val(tokens);
        require_rank(z, 2, "reservoir layer tokens");
        const Index n = z.dim(0);
        reset();
        Tensor<Real> states(Shape{n, cfg.size});
        Tensor<Real> z_t(Shape{d_model});
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < d_model; ++j) z_t[j] = z(i, j);
            step(z_t);
            for (Index j = 0; j < cfg.size; ++j) states(i, j) = state[j];
        }
        return tape.matmul(tape.constant(std::move(states)), tape.transpose(bind(w_out)));
    }

    /// Digest over the fixed tensors; training must never change it.
    std::string fixed_digest() const {
        DigestBuilder d;
        d.update_tensor(w_res);
        d.update_tensor(w_in);
        d.update_tensor(b);
        return d.hex();
    }
};

/// Draw and scale the reservoir. The recurrent matrix is Gaussian rescaled by
/// alpha / (its own spectral-norm estimate) with a deterministic estimator,
/// so re-estimating the scaled matrix lands on alpha to float precision.
template <class Real>
Reservoir<Real> build_reservoir(const ReservoirConfig<Real>& cfg, Index d_model) {
    cfg.validate();
    if (d_model < 1) throw ConfigError("build_reservoir: d_model must be >= 1");
    Reservoir<Real> r;
    r.cfg = cfg;
    r.d_model = d_model;
    Rng rng(cfg.seed);
    r.w_res = fill_normal<Real>(rng, Shape{cfg.size, cfg.size});
    const Real measure = cfg.radius_scaling
                             ? spectral_radius_estimate(r.w_res)
                             : spectral_norm_estimate(r.w_res, 500, Real(0));
    if (measure == Real(0))
        throw NumericError("build_reservoir: degenerate recurrent draw (zero norm)");
    const Real factor = cfg.alpha / measure;
    for (Real& v : r.w_res.data) v *= factor;
    r.w_in = fill_normal<Real>(rng, Shape{cfg.size, d_model});
    for (Real& v : r.w_in.data) v *= cfg.input_scale;
    r.b = fill_uniform<Real>(rng, Shape{cfg.size}, Real(-0.1), Real(0.1));
    r.w_out.name = "reservoir_w_out";
    r.w_out.value = xavier_init<Real>(rng, d_model, cfg.size);
    r.w_out.trainable = true;
    r.reset();
    return r;
}

}  // namespace freezetst
