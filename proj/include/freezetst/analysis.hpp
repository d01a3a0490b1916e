#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "freezetst/lipschitz.hpp"
#include "freezetst/reservoir.hpp"

namespace freezetst {

/// Per-step state contraction factor of the leaky echo-state update:
/// kappa = (1 - leak) + leak * alpha * l_phi. Values below 1 guarantee
/// geometric forgetting of input perturbations.
template <class Real>
Real compute_kappa(Real alpha, Real leak, Real l_phi) {
    if (!(alpha > Real(0) && alpha < Real(1)))
        throw ConfigError("compute_kappa: alpha must lie in (0, 1)");
    if (!(leak > Real(0) && leak <= Real(1)))
        throw ConfigError("compute_kappa: leak must lie in (0, 1]");
    if (!(l_phi > Real(0) && l_phi <= Real(1)))
        throw ConfigError("compute_kappa: l_phi must lie in (0, 1]");
    return (Real(1) - leak) + leak * alpha * l_phi;
}

template <class Real>
Real compute_kappa(const ReservoirConfig<Real>& cfg) {
    return compute_kappa(cfg.alpha, cfg.leak, cfg.l_phi());
}

/// Lag after which a size-C state perturbation is guaranteed below eps:
/// smallest integer tau with C * kappa^tau <= eps. Returns 0 when eps >= C
/// (already below threshold) and nullopt when kappa >= 1 (no finite horizon,
/// the contraction argument gives no forgetting guarantee).
inline std::optional<long> effective_receptive_field(double eps, double c, double kappa) {
    if (!(eps > 0)) throw ConfigError("effective_receptive_field: eps must be positive");
    if (!(c > 0)) throw ConfigError("effective_receptive_field: C must be positive");
    if (!(kappa > 0)) throw ConfigError("effective_receptive_field: kappa must be positive");
    if (eps >= c) return 0;
    if (kappa >= 1) return std::nullopt;
    return static_cast<long>(std::ceil(std::log(eps / c) / std::log(kappa)));
}

namespace detail {
inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Measured twin-trajectory divergence next to its geometric envelope.
/// Entry tau counts steps elapsed since the single perturbed input; the
/// envelope is accumulated as a running product (bound[0] = C,
/// bound[tau+1] = kappa * bound[tau]) so exactly-tight constructions compare
/// bit for bit.
struct ForgettingCurve {
    double kappa = 0;
    double c = 0;
    std::vector<long> taus;
    std::vector<double> divergences;
    std::vector<double> bound;

    /// Largest relative overshoot of the envelope, 0 when it holds everywhere.
    double max_violation() const {
        double worst = 0;
        for (std::size_t i = 0; i < divergences.size(); ++i)
            if (bound[i] > 0) worst = std::max(worst, divergences[i] / bound[i] - 1.0);
        return worst;
    }

    /// Number of entries exceeding the envelope by more than `slack` relative.
    long violations(double slack = 0) const {
        long n = 0;
        for (std::size_t i = 0; i < divergences.size(); ++i)
            if (divergences[i] > bound[i] * (1.0 + slack)) ++n;
        return n;
    }

    /// First lag at which the measured divergence drops to eps or below.
    std::optional<long> first_crossing(double eps) const {
        for (std::size_t i = 0; i < divergences.size(); ++i)
            if (divergences[i] <= eps) return taus[i];
        return std::nullopt;
    }

    std::string to_csv() const {
        std::string out = "tau,divergence,bound\n";
        for (std::size_t i = 0; i < taus.size(); ++i) {
            out += std::to_string(taus[i]);
            out += ',';
            out += detail::format_g17(divergences[i]);
            out += ',';
            out += detail::format_g17(bound[i]);
            out += '\n';
        }
        return out;
    }

    nlohmann::json summary(double eps) const {
        auto horizon = effective_receptive_field(eps, c, kappa);
        nlohmann::json j;
        j["kappa"] = kappa;
        j["C"] = c;
        j["eps"] = eps;
        j["L_eff"] = horizon ? nlohmann::json(*horizon) : nlohmann::json();
        j["max_violation"] = max_violation();
        j["violations"] = violations();
        if (auto cross = first_crossing(eps)) j["tau_star"] = *cross;
        return j;
    }
};

/// Drive two copies of a freshly built reservoir with an identical random
/// input stream except for one perturbed step, then record the state gap at
/// every later lag next to C * kappa^tau. C is the worst-case first-step gap
/// leak * ||W_in||_2 * perturb_mag with a tightly converged norm estimate.
template <class Real>
ForgettingCurve twin_trajectory_experiment(const ReservoirConfig<Real>& cfg, Index input_dim,
                                           Real perturb_mag, long t_max, std::uint64_t seed) {
    if (input_dim < 1) throw ConfigError("twin experiment: input_dim must be >= 1");
    if (t_max < 1) throw ConfigError("twin experiment: t_max must be >= 1");
    if (!(perturb_mag >= Real(0))) throw ConfigError("twin experiment: perturb_mag must be >= 0");

    ReservoirConfig<Real> rc = cfg;
    rc.seed = derive_seed(seed, Stream::reservoir);
    Reservoir<Real> base = build_reservoir(rc, input_dim);
    Reservoir<Real> twin = base;

    Rng rng(derive_seed(seed, Stream::analysis));
    Tensor<Real> delta = fill_normal<Real>(rng, Shape{input_dim});
    const Real dn = norm2(delta);
    for (Index i = 0; i < input_dim; ++i) delta[i] = delta[i] / dn * perturb_mag;

    ForgettingCurve curve;
    curve.kappa = static_cast<double>(compute_kappa(cfg));
    const Real w_in_norm = spectral_norm_estimate(base.w_in, 500, Real(0));
    curve.c = static_cast<double>(cfg.leak * w_in_norm * perturb_mag);

    // Perturbed step: both see z_1, the twin sees z_1 + delta.
    Tensor<Real> z = fill_normal<Real>(rng, Shape{input_dim});
    Tensor<Real> z_pert = z;
    for (Index i = 0; i < input_dim; ++i) z_pert[i] += delta[i];
    base.step(z);
    twin.step(z_pert);

    double envelope = curve.c;
    for (long tau = 0; tau < t_max; ++tau) {
        if (tau > 0) {
            z = fill_normal<Real>(rng, Shape{input_dim});
            base.step(z);
            twin.step(z);
        }
        Tensor<Real> gap = sub_value(twin.state, base.state);
        curve.taus.push_back(tau);
        curve.divergences.push_back(static_cast<double>(norm2(gap)));
        curve.bound.push_back(envelope);
        envelope = curve.kappa * envelope;
    }
    return curve;
}

/// One audited probe: gradient norms of the same scalar loss taken at the
/// map's input and at its output.
template <class Real>
struct GradAuditPair {
    Real input_grad_norm = 0;
    Real output_grad_norm = 0;
    Real ratio() const {
        return output_grad_norm == Real(0) ? Real(0) : input_grad_norm / output_grad_norm;
    }
};

/// Reverse-mode check that backpropagation through `fn` does not blow up:
/// for random Gaussian inputs and random quadratic targets, compares
/// ||d loss / d input|| against ||d loss / d output||. For a non-expansive
/// map the ratio stays at or below 1 up to estimator noise.
template <class Real>
std::vector<GradAuditPair<Real>> gradient_norm_audit(const TapeFn<Real>& fn,
                                                     const Shape& in_shape, int probe_count,
                                                     Rng& rng) {
    if (probe_count < 1) throw ConfigError("gradient_norm_audit: probe_count must be >= 1");
    std::vector<GradAuditPair<Real>> out;
    out.reserve(static_cast<std::size_t>(probe_count));
    for (int p = 0; p < probe_count; ++p) {
        Tensor<Real> z = fill_normal<Real>(rng, in_shape);
        Tape<Real> tape;
        const int zi = tape.leaf(z, true);
        const int y = fn(tape, zi);
        Tensor<Real> target = fill_normal<Real>(rng, tape.val(y).shape);
        const int diff = tape.sub(y, tape.constant(std::move(target)));
        const int loss = tape.sum(tape.mul(diff, diff));
        tape.backward(loss);
        GradAuditPair<Real> pair;
        pair.input_grad_norm = norm2(tape.grad(zi));
        pair.output_grad_norm = norm2(tape.grad(y));
        out.push_back(pair);
    }
    return out;
}

}  // namespace freezetst
