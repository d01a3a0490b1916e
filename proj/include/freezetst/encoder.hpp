#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "freezetst/digest.hpp"
#include "freezetst/linalg.hpp"
#include "freezetst/lipschitz.hpp"
#include "freezetst/param.hpp"
#include "freezetst/rng.hpp"
#include "freezetst/tape.hpp"

namespace freezetst {

enum class Activation { gelu, relu };

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "' (expected gelu or relu)");
}

/// Which encoder blocks are excluded from optimization.
enum class FreezeScheme { F0, Fall, Fa, F1, Ffl };

inline FreezeScheme parse_freeze_scheme(const std::string& s) {
    if (s == "F0") return FreezeScheme::F0;
    if (s == "Fall") return FreezeScheme::Fall;
    if (s == "Fa") return FreezeScheme::Fa;
    if (s == "F1") return FreezeScheme::F1;
    if (s == "Ffl") return FreezeScheme::Ffl;
    throw ConfigError("unknown freeze scheme '" + s + "' (expected F0, Fall, Fa, F1 or Ffl)");
}

inline std::string freeze_scheme_name(FreezeScheme s) {
    switch (s) {
        case FreezeScheme::F0: return "F0";
        case FreezeScheme::Fall: return "Fall";
        case FreezeScheme::Fa: return "Fa";
        case FreezeScheme::F1: return "F1";
        case FreezeScheme::Ffl: return "Ffl";
    }
    return "?";
}

/// Frozen-block mask for a depth-L stack, index 0 = first block.
/// Fa freezes the even 1-indexed positions (2, 4, ...), i.e. floor(L/2) blocks.
inline std::vector<bool> plan_freeze_scheme(FreezeScheme scheme, int layers) {
    if (layers < 1) throw ConfigError("plan_freeze_scheme: depth must be >= 1");
    std::vector<bool> mask(static_cast<std::size_t>(layers), false);
    switch (scheme) {
        case FreezeScheme::F0: break;
        case FreezeScheme::Fall:
            mask.assign(mask.size(), true);
            break;
        case FreezeScheme::Fa:
            for (int i = 1; i < layers; i += 2) mask[static_cast<std::size_t>(i)] = true;
            break;
        case FreezeScheme::F1:
            mask[0] = true;
            break;
        case FreezeScheme::Ffl:
            if (layers == 1)
                std::cerr << "warning: first+last freezing on a single block degenerates to "
                             "freezing that block\n";
            mask[0] = true;
            mask[static_cast<std::size_t>(layers - 1)] = true;
            break;
    }
    return mask;
}

/// Pre-norm Transformer encoder block over one channel's token matrix
/// [N x d_model]: out = scale * (A + FFN(LN2(A))), A = Z + MSA(LN1(Z)).
/// The whole-output scale is 1 for trainable blocks and is fixed once for
/// frozen blocks so the block cannot expand distances.
template <class Real>
struct EncoderBlock {
    Index d_model = 64;
    Index n_heads = 4;
    Index d_ff = 128;
    Activation activation = Activation::gelu;

    Param<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Param<Real> ln1_g, ln1_b, ln2_g, ln2_b;
    Param<Real> w1, b1, w2, b2;

    bool frozen = false;
    Real block_scale = Real(1);

    Index head_dim() const { return d_model / n_heads; }

    void init(Rng& rng) {
        if (d_model % n_heads != 0)
            throw ConfigError("encoder block: n_heads must divide d_model (" +
                              std::to_string(n_heads) + " vs " + std::to_string(d_model) + ")");
        auto mat = [&](Param<Real>& p, const char* name, Index out, Index in) {
            p.name = name;
            p.value = xavier_init<Real>(rng, out, in);
        };
        auto vec = [&](Param<Real>& p, const char* name, Index n, Real fill) {
            p.name = name;
            p.value = Tensor<Real>(Shape{n}, fill);
        };
        mat(wq, "wq", d_model, d_model);
        vec(bq, "bq", d_model, 0);
        mat(wk, "wk", d_model, d_model);
        vec(bk, "bk", d_model, 0);
        mat(wv, "wv", d_model, d_model);
        vec(bv, "bv", d_model, 0);
        mat(wo, "wo", d_model, d_model);
        vec(bo, "bo", d_model, 0);
        vec(ln1_g, "ln1_g", d_model, 1);
        vec(ln1_b, "ln1_b", d_model, 0);
        vec(ln2_g, "ln2_g", d_model, 1);
        vec(ln2_b, "ln2_b", d_model, 0);
        mat(w1, "w1", d_ff, d_model);
        vec(b1, "b1", d_ff, 0);
        mat(w2, "w2", d_model, d_ff);
        vec(b2, "b2", d_model, 0);
    }

    std::vector<Param<Real>*> params() {
        return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                &ln1_g, &ln1_b, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
    }
    std::vector<const Param<Real>*> params() const {
        return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                &ln1_g, &ln1_b, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
    }

    /// The 2-D weight matrices subject to spectral projection.
    std::vector<Param<Real>*> weight_matrices() { return {&wq, &wk, &wv, &wo, &w1, &w2}; }

    /// Mark every parameter constant. Layer-norm gains are clamped to unit
    /// magnitude so the affine part cannot re-expand what the block scale
    /// bounds.
    void freeze() {
        frozen = true;
        for (Param<Real>* p : params()) p->trainable = false;
        for (Param<Real>* g : {&ln1_g, &ln2_g})
            for (Real& v : g->value.data) v = std::clamp(v, Real(-1), Real(1));
    }

    int forward(Tape<Real>& tape, Binder<Real>& bind, int z) const {
        int ln1 = tape.layer_norm(z, bind(ln1_g), bind(ln1_b));
        int att = attention(tape, bind, ln1);
        int a = tape.add(z, att);
        int ln2 = tape.layer_norm(a, bind(ln2_g), bind(ln2_b));
        int ff = ffn(tape, bind, ln2);
        int out = tape.add(a, ff);
        return tape.scale(out, block_scale);
    }

    /// Value-level convenience used by probes and analysis.
    Tensor<Real> forward_value(const Tensor<Real>& z) const {
        Tape<Real> tape;
        Binder<Real> bind(tape);
        return tape.val(forward(tape, bind, tape.constant(z)));
    }

    TapeFn<Real> as_tape_fn() const {
        return [this](Tape<Real>& tape, int z) {
            Binder<Real> bind(tape);
            return forward(tape, bind, z);
        };
    }

private:
    int attention(Tape<Real>& tape, Binder<Real>& bind, int x) const {
        const Index dh = head_dim();
        int q = tape.add_rowvec(tape.matmul(x, tape.transpose(bind(wq))), bind(bq));
        int k = tape.add_rowvec(tape.matmul(x, tape.transpose(bind(wk))), bind(bk));
        int v = tape.add_rowvec(tape.matmul(x, tape.transpose(bind(wv))), bind(bv));
        std::vector<int> heads;
        heads.reserve(static_cast<std::size_t>(n_heads));
        const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
        for (Index h = 0; h < n_heads; ++h) {
            int qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            int kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            int vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            int scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            int attn = tape.softmax_rows(scores);
            heads.push_back(tape.matmul(attn, vh));
        }
        int ctx = n_heads == 1 ? heads[0] : tape.concat_cols(heads);
        return tape.add_rowvec(tape.matmul(ctx, tape.transpose(bind(wo))), bind(bo));
    }

    int ffn(Tape<Real>& tape, Binder<Real>& bind, int x) const {
        int h = tape.add_rowvec(tape.matmul(x, tape.transpose(bind(w1))), bind(b1));
        h = activation == Activation::gelu ? tape.gelu(h) : tape.relu(h);
        return tape.add_rowvec(tape.matmul(h, tape.transpose(bind(w2))), bind(b2));
    }
};

/// Fix the frozen block's output scale so its empirical Lipschitz constant
/// cannot exceed 1: scale = 1 / max(1, L-hat), with L-hat taken over probe
/// pairs, tightened by Jacobian power iteration at the worst probes, and
/// re-checked on the scaled block with fresh probes until no ratio above 1
/// remains. An optional prefix makes the estimate cover the composition of
/// the prefix and this block instead of the block alone; inside a stack this
/// is what keeps the whole frozen composition non-expansive, because a
/// block's local stretch depends on the scale of the inputs it actually
/// receives (layer norm amplifies small rows).
template <class Real>
void rescale_frozen_block(EncoderBlock<Real>& block, Index n_tokens, int probe_budget,
                          Rng& rng, const TapeFn<Real>& prefix = {}) {
    if (!block.frozen)
        throw ConfigError("rescale_frozen_block: block must be frozen first");
    block.block_scale = Real(1);
    const Shape in_shape{n_tokens, block.d_model};
    // With a prefix the measured map is the composition ending at this block,
    // probed at the composition's own input. The measurement stays exactly
    // linear in block_scale either way, so each correction divides it out.
    const TapeFn<Real> fn = [&block, &prefix](Tape<Real>& tape, int z) {
        if (prefix) z = prefix(tape, z);
        Binder<Real> bind(tape);
        return block.forward(tape, bind, z);
    };
    const int refine_top = 3;
    const Real lhat = refined_lipschitz<Real>(fn, in_shape, probe_budget, rng, refine_top);
    block.block_scale = Real(1) / std::max(Real(1), lhat);
    for (int round = 0; round < 8; ++round) {
        const Real check = refined_lipschitz<Real>(fn, in_shape, probe_budget, rng, refine_top);
        // 1e-8 absorbs finite-difference noise in the refinement; genuine
        // excess is far larger.
        if (check <= Real(1) + Real(1e-8)) return;
        // Overshoot the correction slightly so fresh-probe variance cannot
        // leave the resting point a hair above 1.
        block.block_scale /= (check * Real(1.03));
    }
}

/// Divide every 2-D weight matrix whose spectral-norm estimate exceeds 1 by
/// that estimate. Applied to trainable blocks after every optimizer step.
template <class Real>
void project_spectral(EncoderBlock<Real>& block) {
    if (block.frozen)
        throw ConfigError("project_spectral: frozen blocks are rescaled, not projected");
    for (Param<Real>* w : block.weight_matrices()) {
        const Real sigma = spectral_norm_estimate(w->value, 100, Real(1e-12));
        if (sigma > Real(1))
            for (Real& v : w->value.data) v /= sigma;
    }
}

/// Ordered encoder blocks with their freeze mask.
template <class Real>
struct EncoderStack {
    std::vector<EncoderBlock<Real>> blocks;
    FreezeScheme scheme = FreezeScheme::F0;

    std::vector<bool> freeze_mask() const {
        std::vector<bool> m;
        m.reserve(blocks.size());
        for (const auto& b : blocks) m.push_back(b.frozen);
        return m;
    }
};

/// Affine read-out from the encoder output to the forecast horizon, shared
/// across channels. Reads the last token by default; optionally flattens all
/// tokens first.
template <class Real>
struct ForecastHead {
    Param<Real> w;  // [horizon x in_width]
    Param<Real> b;  // [horizon]
    Index horizon = 16;
    bool flatten = false;

    void init(Rng& rng, Index d_model, Index n_tokens) {
        const Index in_width = flatten ? n_tokens * d_model : d_model;
        w.name = "head_w";
        w.value = xavier_init<Real>(rng, horizon, in_width);
        b.name = "head_b";
        b.value = Tensor<Real>(Shape{horizon});
    }

    /// tokens: [N x d_model] variable; returns [1 x horizon].
    int forward(Tape<Real>& tape, Binder<Real>& bind, int tokens) const {
        const Index n = tape.val(tokens).dim(0), dm = tape.val(tokens).dim(1);
        int x = flatten ? tape.reshape(tokens, Shape{1, n * dm})
                        : tape.slice_rows(tokens, n - 1, n);
        return tape.add_rowvec(tape.matmul(x, tape.transpose(bind(w))), bind(b));
    }
};

/// Apply every block in order to one channel's tokens.
template <class Real>
int channel_stack_forward(Tape<Real>& tape, Binder<Real>& bind,
                          const std::vector<EncoderBlock<Real>>& blocks, int z) {
    for (const auto& b : blocks) z = b.forward(tape, bind, z);
    return z;
}

/// Full per-channel pass: tokens [d x N x d_model] through the stack, head on
/// each channel's final hidden state, outputs assembled as [H x d].
template <class Real>
Tensor<Real> stack_forward(const EncoderStack<Real>& stack, const ForecastHead<Real>& head,
                           const Tensor<Real>& tokens) {
    require_rank(tokens, 3, "stack_forward tokens");
    const Index d = tokens.dim(0), n = tokens.dim(1), dm = tokens.dim(2);
    Tensor<Real> out(Shape{head.horizon, d});
    for (Index c = 0; c < d; ++c) {
        Tensor<Real> z(Shape{n, dm});
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < dm; ++j) z(i, j) = tokens(c, i, j);
        Tape<Real> tape;
        Binder<Real> bind(tape);
        int y = channel_stack_forward(tape, bind, stack.blocks, tape.constant(z));
        int f = head.forward(tape, bind, y);
        const Tensor<Real>& fc = tape.val(f);
        for (Index h = 0; h < head.horizon; ++h) out(h, c) = fc(0, h);
    }
    return out;
}

/// Digest of every frozen parameter in construction order, plus each frozen
/// block's output scale. Any bit flip in a frozen value changes the digest.
template <class Real>
std::string frozen_digest(const std::vector<EncoderBlock<Real>>& blocks) {
    DigestBuilder d;
    for (const auto& b : blocks) {
        if (!b.frozen) continue;
        d.update_double(static_cast<double>(b.block_scale));
        for (const Param<Real>* p : b.params()) d.update_tensor(p->value);
    }
    return d.hex();
}

}  // namespace freezetst
