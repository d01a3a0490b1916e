#pragma once

#include <cmath>

#include "freezetst/tape.hpp"
#include "freezetst/tensor.hpp"

namespace freezetst {

/// Windowing geometry for channel-independent patch tokenisation.
struct PatchConfig {
    Index lookback = 64;   ///< timesteps per input window
    Index patch_len = 16;  ///< timesteps per patch
    Index stride = 8;      ///< step between patch starts
    Index d_model = 64;    ///< embedding width of each token

    Index num_patches() const { return (lookback - patch_len) / stride + 1; }

    void validate() const {
        if (patch_len <= 0 || stride <= 0 || lookback <= 0 || d_model <= 0)
            throw ConfigError("patching: lookback, patch_len, stride and d_model must be positive");
        if (patch_len > lookback)
            throw ConfigError("patching: patch_len " + std::to_string(patch_len) +
                              " exceeds lookback " + std::to_string(lookback));
    }
};

/// Slice a [T x d] window into per-channel patch matrices, stacked [d, N, p].
/// Trailing timesteps that do not fill a whole patch are dropped.
template <class Real>
Tensor<Real> extract_patches(const Tensor<Real>& window, const PatchConfig& cfg) {
    cfg.validate();
    require_rank(window, 2, "extract_patches window");
    if (window.dim(0) != cfg.lookback)
        throw DimensionError("extract_patches: window has " + std::to_string(window.dim(0)) +
                             " timesteps, config expects " + std::to_string(cfg.lookback));
    const Index d = window.dim(1), n = cfg.num_patches(), p = cfg.patch_len;
    Tensor<Real> out(Shape{d, n, p});
    for (Index c = 0; c < d; ++c)
        for (Index i = 0; i < n; ++i)
            for (Index t = 0; t < p; ++t) out(c, i, t) = window(i * cfg.stride + t, c);
    return out;
}

/// Affine embedding of every patch with one projection shared across
/// channels: token = W_e * patch + b_e. Value-level form over the full
/// [d, N, p] stack; the training path builds the same map on the tape per
/// channel (embed_channel below) so gradients reach W_e and b_e.
template <class Real>
Tensor<Real> embed_patches(const Tensor<Real>& patches, const Tensor<Real>& embed_w,
                           const Tensor<Real>& embed_b) {
    require_rank(patches, 3, "embed_patches patches");
    require_rank(embed_w, 2, "embed_patches weight");
    const Index d = patches.dim(0), n = patches.dim(1), p = patches.dim(2);
    const Index width = embed_w.dim(0);
    if (embed_w.dim(1) != p)
        throw DimensionError("embed_patches: weight expects patch length " +
                             std::to_string(embed_w.dim(1)) + ", got " + std::to_string(p));
    if (embed_b.size() != width)
        throw DimensionError("embed_patches: bias length does not match embedding width");
    Tensor<Real> out(Shape{d, n, width});
    for (Index c = 0; c < d; ++c)
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < width; ++j) {
                Real acc = embed_b[j];
                for (Index t = 0; t < p; ++t) acc += embed_w(j, t) * patches(c, i, t);
                out(c, i, j) = acc;
            }
    return out;
}

/// Sinusoidal position table [n x width], sin/cos alternating by column
/// parity with wavelengths geometric in the base (default 1e4). Depends only
/// on the shape, never on data.
template <class Real>
Tensor<Real> positional_table(Index n, Index width, double base = 10000.0) {
    if (n <= 0 || width <= 0) throw DimensionError("positional_table: dimensions must be positive");
    Tensor<Real> out(Shape{n, width});
    for (Index pos = 0; pos < n; ++pos)
        for (Index j = 0; j < width; ++j) {
            const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(width);
            const double angle = static_cast<double>(pos) / std::pow(base, expo);
            out(pos, j) = static_cast<Real>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return out;
}

/// Add the positional table to every channel of a [d, N, width] token stack.
template <class Real>
Tensor<Real> add_positional(const Tensor<Real>& tokens, double base = 10000.0) {
    require_rank(tokens, 3, "add_positional tokens");
    const Index d = tokens.dim(0), n = tokens.dim(1), width = tokens.dim(2);
    const Tensor<Real> table = positional_table<Real>(n, width, base);
    Tensor<Real> out = tokens;
    for (Index c = 0; c < d; ++c)
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < width; ++j) out(c, i, j) += table(i, j);
    return out;
}

/// Tape form of embed + positional for one channel's patches [N x p]:
/// tokens = P W_e^T + b_e + pos. Returns a [N x d_model] variable.
template <class Real>
int embed_channel(Tape<Real>& tape, int patches_nx_p, int embed_w, int embed_b, int pos_table) {
    int proj = tape.matmul(patches_nx_p, tape.transpose(embed_w));
    int tok = tape.add_rowvec(proj, embed_b);
    return tape.add(tok, pos_table);
}

}  // namespace freezetst
