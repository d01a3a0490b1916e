#pragma once

#include <optional>
#include <string>
#include <vector>

#include "freezetst/encoder.hpp"
#include "freezetst/patching.hpp"
#include "freezetst/reservoir.hpp"

namespace freezetst {

/// Everything needed to construct the forecaster deterministically from one
/// seed: patching geometry, encoder stack shape, freeze scheme, optional
/// echo-state insert, and head layout.
template <class Real>
struct ModelConfig {
    PatchConfig patch;
    Index horizon = 16;
    Index channels = 1;
    Index n_layers = 4;
    Index n_heads = 4;
    Index d_ff = 128;
    Activation activation = Activation::gelu;
    FreezeScheme scheme = FreezeScheme::F0;
    bool freeze_embedding = false;
    bool flatten_head = false;
    bool use_reservoir = false;
    ReservoirConfig<Real> reservoir;
    /// Blocks run before the echo-state insert; -1 places it after the
    /// ceil(L/2)-th block.
    Index reservoir_position = -1;
    /// Probe pairs spent estimating each frozen block's expansion when
    /// computing its contraction scale.
    int rescale_probe_budget = 256;
    /// Leave frozen blocks at unit scale (diagnostic runs only; the
    /// non-expansiveness contract then does not hold).
    bool rescale_frozen = true;
    std::uint64_t seed = 1;

    Index reservoir_insert_after() const {
        return reservoir_position >= 0 ? reservoir_position : (n_layers + 1) / 2;
    }

    void validate() const {
        patch.validate();
        if (horizon < 1) throw ConfigError("model: horizon must be >= 1");
        if (channels < 1) throw ConfigError("model: channels must be >= 1");
        if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
        if (n_heads < 1) throw ConfigError("model: n_heads must be >= 1");
        if (patch.d_model % n_heads != 0)
            throw ConfigError("model: d_model must be divisible by n_heads");
        if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
        if (rescale_probe_budget < 2)
            throw ConfigError("model: rescale_probe_budget must be >= 2");
        if (use_reservoir) {
            reservoir.validate();
            if (reservoir_insert_after() < 0 || reservoir_insert_after() > n_layers)
                throw ConfigError("model: reservoir_position must lie in [0, n_layers]");
        }
    }
};

/// Patch forecaster: shared linear patch embedding, sinusoidal positions,
/// the encoder stack (frozen blocks contraction-scaled at build time),
/// an optional echo-state layer, and a forecast head. Channels share every
/// parameter and are processed independently.
template <class Real>
struct Model {
    ModelConfig<Real> cfg;
    Param<Real> embed_w;     ///< [d_model x patch_len]
    Param<Real> embed_b;     ///< [d_model]
    Tensor<Real> pos_table;  ///< [n_tokens x d_model], fixed
    EncoderStack<Real> stack;
    std::optional<Reservoir<Real>> reservoir;
    ForecastHead<Real> head;

    Index n_tokens() const { return cfg.patch.num_patches(); }

    /// All learned-parameter slots in a fixed order (frozen ones included;
    /// fixed tensors such as the positional table and the reservoir's random
    /// matrices are constants, not parameters).
    std::vector<Param<Real>*> parameters() {
        std::vector<Param<Real>*> out{&embed_w, &embed_b};
        for (auto& b : stack.blocks)
            for (Param<Real>* p : b.params()) out.push_back(p);
        if (reservoir) out.push_back(&reservoir->w_out);
        out.push_back(&head.w);
        out.push_back(&head.b);
        return out;
    }
    std::vector<const Param<Real>*> parameters() const {
        auto* self = const_cast<Model*>(this);
        std::vector<Param<Real>*> mut = self->parameters();
        return {mut.begin(), mut.end()};
    }

    /// One channel's tokens [N x d_model] through the stack with the
    /// echo-state layer spliced in at its configured depth.
    int channel_forward(Tape<Real>& tape, Binder<Real>& bind, int z) {
        const Index insert_after = cfg.reservoir_insert_after();
        for (Index i = 0; i < static_cast<Index>(stack.blocks.size()); ++i) {
            if (reservoir && i == insert_after) z = reservoir->layer_forward(tape, bind, z);
            z = stack.blocks[static_cast<std::size_t>(i)].forward(tape, bind, z);
        }
        if (reservoir && insert_after == static_cast<Index>(stack.blocks.size()))
            z = reservoir->layer_forward(tape, bind, z);
        return z;
    }

    /// Whole window [T x d] to a [d x horizon] prediction variable, one row
    /// per channel.
    int forward_window(Tape<Real>& tape, Binder<Real>& bind, const Tensor<Real>& window) {
        Tensor<Real> patches = extract_patches(window, cfg.patch);
        const Index d = patches.dim(0), n = patches.dim(1), p = patches.dim(2);
        const int we = bind(embed_w);
        const int be = bind(embed_b);
        const int pos = tape.constant(pos_table);
        std::vector<int> rows;
        rows.reserve(static_cast<std::size_t>(d));
        for (Index c = 0; c < d; ++c) {
            Tensor<Real> pc(Shape{n, p});
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < p; ++j) pc(i, j) = patches(c, i, j);
            int z = embed_channel(tape, tape.constant(std::move(pc)), we, be, pos);
            z = channel_forward(tape, bind, z);
            rows.push_back(head.forward(tape, bind, z));
        }
        return rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
    }

    /// Inference: window [T x d] to forecasts [horizon x d].
    Tensor<Real> predict(const Tensor<Real>& window) {
        Tape<Real> tape;
        Binder<Real> bind(tape);
        const int out = forward_window(tape, bind, window);
        return transpose_value(tape.val(out));
    }

    /// Digest over everything training must never touch: frozen encoder
    /// blocks (with their scales), the reservoir's fixed tensors, and the
    /// embedding when it is frozen.
    std::string frozen_digest() const {
        DigestBuilder d;
        const std::string enc = freezetst::frozen_digest(stack.blocks);
        d.update_bytes(enc.data(), enc.size());
        if (reservoir) {
            const std::string res = reservoir->fixed_digest();
            d.update_bytes(res.data(), res.size());
        }
        if (cfg.freeze_embedding) {
            d.update_tensor(embed_w.value);
            d.update_tensor(embed_b.value);
        }
        return d.hex();
    }
};

/// Deterministic build: draw parameters from the init stream, apply the
/// freeze scheme, then contraction-scale every frozen block with probes from
/// the probe stream.
template <class Real>
Model<Real> build_model(const ModelConfig<Real>& cfg) {
    cfg.validate();
    Model<Real> m;
    m.cfg = cfg;
    Rng init(derive_seed(cfg.seed, Stream::init));

    const Index dm = cfg.patch.d_model, p = cfg.patch.patch_len, n = cfg.patch.num_patches();
    m.embed_w.name = "embed_w";
    m.embed_w.value = xavier_init<Real>(init, dm, p);
    m.embed_b.name = "embed_b";
    m.embed_b.value = Tensor<Real>(Shape{dm});
    m.pos_table = positional_table<Real>(n, dm);

    m.stack.scheme = cfg.scheme;
    m.stack.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    const std::vector<bool> mask = plan_freeze_scheme(cfg.scheme, static_cast<int>(cfg.n_layers));
    for (Index i = 0; i < cfg.n_layers; ++i) {
        auto& b = m.stack.blocks[static_cast<std::size_t>(i)];
        b.d_model = dm;
        b.n_heads = cfg.n_heads;
        b.d_ff = cfg.d_ff;
        b.activation = cfg.activation;
        b.init(init);
    }

    m.head.horizon = cfg.horizon;
    m.head.flatten = cfg.flatten_head;
    m.head.init(init, dm, n);

    if (cfg.use_reservoir) {
        ReservoirConfig<Real> rc = cfg.reservoir;
        rc.seed = derive_seed(cfg.seed, Stream::reservoir);
        m.reservoir = build_reservoir(rc, dm);
    }

    for (Index i = 0; i < cfg.n_layers; ++i)
        if (mask[static_cast<std::size_t>(i)]) m.stack.blocks[static_cast<std::size_t>(i)].freeze();

    // Start trainable weights inside the region the per-step projection
    // enforces, so the calibration below sees the constrained stack.
    for (auto& b : m.stack.blocks)
        if (!b.frozen) project_spectral(b);

    if (cfg.rescale_frozen) {
        // Calibrate in stack order against the composed prefix ending at each
        // frozen block. Solo calibration is not enough: raw Gaussian probes
        // underestimate blocks deep in the stack, whose layer norms amplify
        // the smaller rows the preceding scaled blocks emit.
        Rng probes(derive_seed(cfg.seed, Stream::probes));
        auto& blocks = m.stack.blocks;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (!blocks[i].frozen) continue;
            TapeFn<Real> prefix;
            if (i > 0)
                prefix = [&blocks, i](Tape<Real>& tape, int z) {
                    Binder<Real> bind(tape);
                    for (std::size_t j = 0; j < i; ++j)
                        z = blocks[j].forward(tape, bind, z);
                    return z;
                };
            rescale_frozen_block(blocks[i], n, cfg.rescale_probe_budget, probes, prefix);
        }
    }

    if (cfg.freeze_embedding) {
        m.embed_w.trainable = false;
        m.embed_b.trainable = false;
    }
    return m;
}

/// Exact slot enumeration. total counts every learned-parameter slot,
/// trainable the currently updatable ones; ratio compares against the same
/// architecture with nothing frozen.
struct ParamCount {
    long long total = 0;
    long long trainable = 0;
    double ratio = 1.0;
};

template <class Real>
ParamCount count_parameters(const Model<Real>& m) {
    ParamCount c;
    for (const Param<Real>* p : m.parameters()) {
        c.total += p->value.size();
        if (p->trainable) c.trainable += p->value.size();
    }
    c.ratio = c.total == 0 ? 1.0
                           : static_cast<double>(c.trainable) / static_cast<double>(c.total);
    return c;
}

/// Encoder-only trainable slots (the quantity the freeze schemes halve).
template <class Real>
long long encoder_trainable_params(const Model<Real>& m) {
    long long n = 0;
    for (const auto& b : m.stack.blocks)
        for (const Param<Real>* p : b.params())
            if (p->trainable) n += p->value.size();
    return n;
}

}  // namespace freezetst
