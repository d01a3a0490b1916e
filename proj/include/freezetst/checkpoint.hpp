#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "freezetst/model.hpp"

namespace freezetst {

namespace detail {

template <class Real>
nlohmann::json tensor_to_json(const Tensor<Real>& t) {
    nlohmann::json j;
    j["shape"] = t.shape;
    std::vector<double> data(t.data.begin(), t.data.end());
    j["data"] = data;
    return j;
}

template <class Real>
Tensor<Real> tensor_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.contains("shape") || !j.contains("data"))
        throw ConfigError("checkpoint: malformed tensor entry for " + what);
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != Tensor<Real>::count(shape))
        throw ConfigError("checkpoint: size mismatch for " + what);
    std::vector<Real> cast(data.begin(), data.end());
    return Tensor<Real>(std::move(shape), std::move(cast));
}

}  // namespace detail

template <class Real>
nlohmann::json model_config_to_json(const ModelConfig<Real>& c) {
    nlohmann::json j;
    j["lookback"] = c.patch.lookback;
    j["patch_len"] = c.patch.patch_len;
    j["stride"] = c.patch.stride;
    j["d_model"] = c.patch.d_model;
    j["horizon"] = c.horizon;
    j["channels"] = c.channels;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["activation"] = c.activation == Activation::gelu ? "gelu" : "relu";
    j["freeze_scheme"] = freeze_scheme_name(c.scheme);
    j["freeze_embedding"] = c.freeze_embedding;
    j["flatten_head"] = c.flatten_head;
    j["use_reservoir"] = c.use_reservoir;
    j["reservoir_size"] = c.reservoir.size;
    j["reservoir_alpha"] = static_cast<double>(c.reservoir.alpha);
    j["reservoir_leak"] = static_cast<double>(c.reservoir.leak);
    j["reservoir_activation"] = c.reservoir.phi == ReservoirActivation::tanh ? "tanh"
                                : c.reservoir.phi == ReservoirActivation::identity
                                    ? "identity"
                                    : "scaled_tanh";
    j["reservoir_phi_scale"] = static_cast<double>(c.reservoir.phi_scale);
    j["reservoir_input_scale"] = static_cast<double>(c.reservoir.input_scale);
    j["reservoir_radius_scaling"] = c.reservoir.radius_scaling;
    j["reservoir_position"] = c.reservoir_position;
    j["rescale_probe_budget"] = c.rescale_probe_budget;
    j["rescale_frozen"] = c.rescale_frozen;
    j["seed"] = c.seed;
    return j;
}

template <class Real>
ModelConfig<Real> model_config_from_json(const nlohmann::json& j) {
    ModelConfig<Real> c;
    c.patch.lookback = j.at("lookback").get<Index>();
    c.patch.patch_len = j.at("patch_len").get<Index>();
    c.patch.stride = j.at("stride").get<Index>();
    c.patch.d_model = j.at("d_model").get<Index>();
    c.horizon = j.at("horizon").get<Index>();
    c.channels = j.at("channels").get<Index>();
    c.n_layers = j.at("n_layers").get<Index>();
    c.n_heads = j.at("n_heads").get<Index>();
    c.d_ff = j.at("d_ff").get<Index>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.scheme = parse_freeze_scheme(j.at("freeze_scheme").get<std::string>());
    c.freeze_embedding = j.at("freeze_embedding").get<bool>();
    c.flatten_head = j.at("flatten_head").get<bool>();
    c.use_reservoir = j.at("use_reservoir").get<bool>();
    c.reservoir.size = j.at("reservoir_size").get<Index>();
    c.reservoir.alpha = static_cast<Real>(j.at("reservoir_alpha").get<double>());
    c.reservoir.leak = static_cast<Real>(j.at("reservoir_leak").get<double>());
    c.reservoir.phi = parse_reservoir_activation(j.at("reservoir_activation").get<std::string>());
    c.reservoir.phi_scale = static_cast<Real>(j.at("reservoir_phi_scale").get<double>());
    c.reservoir.input_scale = static_cast<Real>(j.at("reservoir_input_scale").get<double>());
    c.reservoir.radius_scaling = j.at("reservoir_radius_scaling").get<bool>();
    c.reservoir_position = j.at("reservoir_position").get<Index>();
    c.rescale_probe_budget = j.at("rescale_probe_budget").get<int>();
    c.rescale_frozen = j.at("rescale_frozen").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

/// Stable names for the parameter slots, index-aligned with
/// Model::parameters().
template <class Real>
std::vector<std::string> checkpoint_param_names(const Model<Real>& m) {
    std::vector<std::string> names{"embed_w", "embed_b"};
    for (std::size_t i = 0; i < m.stack.blocks.size(); ++i)
        for (const Param<Real>* p : m.stack.blocks[i].params())
            names.push_back("block" + std::to_string(i) + "." + p->name);
    if (m.reservoir) names.push_back("reservoir_w_out");
    names.push_back("head_w");
    names.push_back("head_b");
    return names;
}

/// Self-describing snapshot: config, seed, freeze mask, block scales, every
/// parameter at 64-bit, and the reservoir's fixed tensors. Keys serialize in
/// sorted order, so identical models produce identical bytes.
template <class Real>
nlohmann::json checkpoint_to_json(const Model<Real>& m) {
    nlohmann::json j;
    j["format"] = "freezetst-checkpoint";
    j["version"] = 1;
    j["config"] = model_config_to_json(m.cfg);
    j["seed"] = m.cfg.seed;
    j["rescaled"] = m.cfg.rescale_frozen;
    j["freeze_mask"] = m.stack.freeze_mask();
    std::vector<double> scales;
    for (const auto& b : m.stack.blocks) scales.push_back(static_cast<double>(b.block_scale));
    j["block_scales"] = scales;
    j["frozen_digest"] = m.frozen_digest();

    nlohmann::json params;
    const std::vector<std::string> names = checkpoint_param_names(m);
    const std::vector<const Param<Real>*> ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i)
        params[names[i]] = detail::tensor_to_json(ps[i]->value);
    j["params"] = params;

    if (m.reservoir) {
        nlohmann::json fixed;
        fixed["w_res"] = detail::tensor_to_json(m.reservoir->w_res);
        fixed["w_in"] = detail::tensor_to_json(m.reservoir->w_in);
        fixed["b"] = detail::tensor_to_json(m.reservoir->b);
        j["reservoir_fixed"] = fixed;
    }
    return j;
}

template <class Real>
void save_checkpoint(const Model<Real>& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("checkpoint: cannot write '" + path + "'");
    out << checkpoint_to_json(m).dump(2) << '\n';
}

/// Rebuild the model from a snapshot without re-running initialization or
/// rescaling; every tensor comes from the file.
template <class Real>
Model<Real> load_checkpoint_json(const nlohmann::json& j) {
    if (!j.contains("format") || j.at("format") != "freezetst-checkpoint")
        throw ConfigError("checkpoint: unrecognized format");
    ModelConfig<Real> cfg = model_config_from_json<Real>(j.at("config"));

    // Build the structure cheaply: skip the probe-based rescaling pass, then
    // restore the recorded scales and tensors verbatim.
    ModelConfig<Real> skeleton = cfg;
    skeleton.rescale_frozen = false;
    Model<Real> m = build_model(skeleton);
    m.cfg = cfg;

    const std::vector<bool> mask = j.at("freeze_mask").get<std::vector<bool>>();
    const std::vector<double> scales = j.at("block_scales").get<std::vector<double>>();
    if (mask.size() != m.stack.blocks.size() || scales.size() != m.stack.blocks.size())
        throw ConfigError("checkpoint: freeze mask / scales length mismatch");
    for (std::size_t i = 0; i < m.stack.blocks.size(); ++i) {
        if (mask[i] != m.stack.blocks[i].frozen)
            throw ConfigError("checkpoint: freeze mask disagrees with scheme");
        m.stack.blocks[i].block_scale = static_cast<Real>(scales[i]);
    }

    const nlohmann::json& params = j.at("params");
    const std::vector<std::string> names = checkpoint_param_names(m);
    std::vector<Param<Real>*> ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!params.contains(names[i]))
            throw ConfigError("checkpoint: missing parameter " + names[i]);
        Tensor<Real> t = detail::tensor_from_json<Real>(params.at(names[i]), names[i]);
        if (t.shape != ps[i]->value.shape)
            throw ConfigError("checkpoint: shape mismatch for " + names[i]);
        ps[i]->value = std::move(t);
    }

    if (m.reservoir) {
        if (!j.contains("reservoir_fixed"))
            throw ConfigError("checkpoint: missing reservoir tensors");
        const nlohmann::json& fixed = j.at("reservoir_fixed");
        m.reservoir->w_res = detail::tensor_from_json<Real>(fixed.at("w_res"), "w_res");
        m.reservoir->w_in = detail::tensor_from_json<Real>(fixed.at("w_in"), "w_in");
        m.reservoir->b = detail::tensor_from_json<Real>(fixed.at("b"), "b");
        m.reservoir->reset();
    }
    return m;
}

template <class Real>
Model<Real> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("checkpoint: cannot read '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: invalid JSON in '" + path + "': " + e.what());
    }
    return load_checkpoint_json<Real>(j);
}

}  // namespace freezetst
