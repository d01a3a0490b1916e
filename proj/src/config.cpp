#include "freezetst/config.hpp"

#include <fstream>
#include <set>

namespace freezetst {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "data_kind",      "data_path",
        "date_column",    "timesteps",
        "channels",       "noise_std",
        "lookback",       "patch_len",
        "stride",         "d_model",
        "horizon",        "n_layers",
        "n_heads",        "d_ff",
        "activation",     "freeze_scheme",
        "freeze_embedding", "flatten_head",
        "use_reservoir",  "reservoir_size",
        "reservoir_alpha", "reservoir_leak",
        "reservoir_activation", "reservoir_phi_scale",
        "reservoir_input_scale", "reservoir_radius_scaling",
        "reservoir_position", "rescale_frozen",
        "rescale_probe_budget", "epochs",
        "batch_size",     "lr",
        "beta1",          "beta2",
        "adam_eps",       "patience",
        "min_delta",      "report_denormalized",
        "seed",           "out_dir",
        "sweep_seeds"};
    return keys;
}

long long get_int(const nlohmann::json& j, const char* key, long long fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer())
        throw ConfigError(std::string("config: field '") + key + "' must be an integer");
    return v.get<long long>();
}

double get_num(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number())
        throw ConfigError(std::string("config: field '") + key + "' must be a number");
    return v.get<double>();
}

bool get_bool(const nlohmann::json& j, const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_boolean())
        throw ConfigError(std::string("config: field '") + key + "' must be a boolean");
    return v.get<bool>();
}

std::string get_str(const nlohmann::json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_string())
        throw ConfigError(std::string("config: field '") + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
    for (const auto& item : j.items())
        if (!known_keys().count(item.key()))
            throw ConfigError("config: unknown key '" + item.key() + "'");

    RunConfig rc;
    rc.data_kind = get_str(j, "data_kind", rc.data_kind);
    rc.data_path = get_str(j, "data_path", rc.data_path);
    rc.date_column = get_bool(j, "date_column", rc.date_column);
    rc.timesteps = get_int(j, "timesteps", rc.timesteps);
    rc.noise_std = get_num(j, "noise_std", rc.noise_std);

    ModelConfig<double>& m = rc.model;
    m.patch.lookback = get_int(j, "lookback", 64);
    m.patch.patch_len = get_int(j, "patch_len", 16);
    m.patch.stride = get_int(j, "stride", 8);
    m.patch.d_model = get_int(j, "d_model", 64);
    m.horizon = get_int(j, "horizon", 16);
    m.channels = get_int(j, "channels", 1);
    m.n_layers = get_int(j, "n_layers", 4);
    m.n_heads = get_int(j, "n_heads", 4);
    m.d_ff = get_int(j, "d_ff", 128);
    m.activation = parse_activation(get_str(j, "activation", "gelu"));
    m.scheme = parse_freeze_scheme(get_str(j, "freeze_scheme", "F0"));
    m.freeze_embedding = get_bool(j, "freeze_embedding", false);
    m.flatten_head = get_bool(j, "flatten_head", false);
    m.use_reservoir = get_bool(j, "use_reservoir", false);
    m.reservoir.size = get_int(j, "reservoir_size", 64);
    m.reservoir.alpha = get_num(j, "reservoir_alpha", 0.9);
    m.reservoir.leak = get_num(j, "reservoir_leak", 0.99);
    m.reservoir.phi = parse_reservoir_activation(get_str(j, "reservoir_activation", "tanh"));
    m.reservoir.phi_scale = get_num(j, "reservoir_phi_scale", 1.0);
    m.reservoir.input_scale = get_num(j, "reservoir_input_scale", 1.0);
    m.reservoir.radius_scaling = get_bool(j, "reservoir_radius_scaling", false);
    m.reservoir_position = get_int(j, "reservoir_position", -1);
    m.rescale_frozen = get_bool(j, "rescale_frozen", true);
    m.rescale_probe_budget = static_cast<int>(get_int(j, "rescale_probe_budget", 256));

    TrainConfig<double>& t = rc.trainer;
    t.epochs = get_int(j, "epochs", 30);
    t.batch_size = get_int(j, "batch_size", 16);
    t.lr = get_num(j, "lr", 1e-3);
    t.beta1 = get_num(j, "beta1", 0.9);
    t.beta2 = get_num(j, "beta2", 0.999);
    t.adam_eps = get_num(j, "adam_eps", 1e-8);
    t.patience = get_int(j, "patience", 10);
    t.min_delta = get_num(j, "min_delta", 1e-5);
    t.report_denormalized = get_bool(j, "report_denormalized", false);

    const long long seed = get_int(j, "seed", 1);
    if (seed < 0) throw ConfigError("config: field 'seed' must be non-negative");
    rc.seed = static_cast<std::uint64_t>(seed);
    rc.model.seed = rc.seed;
    rc.trainer.seed = rc.seed;
    rc.out_dir = get_str(j, "out_dir", rc.out_dir);
    rc.sweep_seeds = static_cast<int>(get_int(j, "sweep_seeds", rc.sweep_seeds));
    return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = model_config_to_json(model);
    j["data_kind"] = data_kind;
    j["data_path"] = data_path;
    j["date_column"] = date_column;
    j["timesteps"] = timesteps;
    j["noise_std"] = noise_std;
    j["epochs"] = trainer.epochs;
    j["batch_size"] = trainer.batch_size;
    j["lr"] = trainer.lr;
    j["beta1"] = trainer.beta1;
    j["beta2"] = trainer.beta2;
    j["adam_eps"] = trainer.adam_eps;
    j["patience"] = trainer.patience;
    j["min_delta"] = trainer.min_delta;
    j["report_denormalized"] = trainer.report_denormalized;
    j["out_dir"] = out_dir;
    j["sweep_seeds"] = sweep_seeds;
    return j;
}

SeriesDataset RunConfig::load_dataset() const {
    if (!data_path.empty()) return load_csv(data_path, date_column);
    return gen_synthetic(parse_series_kind(data_kind), timesteps, model.channels, noise_std,
                         seed);
}

void RunConfig::validate() const {
    if (data_path.empty()) {
        (void)parse_series_kind(data_kind);
        if (timesteps < 1) throw ConfigError("config: field 'timesteps' must be >= 1");
        if (noise_std < 0) throw ConfigError("config: field 'noise_std' must be >= 0");
    }
    model.validate();
    trainer.validate();
    if (sweep_seeds < 1) throw ConfigError("config: field 'sweep_seeds' must be >= 1");
    if (out_dir.empty()) throw ConfigError("config: field 'out_dir' must not be empty");
}

}  // namespace freezetst
