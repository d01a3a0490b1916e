// Command-line front-end: wires JSON run configs to the trainer, the memory
// analysis, and the non-expansiveness verifier, and emits every report file.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freezetst/analysis.hpp"
#include "freezetst/checkpoint.hpp"
#include "freezetst/config.hpp"
#include "freezetst/lipschitz.hpp"
#include "freezetst/trainer.hpp"

namespace fs = std::filesystem;
using namespace freezetst;

namespace {

/// Shortest decimal string that round-trips the value.
std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

int cmd_train(const std::string& config_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    rc.validate();
    SeriesDataset ds = rc.load_dataset();
    rc.model.channels = ds.channels();
    rc.model.validate();

    Model<double> model = build_model(rc.model);
    const TrainingReport rep = train(model, ds, rc.trainer);

    fs::create_directories(rc.out_dir);
    const fs::path out(rc.out_dir);
    write_text(out / "curves.csv", rep.curves_csv());
    save_checkpoint(model, (out / "checkpoint.json").string());
    nlohmann::json report = rep.to_json();
    report["config"] = rc.to_json();
    write_json(out / "report.json", report);

    std::cout << "scheme=" << rep.scheme << "\n"
              << "epochs_run=" << rep.epochs.size() << "\n"
              << "best_val_loss=" << fmt_double(rep.best_val_loss) << "\n"
              << "test_mse=" << fmt_double(rep.test.mse) << "\n"
              << "test_mae=" << fmt_double(rep.test.mae) << "\n"
              << "persistence_mse=" << fmt_double(rep.persistence.mse) << "\n"
              << "trainable_ratio=" << fmt_double(rep.trainable_ratio) << "\n"
              << "outputs=" << out.string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    rc.validate();
    Model<double> model = load_checkpoint<double>(checkpoint_path);
    SeriesDataset ds = rc.load_dataset();
    if (ds.channels() != model.cfg.channels)
        throw ConfigError("evaluate: dataset has " + std::to_string(ds.channels()) +
                          " channels but the checkpoint expects " +
                          std::to_string(model.cfg.channels));
    const SeriesDataset norm = normalize(ds);
    const auto windows =
        make_windows(norm, model.cfg.patch.lookback, model.cfg.horizon, Split::test);
    if (windows.empty()) throw ConfigError("evaluate: test split yields no windows");

    const EvalMetrics metrics = evaluate_model(model, windows);
    const EvalMetrics reference = persistence_baseline(windows);
    nlohmann::json j;
    j["checkpoint"] = checkpoint_path;
    j["windows"] = windows.size();
    j["test"] = metrics.to_json();
    j["persistence"] = reference.to_json();
    fs::create_directories(rc.out_dir);
    write_json(fs::path(rc.out_dir) / "evaluation.json", j);
    std::cout << "test_mse=" << fmt_double(metrics.mse) << "\n"
              << "test_mae=" << fmt_double(metrics.mae) << "\n"
              << "persistence_mse=" << fmt_double(reference.mse) << "\n";
    return 0;
}

int cmd_analyze_memory(double alpha, double lambda, double l_phi, double eps, int seeds,
                       long t_max, Index size, Index input_dim, double perturb_mag,
                       const std::string& out_dir) {
    if (seeds < 1) throw ConfigError("analyze-memory: seeds must be >= 1");
    const double kappa = compute_kappa(alpha, lambda, l_phi);
    std::cout << "kappa=" << fmt_double(kappa) << "\n";
    if (kappa >= 1.0)
        std::cerr << "warning: kappa >= 1, the influence envelope does not shrink\n";
    const auto unit_c = effective_receptive_field(eps, 1.0, kappa);
    std::cout << "L_eff_unitC=" << (unit_c ? std::to_string(*unit_c) : "unbounded") << "\n";

    ReservoirConfig<double> rcfg;
    rcfg.size = size;
    rcfg.alpha = alpha;
    rcfg.leak = lambda;
    if (l_phi == 1.0) {
        rcfg.phi = ReservoirActivation::tanh;
    } else {
        rcfg.phi = ReservoirActivation::scaled_tanh;
        rcfg.phi_scale = l_phi;
    }

    long violations = 0;
    double worst = 0;
    ForgettingCurve first;
    for (int s = 0; s < seeds; ++s) {
        const ForgettingCurve fc = twin_trajectory_experiment(
            rcfg, input_dim, perturb_mag, t_max, static_cast<std::uint64_t>(s));
        violations += fc.violations();
        worst = std::max(worst, fc.max_violation());
        if (s == 0) first = fc;
    }

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    write_text(out / "forgetting.csv", first.to_csv());
    nlohmann::json summary = first.summary(eps);
    summary["seeds"] = seeds;
    summary["violations_all_seeds"] = violations;
    summary["max_violation_all_seeds"] = worst;
    write_json(out / "memory.json", summary);

    if (summary.contains("L_eff") && !summary.at("L_eff").is_null())
        std::cout << "L_eff=" << summary.at("L_eff").get<long>() << "\n";
    else
        std::cout << "L_eff=unbounded\n";
    std::cout << "violations=" << violations << "\n";
    if (violations > 0) {
        std::cerr << "bound violated: divergence exceeded C*kappa^tau\n";
        return 4;
    }
    return 0;
}

int cmd_verify_lipschitz(const std::string& checkpoint_path, int probes, int audit_probes) {
    std::ifstream in(checkpoint_path);
    if (!in) throw ConfigError("verify-lipschitz: cannot read '" + checkpoint_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("verify-lipschitz: invalid JSON: " + std::string(e.what()));
    }
    Model<double> model = load_checkpoint_json<double>(j);

    bool any_frozen = false;
    for (const auto& b : model.stack.blocks) any_frozen = any_frozen || b.frozen;
    const bool rescaled = j.value("rescaled", false);
    if (any_frozen && !rescaled) {
        std::cerr << "checkpoint holds unrescaled frozen blocks; rebuild or retrain with "
                     "rescale_frozen=true, then verify again\n";
        return 4;
    }

    const Index n = model.n_tokens();
    const Index dm = model.cfg.patch.d_model;
    const TapeFn<double> fn = [&](Tape<double>& tape, int z) {
        Binder<double> bind(tape);
        for (const auto& b : model.stack.blocks) z = b.forward(tape, bind, z);
        return z;
    };

    Rng rng(derive_seed(model.cfg.seed, Stream::probes));
    const double lip = empirical_lipschitz(fn, Shape{n, dm}, probes, rng);
    const auto audit = gradient_norm_audit(fn, Shape{n, dm}, audit_probes, rng);
    double worst_ratio = 0;
    for (const auto& pair : audit)
        worst_ratio = std::max(worst_ratio, pair.input_grad_norm /
                                                std::max(pair.output_grad_norm, 1e-300));

    const double threshold = 1.0 + 1e-3;
    std::cout << "lipschitz_estimate=" << fmt_double(lip) << "\n"
              << "worst_gradient_ratio=" << fmt_double(worst_ratio) << "\n"
              << "threshold=" << fmt_double(threshold) << "\n";
    if (lip <= threshold && worst_ratio <= threshold) {
        std::cout << "non_expansive=yes\n";
        return 0;
    }
    std::cerr << "non-expansiveness check failed\n";
    return 4;
}

int cmd_sweep_schemes(const std::string& config_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    rc.validate();
    SeriesDataset ds = rc.load_dataset();
    rc.model.channels = ds.channels();
    rc.model.validate();

    struct Row {
        std::string scheme;
        std::uint64_t seed;
        double mse, mae, ratio, median_seconds;
    };
    std::vector<Row> rows;
    const FreezeScheme schemes[] = {FreezeScheme::F0, FreezeScheme::Fall, FreezeScheme::Fa,
                                    FreezeScheme::F1, FreezeScheme::Ffl};
    for (const FreezeScheme scheme : schemes) {
        for (int s = 0; s < rc.sweep_seeds; ++s) {
            ModelConfig<double> mc = rc.model;
            mc.scheme = scheme;
            mc.seed = rc.seed + static_cast<std::uint64_t>(s);
            TrainConfig<double> tc = rc.trainer;
            tc.seed = mc.seed;
            Model<double> model = build_model(mc);
            const TrainingReport rep = train(model, ds, tc);

            std::vector<double> secs;
            for (std::size_t i = 1; i < rep.epochs.size(); ++i)
                secs.push_back(rep.epochs[i].seconds);
            if (secs.empty() && !rep.epochs.empty()) secs.push_back(rep.epochs[0].seconds);
            std::sort(secs.begin(), secs.end());
            const double median =
                secs.empty() ? 0.0
                : secs.size() % 2 ? secs[secs.size() / 2]
                                  : 0.5 * (secs[secs.size() / 2 - 1] + secs[secs.size() / 2]);
            rows.push_back({freeze_scheme_name(scheme), mc.seed, rep.test.mse, rep.test.mae,
                            rep.trainable_ratio, median});
            std::cout << freeze_scheme_name(scheme) << " seed=" << mc.seed
                      << " mse=" << fmt_double(rep.test.mse)
                      << " mae=" << fmt_double(rep.test.mae)
                      << " trainable_ratio=" << fmt_double(rep.trainable_ratio)
                      << " median_epoch_seconds=" << fmt_double(median) << "\n";
        }
    }

    std::string csv = "scheme,seed,mse,mae,trainable_ratio,median_epoch_seconds\n";
    nlohmann::json table = nlohmann::json::array();
    for (const Row& r : rows) {
        csv += r.scheme + "," + std::to_string(r.seed) + "," + fmt_double(r.mse) + "," +
               fmt_double(r.mae) + "," + fmt_double(r.ratio) + "," +
               fmt_double(r.median_seconds) + "\n";
        table.push_back({{"scheme", r.scheme},
                         {"seed", r.seed},
                         {"mse", r.mse},
                         {"mae", r.mae},
                         {"trainable_ratio", r.ratio},
                         {"median_epoch_seconds", r.median_seconds}});
    }
    fs::create_directories(rc.out_dir);
    const fs::path out(rc.out_dir);
    write_text(out / "sweep.csv", csv);
    write_json(out / "sweep.json", table);
    return 0;
}

int cmd_gen_data(const std::string& kind, Index timesteps, Index channels, double noise_std,
                 std::uint64_t seed, const std::string& out_path) {
    const SeriesDataset ds =
        gen_synthetic(parse_series_kind(kind), timesteps, channels, noise_std, seed);
    save_csv(ds, out_path);
    write_json(out_path + ".manifest.json", dataset_manifest(ds));
    std::cout << "wrote " << out_path << " (" << ds.timesteps() << " rows, " << ds.channels()
              << " channels)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patch transformer forecaster with frozen random blocks"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_path, kind = "sines", out_dir = "out";
    double alpha = 0.9, lambda = 0.99, l_phi = 1.0, eps = 1e-2, perturb = 0.1, noise = 0.0;
    int seeds = 10, probes = 1000, audit_probes = 100;
    long t_max = 200;
    Index size = 64, input_dim = 16, timesteps = 1000, channels = 3;
    std::uint64_t seed = 1;

    auto* train_cmd = app.add_subcommand("train", "train a forecaster from a JSON config");
    train_cmd->add_option("config", config_path, "path to the run config")->required();

    auto* eval_cmd =
        app.add_subcommand("evaluate", "score a saved checkpoint on a dataset's test split");
    eval_cmd->add_option("config", config_path, "path to the run config")->required();
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    auto* mem_cmd = app.add_subcommand(
        "analyze-memory", "contraction factor, receptive field, and the twin-trajectory bound");
    mem_cmd->add_option("--alpha", alpha, "recurrent matrix norm after scaling");
    mem_cmd->add_option("--leak", lambda, "leak rate");
    mem_cmd->add_option("--lphi", l_phi, "activation Lipschitz constant");
    mem_cmd->add_option("--eps", eps, "influence threshold for the receptive field");
    mem_cmd->add_option("--seeds", seeds, "number of independent twin experiments");
    mem_cmd->add_option("--tmax", t_max, "lags to record");
    mem_cmd->add_option("--size", size, "reservoir units");
    mem_cmd->add_option("--input-dim", input_dim, "driving input width");
    mem_cmd->add_option("--perturb", perturb, "perturbation magnitude");
    mem_cmd->add_option("--out-dir", out_dir, "report directory");

    auto* lip_cmd = app.add_subcommand(
        "verify-lipschitz", "check the encoder stack's non-expansiveness on a checkpoint");
    lip_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    lip_cmd->add_option("--probes", probes, "probe pairs for the ratio estimate");
    lip_cmd->add_option("--audit-probes", audit_probes, "probes for the gradient audit");

    auto* sweep_cmd = app.add_subcommand(
        "sweep-schemes", "train every freeze scheme at fixed depth across seeds");
    sweep_cmd->add_option("config", config_path, "path to the run config")->required();

    auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset CSV + manifest");
    gen_cmd->add_option("--kind", kind, "sines | ar | regime");
    gen_cmd->add_option("--timesteps", timesteps, "rows to generate");
    gen_cmd->add_option("--channels", channels, "channels to generate");
    gen_cmd->add_option("--noise", noise, "additive Gaussian noise level");
    gen_cmd->add_option("--seed", seed, "root seed");
    gen_cmd->add_option("--out", out_path, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path);
        if (eval_cmd->parsed()) return cmd_evaluate(config_path, checkpoint_path);
        if (mem_cmd->parsed())
            return cmd_analyze_memory(alpha, lambda, l_phi, eps, seeds, t_max, size, input_dim,
                                      perturb, out_dir);
        if (lip_cmd->parsed()) return cmd_verify_lipschitz(checkpoint_path, probes, audit_probes);
        if (sweep_cmd->parsed()) return cmd_sweep_schemes(config_path);
        if (gen_cmd->parsed())
            return cmd_gen_data(kind, timesteps, channels, noise, seed, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
