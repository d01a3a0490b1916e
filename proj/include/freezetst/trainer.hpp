#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "freezetst/checkpoint.hpp"
#include "freezetst/data.hpp"
#include "freezetst/model.hpp"

namespace freezetst {

template <class Real>
struct TrainConfig {
    Index epochs = 30;
    Index batch_size = 16;
    Real lr = Real(1e-3);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real adam_eps = Real(1e-8);
    Index patience = 10;
    Real min_delta = Real(1e-5);
    std::uint64_t seed = 1;
    bool report_denormalized = false;

    void validate() const {
        if (epochs < 0) throw ConfigError("trainer: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
        if (!(lr > Real(0))) throw ConfigError("trainer: lr must be positive");
        if (!(beta1 >= Real(0) && beta1 < Real(1)))
            throw ConfigError("trainer: beta1 must lie in [0, 1)");
        if (!(beta2 >= Real(0) && beta2 < Real(1)))
            throw ConfigError("trainer: beta2 must lie in [0, 1)");
        if (!(adam_eps > Real(0))) throw ConfigError("trainer: adam_eps must be positive");
        if (patience < 1) throw ConfigError("trainer: patience must be >= 1");
        if (!(min_delta >= Real(0))) throw ConfigError("trainer: min_delta must be >= 0");
    }
};

template <class Real>
Tensor<Real> tensor_cast(const Tensor<double>& t) {
    std::vector<Real> data(t.data.begin(), t.data.end());
    return Tensor<Real>(t.shape, std::move(data));
}

/// Training objective for one window: per-channel squared error summed over
/// the horizon, averaged over channels. The per-element MSE metric divides by
/// the horizon as well.
template <class Real>
Real loss_direct_multistep(const Tensor<Real>& pred, const Tensor<Real>& target) {
    require_rank(pred, 2, "loss pred");
    if (!pred.same_shape(target))
        throw DimensionError("loss: prediction " + shape_str(pred.shape) + " vs target " +
                             shape_str(target.shape));
    Real acc = 0;
    for (Index i = 0; i < pred.size(); ++i) {
        const Real d = target[i] - pred[i];
        acc += d * d;
    }
    return acc / static_cast<Real>(pred.cols());
}

/// Tape form of the same objective; `pred_dxh` comes from
/// Model::forward_window and target is [H x d].
template <class Real>
int window_loss(Tape<Real>& tape, int pred_dxh, const Tensor<Real>& target) {
    const Index d = target.cols();
    const int diff = tape.sub(pred_dxh, tape.constant(transpose_value(target)));
    return tape.scale(tape.sum(tape.mul(diff, diff)), Real(1) / static_cast<Real>(d));
}

/// First-moment/second-moment adaptive optimizer with bias correction. State
/// exists only for the parameters registered up front; registering or
/// applying a frozen parameter is a contract violation.
template <class Real>
class Adam {
  public:
    Adam(Real lr, Real beta1, Real beta2, Real eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void register_params(const std::vector<Param<Real>*>& ps) {
        for (Param<Real>* p : ps) {
            if (!p->trainable)
                throw ContractError("optimizer: refusing to track frozen parameter " + p->name);
            if (index_.count(p)) continue;
            index_[p] = slots_.size();
            slots_.push_back(Slot{Tensor<Real>(p->value.shape), Tensor<Real>(p->value.shape), p});
        }
    }

    std::size_t slot_count() const { return slots_.size(); }

    /// Names of tracked parameters, in registration order.
    std::vector<std::string> tracked_names() const {
        std::vector<std::string> names;
        names.reserve(slots_.size());
        for (const Slot& s : slots_) names.push_back(s.owner->name);
        return names;
    }

    void begin_step() { ++t_; }

    void apply(Param<Real>& p, const Tensor<Real>& grad) {
        auto it = index_.find(&p);
        if (it == index_.end())
            throw ContractError("optimizer: parameter " + p.name + " was never registered");
        Slot& s = slots_[it->second];
        if (!grad.same_shape(p.value))
            throw DimensionError("optimizer: gradient shape mismatch for " + p.name);
        const Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(t_));
        const Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(t_));
        for (Index i = 0; i < p.value.size(); ++i) {
            const Real g = grad[i];
            s.m[i] = beta1_ * s.m[i] + (Real(1) - beta1_) * g;
            s.v[i] = beta2_ * s.v[i] + (Real(1) - beta2_) * g * g;
            const Real mhat = s.m[i] / bc1;
            const Real vhat = s.v[i] / bc2;
            p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }

    Real lr() const { return lr_; }

  private:
    struct Slot {
        Tensor<Real> m, v;
        Param<Real>* owner;
    };
    Real lr_, beta1_, beta2_, eps_;
    std::vector<Slot> slots_;
    std::unordered_map<Param<Real>*, std::size_t> index_;
    long t_ = 0;
};

/// Per-element error metrics over a window set, per channel and aggregated.
struct EvalMetrics {
    double loss = 0;  ///< mean direct multi-step objective
    double mse = 0;
    double mae = 0;
    std::vector<double> mse_per_channel;
    std::vector<double> mae_per_channel;

    nlohmann::json to_json() const {
        return {{"loss", loss},
                {"mse", mse},
                {"mae", mae},
                {"mse_per_channel", mse_per_channel},
                {"mae_per_channel", mae_per_channel}};
    }
};

namespace detail {

inline EvalMetrics metrics_from_errors(const std::vector<double>& sq_sum,
                                       const std::vector<double>& abs_sum, long long per_channel,
                                       double loss_sum, long long window_count) {
    EvalMetrics m;
    const std::size_t d = sq_sum.size();
    for (std::size_t j = 0; j < d; ++j) {
        m.mse_per_channel.push_back(sq_sum[j] / static_cast<double>(per_channel));
        m.mae_per_channel.push_back(abs_sum[j] / static_cast<double>(per_channel));
        m.mse += m.mse_per_channel.back();
        m.mae += m.mae_per_channel.back();
    }
    m.mse /= static_cast<double>(d);
    m.mae /= static_cast<double>(d);
    m.loss = loss_sum / static_cast<double>(window_count);
    return m;
}

}  // namespace detail

/// Value-only evaluation of the model over a window set.
template <class Real>
EvalMetrics evaluate_model(Model<Real>& model, const std::vector<WindowPair>& windows) {
    if (windows.empty()) throw ConfigError("evaluate: no windows");
    const Index d = windows.front().input.cols();
    const Index h = model.cfg.horizon;
    std::vector<double> sq(static_cast<std::size_t>(d), 0.0), ab(static_cast<std::size_t>(d), 0.0);
    double loss_sum = 0;
    for (const WindowPair& w : windows) {
        Tensor<Real> pred = model.predict(tensor_cast<Real>(w.input));
        Tensor<Real> target = tensor_cast<Real>(w.target);
        loss_sum += static_cast<double>(loss_direct_multistep(pred, target));
        for (Index t = 0; t < h; ++t)
            for (Index j = 0; j < d; ++j) {
                const double e = static_cast<double>(pred(t, j)) - static_cast<double>(target(t, j));
                sq[static_cast<std::size_t>(j)] += e * e;
                ab[static_cast<std::size_t>(j)] += std::abs(e);
            }
    }
    return detail::metrics_from_errors(sq, ab, static_cast<long long>(windows.size()) * h,
                                       loss_sum, static_cast<long long>(windows.size()));
}

/// Repeat the last observed row across the horizon; the no-model reference.
inline EvalMetrics persistence_baseline(const std::vector<WindowPair>& windows) {
    if (windows.empty()) throw ConfigError("persistence: no windows");
    const Index d = windows.front().input.cols();
    const Index h = windows.front().target.rows();
    std::vector<double> sq(static_cast<std::size_t>(d), 0.0), ab(static_cast<std::size_t>(d), 0.0);
    double loss_sum = 0;
    for (const WindowPair& w : windows) {
        const Index last = w.input.rows() - 1;
        double wloss = 0;
        for (Index t = 0; t < h; ++t)
            for (Index j = 0; j < d; ++j) {
                const double e = w.input(last, j) - w.target(t, j);
                sq[static_cast<std::size_t>(j)] += e * e;
                ab[static_cast<std::size_t>(j)] += std::abs(e);
                wloss += e * e;
            }
        loss_sum += wloss / static_cast<double>(d);
    }
    return detail::metrics_from_errors(sq, ab, static_cast<long long>(windows.size()) * h,
                                       loss_sum, static_cast<long long>(windows.size()));
}

struct EpochRecord {
    long epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double seconds = 0;
};

struct TrainingReport {
    std::vector<EpochRecord> epochs;
    double best_val_loss = std::numeric_limits<double>::infinity();
    long best_epoch = 0;
    bool early_stopped = false;
    EvalMetrics test;
    EvalMetrics persistence;
    EvalMetrics test_denormalized;
    bool has_denormalized = false;
    long long total_params = 0;
    long long trainable_params = 0;
    double trainable_ratio = 1.0;
    long long encoder_trainable = 0;
    std::string digest_before, digest_after;
    std::string scheme;

    /// Loss trajectory only; wall-clock stays out so reruns are byte-identical.
    std::string curves_csv() const {
        std::string out = "epoch,train_loss,val_loss\n";
        char buf[96];
        for (const EpochRecord& e : epochs) {
            std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g\n", e.epoch, e.train_loss,
                          e.val_loss);
            out += buf;
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scheme"] = scheme;
        j["best_val_loss"] = best_val_loss;
        j["best_epoch"] = best_epoch;
        j["early_stopped"] = early_stopped;
        j["test"] = test.to_json();
        j["persistence"] = persistence.to_json();
        if (has_denormalized) j["test_denormalized"] = test_denormalized.to_json();
        j["total_params"] = total_params;
        j["trainable_params"] = trainable_params;
        j["trainable_ratio"] = trainable_ratio;
        j["encoder_trainable_params"] = encoder_trainable;
        j["frozen_digest_before"] = digest_before;
        j["frozen_digest_after"] = digest_after;
        nlohmann::json es = nlohmann::json::array();
        for (const EpochRecord& e : epochs)
            es.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"seconds", e.seconds}});
        j["epochs"] = es;
        return j;
    }
};

/// Run the training loop: shuffled stride-1 windows, the adaptive optimizer
/// over the trainable parameters only, spectral projection of trainable
/// encoder weights after every step, a frozen-digest check every epoch, and
/// early stopping on validation loss. The model is left holding the
/// best-validation parameters.
template <class Real>
TrainingReport train(Model<Real>& model, const SeriesDataset& dataset,
                     const TrainConfig<Real>& cfg) {
    cfg.validate();
    if (dataset.channels() != model.cfg.channels)
        throw ConfigError("train: dataset has " + std::to_string(dataset.channels()) +
                          " channels but the model expects " +
                          std::to_string(model.cfg.channels));
    const SeriesDataset ds = dataset.normalized ? dataset : normalize(dataset);
    const Index lookback = model.cfg.patch.lookback;
    const Index horizon = model.cfg.horizon;
    auto train_w = make_windows(ds, lookback, horizon, Split::train);
    auto val_w = make_windows(ds, lookback, horizon, Split::val);
    auto test_w = make_windows(ds, lookback, horizon, Split::test);
    if (train_w.empty()) throw ConfigError("train: train split yields no windows");
    const bool val_available = !val_w.empty();
    if (!val_available)
        std::cerr << "warning: validation split yields no windows; "
                     "early stopping falls back to train loss\n";

    TrainingReport rep;
    rep.scheme = freeze_scheme_name(model.cfg.scheme);
    rep.digest_before = model.frozen_digest();

    Adam<Real> opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    std::vector<Param<Real>*> trainables;
    for (Param<Real>* p : model.parameters())
        if (p->trainable) trainables.push_back(p);
    opt.register_params(trainables);

    auto snapshot = [&]() {
        std::vector<Tensor<Real>> vals;
        vals.reserve(trainables.size());
        for (Param<Real>* p : trainables) vals.push_back(p->value);
        return vals;
    };
    auto restore = [&](const std::vector<Tensor<Real>>& vals) {
        for (std::size_t i = 0; i < trainables.size(); ++i) trainables[i]->value = vals[i];
    };

    auto annotated = [&](const NumericError& e, Index epoch, long step) {
        return NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step) + ", lr " +
                            std::to_string(static_cast<double>(cfg.lr)) + ")");
    };
    auto eval_loss = [&](const std::vector<WindowPair>& ws) {
        double sum = 0;
        for (const WindowPair& w : ws) {
            Tensor<Real> pred = model.predict(tensor_cast<Real>(w.input));
            sum += static_cast<double>(
                loss_direct_multistep(pred, tensor_cast<Real>(w.target)));
        }
        return sum / static_cast<double>(ws.size());
    };

    std::vector<Tensor<Real>> best_values = snapshot();
    double best_val;
    try {
        best_val = val_available ? eval_loss(val_w) : eval_loss(train_w);
    } catch (const NumericError& e) {
        throw annotated(e, 0, 0);
    }
    rep.best_val_loss = best_val;
    rep.best_epoch = 0;
    // The snapshot follows any strict improvement; patience only counts
    // improvements larger than min_delta. This keeps the returned parameters
    // at or below every logged validation loss.
    double patience_ref = best_val;
    Index bad_epochs = 0;

    Rng shuffle_rng(derive_seed(cfg.seed, Stream::shuffle));
    std::vector<std::size_t> order(train_w.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step_index = 0;
    for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.below(i))]);

        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const Real batch_n = static_cast<Real>(stop - start);
            ++step_index;
            try {
                Tape<Real> tape;
                Binder<Real> bind(tape);
                int acc = -1;
                for (std::size_t k = start; k < stop; ++k) {
                    const WindowPair& w = train_w[order[k]];
                    const int pred = model.forward_window(tape, bind,
                                                          tensor_cast<Real>(w.input));
                    const int l = window_loss(tape, pred, tensor_cast<Real>(w.target));
                    acc = acc < 0 ? l : tape.add(acc, l);
                }
                const int batch_loss = tape.scale(acc, Real(1) / batch_n);
                const double batch_loss_value = static_cast<double>(tape.val(batch_loss)[0]);
                if (!std::isfinite(batch_loss_value))
                    throw NumericError("train: non-finite loss");
                tape.backward(batch_loss);
                opt.begin_step();
                bind.for_each_bound([&](Param<Real>& p, int id) {
                    if (p.trainable) opt.apply(p, tape.grad(id));
                });
                loss_sum += batch_loss_value * static_cast<double>(batch_n);
            } catch (const NumericError& e) {
                throw annotated(e, epoch, step_index);
            }
            for (auto& b : model.stack.blocks)
                if (!b.frozen) project_spectral(b);
        }

        const double train_loss = loss_sum / static_cast<double>(train_w.size());
        double val_loss;
        try {
            val_loss = val_available ? eval_loss(val_w) : train_loss;
        } catch (const NumericError& e) {
            throw annotated(e, epoch, step_index);
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rep.epochs.push_back(
            {static_cast<long>(epoch), train_loss, val_loss, seconds});

        if (model.frozen_digest() != rep.digest_before)
            throw ContractError("train: frozen parameters changed during epoch " +
                                std::to_string(epoch));

        if (val_loss < best_val) {
            best_val = val_loss;
            best_values = snapshot();
            rep.best_val_loss = val_loss;
            rep.best_epoch = static_cast<long>(epoch);
        }
        if (val_loss < patience_ref - static_cast<double>(cfg.min_delta)) {
            patience_ref = val_loss;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) {
                rep.early_stopped = true;
                break;
            }
        }
    }

    restore(best_values);

    rep.digest_after = model.frozen_digest();
    if (rep.digest_after != rep.digest_before)
        throw ContractError("train: frozen parameters changed over the run");

    const ParamCount pc = count_parameters(model);
    rep.total_params = pc.total;
    rep.trainable_params = pc.trainable;
    rep.trainable_ratio = pc.ratio;
    rep.encoder_trainable = encoder_trainable_params(model);

    const auto& final_w = test_w.empty() ? (val_available ? val_w : train_w) : test_w;
    if (test_w.empty())
        std::cerr << "warning: test split yields no windows; reporting on a fallback split\n";
    rep.test = evaluate_model(model, final_w);
    rep.persistence = persistence_baseline(final_w);
    if (cfg.report_denormalized && !ds.stdev.empty()) {
        rep.has_denormalized = true;
        rep.test_denormalized = rep.test;
        double mse_acc = 0, mae_acc = 0;
        for (std::size_t j = 0; j < rep.test.mse_per_channel.size(); ++j) {
            const double sd = ds.stdev[j];
            rep.test_denormalized.mse_per_channel[j] *= sd * sd;
            rep.test_denormalized.mae_per_channel[j] *= sd;
            mse_acc += rep.test_denormalized.mse_per_channel[j];
            mae_acc += rep.test_denormalized.mae_per_channel[j];
        }
        rep.test_denormalized.mse = mse_acc / static_cast<double>(rep.test.mse_per_channel.size());
        rep.test_denormalized.mae = mae_acc / static_cast<double>(rep.test.mae_per_channel.size());
    }
    return rep;
}

/// Epoch wall-time statistics with the warm-up epoch excluded.
struct EpochTiming {
    std::vector<double> seconds;  ///< steady-state epochs only
    double median = 0;
    double min = 0;
    double max = 0;
};

template <class Real>
EpochTiming time_epochs(const Model<Real>& model, const SeriesDataset& dataset,
                        TrainConfig<Real> cfg) {
    Model<Real> copy = model;
    cfg.patience = cfg.epochs + 1;  // timing runs never stop early
    const TrainingReport rep = train(copy, dataset, cfg);
    EpochTiming t;
    for (std::size_t i = 1; i < rep.epochs.size(); ++i) t.seconds.push_back(rep.epochs[i].seconds);
    if (t.seconds.empty()) return t;
    std::vector<double> sorted = t.seconds;
    std::sort(sorted.begin(), sorted.end());
    t.min = sorted.front();
    t.max = sorted.back();
    const std::size_t mid = sorted.size() / 2;
    t.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    return t;
}

}  // namespace freezetst
