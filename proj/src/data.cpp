#include "freezetst/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "freezetst/errors.hpp"

namespace freezetst {

SeriesKind parse_series_kind(const std::string& s) {
    if (s == "sines") return SeriesKind::sines;
    if (s == "ar") return SeriesKind::ar;
    if (s == "regime") return SeriesKind::regime;
    throw ConfigError("unknown series kind '" + s + "' (expected sines, ar or regime)");
}

std::string series_kind_name(SeriesKind k) {
    switch (k) {
        case SeriesKind::sines: return "sines";
        case SeriesKind::ar: return "ar";
        case SeriesKind::regime: return "regime";
    }
    return "?";
}

std::pair<Index, Index> SeriesDataset::split_bounds(Split s) const {
    const Index n = timesteps();
    const Index train_n = static_cast<Index>(std::floor(train_frac * static_cast<double>(n)));
    const Index val_n = static_cast<Index>(std::floor(val_frac * static_cast<double>(n)));
    switch (s) {
        case Split::train: return {0, train_n};
        case Split::val: return {train_n, train_n + val_n};
        case Split::test: return {train_n + val_n, n};
    }
    return {0, 0};
}

void SeriesDataset::recompute_train_stats() {
    const Index d = channels();
    mean.assign(static_cast<std::size_t>(d), 0.0);
    stdev.assign(static_cast<std::size_t>(d), 1.0);
    auto [b, e] = split_bounds(Split::train);
    const Index n = e - b;
    if (n < 1) throw ConfigError("dataset: train split is empty, cannot compute statistics");
    for (Index j = 0; j < d; ++j) {
        double acc = 0;
        for (Index i = b; i < e; ++i) acc += values(i, j);
        const double mu = acc / static_cast<double>(n);
        double sq = 0;
        for (Index i = b; i < e; ++i) {
            const double c = values(i, j) - mu;
            sq += c * c;
        }
        double sd = std::sqrt(sq / static_cast<double>(n));
        if (sd == 0.0) {
            std::cerr << "warning: channel " << j
                      << " has zero spread on the train split; clamping std to 1\n";
            sd = 1.0;
        }
        mean[static_cast<std::size_t>(j)] = mu;
        stdev[static_cast<std::size_t>(j)] = sd;
    }
}

std::vector<double> sine_mixture_channel(Rng& rng, Index timesteps, int components,
                                         double period_lo, double period_hi) {
    if (components < 1) throw ConfigError("sine mixture: need at least one component");
    if (!(period_lo > 0) || period_hi < period_lo)
        throw ConfigError("sine mixture: invalid period range");
    struct Wave {
        double amp, period, phase;
    };
    std::vector<Wave> waves;
    waves.reserve(static_cast<std::size_t>(components));
    for (int c = 0; c < components; ++c)
        waves.push_back({rng.uniform(0.5, 1.5), rng.uniform(period_lo, period_hi),
                         rng.uniform(0.0, 2.0 * M_PI)});
    std::vector<double> out(static_cast<std::size_t>(timesteps), 0.0);
    const double two_pi = 2.0 * M_PI;
    for (Index t = 0; t < timesteps; ++t) {
        double v = 0;
        for (const Wave& w : waves)
            v += w.amp * std::sin(two_pi * static_cast<double>(t) / w.period + w.phase);
        out[static_cast<std::size_t>(t)] = v;
    }
    return out;
}

namespace {

// Stable second-order autoregression; roots of 1 - a1 z - a2 z^2 lie outside
// the unit circle for (0.5, 0.3).
constexpr double kAr1 = 0.5;
constexpr double kAr2 = 0.3;

std::vector<double> ar2_channel(Rng& rng, Index timesteps) {
    const Index burn = 100;
    std::vector<double> out(static_cast<std::size_t>(timesteps), 0.0);
    double prev1 = 0, prev2 = 0;
    for (Index t = -burn; t < timesteps; ++t) {
        const double x = kAr1 * prev1 + kAr2 * prev2 + rng.normal();
        prev2 = prev1;
        prev1 = x;
        if (t >= 0) out[static_cast<std::size_t>(t)] = x;
    }
    return out;
}

}  // namespace

double ar2_theoretical_lag1() { return kAr1 / (1.0 - kAr2); }

SeriesDataset gen_synthetic(SeriesKind kind, Index timesteps, Index channels, double noise_std,
                            std::uint64_t seed) {
    if (timesteps < 1) throw ConfigError("gen_synthetic: timesteps must be >= 1");
    if (channels < 1) throw ConfigError("gen_synthetic: channels must be >= 1");
    if (noise_std < 0) throw ConfigError("gen_synthetic: noise_std must be >= 0");
    Rng rng(derive_seed(seed, Stream::data));
    SeriesDataset ds;
    ds.seed = seed;
    ds.metadata = "synthetic:" + series_kind_name(kind);
    ds.values = Tensor<double>(Shape{timesteps, channels});
    const double period_hi = std::max(8.0, static_cast<double>(timesteps));
    for (Index j = 0; j < channels; ++j) {
        ds.channel_names.push_back("c" + std::to_string(j));
        std::vector<double> col;
        switch (kind) {
            case SeriesKind::sines:
                col = sine_mixture_channel(rng, timesteps, 2 + static_cast<int>(rng.below(3)),
                                           8.0, period_hi);
                break;
            case SeriesKind::ar: col = ar2_channel(rng, timesteps); break;
            case SeriesKind::regime: {
                col = sine_mixture_channel(rng, timesteps, 2 + static_cast<int>(rng.below(3)),
                                           8.0, period_hi);
                const Index lo = timesteps / 4;
                const Index hi = std::max(lo + 1, (3 * timesteps) / 4);
                const Index changepoint =
                    lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo)));
                const double shift =
                    rng.uniform(1.0, 3.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                for (Index t = changepoint; t < timesteps; ++t)
                    col[static_cast<std::size_t>(t)] += shift;
                break;
            }
        }
        for (Index t = 0; t < timesteps; ++t) {
            double v = col[static_cast<std::size_t>(t)];
            if (noise_std > 0) v += rng.normal(0.0, noise_std);
            ds.values(t, j) = v;
        }
    }
    if (ds.split_length(Split::train) >= 1) ds.recompute_train_stats();
    return ds;
}

namespace {

bool parse_cell(const std::string& cell, double& out) {
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && !cell.empty();
}

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

}  // namespace

SeriesDataset load_csv(const std::string& path, bool date_column_present) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (line.empty()) continue;
        lines.push_back(line);
    }
    if (lines.empty()) throw ParseError("empty file '" + path + "'", 0, 0);

    const std::size_t first_channel = date_column_present ? 1 : 0;
    std::vector<std::vector<std::string>> rows;
    rows.reserve(lines.size());
    for (const std::string& l : lines) rows.push_back(split_row(l));

    const std::size_t width = rows[0].size();
    if (width <= first_channel)
        throw ParseError("no numeric channels in '" + path + "'", 1, static_cast<long>(width));

    // Header row: any non-numeric channel cell in the first row.
    bool has_header = false;
    for (std::size_t j = first_channel; j < width; ++j) {
        double v;
        if (!parse_cell(rows[0][j], v)) {
            has_header = true;
            break;
        }
    }

    SeriesDataset ds;
    ds.metadata = "csv:" + path;
    if (has_header) {
        for (std::size_t j = first_channel; j < width; ++j) ds.channel_names.push_back(rows[0][j]);
    } else {
        for (std::size_t j = first_channel; j < width; ++j)
            ds.channel_names.push_back("c" + std::to_string(j - first_channel));
    }

    const std::size_t data_begin = has_header ? 1 : 0;
    const Index n = static_cast<Index>(rows.size() - data_begin);
    const Index d = static_cast<Index>(width - first_channel);
    if (n < 1) throw ParseError("no data rows in '" + path + "'", 1, 1);
    ds.values = Tensor<double>(Shape{n, d});
    for (std::size_t r = data_begin; r < rows.size(); ++r) {
        const long file_row = static_cast<long>(r + 1);
        if (rows[r].size() != width)
            throw ParseError("ragged row: expected " + std::to_string(width) + " cells, got " +
                                 std::to_string(rows[r].size()),
                             file_row, static_cast<long>(rows[r].size()));
        for (std::size_t j = first_channel; j < width; ++j) {
            double v;
            if (rows[r][j].empty())
                throw ParseError("missing value", file_row, static_cast<long>(j + 1));
            if (!parse_cell(rows[r][j], v))
                throw ParseError("non-numeric cell '" + rows[r][j] + "'", file_row,
                                 static_cast<long>(j + 1));
            if (!std::isfinite(v))
                throw ParseError("non-finite value '" + rows[r][j] + "'", file_row,
                                 static_cast<long>(j + 1));
            ds.values(static_cast<Index>(r - data_begin), static_cast<Index>(j - first_channel)) =
                v;
        }
    }
    if (ds.split_length(Split::train) >= 1) ds.recompute_train_stats();
    return ds;
}

void save_csv(const SeriesDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'", 0, 0);
    for (Index j = 0; j < ds.channels(); ++j) {
        if (j) out << ',';
        out << (static_cast<std::size_t>(j) < ds.channel_names.size()
                    ? ds.channel_names[static_cast<std::size_t>(j)]
                    : "c" + std::to_string(j));
    }
    out << '\n';
    char buf[64];
    for (Index i = 0; i < ds.timesteps(); ++i) {
        for (Index j = 0; j < ds.channels(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.values(i, j));
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

SeriesDataset normalize(const SeriesDataset& ds) {
    if (ds.normalized) throw ConfigError("normalize: dataset already normalized");
    SeriesDataset out = ds;
    if (out.mean.empty()) out.recompute_train_stats();
    for (Index i = 0; i < out.timesteps(); ++i)
        for (Index j = 0; j < out.channels(); ++j)
            out.values(i, j) = (out.values(i, j) - out.mean[static_cast<std::size_t>(j)]) /
                               out.stdev[static_cast<std::size_t>(j)];
    out.normalized = true;
    return out;
}

SeriesDataset denormalize(const SeriesDataset& ds) {
    if (!ds.normalized) throw ConfigError("denormalize: dataset is not normalized");
    if (ds.mean.empty()) throw ConfigError("denormalize: missing statistics");
    SeriesDataset out = ds;
    for (Index i = 0; i < out.timesteps(); ++i)
        for (Index j = 0; j < out.channels(); ++j)
            out.values(i, j) = out.values(i, j) * out.stdev[static_cast<std::size_t>(j)] +
                               out.mean[static_cast<std::size_t>(j)];
    out.normalized = false;
    return out;
}

std::vector<WindowPair> make_windows(const SeriesDataset& ds, Index lookback, Index horizon,
                                     Split split) {
    if (lookback < 1 || horizon < 1)
        throw ConfigError("make_windows: lookback and horizon must be >= 1");
    auto [b, e] = ds.split_bounds(split);
    const Index len = e - b;
    std::vector<WindowPair> out;
    if (len < lookback + horizon) {
        std::cerr << "warning: split of length " << len << " is too short for lookback "
                  << lookback << " + horizon " << horizon << "; no windows emitted\n";
        return out;
    }
    const Index d = ds.channels();
    out.reserve(static_cast<std::size_t>(len - lookback - horizon + 1));
    for (Index o = b; o + lookback + horizon <= e; ++o) {
        WindowPair w;
        w.origin = o;
        w.input = Tensor<double>(Shape{lookback, d});
        w.target = Tensor<double>(Shape{horizon, d});
        for (Index t = 0; t < lookback; ++t)
            for (Index j = 0; j < d; ++j) w.input(t, j) = ds.values(o + t, j);
        for (Index t = 0; t < horizon; ++t)
            for (Index j = 0; j < d; ++j) w.target(t, j) = ds.values(o + lookback + t, j);
        out.push_back(std::move(w));
    }
    return out;
}

nlohmann::json dataset_manifest(const SeriesDataset& ds) {
    nlohmann::json j;
    j["timesteps"] = ds.timesteps();
    j["channels"] = ds.channels();
    j["channel_names"] = ds.channel_names;
    j["metadata"] = ds.metadata;
    j["seed"] = ds.seed;
    j["normalized"] = ds.normalized;
    j["splits"] = {{"train", ds.split_length(Split::train)},
                   {"val", ds.split_length(Split::val)},
                   {"test", ds.split_length(Split::test)}};
    j["stats"] = {{"mean", ds.mean}, {"std", ds.stdev}};
    return j;
}

}  // namespace freezetst
