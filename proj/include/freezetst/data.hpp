#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "freezetst/rng.hpp"
#include "freezetst/tensor.hpp"

namespace freezetst {

enum class Split { train, val, test };

enum class SeriesKind { sines, ar, regime };

SeriesKind parse_series_kind(const std::string& s);
std::string series_kind_name(SeriesKind k);

/// Multivariate series with contiguous time-ordered train/val/test splits and
/// per-channel statistics taken from the train rows only.
struct SeriesDataset {
    Tensor<double> values;  ///< [timesteps x channels]
    std::vector<std::string> channel_names;
    std::string metadata;
    double train_frac = 0.6;
    double val_frac = 0.2;
    std::vector<double> mean;   ///< per channel, train split only
    std::vector<double> stdev;  ///< per channel, train split only, clamped off zero
    bool normalized = false;
    std::uint64_t seed = 0;

    Index timesteps() const { return values.size() == 0 ? 0 : values.dim(0); }
    Index channels() const { return values.size() == 0 ? 0 : values.dim(1); }

    /// Half-open row range [begin, end) of a split. Train gets
    /// floor(train_frac*n) rows, val floor(val_frac*n), test the remainder.
    std::pair<Index, Index> split_bounds(Split s) const;
    Index split_length(Split s) const {
        auto [b, e] = split_bounds(s);
        return e - b;
    }

    /// Fill mean/stdev from the train rows. Zero-spread channels get stdev
    /// clamped to 1 with a warning so normalization stays invertible.
    void recompute_train_stats();
};

/// Input window and the horizon that immediately follows it.
struct WindowPair {
    Tensor<double> input;   ///< [T x d]
    Tensor<double> target;  ///< [H x d]
    Index origin = 0;       ///< row index of the input's first step
};

/// One channel worth of a random sinusoid mixture: `components` waves with
/// periods uniform in [period_lo, period_hi], amplitudes in [0.5, 1.5] and
/// phases in [0, 2pi).
std::vector<double> sine_mixture_channel(Rng& rng, Index timesteps, int components,
                                         double period_lo, double period_hi);

/// Synthetic generators: sines = 2-4 random sinusoids per channel with
/// periods in [8, timesteps]; ar = stable second-order autoregression with
/// coefficients (0.5, 0.3); regime = sines plus a mean shift at a random
/// changepoint. Gaussian observation noise of scale noise_std on top.
SeriesDataset gen_synthetic(SeriesKind kind, Index timesteps, Index channels, double noise_std,
                            std::uint64_t seed);

/// Lag-1 autocorrelation of the generating AR(2) process used by gen_synthetic.
double ar2_theoretical_lag1();

/// Strict CSV reader: rectangular, 64-bit numeric cells, optional header row
/// (auto-detected by non-numeric cells) and optional leading date column that
/// is excluded from the channels. Missing or malformed cells raise ParseError
/// with 1-based row/column location.
SeriesDataset load_csv(const std::string& path, bool date_column_present);

/// Writer emitting a header row of channel names and 17-significant-digit
/// decimal values, so load_csv(save_csv(ds)) reproduces values bit for bit.
void save_csv(const SeriesDataset& ds, const std::string& path);

/// Z-score per channel using train-split statistics only.
SeriesDataset normalize(const SeriesDataset& ds);
SeriesDataset denormalize(const SeriesDataset& ds);

/// All windows whose input and target both fall inside the split; count is
/// split_len - T - H + 1. Too-short splits give an empty list with a warning.
std::vector<WindowPair> make_windows(const SeriesDataset& ds, Index lookback, Index horizon,
                                     Split split);

/// Shape, split sizes, stats and provenance as JSON.
nlohmann::json dataset_manifest(const SeriesDataset& ds);

}  // namespace freezetst
