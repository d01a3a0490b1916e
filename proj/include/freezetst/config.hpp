#pragma once

#include <string>

#include <json.hpp>

#include "freezetst/data.hpp"
#include "freezetst/model.hpp"
#include "freezetst/trainer.hpp"

namespace freezetst {

/// One flat JSON document describing a complete run: data source, model
/// geometry, optimizer settings, and output location. Unknown keys are
/// rejected so a typo cannot silently fall back to a default. One root seed
/// feeds every stream.
struct RunConfig {
    std::string data_kind = "sines";
    std::string data_path;  ///< empty = generate synthetically
    bool date_column = false;
    Index timesteps = 400;
    double noise_std = 0.0;

    ModelConfig<double> model;
    TrainConfig<double> trainer;

    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int sweep_seeds = 3;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    nlohmann::json to_json() const;

    /// Synthetic generation or CSV ingestion, per data_path.
    SeriesDataset load_dataset() const;

    void validate() const;
};

}  // namespace freezetst
