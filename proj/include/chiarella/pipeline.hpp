#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chiarella/analysis.hpp"
#include "chiarella/calibration.hpp"
#include "chiarella/params.hpp"
#include "chiarella/series.hpp"
#include "chiarella/trend.hpp"

namespace chiarella {

/// Bad configuration or unreadable input; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AssetConfig {
    std::string id;
    std::string csv_path;
    std::string asset_class;
    std::optional<std::string> cpi_path;
    std::vector<MonthRange> exclusions;
};

struct RunConfig {
    std::vector<AssetConfig> assets;
    ModelKind model = ModelKind::Linear;
    std::vector<double> alpha_grid;  // defaults to {1/2, ..., 1/24}
    std::optional<int> drift_order_override;

    double em_tol = 1e-5;
    int em_max_iter = 500;

    int silverman_n_boot = 500;
    double silverman_significance = 0.02;
    std::uint64_t silverman_seed = 20;

    double sloppiness_delta_rel = 1e-2;
    int sloppiness_horizon = 10000;
    std::uint64_t sloppiness_seed = 99;

    SimProtocol protocol;               // bimodality simulation settings
    std::size_t protocol_subsample = 1000000;

    std::vector<std::pair<int, int>> backtest_splits;  // month ranges, inclusive

    int workers = 1;
    std::string output_dir = "out";

    static RunConfig from_json_file(const std::string& path);
    /// Stable serialisation of everything that affects calibrate outputs,
    /// used for the stage cache key.
    std::string cache_key_material() const;
};

struct LoadedAsset {
    AssetConfig config;
    CleanSeries series;
};

std::vector<LoadedAsset> load_assets(const RunConfig& config);

/// Hash of config-relevant material plus all referenced input file bytes.
std::uint64_t calibrate_input_hash(const RunConfig& config);

/// Full calibrate stage: trend estimation, three-step calibration per class,
/// report/CSV emission under config.output_dir. Returns the number of assets
/// that failed (a failure manifest is written when nonzero). Skips recompute
/// when the manifest hash matches existing outputs.
int run_calibrate(const RunConfig& config);

/// Analysis stage over an existing calibration directory: bimodality table,
/// J-S distances, sloppiness reports, backtests.
int run_analyze(const RunConfig& config, const std::string& calibration_dir);

/// Backtest stage only.
int run_backtest(const RunConfig& config, const std::string& calibration_dir);

// Report (de)serialisation for the stage handoff.
std::string calibration_report_to_json(const CalibrationReport& report);
CalibrationReport calibration_report_from_json(const std::string& text);
std::string sloppiness_report_to_json(const SloppinessReport& report);

/// Deterministic content hash of every regular file under a directory,
/// ordered by relative path.
std::uint64_t hash_directory(const std::string& dir);

}  // namespace chiarella
