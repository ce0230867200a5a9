#include "chiarella/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "chiarella/rng.hpp"
#include "chiarella/silverman.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace chiarella {

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << content;
}

std::vector<double> parse_alpha_grid(const json& j) {
    std::vector<double> grid;
    for (const auto& v : j) grid.push_back(v.get<double>());
    return grid;
}

std::vector<MonthRange> parse_exclusions(const json& j) {
    std::vector<MonthRange> out;
    for (const auto& w : j) {
        if (!w.is_array() || w.size() != 2)
            throw ConfigError("exclusion windows must be [start, end] pairs");
        out.push_back({month_from_iso(w[0].get<std::string>()),
                       month_from_iso(w[1].get<std::string>())});
    }
    return out;
}

void log_line(const std::string& line) { std::cerr << (line + "\n"); }  // single write per line

/// Runs fn(i) for i in [0, n) on `workers` threads; exceptions are collected
/// and rethrown after all workers join, so partial results stay intact.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr error;
    auto body = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= n || error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t pool_size = std::min(static_cast<std::size_t>(workers), n);
    for (std::size_t w = 0; w < pool_size; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

json params_to_json(const ChiarellaParams& p) {
    return json{{"kappa", p.kappa},     {"kappa3", p.kappa3},   {"beta", p.beta},
                {"gamma", p.gamma},     {"alpha", p.alpha},     {"sigma_n", p.sigma_n},
                {"sigma_v", p.sigma_v}, {"v0", p.v0}};
}

ChiarellaParams params_from_json(const json& j) {
    ChiarellaParams p;
    p.kappa = j.at("kappa").get<double>();
    p.kappa3 = j.at("kappa3").get<double>();
    p.beta = j.at("beta").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.sigma_n = j.at("sigma_n").get<double>();
    p.sigma_v = j.at("sigma_v").get<double>();
    p.v0 = j.at("v0").get<double>();
    return p;
}

void put_optional(json& j, const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
}

std::optional<double> get_optional(const json& j, const char* key) {
    if (j.contains(key)) return j.at(key).get<double>();
    return std::nullopt;
}

}  // namespace

RunConfig RunConfig::from_json_file(const std::string& path) {
    json j;
    try {
        j = json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }

    RunConfig cfg;
    try {
        if (j.contains("model")) cfg.model = model_kind_from_string(j["model"].get<std::string>());
        if (!j.contains("assets") || j["assets"].empty())
            throw ConfigError(path + ": empty asset list");
        for (const auto& a : j["assets"]) {
            AssetConfig ac;
            ac.id = a.at("id").get<std::string>();
            ac.csv_path = a.at("csv").get<std::string>();
            ac.asset_class = a.value("class", std::string("default"));
            if (a.contains("cpi")) ac.cpi_path = a["cpi"].get<std::string>();
            if (a.contains("exclusions")) ac.exclusions = parse_exclusions(a["exclusions"]);
            cfg.assets.push_back(std::move(ac));
        }
        cfg.alpha_grid = j.contains("alpha_grid") ? parse_alpha_grid(j["alpha_grid"])
                                                  : default_alpha_grid();
        if (j.contains("drift_order_override") && !j["drift_order_override"].is_null())
            cfg.drift_order_override = j["drift_order_override"].get<int>();
        if (j.contains("em")) {
            cfg.em_tol = j["em"].value("tol", cfg.em_tol);
            cfg.em_max_iter = j["em"].value("max_iter", cfg.em_max_iter);
        }
        if (j.contains("silverman")) {
            cfg.silverman_n_boot = j["silverman"].value("n_boot", cfg.silverman_n_boot);
            cfg.silverman_significance =
                j["silverman"].value("significance", cfg.silverman_significance);
            cfg.silverman_seed = j["silverman"].value("seed", cfg.silverman_seed);
        }
        if (j.contains("sloppiness")) {
            cfg.sloppiness_delta_rel = j["sloppiness"].value("delta_rel", cfg.sloppiness_delta_rel);
            cfg.sloppiness_horizon = j["sloppiness"].value("horizon", cfg.sloppiness_horizon);
            cfg.sloppiness_seed = j["sloppiness"].value("seed", cfg.sloppiness_seed);
        }
        if (j.contains("protocol")) {
            cfg.protocol.horizon = j["protocol"].value("horizon", cfg.protocol.horizon);
            cfg.protocol.dt = j["protocol"].value("dt", cfg.protocol.dt);
            cfg.protocol.seed = j["protocol"].value("seed", cfg.protocol.seed);
            cfg.protocol.burn_in = j["protocol"].value("burn_in", cfg.protocol.burn_in);
            cfg.protocol_subsample = j["protocol"].value("subsample", cfg.protocol_subsample);
        }
        if (j.contains("backtest_splits")) {
            for (const auto& s : j["backtest_splits"])
                cfg.backtest_splits.emplace_back(month_from_iso(s[0].get<std::string>()),
                                                 month_from_iso(s[1].get<std::string>()));
        }
        cfg.workers = j.value("workers", 1);
        cfg.output_dir = j.value("output_dir", std::string("out"));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!(cfg.silverman_significance > 0.0 && cfg.silverman_significance < 1.0))
        throw ConfigError("significance must lie in (0, 1)");

    // Ids and referenced paths must be distinct.
    std::vector<std::string> ids, paths;
    for (const auto& a : cfg.assets) {
        ids.push_back(a.id);
        paths.push_back(a.csv_path);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw ConfigError("duplicate asset ids in config");
    std::sort(paths.begin(), paths.end());
    if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
        throw ConfigError("duplicate asset CSV paths in config");
    return cfg;
}

std::string RunConfig::cache_key_material() const {
    json j;
    j["model"] = to_string(model);
    j["alpha_grid"] = alpha_grid;
    if (drift_order_override) j["drift_order_override"] = *drift_order_override;
    j["em"] = {{"tol", em_tol}, {"max_iter", em_max_iter}};
    json assets_j = json::array();
    for (const auto& a : assets) {
        json aj{{"id", a.id}, {"csv", a.csv_path}, {"class", a.asset_class}};
        if (a.cpi_path) aj["cpi"] = *a.cpi_path;
        json ex = json::array();
        for (const auto& w : a.exclusions) ex.push_back({w.first, w.last});
        aj["exclusions"] = ex;
        assets_j.push_back(aj);
    }
    j["assets"] = assets_j;
    return j.dump();
}

std::vector<LoadedAsset> load_assets(const RunConfig& config) {
    std::vector<LoadedAsset> out(config.assets.size());
    parallel_for(config.assets.size(), config.workers, [&](std::size_t i) {
        const auto& ac = config.assets[i];
        RawSeries raw;
        try {
            raw = read_price_csv(ac.csv_path, ac.id);
            if (ac.cpi_path) attach_cpi_csv(raw, *ac.cpi_path);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        out[i] = {ac, prepare_series(raw, ac.exclusions, config.drift_order_override)};
    });
    return out;
}

std::uint64_t calibrate_input_hash(const RunConfig& config) {
    std::uint64_t h = fnv1a64(config.cache_key_material());
    for (const auto& a : config.assets) {
        h = fnv1a64(slurp(a.csv_path), h);
        if (a.cpi_path) h = fnv1a64(slurp(*a.cpi_path), h);
    }
    return h;
}

std::string calibration_report_to_json(const CalibrationReport& report) {
    json j;
    j["asset"] = report.asset;
    j["model"] = to_string(report.model);
    j["theta"] = params_to_json(report.theta);
    json err;
    put_optional(err, "kappa", report.err_kappa);
    put_optional(err, "kappa3", report.err_kappa3);
    put_optional(err, "beta", report.err_beta);
    put_optional(err, "sigma_n", report.err_sigma_n);
    put_optional(err, "v0", report.err_v0);
    put_optional(err, "gamma", report.err_gamma);
    put_optional(err, "sigma_v", report.err_sigma_v);
    j["theta_err"] = err;
    j["loglik"] = report.loglik;
    j["loglik_norm"] = report.loglik_norm;
    j["iterations"] = report.iterations;
    j["converged"] = report.converged;
    if (report.sigma_ratio) j["sigma_ratio"] = *report.sigma_ratio;
    j["history"] = report.history;
    j["flags"] = report.flags;
    return j.dump(2) + "\n";
}

CalibrationReport calibration_report_from_json(const std::string& text) {
    const json j = json::parse(text);
    CalibrationReport r;
    r.asset = j.at("asset").get<std::string>();
    r.model = model_kind_from_string(j.at("model").get<std::string>());
    r.theta = params_from_json(j.at("theta"));
    const json& err = j.at("theta_err");
    r.err_kappa = get_optional(err, "kappa");
    r.err_kappa3 = get_optional(err, "kappa3");
    r.err_beta = get_optional(err, "beta");
    r.err_sigma_n = get_optional(err, "sigma_n");
    r.err_v0 = get_optional(err, "v0");
    r.err_gamma = get_optional(err, "gamma");
    r.err_sigma_v = get_optional(err, "sigma_v");
    r.loglik = j.at("loglik").get<double>();
    r.loglik_norm = j.at("loglik_norm").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    if (j.contains("sigma_ratio")) r.sigma_ratio = j["sigma_ratio"].get<double>();
    r.history = j.at("history").get<std::vector<double>>();
    r.flags = j.at("flags").get<std::vector<std::string>>();
    return r;
}

std::string sloppiness_report_to_json(const SloppinessReport& report) {
    json j;
    j["param_names"] = report.param_names;
    j["lambda_max"] = report.lambda_max;
    j["decades_spanned"] = report.decades_spanned;
    std::vector<double> ev(report.eigenvalues.data(),
                           report.eigenvalues.data() + report.eigenvalues.size());
    j["eigenvalues_normalized"] = ev;
    json vecs = json::array();
    for (Eigen::Index c = 0; c < report.eigenvectors.cols(); ++c) {
        std::vector<double> col(report.eigenvectors.rows());
        for (Eigen::Index r = 0; r < report.eigenvectors.rows(); ++r)
            col[r] = report.eigenvectors(r, c);
        vecs.push_back(col);
    }
    j["eigenvectors"] = vecs;
    json hess = json::array();
    for (Eigen::Index r = 0; r < report.hessian.rows(); ++r) {
        std::vector<double> row(report.hessian.cols());
        for (Eigen::Index c = 0; c < report.hessian.cols(); ++c) row[c] = report.hessian(r, c);
        hess.push_back(row);
    }
    j["hessian"] = hess;
    j["notes"] = report.notes;
    return j.dump(2) + "\n";
}

std::uint64_t hash_directory(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir).string());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a64("tree");
    for (const auto& f : files) {
        h = fnv1a64(f, h);
        h = fnv1a64(slurp((fs::path(dir) / f).string()), h);
    }
    return h;
}

namespace {

struct TrendStage {
    AlphaSelection alpha_sel;
    std::map<std::string, TanhFit> class_fits;
    std::map<std::string, TrendFit> per_asset;
    // Pooled normalised (trend, forward return) pairs per class, kept for the
    // rolling-average diagnostic curve.
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pooled;
};

TrendStage estimate_trend_stage(const RunConfig& config, std::vector<LoadedAsset>& assets) {
    // Deterministic pooling order.
    std::sort(assets.begin(), assets.end(),
              [](const LoadedAsset& a, const LoadedAsset& b) { return a.config.id < b.config.id; });

    std::vector<std::vector<double>> dedrifted;
    for (const auto& a : assets) dedrifted.push_back(a.series.dedrifted);

    TrendStage stage;
    stage.alpha_sel = estimate_alpha(dedrifted, config.alpha_grid);
    const double alpha = stage.alpha_sel.alpha;

    // Pool normalised (trend, forward return) pairs per asset class.
    std::map<std::string, double> var_m_by_asset;
    for (const auto& a : assets) {
        const auto returns = diff(a.series.dedrifted);
        const auto m = ewma_trend(returns, alpha);
        const double var_m = population_variance(m);
        const double var_r = population_variance(returns);
        if (!(var_m > 0.0 && var_r > 0.0))
            throw ConfigError(a.config.id + ": degenerate series for trend estimation");
        var_m_by_asset[a.config.id] = var_m;
        auto& [xs, ys] = stage.pooled[a.config.asset_class];
        const double sm = std::sqrt(var_m), sr = std::sqrt(var_r);
        for (std::size_t i = 0; i < returns.size(); ++i) {
            xs.push_back(m[i] / sm);
            ys.push_back(returns[i] / sr);
        }
    }
    for (const auto& [cls, data] : stage.pooled) {
        stage.class_fits.emplace(cls, fit_tanh(data.first, data.second));
    }
    for (const auto& a : assets) {
        const auto& fit = stage.class_fits.at(a.config.asset_class);
        stage.per_asset.emplace(a.config.id,
                                make_trend_fit(stage.alpha_sel, fit, var_m_by_asset[a.config.id]));
    }
    return stage;
}

json trend_stage_to_json(const TrendStage& stage) {
    json j;
    j["alpha"] = stage.alpha_sel.alpha;
    json curve;
    for (const auto& [a, sr] : stage.alpha_sel.sharpe_curve) curve[std::to_string(a)] = sr;
    j["sharpe_curve"] = curve;
    json classes;
    for (const auto& [cls, fit] : stage.class_fits) {
        classes[cls] = {{"a", fit.a},
                        {"b", fit.b},
                        {"gamma_tilde", fit.gamma_tilde},
                        {"c", fit.c},
                        {"gamma_tilde_err", fit.gamma_tilde_err()},
                        {"rss", fit.rss},
                        {"n", fit.n}};
    }
    j["class_fits"] = classes;
    json per_asset;
    for (const auto& [id, tf] : stage.per_asset) {
        per_asset[id] = {{"gamma", tf.gamma},     {"gamma_err", tf.gamma_err},
                         {"var_m", tf.var_m},     {"alpha", tf.alpha},
                         {"a", tf.a},             {"b", tf.b},
                         {"c", tf.c},             {"gamma_tilde", tf.gamma_tilde}};
    }
    j["per_asset"] = per_asset;
    return j;
}

std::string table_csv_row(const CalibrationReport& r) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  r.asset.c_str(), r.theta.kappa, r.theta.kappa3, r.theta.beta, r.theta.gamma,
                  r.theta.sigma_n, r.theta.sigma_v, r.theta.v0, r.loglik_norm);
    return buf;
}

}  // namespace

int run_calibrate(const RunConfig& config) {
    const fs::path out_dir(config.output_dir);
    const std::uint64_t input_hash = calibrate_input_hash(config);

    // Stage cache: identical inputs regenerate nothing.
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            const json manifest = json::parse(slurp(manifest_path.string()));
            if (manifest.value("input_hash", std::string()) == std::to_string(input_hash)) {
                bool complete = true;
                for (const auto& f : manifest.at("files"))
                    complete = complete && fs::exists(out_dir / f.get<std::string>());
                if (complete) {
                    log_line("stage=calibrate cache=hit hash=" + std::to_string(input_hash));
                    return 0;
                }
            }
        } catch (const std::exception&) {
            // Unreadable manifest: fall through and recompute.
        }
    }

    auto assets = load_assets(config);
    const TrendStage trend = estimate_trend_stage(config, assets);
    log_line("stage=trend alpha=" + std::to_string(trend.alpha_sel.alpha));

    std::vector<std::string> files;
    fs::create_directories(out_dir / "calibration");
    fs::create_directories(out_dir / "series");

    spit((out_dir / "trend.json").string(), trend_stage_to_json(trend).dump(2) + "\n");
    files.push_back("trend.json");

    // Rolling-average diagnostic next to each class tanh fit.
    for (const auto& [cls, data] : trend.pooled) {
        const auto curve = rolling_mean_curve(data.first, data.second, 1000);
        std::string csv = "m_norm,ret_norm_rollavg\n";
        char row[64];
        for (const auto& [x, y] : curve) {
            std::snprintf(row, sizeof(row), "%.10g,%.10g\n", x, y);
            csv += row;
        }
        const std::string curve_file = "trend_curve_" + cls + ".csv";
        spit((out_dir / curve_file).string(), csv);
        files.push_back(curve_file);
    }

    // Group by class.
    std::map<std::string, std::vector<const LoadedAsset*>> by_class;
    for (const auto& a : assets) by_class[a.config.asset_class].push_back(&a);

    std::string table_csv = "asset,kappa,kappa3,beta,gamma,sigma_N,sigma_V,v0,loglik_norm\n";
    json failures = json::array();

    std::vector<std::string> class_names;
    for (const auto& [cls, members] : by_class) class_names.push_back(cls);

    std::map<std::string, ClassCalibration> class_results;
    std::mutex results_mu;
    parallel_for(class_names.size(), config.workers, [&](std::size_t ci) {
        const std::string& cls = class_names[ci];
        const auto& members = by_class.at(cls);
        TrendInputs ti;
        ti.alpha = trend.alpha_sel.alpha;
        std::vector<CleanSeries> series;
        for (const auto* m : members) {
            series.push_back(m->series);
            ti.gamma_by_asset[m->config.id] = trend.per_asset.at(m->config.id).gamma;
            ti.gamma_err_by_asset[m->config.id] = trend.per_asset.at(m->config.id).gamma_err;
        }
        try {
            ClassCalibration cc =
                three_step_calibrate(series, config.model, ti, config.em_tol, config.em_max_iter);
            std::lock_guard lock(results_mu);
            class_results.emplace(cls, std::move(cc));
        } catch (const std::exception& e) {
            std::lock_guard lock(results_mu);
            failures.push_back({{"class", cls}, {"error", e.what()}});
        }
    });

    for (const auto& [cls, cc] : class_results) {
        json class_json{{"class", cls},
                        {"sigma_ratio", cc.sigma_ratio},
                        {"sigma_ratio_err", cc.sigma_ratio_err}};
        json members = json::array();
        for (const auto& [id, rep] : cc.per_asset) members.push_back(id);
        class_json["assets"] = members;
        const std::string class_file = "calibration/class_" + cls + ".json";
        spit((out_dir / class_file).string(), class_json.dump(2) + "\n");
        files.push_back(class_file);

        for (const auto& [id, rep] : cc.per_asset) {
            for (std::size_t i = 0; i < rep.history.size(); ++i)
                log_line("stage=em asset=" + id + " iter=" + std::to_string(i) +
                         " loglik=" + std::to_string(rep.history[i]));
            const std::string rep_file = "calibration/" + id + ".json";
            spit((out_dir / rep_file).string(), calibration_report_to_json(rep));
            files.push_back(rep_file);
            table_csv += table_csv_row(rep);

            // Clean series and filtered/smoothed values for downstream stages.
            const LoadedAsset* asset = nullptr;
            for (const auto* m : by_class.at(cls))
                if (m->config.id == id) asset = m;
            const std::string clean_file = "series/" + id + "_clean.csv";
            asset->series.write_csv((out_dir / clean_file).string());
            files.push_back(clean_file);

            StateSpaceSpec spec = StateSpaceSpec::from_params(rep.theta, asset->series.dedrifted);
            const FilterResult fr = run_filter_smoother(spec);
            const std::string filter_file = "series/" + id + "_filter.csv";
            fr.write_csv((out_dir / filter_file).string(), asset->series.months);
            files.push_back(filter_file);
        }
    }

    spit((out_dir / "calibration" / "table.csv").string(), table_csv);
    files.push_back("calibration/table.csv");

    if (!failures.empty()) {
        spit((out_dir / "failures.json").string(), failures.dump(2) + "\n");
        files.push_back("failures.json");
    }

    std::sort(files.begin(), files.end());
    json manifest{{"input_hash", std::to_string(input_hash)}, {"files", files}};
    spit(manifest_path.string(), manifest.dump(2) + "\n");
    log_line("stage=calibrate cache=store hash=" + std::to_string(input_hash));
    return static_cast<int>(failures.size());
}

namespace {

struct BimodalityRow {
    std::string asset;
    double p_filtered = 0.0, p_smoothed = 0.0, p_numerical = 0.0;
    std::string verdict_empirical, verdict_numerical;
    double js = 0.0;
    std::size_t subsample_factor = 1;
};

std::string verdict_of(double p_filt, double p_smooth, double significance) {
    const bool rf = p_filt < significance;
    const bool rs = p_smooth < significance;
    if (rf && rs) return "bimodal";
    if (!rf && !rs) return "unimodal";
    return "inconclusive";
}

void write_histogram_csv(const std::string& path, std::span<const double> sample, int bins) {
    const auto [mn, mx] = std::minmax_element(sample.begin(), sample.end());
    const double lo = *mn, hi = *mx;
    const double width = (hi > lo) ? (hi - lo) / bins : 1.0;
    std::vector<double> counts(bins, 0.0);
    for (double x : sample) {
        int i = static_cast<int>((x - lo) / width);
        counts[std::clamp(i, 0, bins - 1)] += 1.0;
    }
    std::string csv = "bin_center,density\n";
    char buf[80];
    for (int i = 0; i < bins; ++i) {
        const double center = lo + (i + 0.5) * width;
        const double density = counts[i] / (static_cast<double>(sample.size()) * width);
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g\n", center, density);
        csv += buf;
    }
    spit(path, csv);
}

}  // namespace

int run_analyze(const RunConfig& config, const std::string& calibration_dir) {
    const fs::path cal_dir(calibration_dir);
    const fs::path out_dir = fs::path(config.output_dir) / "analysis";
    fs::create_directories(out_dir);

    auto assets = load_assets(config);
    std::sort(assets.begin(), assets.end(),
              [](const LoadedAsset& a, const LoadedAsset& b) { return a.config.id < b.config.id; });

    // Calibration artifacts are required inputs here.
    std::vector<CalibrationReport> reports;
    for (const auto& a : assets) {
        const fs::path rep_path = cal_dir / "calibration" / (a.config.id + ".json");
        if (!fs::exists(rep_path))
            throw ConfigError("missing calibration report " + rep_path.string());
        reports.push_back(calibration_report_from_json(slurp(rep_path.string())));
    }

    std::vector<BimodalityRow> rows(assets.size());
    std::vector<SloppinessReport> slop(assets.size());
    std::vector<BacktestResult> backtests(assets.size());

    parallel_for(assets.size(), config.workers, [&](std::size_t i) {
        const auto& asset = assets[i];
        const auto& rep = reports[i];
        const auto& id = asset.config.id;

        StateSpaceSpec spec = StateSpaceSpec::from_params(rep.theta, asset.series.dedrifted);
        const FilterResult fr = run_filter_smoother(spec);

        std::vector<double> delta_filt(asset.series.size()), delta_smooth(asset.series.size());
        for (std::size_t t = 0; t < asset.series.size(); ++t) {
            delta_filt[t] = asset.series.dedrifted[t] - fr.v_filt[t];
            delta_smooth[t] = asset.series.dedrifted[t] - fr.v_smooth[t];
        }

        SilvermanOptions sopts;
        sopts.n_boot = config.silverman_n_boot;
        sopts.seed = config.silverman_seed ^ fnv1a64(id);
        BimodalityRow row;
        row.asset = id;
        row.p_filtered = silverman_pvalue(delta_filt, sopts);
        row.p_smoothed = silverman_pvalue(delta_smooth, sopts);
        row.verdict_empirical =
            verdict_of(row.p_filtered, row.p_smoothed, config.silverman_significance);

        // Numerical leg: match simulated moments to the smoothed empirical
        // mispricing, then test the long simulated sample.
        double emp_mean = 0.0, emp_var = 0.0;
        for (double d : delta_smooth) emp_mean += d;
        emp_mean /= static_cast<double>(delta_smooth.size());
        for (double d : delta_smooth) emp_var += (d - emp_mean) * (d - emp_mean);
        emp_var /= static_cast<double>(delta_smooth.size());

        SimProtocol proto = config.protocol;
        proto.seed = config.protocol.seed ^ fnv1a64(id);
        const VarianceMatchResult vm = variance_match(
            rep.theta, rep.model, asset.series.dedrifted, emp_mean, emp_var, proto);

        std::vector<double> numerical =
            simulated_mispricing(vm.theta, proto, config.protocol_subsample);
        const std::size_t full_points =
            static_cast<std::size_t>(proto.horizon / proto.dt * (1.0 - proto.burn_in));
        row.subsample_factor = std::max<std::size_t>(1, full_points / numerical.size());
        row.p_numerical = silverman_pvalue(numerical, sopts);
        row.verdict_numerical =
            row.p_numerical < config.silverman_significance ? "bimodal" : "unimodal";

        row.js = js_distance(delta_smooth, numerical);

        const int bins = std::max(
            1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(delta_smooth.size())))));
        write_histogram_csv((out_dir / ("hist_" + id + "_empirical.csv")).string(), delta_smooth,
                            bins);
        write_histogram_csv((out_dir / ("hist_" + id + "_numerical.csv")).string(), numerical,
                            bins);
        rows[i] = row;

        slop[i] = sloppiness_hessian(rep.theta, rep.model, config.sloppiness_delta_rel,
                                     config.sloppiness_seed ^ fnv1a64(id),
                                     config.sloppiness_horizon);
        spit((out_dir / ("sloppiness_" + id + ".json")).string(),
             sloppiness_report_to_json(slop[i]));

        backtests[i] = backtest_signals(rep.theta, asset.series, fr);
        std::string bt_csv = "month,pnl_trend,pnl_value\n";
        char buf[96];
        for (std::size_t t = 0; t < backtests[i].months.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n",
                          month_to_iso(backtests[i].months[t]).c_str(),
                          backtests[i].pnl_trend[t], backtests[i].pnl_value[t]);
            bt_csv += buf;
        }
        spit((out_dir / ("backtest_" + id + ".csv")).string(), bt_csv);
        log_line("stage=analyze asset=" + id + " p_num=" + std::to_string(row.p_numerical));
    });

    // Bimodality table.
    json bim = json::array();
    std::string bim_csv =
        "asset,p_filtered,p_smoothed,verdict_empirical,verdict_numerical,js_distance\n";
    for (const auto& row : rows) {
        bim.push_back({{"asset", row.asset},
                       {"p_filtered", row.p_filtered},
                       {"p_smoothed", row.p_smoothed},
                       {"p_numerical", row.p_numerical},
                       {"verdict_empirical", row.verdict_empirical},
                       {"verdict_numerical", row.verdict_numerical},
                       {"js_distance", row.js},
                       {"subsample_factor", row.subsample_factor}});
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.4g,%.4g,%s,%s,%.4g\n", row.asset.c_str(),
                      row.p_filtered, row.p_smoothed, row.verdict_empirical.c_str(),
                      row.verdict_numerical.c_str(), row.js);
        bim_csv += buf;
    }
    spit((out_dir / "bimodality.json").string(), bim.dump(2) + "\n");
    spit((out_dir / "bimodality.csv").string(), bim_csv);

    // Class-averaged sloppiness.
    std::map<std::string, std::vector<SloppinessReport>> by_class;
    for (std::size_t i = 0; i < assets.size(); ++i)
        by_class[assets[i].config.asset_class].push_back(slop[i]);
    for (const auto& [cls, members] : by_class) {
        const SloppinessReport avg = average_class_hessian(members);
        spit((out_dir / ("sloppiness_class_" + cls + ".json")).string(),
             sloppiness_report_to_json(avg));
    }

    // Backtest summary with the configured period splits.
    json bt = json::array();
    for (std::size_t i = 0; i < assets.size(); ++i) {
        json entry{{"asset", assets[i].config.id},
                   {"sr_trend", backtests[i].sr_trend},
                   {"sr_value", backtests[i].sr_value},
                   {"first_month", month_to_iso(backtests[i].first_month)},
                   {"last_month", month_to_iso(backtests[i].last_month)}};
        json splits = json::array();
        for (const auto& [from, to] : config.backtest_splits) {
            std::vector<double> pt, pv;
            for (std::size_t t = 0; t < backtests[i].months.size(); ++t) {
                if (backtests[i].months[t] >= from && backtests[i].months[t] <= to) {
                    pt.push_back(backtests[i].pnl_trend[t]);
                    pv.push_back(backtests[i].pnl_value[t]);
                }
            }
            json split{{"from", month_to_iso(from)}, {"to", month_to_iso(to)}};
            if (pt.size() >= 2 && population_variance(pt) > 0.0) split["sr_trend"] = sharpe_ratio(pt);
            if (pv.size() >= 2 && population_variance(pv) > 0.0) split["sr_value"] = sharpe_ratio(pv);
            splits.push_back(split);
        }
        entry["splits"] = splits;
        bt.push_back(entry);
    }
    spit((out_dir / "backtest.json").string(), bt.dump(2) + "\n");
    return 0;
}

int run_backtest(const RunConfig& config, const std::string& calibration_dir) {
    const fs::path cal_dir(calibration_dir);
    const fs::path out_dir = fs::path(config.output_dir) / "backtest";
    fs::create_directories(out_dir);

    auto assets = load_assets(config);
    std::sort(assets.begin(), assets.end(),
              [](const LoadedAsset& a, const LoadedAsset& b) { return a.config.id < b.config.id; });

    json bt = json::array();
    for (const auto& asset : assets) {
        const fs::path rep_path = cal_dir / "calibration" / (asset.config.id + ".json");
        if (!fs::exists(rep_path))
            throw ConfigError("missing calibration report " + rep_path.string());
        const CalibrationReport rep = calibration_report_from_json(slurp(rep_path.string()));

        StateSpaceSpec spec = StateSpaceSpec::from_params(rep.theta, asset.series.dedrifted);
        const FilterResult fr = run_filter(spec);
        const BacktestResult res = backtest_signals(rep.theta, asset.series, fr);

        std::string csv = "month,pnl_trend,pnl_value\n";
        char buf[96];
        for (std::size_t t = 0; t < res.months.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", month_to_iso(res.months[t]).c_str(),
                          res.pnl_trend[t], res.pnl_value[t]);
            csv += buf;
        }
        spit((out_dir / ("backtest_" + asset.config.id + ".csv")).string(), csv);
        bt.push_back({{"asset", asset.config.id},
                      {"sr_trend", res.sr_trend},
                      {"sr_value", res.sr_value}});
    }
    spit((out_dir / "backtest.json").string(), bt.dump(2) + "\n");
    return 0;
}

}  // namespace chiarella
