#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "chiarella/model.hpp"
#include "chiarella/pipeline.hpp"
#include "chiarella/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chiarella;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitPartial = 4;

struct SimulateArgs {
    ChiarellaParams params;
    double init_p = 0.0, init_v = 0.0, init_m = 0.0;
    double dt = 0.01;
    double horizon = 1000.0;
    std::optional<std::uint64_t> seed;
    double drift_slope = 0.0;
    bool deterministic = false;
    bool discrete = false;
    std::string output = "sim_out";
    std::optional<std::string> price_csv;
    std::string price_start = "1900-01";
    double price_drift = 0.0;
};

int do_simulate(const SimulateArgs& args) {
    try {
        args.params.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    if (args.discrete && args.deterministic) {
        std::cerr << "config error: --discrete and --deterministic are exclusive\n";
        return kExitConfig;
    }
    const bool stochastic = !args.deterministic;
    if (stochastic && !args.seed) {
        std::cerr << "config error: stochastic runs require --seed\n";
        return kExitConfig;
    }

    fs::create_directories(args.output);
    const SystemState init{args.init_p, args.init_v, args.init_m, 0.0};
    const DriftModel drift =
        DriftModel::constant_slope(args.drift_slope, -1.0, args.horizon + 1.0);

    Trajectory traj;
    if (args.discrete) {
        traj = simulate_discrete(args.params, static_cast<int>(args.horizon), *args.seed, init);
    } else if (args.deterministic) {
        traj = integrate_deterministic(args.params, init, args.dt, args.horizon, drift);
    } else {
        traj = simulate_sde(args.params, init, args.dt, args.horizon, *args.seed, drift);
    }
    traj.write_csv((fs::path(args.output) / "trajectory.csv").string());

    json summary;
    summary["mode"] = args.discrete ? "discrete" : (args.deterministic ? "deterministic" : "sde");
    summary["dt"] = traj.dt;
    summary["points"] = traj.size();
    if (args.seed) summary["seed"] = *args.seed;
    if (args.params.kappa3 == 0.0 && args.params.kappa > 0.0) {
        const RegimeClassification rc = classify_regime(args.params);
        json regime{{"regime", to_string(rc.regime)}, {"trace", rc.trace}, {"det", rc.det}};
        if (rc.hopf_alpha) regime["hopf_alpha"] = *rc.hopf_alpha;
        summary["regime"] = regime;
    } else {
        summary["regime"] = nullptr;
        summary["regime_note"] = "phase classification applies to the linear model with kappa > 0";
    }
    std::ofstream os(fs::path(args.output) / "summary.json");
    os << summary.dump(2) << "\n";

    if (args.price_csv) {
        // Synthetic monthly price export, usable as calibrate input.
        const int start = month_from_iso(args.price_start);
        const fs::path parent = fs::path(*args.price_csv).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        std::ofstream pcsv(*args.price_csv);
        if (!pcsv) {
            std::cerr << "config error: cannot write " << *args.price_csv << "\n";
            return kExitConfig;
        }
        pcsv << "date,price\n";
        char buf[64];
        for (std::size_t i = 0; i < traj.size(); ++i) {
            const double t = traj.times[i];
            if (std::abs(t - std::round(t)) > 1e-9) continue;  // monthly rows only
            const int month = start + static_cast<int>(std::llround(t));
            std::snprintf(buf, sizeof(buf), "%s,%.12g\n", month_to_iso(month).c_str(),
                          std::exp(traj.p[i] + args.price_drift * t));
            pcsv << buf;
        }
    }
    return kExitOk;
}

int do_phase_portrait(const ChiarellaParams& params, double m_lo, double m_hi, int grid_n,
                      const std::string& output) {
    if (params.kappa3 != 0.0 || params.kappa <= 0.0) {
        std::cerr << "config error: phase portrait requires the linear model with kappa > 0\n";
        return kExitConfig;
    }
    if (grid_n < 2 || !(m_hi > m_lo)) {
        std::cerr << "config error: bad m-range or grid\n";
        return kExitConfig;
    }
    fs::create_directories(output);

    char buf[160];
    std::ofstream nc(fs::path(output) / "nullclines.csv");
    nc << "m,delta_nullcline,m_nullcline\n";
    double max_abs_delta = 0.0;
    for (int i = 0; i < grid_n; ++i) {
        const double m = m_lo + (m_hi - m_lo) * i / (grid_n - 1);
        const NullclinePoint p = nullclines(params, m);
        max_abs_delta = std::max({max_abs_delta, std::abs(p.delta_nullcline),
                                  std::abs(p.m_nullcline)});
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", m, p.delta_nullcline,
                      p.m_nullcline);
        nc << buf;
    }

    const double d_span = std::max(1.05 * max_abs_delta, 1e-6);
    std::ofstream field(fs::path(output) / "field.csv");
    field << "delta,m,ddelta,dm\n";
    for (int i = 0; i < grid_n; ++i) {
        const double delta = -d_span + 2.0 * d_span * i / (grid_n - 1);
        for (int j = 0; j < grid_n; ++j) {
            const double m = m_lo + (m_hi - m_lo) * j / (grid_n - 1);
            const PhaseVelocity v = phase_velocity(params, delta, m);
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", delta, m, v.ddelta, v.dm);
            field << buf;
        }
    }
    return kExitOk;
}

void add_param_options(CLI::App* cmd, ChiarellaParams& p) {
    cmd->add_option("--kappa", p.kappa, "mean-reversion strength (1/month)");
    cmd->add_option("--kappa3", p.kappa3, "cubic mean-reversion coefficient");
    cmd->add_option("--beta", p.beta, "trend-follower impact");
    cmd->add_option("--gamma", p.gamma, "trend saturation sensitivity");
    cmd->add_option("--alpha", p.alpha, "EWMA decay rate in (0, 1]");
    cmd->add_option("--sigma-n", p.sigma_n, "noise-trader volatility");
    cmd->add_option("--sigma-v", p.sigma_v, "value volatility");
    cmd->add_option("--v0", p.v0, "initial log-value parameter");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous-agent market model: simulation, calibration, analysis"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "simulate the model and export a trajectory");
    add_param_options(sim_cmd, sim.params);
    sim_cmd->add_option("--init-p", sim.init_p, "initial log-price");
    sim_cmd->add_option("--init-v", sim.init_v, "initial log-value");
    sim_cmd->add_option("--init-m", sim.init_m, "initial trend signal");
    sim_cmd->add_option("--dt", sim.dt, "time step (months)");
    sim_cmd->add_option("--horizon", sim.horizon, "horizon (months)");
    std::uint64_t seed_value = 0;
    auto* seed_opt = sim_cmd->add_option("--seed", seed_value, "RNG seed (stochastic runs)");
    sim_cmd->add_flag("--deterministic", sim.deterministic, "noiseless Runge-Kutta integration");
    sim_cmd->add_flag("--discrete", sim.discrete, "exact monthly iteration");
    sim_cmd->add_option("--drift-slope", sim.drift_slope, "constant drift g");
    sim_cmd->add_option("--output,-o", sim.output, "output directory");
    std::string price_csv;
    auto* price_opt = sim_cmd->add_option("--price-csv", price_csv,
                                          "also export a date,price CSV usable for calibrate");
    sim_cmd->add_option("--price-start", sim.price_start, "first month of the price CSV");
    sim_cmd->add_option("--price-drift", sim.price_drift,
                        "log drift per month added to the exported prices");

    ChiarellaParams pp_params;
    double m_lo = -2.0, m_hi = 2.0;
    int grid_n = 50;
    std::string pp_output = "phase_out";
    auto* pp_cmd = app.add_subcommand("phase-portrait", "nullclines and velocity field data");
    add_param_options(pp_cmd, pp_params);
    pp_cmd->add_option("--m-min", m_lo, "lower trend-signal bound");
    pp_cmd->add_option("--m-max", m_hi, "upper trend-signal bound");
    pp_cmd->add_option("--grid-n", grid_n, "grid resolution per axis");
    pp_cmd->add_option("--output,-o", pp_output, "output directory");

    std::string config_path, calibration_dir, output_override;
    int workers_override = 0;
    auto* cal_cmd = app.add_subcommand("calibrate", "run the full calibration pipeline");
    cal_cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    cal_cmd->add_option("--output,-o", output_override, "override output directory");
    cal_cmd->add_option("--workers", workers_override, "worker threads");

    auto* an_cmd = app.add_subcommand("analyze", "bimodality, sloppiness and backtest reports");
    an_cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    an_cmd->add_option("--calibration", calibration_dir, "calibration output directory")
        ->required();
    an_cmd->add_option("--output,-o", output_override, "override output directory");
    an_cmd->add_option("--workers", workers_override, "worker threads");

    auto* bt_cmd = app.add_subcommand("backtest", "model-implied signal backtests only");
    bt_cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    bt_cmd->add_option("--calibration", calibration_dir, "calibration output directory")
        ->required();
    bt_cmd->add_option("--output,-o", output_override, "override output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (sim_cmd->parsed()) {
            if (seed_opt->count() > 0) sim.seed = seed_value;
            if (price_opt->count() > 0) sim.price_csv = price_csv;
            return do_simulate(sim);
        }
        if (pp_cmd->parsed())
            return do_phase_portrait(pp_params, m_lo, m_hi, grid_n, pp_output);

        RunConfig config = RunConfig::from_json_file(config_path);
        if (!output_override.empty()) config.output_dir = output_override;
        if (workers_override > 0) config.workers = workers_override;

        if (cal_cmd->parsed()) {
            const int failures = run_calibrate(config);
            return failures == 0 ? kExitOk : kExitPartial;
        }
        if (an_cmd->parsed()) return run_analyze(config, calibration_dir);
        if (bt_cmd->parsed()) return run_backtest(config, calibration_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
