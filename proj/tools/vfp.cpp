// vfp: experiments with factor models conditioned on expert views.
//
// Every subcommand writes CSV tables (each opening with a "# schema:" line)
// and a manifest.json into --out-dir. Exit status: 0 on success, 2 for an
// invalid configuration or input file, 3 for a numerical failure or a
// rejected calibration.

#include <viewfactor/bridge.hpp>
#include <viewfactor/calibrate.hpp>
#include <viewfactor/harness.hpp>
#include <viewfactor/io.hpp>
#include <viewfactor/learning.hpp>
#include <viewfactor/presets.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace viewfactor;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Flags shared by every subcommand.
struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> paths;
    std::string out_dir = ".";
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config, "Experiment configuration (JSON)");
    sub->add_option("--seed", o.seed, "Random seed (overrides the configuration)");
    sub->add_option("--paths", o.paths, "Number of Monte Carlo paths (overrides the configuration)");
    sub->add_option("--out-dir", o.out_dir, "Directory for CSV tables and manifest.json");
}

/// Collects the files written by a subcommand and records them in the
/// manifest.
class Output {
public:
    Output(std::string dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw ConfigError("--out-dir: cannot create '" + dir_ + "': " + ec.message());
    }

    std::ofstream open(const std::string& name) {
        const std::string p = (fs::path(dir_) / name).string();
        std::ofstream os(p);
        if (!os) throw ConfigError("--out-dir: cannot write '" + p + "'");
        os.precision(12);
        files_.push_back(name);
        return os;
    }

    void manifest(const std::string& subcommand, const std::string& hash, std::uint64_t seed, Json extra = {}) {
        Json j;
        j["subcommand"] = subcommand;
        j["command"] = command_;
        j["config_hash"] = hash;
        j["seed"] = seed;
        j["files"] = files_;
        if (!extra.is_null())
            for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        std::ofstream os(fs::path(dir_) / "manifest.json");
        if (!os) throw ConfigError("--out-dir: cannot write manifest.json");
        os << j.dump(2) << "\n";
    }

private:
    std::string dir_;
    std::string command_;
    std::vector<std::string> files_;
};

ExperimentConfig load_experiment(const CommonOptions& o) {
    ExperimentConfig cfg = o.config.empty() ? config_from_json(Json::object()) : load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.paths) cfg.n_paths = *o.paths;
    cfg.validate();
    return cfg;
}

std::string sweep_text(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream s;
    s << v;
    return s.str();
}

void print_strategies(const ExperimentReport& r) {
    std::cout << "strategy            gamma  sweep     mean(se)              sd(se)                cer(se)"
                 "               turnover(se)\n";
    for (const auto& row : r.strategies) {
        auto est = [](const Estimate& e) {
            std::ostringstream s;
            s.precision(5);
            s << e.value << " (" << e.se << ")";
            return s.str();
        };
        std::ostringstream line;
        line << std::left;
        line.width(20);
        line << row.strategy;
        line.width(7);
        line << row.gamma;
        line.width(10);
        line << sweep_text(row.sweep_value);
        for (const Estimate* e : {&row.mean_log_return, &row.sd_log_return, &row.cer, &row.turnover}) {
            line.width(22);
            line << est(*e);
        }
        std::cout << line.str() << "\n";
    }
    for (const auto& d : r.deltas)
        std::cout << "delta CER " << d.contrast << " (gamma " << d.gamma
                  << (std::isnan(d.sweep_value) ? std::string() : ", " + r.sweep_axis + " " + sweep_text(d.sweep_value))
                  << "): " << d.delta_cer.value << " (se " << d.delta_cer.se << ")\n";
}

void write_terminal_wealth(std::ostream& os, const ExperimentReport& r) {
    os << "# schema: strategy,gamma,sweep_value,path,terminal_wealth\n";
    os << "strategy,gamma,sweep_value,path,terminal_wealth\n";
    os.precision(17);
    for (const auto& [key, z] : r.terminal_wealth) {
        const auto a = key.find('|'), b = key.rfind('|');
        const std::string strategy = key.substr(0, a), gamma = key.substr(a + 1, b - a - 1);
        std::string sweep = key.substr(b + 1);
        if (sweep == "nan" || sweep == "-nan") sweep.clear();
        for (std::size_t p = 0; p < z.size(); ++p)
            os << strategy << "," << gamma << "," << sweep << "," << p << "," << z[p] << "\n";
    }
}

void write_experiment_tables(Output& out, const ExperimentReport& r) {
    {
        auto os = out.open("strategies.csv");
        write_strategy_csv(os, r);
    }
    {
        auto os = out.open("deltas.csv");
        write_delta_csv(os, r);
    }
    {
        auto os = out.open("value_gain.csv");
        write_value_gain_csv(os, r);
    }
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_calibrate(const std::string& csv, const std::string& model_out, double r_f, const CommonOptions& o,
                  const std::string& command) {
    MonthlyPanel panel;
    try {
        panel = load_panel_csv(csv);
    } catch (const CalibrationError& e) {
        throw ConfigError(std::string("calibrate: ") + e.what());
    }
    const CalibrationResult res = calibrate(panel, r_f);
    Output out(o.out_dir, command);
    {
        std::ofstream os(model_out);
        if (!os) throw ConfigError("-o: cannot write '" + model_out + "'");
        os << model_to_json(res.model).dump(2) << "\n";
    }
    const std::string report = res.report();
    {
        auto os = out.open("calibration_report.txt");
        os << report;
    }
    {
        auto os = out.open("calibration_factors.csv");
        os << "# schema: factor,theta,se_theta,mu,se_mu,df_tstat\n";
        os << "factor,theta,se_theta,mu,se_mu,df_tstat\n";
        for (std::size_t i = 0; i < res.factors.size(); ++i) {
            const OUFit& f = res.factors[i];
            os << res.tickers[i] << "," << f.theta << "," << f.se_theta << "," << f.mu << "," << f.se_mu << ","
               << f.df_tstat << "\n";
        }
    }
    std::cout << report;
    std::ifstream in(csv, std::ios::binary);
    std::ostringstream raw;
    raw << in.rdbuf();
    out.manifest("calibrate", hex64(fnv1a64(raw.str())), 0, {{"input", csv}, {"model", model_out}, {"r_f", r_f}});
    return 0;
}

int cmd_simulate(const CommonOptions& o, const std::string& command) {
    ExperimentConfig cfg = load_experiment(o);
    cfg.keep_paths = true;
    const ExperimentReport r = run_experiment(cfg);
    Output out(o.out_dir, command);
    write_experiment_tables(out, r);
    {
        auto os = out.open("terminal_wealth.csv");
        write_terminal_wealth(os, r);
    }
    print_strategies(r);
    out.manifest("simulate", config_hash(cfg), cfg.seed, {{"n_paths", cfg.n_paths}});
    return 0;
}

int cmd_frontier(const CommonOptions& o, std::vector<double> gammas, const std::string& command) {
    ExperimentConfig cfg = load_experiment(o);
    if (!gammas.empty())
        cfg.gammas = gammas;
    else if (cfg.gammas.size() < 3)
        cfg.gammas = {2, 3, 5, 8, 12, 20, 40};
    if (cfg.gammas.size() < 3) throw ConfigError("gammas: a frontier needs at least three values");
    cfg.validate();
    const ExperimentReport r = run_experiment(cfg);
    Output out(o.out_dir, command);
    {
        auto os = out.open("frontier.csv");
        write_frontier_csv(os, r);
    }
    std::vector<double> sweeps;
    if (cfg.sweep == SweepAxis::None)
        sweeps.push_back(std::numeric_limits<double>::quiet_NaN());
    else
        sweeps = cfg.sweep_values;
    {
        auto os = out.open("matched_risk.csv");
        const char* head =
            "sweep_value,upper,lower,sd,gamma_lower,mean_upper,mean_lower,mean_se,turnover_upper,turnover_lower,"
            "turnover_se";
        os << "# schema: " << head << "\n" << head << "\n";
        for (double sv : sweeps)
            for (Strategy up : cfg.strategies)
                for (Strategy lo : cfg.strategies) {
                    if (up == lo || up != Strategy::DynamicViews) continue;
                    for (const auto& c : compare_at_matched_risk(r.frontier(strategy_name(up), sv),
                                                                 r.frontier(strategy_name(lo), sv)))
                        os << sweep_text(sv) << "," << strategy_name(up) << "," << strategy_name(lo) << "," << c.sd
                           << "," << c.gamma_lower << "," << c.mean_upper << "," << c.mean_lower << "," << c.mean_se
                           << "," << c.turnover_upper << "," << c.turnover_lower << "," << c.turnover_se << "\n";
                }
    }
    print_strategies(r);
    out.manifest("frontier", config_hash(cfg), cfg.seed, {{"n_paths", cfg.n_paths}});
    return 0;
}

int cmd_cer(const CommonOptions& o, const std::string& command) {
    const ExperimentConfig cfg = load_experiment(o);
    const ExperimentReport r = run_experiment(cfg);
    Output out(o.out_dir, command);
    {
        auto os = out.open("cer.csv");
        os << "# schema: sweep_value,strategy,gamma,n_paths,cer,cer_se\n";
        os << "sweep_value,strategy,gamma,n_paths,cer,cer_se\n";
        for (const auto& row : r.strategies)
            os << sweep_text(row.sweep_value) << "," << row.strategy << "," << row.gamma << "," << row.n_paths << ","
               << row.cer.value << "," << row.cer.se << "\n";
    }
    {
        auto os = out.open("deltas.csv");
        write_delta_csv(os, r);
    }
    {
        auto os = out.open("value_gain.csv");
        write_value_gain_csv(os, r);
    }
    print_strategies(r);
    out.manifest("cer", config_hash(cfg), cfg.seed, {{"n_paths", cfg.n_paths}});
    return 0;
}

int cmd_turnover(const CommonOptions& o, const std::string& command) {
    const ExperimentConfig cfg = load_experiment(o);
    const ExperimentReport r = run_experiment(cfg);
    Output out(o.out_dir, command);
    {
        auto os = out.open("turnover.csv");
        os << "# schema: sweep_value,strategy,gamma,n_paths,turnover,turnover_se,sd_log_return\n";
        os << "sweep_value,strategy,gamma,n_paths,turnover,turnover_se,sd_log_return\n";
        for (const auto& row : r.strategies)
            os << sweep_text(row.sweep_value) << "," << row.strategy << "," << row.gamma << "," << row.n_paths << ","
               << row.turnover.value << "," << row.turnover.se << "," << row.sd_log_return.value << "\n";
    }
    print_strategies(r);
    out.manifest("turnover", config_hash(cfg), cfg.seed, {{"n_paths", cfg.n_paths}});
    return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& axis, std::vector<double> values,
              const std::string& command) {
    ExperimentConfig cfg = load_experiment(o);
    if (axis == "tau") {
        cfg.sweep = SweepAxis::Tau;
        if (values.empty()) values = {0.05, 0.2, 1.0, 5.0};
    } else if (axis == "rho") {
        cfg.sweep = SweepAxis::Rho;
        if (values.empty()) values = {0.0, 0.5, 1.0};
    } else {
        throw ConfigError("--axis: expected tau or rho");
    }
    cfg.sweep_values = values;
    cfg.validate();
    const ExperimentReport r = run_experiment(cfg);
    Output out(o.out_dir, command);
    write_experiment_tables(out, r);
    print_strategies(r);
    out.manifest("sweep", config_hash(cfg), cfg.seed, {{"n_paths", cfg.n_paths}, {"axis", axis}});
    return 0;
}

/// Mean-reverting bridges of a standard OU factor started at a and pinned
/// (exactly or through a noisy view) to y at T: mean +/- 2 sd envelopes and
/// sampled paths, first across mean-reversion speeds with an exact view and
/// then across view noise levels at a fixed speed.
int cmd_bridge_demo(const CommonOptions& o, double a, double y, double T, int steps, const std::string& command) {
    if (!o.config.empty()) throw ConfigError("--config: bridge-demo takes its parameters from flags");
    if (!(T > 0.0)) throw ConfigError("--horizon: must be positive");
    if (steps < 2) throw ConfigError("--steps: must be >= 2");
    const int n_paths = o.paths.value_or(5);
    if (n_paths < 1) throw ConfigError("--paths: must be >= 1");
    const std::uint64_t seed = o.seed.value_or(42);
    const double mu = 0.0, sigma2 = 1.0;

    struct Case {
        std::string panel;
        double theta, omega2;
    };
    std::vector<Case> cases;
    for (double th : {0.1, 1.0, 5.0}) cases.push_back({"speed", th, 0.0});
    for (double w : {0.0, 0.25, 1.0, 4.0}) cases.push_back({"noise", 1.0, w});

    Output out(o.out_dir, command);
    auto env = out.open("bridge_envelopes.csv");
    env << "# schema: panel,theta,omega2,t,mean,lower,upper\npanel,theta,omega2,t,mean,lower,upper\n";
    auto paths = out.open("bridge_paths.csv");
    paths << "# schema: panel,theta,omega2,path,t,x\npanel,theta,omega2,path,t,x\n";
    const TimeGrid grid(0.0, T, steps);
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const Case& c = cases[ci];
        const NoisyBridge1D nb = noisy_extension(c.theta, c.omega2, sigma2, T, y, mu, a);
        for (int k = 0; k <= steps; ++k) {
            const double t = grid.at(k);
            const double m = nb.mean(t), sd = std::sqrt(std::max(0.0, nb.cov(t, t)));
            env << c.panel << "," << c.theta << "," << c.omega2 << "," << t << "," << m << "," << m - 2 * sd << ","
                << m + 2 * sd << "\n";
        }
        // An exact view pins the bridge at T, so sampling stops one step short
        // and the endpoint is appended.
        const bool pinned = nb.delta <= 0.0;
        const TimeGrid sim_grid = pinned ? TimeGrid(0.0, grid.at(steps - 1), steps - 1) : grid;
        const auto draws = simulate_mrb(nb.bridge, sim_grid, n_paths, seed + ci);
        const double sd_x = nb.sigma;
        for (int p = 0; p < n_paths; ++p) {
            for (int k = 0; k <= steps; ++k) {
                const double t = grid.at(k);
                const double b = (pinned && k == steps) ? nb.bridge.y_target : draws[p][k];
                const double x = -std::expm1(-c.theta * t) * mu + sd_x * b;
                paths << c.panel << "," << c.theta << "," << c.omega2 << "," << p << "," << t << "," << x << "\n";
            }
        }
    }
    std::cout << "bridge-demo: " << cases.size() << " cases, " << n_paths << " sampled paths each\n";
    Json params = {{"a", a}, {"y", y}, {"horizon", T}, {"steps", steps}, {"paths", n_paths}};
    out.manifest("bridge-demo", hex64(fnv1a64(params.dump())), seed, {{"parameters", params}});
    return 0;
}

/// Drift learning along simulated markets: each path draws its true drift
/// from the prior, and the filter's empirical squared error is compared with
/// the posterior covariance it reports.
int cmd_filter_demo(const CommonOptions& o, double years, int steps_per_year, double prior_var,
                    const std::string& command) {
    ExperimentConfig cfg = load_experiment(o);
    if (!(years > 0.0)) throw ConfigError("--years: must be positive");
    if (steps_per_year < 1) throw ConfigError("--steps-per-year: must be >= 1");
    if (!(prior_var > 0.0)) throw ConfigError("--prior-var: must be positive");
    const int n_paths = o.paths.value_or(200);
    if (n_paths < 1) throw ConfigError("--paths: must be >= 1");
    const MarketModel& m = cfg.model;
    const int N = m.N();
    DriftPrior prior;
    prior.alpha0 = m.assets.alpha;
    prior.Gamma0 = prior_var * Mat::Identity(N, N);
    const AugmentedModel am(m, prior);
    const int steps = static_cast<int>(std::lround(years * steps_per_year));
    const TimeGrid grid(0.0, years, steps);
    const Vec x0 = cfg.x0.value_or(m.factors.mu);
    const Vec s0 = Vec::Ones(N);
    const Mat Lp = cholesky_psd(prior.Gamma0);

    std::vector<Vec> truth(n_paths);
    std::vector<FilterTrace> traces(n_paths);
    constexpr std::uint64_t kPriorStream = 0x9b05688cULL << 24;
    for (int p = 0; p < n_paths; ++p) {
        PathRng rng(cfg.seed, kPriorStream + p);
        MarketModel mp = m;
        mp.assets.alpha = prior.alpha0 + Lp * rng.normals(N);
        truth[p] = mp.assets.alpha;
        const PathSet ps = simulate_joint(mp, x0, s0, grid, 1, cfg.seed + 1 + static_cast<std::uint64_t>(p));
        traces[p] = filter_path(am, grid, ps.X[0], ps.S[0]);
    }

    Output out(o.out_dir, command);
    {
        auto os = out.open("filter_trace.csv");
        traces[0].write_csv(os);
    }
    {
        auto os = out.open("filter_error.csv");
        os << "# schema: t,empirical_mse,empirical_mse_se,posterior_mse\nt,empirical_mse,empirical_mse_se,posterior_mse\n";
        for (int k = 0; k <= steps; ++k) {
            std::vector<double> err(n_paths);
            for (int p = 0; p < n_paths; ++p)
                err[p] = (truth[p] - traces[p].states[k].alpha_hat).squaredNorm() / N;
            const SampleSummary s = summarize(err);
            os << grid.at(k) << "," << s.mean.value << "," << s.mean.se << ","
               << traces[0].states[k].Gamma.trace() / N << "\n";
        }
    }
    std::cout << "filter-demo: " << n_paths << " paths over " << years << " years\n";
    Json extra = {{"n_paths", n_paths}, {"years", years}, {"steps_per_year", steps_per_year}, {"prior_var", prior_var}};
    out.manifest("filter-demo", config_hash(cfg), cfg.seed, extra);
    return 0;
}

std::string joined(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Portfolio experiments with factor models conditioned on expert views"};
    app.require_subcommand(1);
    const std::string command = joined(argc, argv);

    CommonOptions common;

    auto* cal = app.add_subcommand("calibrate", "Fit a model to a monthly price/yield panel");
    std::string cal_csv, cal_out = "model.json";
    double cal_rf = presets::kDefaultRiskFree;
    cal->add_option("csv", cal_csv, "Panel CSV: date, price_<ticker>..., yield_<ticker>...")->required();
    cal->add_option("-o,--output", cal_out, "Model JSON to write");
    cal->add_option("--r-f", cal_rf, "Risk-free rate");
    add_common(cal, common);

    auto* sim = app.add_subcommand("simulate", "Run the configured experiment and keep terminal wealth");
    add_common(sim, common);

    auto* fro = app.add_subcommand("frontier", "Mean / sd frontiers over a risk-aversion grid");
    std::vector<double> fro_gammas;
    fro->add_option("--gammas", fro_gammas, "Risk-aversion grid (at least three values)");
    add_common(fro, common);

    auto* cer_cmd = app.add_subcommand("cer", "Certainty-equivalent rates and paired differences");
    add_common(cer_cmd, common);

    auto* tov = app.add_subcommand("turnover", "Expected total absolute change in holdings");
    add_common(tov, common);

    auto* swp = app.add_subcommand("sweep", "Sweep the view noise scale or the factor/price correlation");
    std::string swp_axis;
    std::vector<double> swp_values;
    swp->add_option("--axis", swp_axis, "tau or rho")->required();
    swp->add_option("--values", swp_values, "Sweep points");
    add_common(swp, common);

    auto* bdg = app.add_subcommand("bridge-demo", "Envelopes and sample paths of mean-reverting bridges");
    double bdg_a = 0.0, bdg_y = 1.0, bdg_T = 1.0;
    int bdg_steps = 200;
    bdg->add_option("--start", bdg_a, "Initial factor value");
    bdg->add_option("--target", bdg_y, "View on the terminal factor value");
    bdg->add_option("--horizon", bdg_T, "View horizon");
    bdg->add_option("--steps", bdg_steps, "Time steps");
    add_common(bdg, common);

    auto* flt = app.add_subcommand("filter-demo", "Kalman learning of the asset drifts");
    double flt_years = 10.0, flt_prior = 0.01;
    int flt_spy = 52;
    flt->add_option("--years", flt_years, "Observation window in years");
    flt->add_option("--steps-per-year", flt_spy, "Observations per year");
    flt->add_option("--prior-var", flt_prior, "Prior variance of each drift");
    add_common(flt, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*cal) return cmd_calibrate(cal_csv, cal_out, cal_rf, common, command);
        if (*sim) return cmd_simulate(common, command);
        if (*fro) return cmd_frontier(common, fro_gammas, command);
        if (*cer_cmd) return cmd_cer(common, command);
        if (*tov) return cmd_turnover(common, command);
        if (*swp) return cmd_sweep(common, swp_axis, swp_values, command);
        if (*bdg) return cmd_bridge_demo(common, bdg_a, bdg_y, bdg_T, bdg_steps, command);
        if (*flt) return cmd_filter_demo(common, flt_years, flt_spy, flt_prior, command);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CalibrationError& e) {
        std::cerr << "calibration failed: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
