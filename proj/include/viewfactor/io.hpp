#pragma once

// JSON documents for models, views and experiment configurations.
//
// Model:  {"theta": [[..]], "mu": [..], "l_x": [[..]], "alpha": [..],
//          "beta": [[..]], "l_s": [[..]], "r_f": 0.02, "rho": 1.0}
// View:   {"p": [[..]], "omega": [[..]] | "tau": 0.05, "y": [..], "horizon": 1.0}
// Matrices are arrays of rows.

#include "calibrate.hpp"
#include "harness.hpp"
#include "presets.hpp"

#include <json.hpp>

#include <filesystem>
#include <set>

namespace viewfactor {

using Json = nlohmann::json;

namespace io_detail {

inline Json to_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Json to_json(const Mat& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        a.push_back(r);
    }
    return a;
}

inline const Json& field(const Json& j, const std::string& key, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(where + "." + key + ": missing");
    return *it;
}

inline double number(const Json& j, const std::string& where) {
    if (!j.is_number()) throw ConfigError(where + ": expected a number");
    return j.get<double>();
}

inline Vec vector(const Json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], where);
    return v;
}

inline Mat matrix(const Json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty array of rows");
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != cols) throw ConfigError(where + ": rows must have equal length");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = number(j[i][c], where);
    }
    return m;
}

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(where + "." + it.key() + ": unknown field");
}

inline Json read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
}

inline std::string resolve(const std::string& path, const std::string& base_dir) {
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (std::filesystem::path(base_dir) / p).string();
}

}  // namespace io_detail

inline Json model_to_json(const MarketModel& m) {
    Json j;
    j["theta"] = io_detail::to_json(m.factors.Theta);
    j["mu"] = io_detail::to_json(m.factors.mu);
    j["l_x"] = io_detail::to_json(m.factors.L_X);
    j["alpha"] = io_detail::to_json(m.assets.alpha);
    j["beta"] = io_detail::to_json(m.assets.beta);
    j["l_s"] = io_detail::to_json(m.assets.L_S);
    j["r_f"] = m.assets.r_f;
    j["rho"] = m.rho;
    return j;
}

/// Parses and validates a model document (r_f defaults to 0.02, rho to 1).
inline MarketModel model_from_json(const Json& j, const std::string& where = "model") {
    io_detail::reject_unknown(j, {"theta", "mu", "l_x", "alpha", "beta", "l_s", "r_f", "rho"}, where);
    MarketModel m;
    m.factors.Theta = io_detail::matrix(io_detail::field(j, "theta", where), where + ".theta");
    m.factors.mu = io_detail::vector(io_detail::field(j, "mu", where), where + ".mu");
    m.factors.L_X = io_detail::matrix(io_detail::field(j, "l_x", where), where + ".l_x");
    m.assets.alpha = io_detail::vector(io_detail::field(j, "alpha", where), where + ".alpha");
    m.assets.beta = io_detail::matrix(io_detail::field(j, "beta", where), where + ".beta");
    m.assets.L_S = io_detail::matrix(io_detail::field(j, "l_s", where), where + ".l_s");
    m.assets.r_f = j.contains("r_f") ? io_detail::number(j["r_f"], where + ".r_f") : presets::kDefaultRiskFree;
    m.rho = j.contains("rho") ? io_detail::number(j["rho"], where + ".rho") : 1.0;
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return m;
}

inline Json view_to_json(const ViewSpec& v) {
    Json j;
    j["p"] = io_detail::to_json(v.P);
    j["omega"] = io_detail::to_json(v.Omega);
    j["y"] = io_detail::to_json(v.y);
    j["horizon"] = v.T;
    return j;
}

/// Parses a view; "tau" sets Omega = tau P Var[X(T)|X(0)] P^T for model m.
inline ViewSpec view_from_json(const Json& j, const MarketModel& m, const std::string& where = "view") {
    io_detail::reject_unknown(j, {"p", "omega", "tau", "y", "horizon"}, where);
    ViewSpec v;
    v.P = io_detail::matrix(io_detail::field(j, "p", where), where + ".p");
    v.T = j.contains("horizon") ? io_detail::number(j["horizon"], where + ".horizon") : 1.0;
    v.y = io_detail::vector(io_detail::field(j, "y", where), where + ".y");
    if (j.contains("omega") == j.contains("tau")) throw ConfigError(where + ": give exactly one of omega and tau");
    try {
        if (j.contains("omega"))
            v.Omega = io_detail::matrix(j["omega"], where + ".omega");
        else
            v.Omega = omega_from_tau(m, v.P, io_detail::number(j["tau"], where + ".tau"), v.T);
        v.validate(m.d());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return v;
}

/// Resolves a model source: the string "published" (the preset model),
/// {"path": file}, {"calibrate": csv} or an inline model document. Relative
/// paths are taken relative to base_dir.
inline MarketModel resolve_model(const Json& j, const std::string& base_dir = "") {
    if (j.is_string()) {
        if (j.get<std::string>() == "published") return presets::published_model();
        throw ConfigError("model: unknown preset '" + j.get<std::string>() + "'");
    }
    if (j.is_object() && j.contains("path")) {
        io_detail::reject_unknown(j, {"path"}, "model");
        const std::string p = io_detail::resolve(j["path"].get<std::string>(), base_dir);
        return model_from_json(io_detail::read_file(p), p);
    }
    if (j.is_object() && j.contains("calibrate")) {
        io_detail::reject_unknown(j, {"calibrate", "r_f"}, "model");
        const std::string p = io_detail::resolve(j["calibrate"].get<std::string>(), base_dir);
        const double rf = j.contains("r_f") ? io_detail::number(j["r_f"], "model.r_f") : presets::kDefaultRiskFree;
        MonthlyPanel panel;
        try {
            panel = load_panel_csv(p);
        } catch (const CalibrationError& e) {
            throw ConfigError(std::string("model.calibrate: ") + e.what());
        }
        return calibrate(panel, rf).model;
    }
    return model_from_json(j);
}

/// Experiment configuration document. Every field is optional; defaults are
/// the published model, the three experiment views with tau = 0.05 and
/// sampled y, gamma = 5, T = 1 with monthly rebalancing, 2000 paths and all
/// three strategies.
///
/// {"model": ..., "view": {"p": [[..]] | "published", "tau": t | "omega": [[..]],
///   "y_source": "sampled" | "fixed", "y": [..]},
///  "gammas": [..], "horizon": 1, "rebalances_per_year": 12, "steps_per_rebalance": 4,
///  "riccati_steps_per_year": 2400, "n_paths": 2000, "seed": 42, "z0": 1, "x0": [..],
///  "rho": r, "strategies": [..], "sweep": {"axis": "tau" | "rho" | "none", "values": [..]}}
inline ExperimentConfig config_from_json(const Json& j, const std::string& base_dir = "") {
    if (!j.is_object()) throw ConfigError("config: expected an object");
    io_detail::reject_unknown(j,
                              {"model", "view", "gammas", "horizon", "rebalances_per_year", "steps_per_rebalance",
                               "riccati_steps_per_year", "n_paths", "seed", "z0", "x0", "rho", "strategies", "sweep"},
                              "config");
    auto integer = [](const Json& v, const std::string& where) {
        if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
        return v.get<long long>();
    };
    ExperimentConfig c;
    c.model = j.contains("model") ? resolve_model(j["model"], base_dir) : presets::published_model();
    if (j.contains("rho")) c.model.rho = io_detail::number(j["rho"], "rho");
    c.P = presets::experiment_view_map();
    if (j.contains("view")) {
        const Json& v = j["view"];
        io_detail::reject_unknown(v, {"p", "tau", "omega", "y_source", "y"}, "view");
        if (v.contains("p") && !(v["p"].is_string() && v["p"].get<std::string>() == "published"))
            c.P = io_detail::matrix(v["p"], "view.p");
        if (v.contains("tau")) c.tau = io_detail::number(v["tau"], "view.tau");
        if (v.contains("omega")) c.omega = io_detail::matrix(v["omega"], "view.omega");
        if (v.contains("y_source")) {
            const std::string s = v["y_source"].is_string() ? v["y_source"].get<std::string>() : "";
            if (s == "sampled")
                c.y_source = YSource::Sampled;
            else if (s == "fixed")
                c.y_source = YSource::Fixed;
            else
                throw ConfigError("view.y_source: expected \"sampled\" or \"fixed\"");
        }
        if (v.contains("y")) c.y = io_detail::vector(v["y"], "view.y");
    }
    if (j.contains("gammas")) c.gammas = [&] {
            std::vector<double> g;
            for (double x : io_detail::vector(j["gammas"], "gammas")) g.push_back(x);
            return g;
        }();
    if (j.contains("horizon")) c.T = io_detail::number(j["horizon"], "horizon");
    if (j.contains("rebalances_per_year"))
        c.rebalances_per_year = static_cast<int>(integer(j["rebalances_per_year"], "rebalances_per_year"));
    if (j.contains("steps_per_rebalance"))
        c.steps_per_rebalance = static_cast<int>(integer(j["steps_per_rebalance"], "steps_per_rebalance"));
    if (j.contains("riccati_steps_per_year"))
        c.riccati_steps_per_year = static_cast<int>(integer(j["riccati_steps_per_year"], "riccati_steps_per_year"));
    if (j.contains("n_paths")) c.n_paths = static_cast<int>(integer(j["n_paths"], "n_paths"));
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || (!j["seed"].is_number_unsigned() && j["seed"].get<long long>() < 0))
            throw ConfigError("seed: expected a nonnegative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("z0")) c.z0 = io_detail::number(j["z0"], "z0");
    if (j.contains("x0")) c.x0 = io_detail::vector(j["x0"], "x0");
    if (j.contains("strategies")) {
        if (!j["strategies"].is_array()) throw ConfigError("strategies: expected an array of names");
        c.strategies.clear();
        for (const auto& s : j["strategies"]) {
            if (!s.is_string()) throw ConfigError("strategies: expected strategy names");
            c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
    }
    if (j.contains("sweep")) {
        const Json& s = j["sweep"];
        io_detail::reject_unknown(s, {"axis", "values"}, "sweep");
        const std::string axis = s.contains("axis") && s["axis"].is_string() ? s["axis"].get<std::string>() : "";
        if (axis == "tau")
            c.sweep = SweepAxis::Tau;
        else if (axis == "rho")
            c.sweep = SweepAxis::Rho;
        else if (axis == "none")
            c.sweep = SweepAxis::None;
        else
            throw ConfigError("sweep.axis: expected \"tau\", \"rho\" or \"none\"");
        if (s.contains("values"))
            for (double x : io_detail::vector(s["values"], "sweep.values")) c.sweep_values.push_back(x);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    Json j = io_detail::read_file(path);
    return config_from_json(j, std::filesystem::path(path).parent_path().string());
}

/// Canonical JSON of a resolved configuration (the model inlined), used for
/// the manifest hash.
inline Json config_to_json(const ExperimentConfig& c) {
    Json j;
    j["model"] = model_to_json(c.model);
    Json v;
    v["p"] = io_detail::to_json(c.P);
    if (c.omega)
        v["omega"] = io_detail::to_json(*c.omega);
    else
        v["tau"] = c.tau;
    v["y_source"] = c.y_source == YSource::Fixed ? "fixed" : "sampled";
    if (c.y_source == YSource::Fixed) v["y"] = io_detail::to_json(c.y);
    j["view"] = v;
    j["gammas"] = c.gammas;
    j["horizon"] = c.T;
    j["rebalances_per_year"] = c.rebalances_per_year;
    j["steps_per_rebalance"] = c.steps_per_rebalance;
    j["riccati_steps_per_year"] = c.riccati_steps_per_year;
    j["n_paths"] = c.n_paths;
    j["seed"] = c.seed;
    j["z0"] = c.z0;
    if (c.x0) j["x0"] = io_detail::to_json(*c.x0);
    Json s = Json::array();
    for (Strategy st : c.strategies) s.push_back(strategy_name(st));
    j["strategies"] = s;
    j["sweep"] = {{"axis", sweep_axis_name(c.sweep)}, {"values", c.sweep_values}};
    return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(config_to_json(c).dump())); }

}  // namespace viewfactor
