#pragma once

// JSON configuration, oracle reports, columnar outputs and run manifests.

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdsa/chain.hpp"
#include "tdsa/features.hpp"
#include "tdsa/harness.hpp"
#include "tdsa/oracle.hpp"
#include "tdsa/sa.hpp"

namespace tdsa {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kManifestVersion = 1;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Chain fails irreducibility or aperiodicity; carries the validation report.
class AssumptionError : public ConfigError {
public:
    explicit AssumptionError(ValidationReport report)
        : ConfigError("chain violates irreducibility/aperiodicity: " + report.describe()), report_(std::move(report)) {}
    [[nodiscard]] const ValidationReport& report() const noexcept { return report_; }

private:
    ValidationReport report_;
};

// ---------------------------------------------------------------------------
// JSON <-> Eigen
// ---------------------------------------------------------------------------

inline Matrix matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError(what + " must be a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ConfigError(what + " row " + std::to_string(i) + " has the wrong length");
        for (Eigen::Index k = 0; k < cols; ++k) {
            if (!row[static_cast<std::size_t>(k)].is_number())
                throw ConfigError(what + " entries must be numbers");
            m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
    }
    return m;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigError(what + " must be an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(what + " entries must be numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline json to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline json to_json(const Matrix& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

/// Fills every optional key with its default so the resolved document fully determines a run.
///
/// instance:
///   transition   matrix | {generator: "cycle", states, epsilon} | {generator: "random", states, density, seed}
///   rewards      array | {generator: "uniform", low = -1, high = 1, seed}
///   gamma        discount in [0, 1)
///   features     matrix | "tabular" | {generator: "random", dim, seed}
///   theta0       array (default zeros)
/// experiment:
///   kind         "td0" (default) | "nonlinear" | "averaging"
///   provider     {kind: "td0" | "linear_contraction" | "saturating", centers, kappa = 1}
///   C = 8, alpha = null (resolved), alpha_scale = 1, T = "auto", trials = 2000, master_seed = 1,
///   start_state = 0 | "stationary", sampling = "markov" | "iid", ceiling = 100, drift = true,
///   delays = {kind: "none" | "constant" | "uniform" | "sawtooth", tau_max = 0, seed = 0},
///   T_grid = [64 .. 4096] (averaging only), save_trajectory = false
/// oracle:
///   epsilon_grid = [1e-1, 1e-2, 1e-3, 1e-4]
inline json resolve_config(json cfg) {
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    if (!cfg.contains("instance")) throw ConfigError("config needs an 'instance' section");
    cfg.emplace("name", "unnamed");
    auto& inst = cfg["instance"];
    for (const char* key : {"transition", "rewards", "gamma"})
        if (!inst.contains(key)) throw ConfigError(std::string("instance needs '") + key + "'");
    inst.emplace("features", "tabular");

    json defaults = {{"kind", "td0"},
                     {"C", 8.0},
                     {"alpha", nullptr},
                     {"alpha_scale", 1.0},
                     {"T", "auto"},
                     {"trials", 2000},
                     {"master_seed", 1},
                     {"start_state", 0},
                     {"sampling", "markov"},
                     {"ceiling", kDefaultCeiling},
                     {"drift", true},
                     {"delays", {{"kind", "none"}, {"tau_max", 0}, {"seed", 0}}},
                     {"provider", {{"kind", "td0"}}},
                     {"save_trajectory", false}};
    auto& exp = cfg["experiment"];
    if (exp.is_null()) exp = json::object();
    for (auto& [k, v] : defaults.items()) exp.emplace(k, v);
    exp["delays"].emplace("tau_max", 0);
    exp["delays"].emplace("seed", 0);
    if (exp["kind"] == "averaging") exp.emplace("T_grid", json{64, 128, 256, 512, 1024, 2048, 4096});

    auto& oracle = cfg["oracle"];
    if (oracle.is_null()) oracle = json::object();
    oracle.emplace("epsilon_grid", json{1e-1, 1e-2, 1e-3, 1e-4});
    return cfg;
}

/// FNV-1a 64 over the canonical (sorted-key, compact) serialization.
inline std::string fingerprint(const json& resolved) {
    const std::string text = resolved.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// A manifest is accepted wherever a config is: its embedded resolved config is returned.
inline json config_from_document(const json& doc) {
    if (doc.is_object() && doc.contains("manifest_version")) return doc.at("config");
    return doc;
}

struct Instance {
    std::string name;
    MarkovRewardProcess mrp;
    FeatureMatrix features;
    Vector theta0;
};

namespace detail {

inline Matrix transition_from_json(const json& j) {
    if (j.is_array()) return matrix_from_json(j, "transition");
    const std::string gen = j.value("generator", "");
    if (gen == "cycle") return cycle_transition(j.at("states").get<std::size_t>(), j.value("epsilon", 0.5));
    if (gen == "random")
        return random_transition(j.at("states").get<std::size_t>(), j.value("density", 0.5),
                                 j.value("seed", std::uint64_t{1}));
    throw ConfigError("unknown transition generator '" + gen + "'");
}

inline Vector rewards_from_json(const json& j, std::size_t n) {
    if (j.is_array()) return vector_from_json(j, "rewards");
    if (j.value("generator", "") != "uniform") throw ConfigError("rewards must be an array or a uniform generator");
    const double lo = j.value("low", -1.0), hi = j.value("high", 1.0);
    Xoshiro256 rng(j.value("seed", std::uint64_t{1}));
    Vector r(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = lo + (hi - lo) * rng.uniform();
    return r;
}

/// Gaussian rows normalized to unit norm.
inline Matrix random_features(std::size_t n, std::size_t k, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    std::normal_distribution<double> normal;
    Matrix phi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
        for (Eigen::Index c = 0; c < phi.cols(); ++c) phi(i, c) = normal(rng);
    for (Eigen::Index i = 0; i < phi.rows(); ++i) phi.row(i).normalize();
    return phi;
}

inline Matrix features_from_json(const json& j, std::size_t n) {
    if (j.is_string()) {
        if (j.get<std::string>() != "tabular") throw ConfigError("unknown feature preset '" + j.get<std::string>() + "'");
        return Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    }
    if (j.is_array()) return matrix_from_json(j, "features");
    if (j.value("generator", "") == "random")
        return random_features(n, j.at("dim").get<std::size_t>(), j.value("seed", std::uint64_t{1}));
    throw ConfigError("features must be a matrix, \"tabular\" or a random generator");
}

}  // namespace detail

/// Builds and validates the instance of a resolved config.
inline Instance build_instance(const json& resolved) {
    const auto& inst = resolved.at("instance");
    Matrix P = detail::transition_from_json(inst.at("transition"));
    const auto n = static_cast<std::size_t>(P.rows());
    Vector R = detail::rewards_from_json(inst.at("rewards"), n);
    MarkovRewardProcess mrp(std::move(P), std::move(R), inst.at("gamma").get<double>());
    auto report = validate_chain(mrp);
    if (!report.ok()) throw AssumptionError(report);
    FeatureMatrix features(detail::features_from_json(inst.at("features"), n));
    Vector theta0 = inst.contains("theta0") ? vector_from_json(inst.at("theta0"), "theta0")
                                            : Vector::Zero(static_cast<Eigen::Index>(features.dim()));
    return {resolved.value("name", "unnamed"), std::move(mrp), std::move(features), std::move(theta0)};
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Columns (t, d_hat, d_se, e_hat, e_se, bound_value, margin); bound_value is B and margin is
/// B - (d_hat - 3 SE). e columns are empty at t = T.
inline void write_estimate_csv(const std::filesystem::path& path, const MonteCarloEstimate& est, double B,
                               const std::string& fp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# fingerprint: " << fp << '\n';
    out << "t,d_hat,d_se,e_hat,e_se,bound_value,margin\n";
    for (std::size_t t = 0; t <= est.steps; ++t) {
        out << t << ',' << format_double(est.d_hat(t)) << ',' << format_double(est.d_se(t)) << ',';
        if (t < est.steps) out << format_double(est.e_hat(t)) << ',' << format_double(est.e_se(t));
        else out << ',';
        out << ',' << format_double(B) << ',' << format_double(B - (est.d_hat(t) - kSlackSE * est.d_se(t))) << '\n';
    }
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, const std::string& fp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# fingerprint: " << fp << '\n';
    out << "step";
    const auto K = traj.thetas.empty() ? 0 : traj.thetas.front().size();
    for (Eigen::Index i = 0; i < K; ++i) out << ",theta_" << i;
    out << '\n';
    for (std::size_t t = 0; t < traj.thetas.size(); ++t) {
        out << t;
        for (Eigen::Index i = 0; i < K; ++i) out << ',' << format_double(traj.thetas[t](i));
        out << '\n';
    }
}

inline void write_averaging_csv(const std::filesystem::path& path, const AveragingResult& res, const std::string& fp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# fingerprint: " << fp << '\n';
    out << "T,alpha,case,tau,error,error_se\n";
    for (const auto& p : res.points)
        out << p.T << ',' << format_double(p.step.alpha) << ',' << p.step.which_case << ',' << p.tau_alpha << ','
            << format_double(p.error) << ',' << format_double(p.error_se) << '\n';
}

inline json to_json(const Hypothesis& h) {
    return {{"alpha", h.alpha}, {"tau", h.tau},       {"B", h.B},          {"C", h.C},
            {"cap", h.cap},     {"compliant", h.compliant}, {"mode", to_string(h.mode)}, {"beta", h.beta},
            {"L", h.lipschitz}};
}

inline json to_json(const BoundLedger& L) {
    json fitted = json::object();
    for (const auto& [k, v] : L.fitted) fitted[k] = v;
    return {{"theorem", L.theorem},
            {"verdict", to_string(L.verdict)},
            {"hypothesis", to_json(L.hypothesis)},
            {"slack_se", L.slack_se},
            {"checked", L.checked_steps},
            {"violations", L.violations},
            {"worst_margin", L.worst_margin},
            {"worst_step", L.worst_step},
            {"fitted", fitted},
            {"note", L.note}};
}

inline json oracle_report(const Instance& inst, const json& resolved) {
    const SteadyStateModel model = build_steady_state(inst.mrp, inst.features, inst.theta0);
    const MixingProfile profile = tv_mixing_profile(inst.mrp, kProfileHorizon);
    json taus = json::array();
    for (const auto& e : resolved.at("oracle").at("epsilon_grid")) {
        const auto cert = mixing_time(inst.mrp, inst.features, e.get<double>(), profile);
        taus.push_back({{"epsilon", cert.epsilon}, {"tau", cert.tau}, {"horizon_checked", cert.horizon_checked}});
    }
    return {{"name", inst.name},
            {"states", inst.mrp.size()},
            {"features", inst.features.dim()},
            {"gamma", inst.mrp.gamma()},
            {"pi", to_json(model.pi)},
            {"A_bar", to_json(model.A_bar)},
            {"b", to_json(Vector(-model.b_neg))},
            {"Sigma", to_json(model.Sigma)},
            {"omega", model.omega},
            {"contraction", model.contraction()},
            {"theta_star", to_json(model.theta_star)},
            {"sigma", model.sigma_const},
            {"r_bar", model.r_bar},
            {"B", model.B()},
            {"condition_number", model.condition_number},
            {"lambda2", profile.lambda2},
            {"tv_rate", profile.rho},
            {"tv_c0", profile.c0},
            {"tau_table", taus}};
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

}  // namespace tdsa
