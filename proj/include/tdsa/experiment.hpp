#pragma once

// Config-driven orchestration behind the command-line tool: oracle reports, single runs and sweeps.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tdsa/harness.hpp"
#include "tdsa/io.hpp"

namespace tdsa {

namespace fs = std::filesystem;

enum ExitCode : int { kExitPass = 0, kExitLedgerFail = 1, kExitOutOfContract = 2, kExitInput = 3 };

inline int exit_code_for(const std::vector<BoundLedger>& ledgers) {
    bool failed = false, ooc = false;
    for (const auto& L : ledgers) {
        failed = failed || L.verdict == Verdict::fail || L.verdict == Verdict::invalid;
        ooc = ooc || L.verdict == Verdict::out_of_contract;
    }
    return failed ? kExitLedgerFail : ooc ? kExitOutOfContract : kExitPass;
}

struct RunOutcome {
    std::string fingerprint;
    std::vector<BoundLedger> ledgers;
    int exit_code = kExitPass;
    double alpha = 0.0;
    std::size_t tau = 0;
    std::size_t T = 0;
    double B = 0.0;
    double floor = 0.0;
    json manifest;
};

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

namespace detail {

inline std::optional<std::size_t> start_state_from(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "stationary") return std::nullopt;
        throw ConfigError("start_state must be an index or \"stationary\"");
    }
    return j.get<std::size_t>();
}

inline Sampling sampling_from(const std::string& s) {
    if (s == "markov") return Sampling::markov;
    if (s == "iid") return Sampling::iid;
    throw ConfigError("sampling must be \"markov\" or \"iid\"");
}

inline DelayProcess delays_from(const json& j) {
    DelayProcess d;
    const std::string kind = j.value("kind", "none");
    if (kind == "none") d.kind = DelayKind::none;
    else if (kind == "constant") d.kind = DelayKind::constant;
    else if (kind == "uniform") d.kind = DelayKind::uniform;
    else if (kind == "sawtooth") d.kind = DelayKind::sawtooth;
    else throw ConfigError("unknown delay kind '" + kind + "'");
    d.tau_max = j.value("tau_max", std::size_t{0});
    d.seed = j.value("seed", std::uint64_t{0});
    return d;
}

inline std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Resolved step size: explicit alpha, else the self-consistent alpha*, times alpha_scale and
/// divided by (1 + tau_max) when delays are active.
template <DirectionProvider P>
StepSizeSpec configured_step(const P& provider, const json& exp, double rate_bound, StepMode mode,
                             const MixingTimeFn& tau_of) {
    const double C = exp.at("C").get<double>();
    const DelayProcess delays = delays_from(exp.at("delays"));
    double alpha;
    if (exp.at("alpha").is_null())
        alpha = resolve_step_size(rate_bound, provider.beta(), provider.lipschitz(), C, mode, tau_of).alpha;
    else
        alpha = exp.at("alpha").get<double>();
    alpha *= exp.at("alpha_scale").get<double>();
    if (delays.active()) alpha /= static_cast<double>(1 + delays.tau_max);
    return step_size_from_alpha(alpha, rate_bound, provider.beta(), provider.lipschitz(), C, mode, tau_of);
}

}  // namespace detail

/// Writes oracle.json for the instance in `resolved` and returns the report.
inline json cmd_oracle(const json& resolved, const fs::path& out_dir) {
    const Instance inst = build_instance(resolved);
    json report = oracle_report(inst, resolved);
    TD0Provider provider(inst.mrp, inst.features, inst.theta0);
    const double C = resolved.at("experiment").at("C").get<double>();
    try {
        const auto spec = resolve_td0_step_size(provider, inst.mrp, C);
        report["step_size"] = {{"C", C},
                               {"alpha", spec.alpha},
                               {"tau", spec.tau_alpha},
                               {"T_auto", default_horizon(spec.alpha, spec.beta)}};
    } catch (const StepSizeError& e) {
        report["step_size"] = {{"C", C}, {"error", e.what()}};
    }
    report["fingerprint"] = fingerprint(resolved);
    fs::create_directories(out_dir);
    write_json(out_dir / "oracle.json", report);
    return report;
}

/// Runs the configured experiment end to end and writes estimate/averaging CSV, ledger.json and
/// manifest.json into out_dir.
inline RunOutcome cmd_run(const json& resolved, const fs::path& out_dir, unsigned threads,
                          const std::string& config_path = "") {
    const auto started = std::chrono::steady_clock::now();
    const std::string started_utc = detail::utc_now();
    const Instance inst = build_instance(resolved);
    const json& exp = resolved.at("experiment");
    const std::string kind = exp.at("kind").get<std::string>();
    if (kind != "td0" && kind != "nonlinear" && kind != "averaging")
        throw ConfigError("experiment.kind must be td0, nonlinear or averaging");
    if (exp.at("trials").get<std::size_t>() < kMinLedgerTrials)
        throw ConfigError("trials must be at least " + std::to_string(kMinLedgerTrials) + " (got " +
                          std::to_string(exp.at("trials").get<std::size_t>()) + ")");
    if (exp.at("C").get<double>() < 8.0) throw ConfigError("C must be at least 8");

    RunOutcome out;
    out.fingerprint = fingerprint(resolved);
    fs::create_directories(out_dir);
    json files = json::array();

    ExperimentConfig cfg;
    cfg.trials = exp.at("trials").get<std::size_t>();
    cfg.master_seed = exp.at("master_seed").get<std::uint64_t>();
    cfg.start_state = detail::start_state_from(exp.at("start_state"));
    cfg.sampling = detail::sampling_from(exp.at("sampling").get<std::string>());
    cfg.delays = detail::delays_from(exp.at("delays"));
    cfg.threads = threads;
    const double ceiling = exp.at("ceiling").get<double>();
    const StationaryDistribution stat = stationary_distribution(inst.mrp);

    auto execute = [&](const auto& provider, const StepSizeSpec& spec) {
        const double B = iterate_bound(provider, inst.theta0);
        out.alpha = spec.alpha;
        out.tau = spec.tau_alpha;
        out.B = B;
        const Hypothesis h = Hypothesis::from(spec, B);

        if (kind == "averaging") {
            if constexpr (std::is_same_v<std::decay_t<decltype(provider)>, TD0Provider>) {
                std::vector<std::size_t> grid;
                for (const auto& v : exp.at("T_grid")) grid.push_back(v.get<std::size_t>());
                if (grid.empty()) throw ConfigError("T_grid must not be empty");
                const auto& model = provider.model();
                auto res = weighted_average_experiment(provider, inst.mrp, stat.pi, model.Sigma, model.contraction(),
                                                       inst.theta0, spec, td0_mixing_fn(inst.mrp, inst.features),
                                                       grid, cfg);
                write_averaging_csv(out_dir / "averaging.csv", res, out.fingerprint);
                files.push_back("averaging.csv");
                out.T = grid.back();
                out.ledgers.push_back(res.ledger);
            } else {
                throw ConfigError("averaging experiments need the td0 provider");
            }
            return;
        }

        cfg.T = exp.at("T").is_string() ? default_horizon(spec.alpha, spec.beta) : exp.at("T").get<std::size_t>();
        cfg.drift_lag = exp.at("drift").get<bool>() ? spec.tau_alpha : 0;
        out.T = cfg.T;
        MonteCarloEstimate est;
        if (kind == "nonlinear") {
            auto run = nonlinear_sa_experiment(provider, inst.mrp, stat.pi, inst.theta0, spec, cfg, ceiling);
            est = std::move(run.estimate);
            out.ledgers.push_back(run.boundedness);
            out.ledgers.push_back(run.recursion);
        } else {
            est = estimate_dt_et(provider, inst.mrp, stat.pi, inst.theta0, spec, cfg);
            out.ledgers.push_back(check_boundedness(est, h));
            out.ledgers.push_back(check_recursion(est, h, ceiling));
        }
        out.floor = asymptotic_floor(est, spec.alpha, spec.beta);
        out.ledgers.back().fitted["floor"] = out.floor;
        if (cfg.sampling == Sampling::iid) {
            const auto z = check_zero_disturbance(est);
            out.ledgers.back().fitted["iid_exceedances"] = static_cast<double>(z.exceedances);
            out.ledgers.back().fitted["iid_max_abs_z"] = z.max_abs_z;
        }
        if (cfg.drift_lag > 0) out.ledgers.push_back(check_drift(est, h, ceiling));
        write_estimate_csv(out_dir / "estimate.csv", est, B, out.fingerprint);
        files.push_back("estimate.csv");

        if (exp.at("save_trajectory").get<bool>()) {
            RunOptions opt{cfg.start_state, cfg.sampling, out.fingerprint};
            const auto seed = derive_seed(cfg.master_seed, 0);
            const Trajectory traj =
                cfg.delays.active()
                    ? run_delayed_sa(provider, inst.mrp, stat.pi, inst.theta0, spec, cfg.T, cfg.delays, seed, opt)
                    : run_sa(provider, inst.mrp, stat.pi, inst.theta0, spec, cfg.T, seed, opt);
            write_trajectory_csv(out_dir / "trajectory.csv", traj, out.fingerprint);
            files.push_back("trajectory.csv");
        }
    };

    const json& pj = exp.at("provider");
    const std::string pkind = pj.value("kind", "td0");
    if (pkind == "td0") {
        TD0Provider provider(inst.mrp, inst.features, inst.theta0);
        const double rate = provider.model().contraction();
        execute(provider, detail::configured_step(provider, exp, rate, StepMode::td0,
                                                  td0_mixing_fn(inst.mrp, inst.features)));
    } else if (pkind == "linear_contraction" || pkind == "saturating") {
        if (!pj.contains("centers")) throw ConfigError("provider needs 'centers' (one row per state)");
        const Matrix centers = matrix_from_json(pj.at("centers"), "centers");
        if (static_cast<std::size_t>(centers.cols()) != static_cast<std::size_t>(inst.theta0.size()))
            throw ConfigError("theta0 must have one entry per center column");
        auto go = [&](const auto& provider) {
            const double beta = provider.beta();
            const double L = provider.lipschitz();
            execute(provider, detail::configured_step(provider, exp, std::min(beta, 1.0 / beta) / (L * L),
                                                      StepMode::nonlinear, envelope_mixing_fn(inst.mrp, provider)));
        };
        if (pkind == "linear_contraction") go(LinearContractionProvider(centers, stat.pi));
        else go(SaturatingProvider(centers, stat.pi, pj.value("kappa", 1.0)));
    } else {
        throw ConfigError("unknown provider kind '" + pkind + "'");
    }

    out.exit_code = exit_code_for(out.ledgers);
    json ledgers = json::array();
    for (const auto& L : out.ledgers) ledgers.push_back(to_json(L));
    write_json(out_dir / "ledger.json",
               {{"fingerprint", out.fingerprint}, {"exit_code", out.exit_code}, {"ledgers", ledgers}});
    files.push_back("ledger.json");

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.manifest = {{"manifest_version", kManifestVersion},
                    {"tool_version", kToolVersion},
                    {"config_path", config_path},
                    {"config", resolved},
                    {"fingerprint", out.fingerprint},
                    {"resolved", {{"alpha", out.alpha}, {"tau", out.tau}, {"B", out.B}, {"T", out.T}}},
                    {"output_dir", out_dir.string()},
                    {"outputs", files},
                    {"threads", threads},
                    {"wall_clock", {{"started_utc", started_utc}, {"seconds", seconds}}}};
    if (resolved.at("experiment").at("provider").value("kind", "td0") == "td0") {
        const auto model = build_steady_state(inst.mrp, inst.features, inst.theta0);
        out.manifest["resolved"]["omega"] = model.omega;
    }
    write_json(out_dir / "manifest.json", out.manifest);
    return out;
}

enum class SweepAxis { alpha, T, tau_max };

inline SweepAxis parse_axis(const std::string& name) {
    if (name == "alpha") return SweepAxis::alpha;
    if (name == "T") return SweepAxis::T;
    if (name == "tau_max") return SweepAxis::tau_max;
    throw ConfigError("sweep axis must be alpha, T or tau_max (got '" + name + "')");
}

struct SweepOutcome {
    std::vector<RunOutcome> points;
    double floor_slope = std::numeric_limits<double>::quiet_NaN();
    double error_slope = std::numeric_limits<double>::quiet_NaN();
    int exit_code = kExitPass;
    json summary;
};

/// One run per grid value under out_dir/point_NNN, plus summary.csv and summary.json.
/// alpha values are multipliers of the resolved step size. On an averaging config the T axis
/// replaces the horizon grid and runs once.
inline SweepOutcome cmd_sweep(const json& resolved, SweepAxis axis, const std::vector<double>& values,
                              const fs::path& out_dir, unsigned threads) {
    if (values.empty()) throw ConfigError("sweep grid is empty");
    for (double v : values)
        if (!(v > 0.0) && !(axis == SweepAxis::tau_max && v == 0.0))
            throw ConfigError("sweep values must be positive");
    SweepOutcome sw;
    fs::create_directories(out_dir);
    const bool averaging = resolved.at("experiment").at("kind") == "averaging";

    std::vector<json> configs;
    if (axis == SweepAxis::T && averaging) {
        json c = resolved;
        c["experiment"]["T_grid"] = json::array();
        for (double v : values) c["experiment"]["T_grid"].push_back(static_cast<std::size_t>(v));
        configs.push_back(c);
    } else {
        for (double v : values) {
            json c = resolved;
            auto& exp = c["experiment"];
            switch (axis) {
                case SweepAxis::alpha: exp["alpha_scale"] = exp["alpha_scale"].get<double>() * v; break;
                case SweepAxis::T: exp["T"] = static_cast<std::size_t>(v); break;
                case SweepAxis::tau_max:
                    exp["delays"]["tau_max"] = static_cast<std::size_t>(v);
                    if (exp["delays"]["kind"] == "none" && v > 0) exp["delays"]["kind"] = "uniform";
                    break;
            }
            configs.push_back(c);
        }
    }

    std::ostringstream csv;
    csv << "point,value,fingerprint,alpha,tau,T,floor,exit_code,verdicts\n";
    std::vector<double> alphas, floors;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        std::ostringstream name;
        name << "point_" << std::setw(3) << std::setfill('0') << i;
        RunOutcome r = cmd_run(configs[i], out_dir / name.str(), threads);
        std::string verdicts;
        for (const auto& L : r.ledgers) verdicts += (verdicts.empty() ? "" : ";") + L.theorem + "=" + to_string(L.verdict);
        csv << i << ',' << format_double(configs.size() == values.size() ? values[i] : values.back()) << ','
            << r.fingerprint << ',' << format_double(r.alpha) << ',' << r.tau << ',' << r.T << ','
            << format_double(r.floor) << ',' << r.exit_code << ',' << verdicts << '\n';
        alphas.push_back(r.alpha);
        floors.push_back(r.floor);
        if (r.exit_code == kExitLedgerFail || sw.exit_code == kExitLedgerFail) sw.exit_code = kExitLedgerFail;
        else if (r.exit_code != kExitPass) sw.exit_code = r.exit_code;
        if (averaging) sw.error_slope = r.ledgers.front().fitted["tail_slope"];
        sw.points.push_back(std::move(r));
    }
    if (axis == SweepAxis::alpha && !averaging && alphas.size() >= 2) {
        bool positive = true;
        for (double f : floors) positive = positive && f > 0.0 && std::isfinite(f);
        if (positive) sw.floor_slope = loglog_slope(alphas, floors);
    }
    {
        std::ofstream f(out_dir / "summary.csv", std::ios::binary);
        f << csv.str();
    }
    sw.summary = {{"points", sw.points.size()},
                  {"exit_code", sw.exit_code},
                  {"floor_vs_alpha_slope", std::isfinite(sw.floor_slope) ? json(sw.floor_slope) : json(nullptr)},
                  {"error_vs_T_slope", std::isfinite(sw.error_slope) ? json(sw.error_slope) : json(nullptr)}};
    write_json(out_dir / "summary.json", sw.summary);
    return sw;
}

}  // namespace tdsa
