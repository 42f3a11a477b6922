#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdsa/tdsa.hpp"

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    unsigned threads = tdsa::default_threads();
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config or run manifest (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "output directory")->capture_default_str();
    cmd->add_option("--threads", c.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
}

tdsa::json load(const Common& c) {
    tdsa::json cfg = tdsa::resolve_config(tdsa::config_from_document(tdsa::load_json(c.config)));
    if (c.seed) cfg["experiment"]["master_seed"] = *c.seed;
    return cfg;
}

std::pair<std::string, std::vector<double>> parse_sweep(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw tdsa::ConfigError("--sweep expects <axis>=<v1,v2,...>");
    std::vector<double> values;
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        try {
            values.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw tdsa::ConfigError("bad sweep value '" + item + "'");
        }
    }
    return {spec.substr(0, eq), values};
}

void print_ledgers(const tdsa::RunOutcome& r) {
    std::cout << "fingerprint " << r.fingerprint << "  alpha=" << r.alpha << " tau=" << r.tau << " T=" << r.T
              << " B=" << r.B << '\n';
    for (const auto& L : r.ledgers)
        std::cout << "  " << L.theorem << ": " << tdsa::to_string(L.verdict) << " (worst margin " << L.worst_margin
                  << " at t=" << L.worst_step << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TD(0) and stochastic approximation under Markov sampling: oracles and Monte Carlo ledgers"};
    app.require_subcommand(1);

    Common oracle_opts, run_opts, sweep_opts;
    std::string sweep_spec;
    auto* oracle = app.add_subcommand("oracle", "write exact steady-state quantities and the mixing-time table");
    add_common(oracle, oracle_opts);
    auto* run = app.add_subcommand("run", "run the configured experiment and write estimates, ledgers and a manifest");
    add_common(run, run_opts);
    auto* sweep = app.add_subcommand("sweep", "run the experiment over a grid of one axis");
    add_common(sweep, sweep_opts);
    sweep->add_option("--sweep", sweep_spec, "axis=v1,v2,... with axis in {alpha, T, tau_max}; alpha values multiply the resolved step")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : tdsa::kExitInput;
    }

    try {
        if (*oracle) {
            const auto report = tdsa::cmd_oracle(load(oracle_opts), oracle_opts.out);
            std::cout << "omega=" << report["omega"] << " theta*=" << report["theta_star"].dump()
                      << " B=" << report["B"] << '\n';
            for (const auto& row : report["tau_table"])
                std::cout << "  eps=" << row["epsilon"] << " tau=" << row["tau"] << '\n';
            return tdsa::kExitPass;
        }
        if (*run) {
            const auto r = tdsa::cmd_run(load(run_opts), run_opts.out, run_opts.threads, run_opts.config);
            print_ledgers(r);
            return r.exit_code;
        }
        const auto [axis, values] = parse_sweep(sweep_spec);
        const auto sw = tdsa::cmd_sweep(load(sweep_opts), tdsa::parse_axis(axis), values, sweep_opts.out,
                                        sweep_opts.threads);
        for (const auto& p : sw.points) print_ledgers(p);
        std::cout << "summary " << sw.summary.dump() << '\n';
        return sw.exit_code;
    } catch (const tdsa::AssumptionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const tdsa::ChainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const tdsa::OracleError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const tdsa::StepSizeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const tdsa::ProviderAuditError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tdsa::kExitLedgerFail;
    }
}
