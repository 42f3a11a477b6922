// Runs the ten acceptance criteria at their stated tolerances and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria (capped at 255).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "tdsa/tdsa.hpp"

namespace fs = std::filesystem;
using namespace tdsa;

namespace {

const fs::path kConfigs = TDSA_CONFIG_DIR;
const fs::path kOut = TDSA_ACCEPT_OUT;

const std::vector<std::string> kInstances = {"one_state",     "two_state",      "two_state_iid", "three_state_constant",
                                             "cycle4_tabular", "cycle6_fourier", "random5_k2",    "random8_k2",
                                             "random6_k3",    "random10_k1"};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << x;
    return os.str();
}

json config(const std::string& rel) { return resolve_config(load_json(kConfigs / rel)); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

unsigned threads() { return default_threads(); }

std::vector<fixtures::RandomInstance> fifty_instances() {
    std::vector<fixtures::RandomInstance> out;
    for (std::uint64_t seed = 1000; out.size() < 50; ++seed)
        if (auto inst = fixtures::random_instance(seed)) out.push_back(std::move(*inst));
    return out;
}

Vector gaussian(Xoshiro256& rng, Eigen::Index n) {
    std::normal_distribution<double> normal;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

Outcome oracle_exactness() {
    double worst_g = 0, worst_pi = 0, worst_l5 = -HUGE_VAL;
    const auto instances = fifty_instances();
    for (const auto& inst : instances) {
        const auto& m = inst.model;
        worst_g = std::max(worst_g, steady_state_direction(m, m.theta_star).norm());
        const Vector drift = inst.mrp.transition().transpose() * m.pi - m.pi;
        worst_pi = std::max(worst_pi, drift.cwiseAbs().maxCoeff());
        Xoshiro256 rng(inst.seed);
        for (int i = 0; i < 10000; ++i) {
            const Vector x = gaussian(rng, static_cast<Eigen::Index>(inst.mrp.size()));
            worst_l5 = std::max(worst_l5, lemma5_excess(inst.mrp, m.pi, x) / d_norm(x, m.pi));
        }
    }
    Outcome o;
    o.pass = instances.size() == 50 && worst_g <= 1e-10 && worst_pi <= 1e-10 && worst_l5 <= 1e-12;
    o.detail = "max ||gbar(theta*)||=" + fmt(worst_g) + " max ||pi P - pi||inf=" + fmt(worst_pi) +
               " max relative D-norm excess=" + fmt(worst_l5);
    return o;
}

Outcome pseudo_gradient() {
    double worst = HUGE_VAL;
    for (const auto& inst : fifty_instances()) {
        Xoshiro256 rng(inst.seed + 7);
        const auto K = static_cast<Eigen::Index>(inst.features.dim());
        for (int i = 0; i < 10000; ++i) {
            Vector theta = gaussian(rng, K);
            theta *= 10.0 * rng.uniform() / theta.norm();
            worst = std::min(worst, lemma1_margin(inst.model, theta));
        }
    }
    return {worst >= -1e-10, "min lemma1_margin=" + fmt(worst)};
}

std::map<std::string, RunOutcome> g_bounded_runs;

Outcome boundedness() {
    Outcome o{true, ""};
    double min_margin = HUGE_VAL;
    std::string worst;
    for (const auto& name : kInstances) {
        const auto path = kConfigs / "instances" / (name + ".json");
        auto r = cmd_run(resolve_config(load_json(path)), kOut / "boundedness" / name, threads(), path.string());
        const auto& L = r.ledgers.at(0);
        if (L.theorem != "boundedness" || L.verdict != Verdict::pass || r.alpha <= 0) {
            o.pass = false;
            o.detail += name + "=" + to_string(L.verdict) + " ";
        }
        const double rel = L.worst_margin / r.B;
        if (rel < min_margin) {
            min_margin = rel;
            worst = name;
        }
        g_bounded_runs.emplace(name, std::move(r));
    }
    o.detail += "10 instances, min relative margin " + fmt(min_margin) + " (" + worst + ")";
    return o;
}

Outcome recursion_and_floor() {
    const auto sw = cmd_sweep(config("recursion_floor.json"), SweepAxis::alpha, {1.0, 0.5, 0.25}, kOut / "recursion_floor", threads());
    Outcome o{true, ""};
    double worst_c = 0;
    for (const auto& p : sw.points) {
        const auto& rec = p.ledgers.at(1);
        const double c = rec.fitted.at("c");
        worst_c = std::max(worst_c, c);
        if (!std::isfinite(c) || c > 100.0 || rec.verdict == Verdict::out_of_contract || rec.verdict == Verdict::invalid)
            o.pass = false;
        o.detail += "alpha=" + fmt(p.alpha) + " floor=" + fmt(p.floor) + " ";
    }
    const bool slope_ok = std::abs(sw.floor_slope - 1.0) <= 0.25;
    o.pass = o.pass && slope_ok;
    o.detail += "max c=" + fmt(worst_c) + " floor slope=" + fmt(sw.floor_slope);
    return o;
}

Outcome mixing_bound() {
    Outcome o;
    const auto& markov = g_bounded_runs.at("two_state");
    const auto& rec = markov.ledgers.at(1);
    const double c_mix = rec.fitted.at("c_mixing");
    const bool early_ok = rec.fitted.at("early_violations") == 0.0;

    // i.i.d. control: same instance and step size, s_t redrawn from pi at every step.
    const auto inst = build_instance(config("iid_control.json"));
    TD0Provider provider(inst.mrp, inst.features, inst.theta0);
    const auto spec = resolve_td0_step_size(provider, inst.mrp);
    ExperimentConfig cfg;
    cfg.T = default_horizon(spec.alpha, spec.beta);
    cfg.trials = 2000;
    cfg.master_seed = 4;
    cfg.start_state = std::nullopt;
    cfg.sampling = Sampling::iid;
    cfg.threads = threads();
    const auto est = estimate_dt_et(provider, inst.mrp, provider.model().pi, inst.theta0, spec, cfg);
    const auto z = check_zero_disturbance(est);
    const double nominal = static_cast<double>(z.checked) * std::erfc(3.0 / std::sqrt(2.0));

    o.pass = c_mix <= 100.0 && early_ok && z.exceedances == 0;
    o.detail = "c'=" + fmt(c_mix) + " (t<tau within 4LB: " + (early_ok ? "yes" : "no") +
               "); iid control: |e_hat| > 3 SE at " + std::to_string(z.exceedances) + "/" +
               std::to_string(z.checked) + " steps (nominal false-positive count " + fmt(nominal) +
               "), max |z|=" + fmt(z.max_abs_z);
    return o;
}

Outcome weighted_averaging() {
    const auto r = cmd_run(config("averaging.json"), kOut / "averaging", threads());
    const auto& L = r.ledgers.at(0);
    const double slope = L.fitted.at("tail_slope");
    return {L.verdict == Verdict::pass, "tail slope=" + fmt(slope) + " (threshold -0.8), verdict " + to_string(L.verdict)};
}

Outcome nonlinear() {
    Outcome o{true, ""};
    // Closed form for g = c(s) - theta under i.i.d. sampling: d_{t+1} = (1-alpha)^2 d_t + alpha^2 V.
    const auto inst = build_instance(config("nonlinear_linear_iid.json"));
    const Vector pi = stationary_distribution(inst.mrp).pi;
    const Matrix centers = matrix_from_json(config("nonlinear_linear_iid.json")["experiment"]["provider"]["centers"], "centers");
    LinearContractionProvider lin(centers, pi);
    const auto spec = resolve_nonlinear_step_size(lin, envelope_mixing_fn(inst.mrp, lin));
    ExperimentConfig cfg;
    cfg.T = default_horizon(spec.alpha, spec.beta);
    cfg.trials = 2000;
    cfg.master_seed = 6;
    cfg.start_state = std::nullopt;
    cfg.sampling = Sampling::iid;
    cfg.threads = threads();
    const auto est = estimate_dt_et(lin, inst.mrp, pi, inst.theta0, spec, cfg);
    const double V = lin.noise_variance(pi);
    double d = (inst.theta0 - lin.theta_star()).squaredNorm();
    double worst_z = 0;
    std::size_t outside = 0;
    for (std::size_t t = 0; t <= est.steps; ++t) {
        const double se = est.d_se(t);
        const double gap = std::abs(est.d_hat(t) - d);
        const double zt = se > 0 ? gap / se : (gap <= 1e-12 ? 0.0 : HUGE_VAL);
        worst_z = std::max(worst_z, zt);
        if (zt > kSlackSE) ++outside;
        d = (1 - spec.alpha) * (1 - spec.alpha) * d + spec.alpha * spec.alpha * V;
    }
    o.pass = outside == 0 && spec.compliant;
    o.detail = "linear: max |d_hat - closed form|/SE=" + fmt(worst_z) + " over " + std::to_string(est.steps + 1) + " steps; ";

    const auto r = cmd_run(config("nonlinear_saturating.json"), kOut / "nonlinear", threads());
    const auto& bnd = r.ledgers.at(0);
    const auto& rec = r.ledgers.at(1);
    const double cap = 1.0 / (8.0 * static_cast<double>(r.tau) * 4.0);  // beta_bar = 1, L = 2
    o.pass = o.pass && bnd.verdict == Verdict::pass && rec.verdict == Verdict::pass && r.alpha <= cap * (1 + 1e-12);
    o.detail += "saturating: boundedness " + std::string(to_string(bnd.verdict)) + ", recursion " +
                to_string(rec.verdict) + " (c=" + fmt(rec.fitted.at("c")) + "), alpha=" + fmt(r.alpha) +
                " cap=" + fmt(cap);
    return o;
}

Outcome delayed() {
    Outcome o{true, ""};
    for (const std::string kind : {"uniform", "sawtooth"}) {
        for (std::size_t tau_max : {1, 5}) {
            json c = config("delayed_uniform.json");
            c["experiment"]["delays"]["kind"] = kind;
            c["experiment"]["delays"]["tau_max"] = tau_max;
            const auto r = cmd_run(c, kOut / "delayed" / (kind + std::to_string(tau_max)), threads());
            const auto& L = r.ledgers.at(0);
            if (L.verdict != Verdict::pass) o.pass = false;
            o.detail += kind + "/" + std::to_string(tau_max) + "=" + to_string(L.verdict) + " ";
        }
    }
    // tau_max = 0 must reproduce the undelayed loop exactly.
    const auto inst = build_instance(config("delayed_uniform.json"));
    TD0Provider provider(inst.mrp, inst.features, inst.theta0);
    const auto spec = resolve_td0_step_size(provider, inst.mrp);
    bool exact = true;
    for (const DelayKind kind : {DelayKind::uniform, DelayKind::sawtooth, DelayKind::constant}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto a = run_sa(provider, inst.mrp, provider.model().pi, inst.theta0, spec, 5000, seed);
            const auto b = run_delayed_sa(provider, inst.mrp, provider.model().pi, inst.theta0, spec, 5000,
                                          DelayProcess{kind, 0, 99}, seed);
            for (std::size_t t = 0; t < a.thetas.size() && exact; ++t) exact = (a.thetas[t].array() == b.thetas[t].array()).all();
        }
    }
    o.pass = o.pass && exact;
    o.detail += std::string("tau_max=0 bit-exact: ") + (exact ? "yes" : "no");
    return o;
}

Outcome mixing_law() {
    struct Case {
        std::string name;
        MarkovRewardProcess mrp;
        FeatureMatrix features;
    };
    std::vector<Case> cases;
    cases.push_back({"two_state", fixtures::two_state_mrp(), fixtures::two_state_features()});
    {
        Vector R(6);
        R << 1, 0.5, 0, -0.5, -1, 0.2;
        cases.push_back({"cycle6", MarkovRewardProcess(cycle_transition(6, 0.3), R, 0.8), FeatureMatrix::tabular(6)});
    }
    {
        Vector R(5);
        R << 1, -1, 0.5, 0, 0.25;
        Matrix phi(5, 2);
        for (int s = 0; s < 5; ++s) phi.row(s) << std::cos(2 * M_PI * s / 5), std::sin(2 * M_PI * s / 5);
        cases.push_back({"cycle5_fourier", MarkovRewardProcess(cycle_transition(5, 0.5), R, 0.7), FeatureMatrix(phi)});
    }
    {
        Matrix P(3, 3);
        P << 0.8, 0.15, 0.05, 0.1, 0.85, 0.05, 0.05, 0.1, 0.85;
        Vector R(3);
        R << 1, 0, -1;
        cases.push_back({"three_state", MarkovRewardProcess(P, R, 0.9), FeatureMatrix::tabular(3)});
    }

    Outcome o{true, ""};
    for (const auto& c : cases) {
        const auto profile = tv_mixing_profile(c.mrp, kProfileHorizon);
        std::vector<double> xs, ys;
        for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
            xs.push_back(std::log(1.0 / eps));
            ys.push_back(static_cast<double>(mixing_time(c.mrp, c.features, eps, profile).tau));
        }
        const double slope = linear_slope(xs, ys);
        const double expected = 1.0 / std::log(1.0 / profile.lambda2);
        const double rel = std::abs(slope - expected) / expected;
        if (rel > 0.10) o.pass = false;
        o.detail += c.name + " slope=" + fmt(slope) + " vs " + fmt(expected) + " ";
    }
    return o;
}

Outcome determinism() {
    Outcome o{true, ""};
    std::size_t identical = 0;
    for (const auto& name : kInstances) {
        const fs::path first = kOut / "boundedness" / name;
        const json manifest = load_json(first / "manifest.json");
        const auto r = cmd_run(config_from_document(manifest), kOut / "rerun" / name, threads());
        const bool same = r.fingerprint == manifest.at("fingerprint").get<std::string>() &&
                          slurp(first / "estimate.csv") == slurp(kOut / "rerun" / name / "estimate.csv") &&
                          slurp(first / "ledger.json") == slurp(kOut / "rerun" / name / "ledger.json");
        if (same) ++identical;
        else o.pass = false;
    }
    o.detail = std::to_string(identical) + "/10 reruns from manifest byte-identical (estimate.csv, ledger.json)";
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        std::string name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "oracle exactness", 10, oracle_exactness},
        {2, "pseudo-gradient inequality", 30, pseudo_gradient},
        {3, "boundedness of iterates", 300, boundedness},
        {4, "recursion constant and floor scaling", 600, recursion_and_floor},
        {5, "mixing bound and i.i.d. control", 300, mixing_bound},
        {6, "weighted averaging rate", 600, weighted_averaging},
        {7, "nonlinear SA", 300, nonlinear},
        {8, "delayed SA", 300, delayed},
        {9, "mixing-time law", 60, mixing_law},
        {10, "determinism from manifest", 1e9, determinism},
    };
    fs::create_directories(kOut);
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt(secs, 3) << " s";
        if (c.budget_s < 1e8) std::cout << ", budget " << c.budget_s << " s" << (in_time ? "" : " EXCEEDED");
        std::cout << "): " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return std::min(failed, 255);
}
