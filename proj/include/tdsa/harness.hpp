#pragma once

// Monte Carlo estimation of d_t = E||theta_t - theta*||^2 and
// e_t = E<theta_t - theta*, g_t(theta_t) - gbar(theta_t)>, and the ledgers that check the
// boundedness, recursion, drift, mixing and averaging bounds against them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tdsa/chain.hpp"
#include "tdsa/oracle.hpp"
#include "tdsa/rng.hpp"
#include "tdsa/sa.hpp"

namespace tdsa {

inline constexpr std::size_t kMinLedgerTrials = 100;
inline constexpr double kSlackSE = 3.0;
inline constexpr double kDefaultCeiling = 100.0;
// Trials are reduced in fixed blocks, then blocks in index order, independent of thread count.
inline constexpr std::size_t kBlockTrials = 64;

struct ExperimentConfig {
    std::size_t T = 0;
    std::size_t trials = 2000;
    std::uint64_t master_seed = 1;
    std::optional<std::size_t> start_state = 0;  // nullopt: draw s_0 from pi
    Sampling sampling = Sampling::markov;
    DelayProcess delays;
    std::size_t drift_lag = 0;  // 0 disables the drift statistic
    unsigned threads = 1;

    void validate() const {
        if (trials < kMinLedgerTrials)
            throw std::invalid_argument("trials must be at least " + std::to_string(kMinLedgerTrials) +
                                        " for ledger-producing runs (got " + std::to_string(trials) + ")");
        if (T == 0) throw std::invalid_argument("horizon T must be positive");
    }
};

inline double standard_error(double mean, double sq_mean, std::size_t n) {
    if (n < 2) return 0.0;
    const double N = static_cast<double>(n);
    const double var = std::max(0.0, sq_mean - mean * mean) * N / (N - 1.0);
    return std::sqrt(var / N);
}

/// Per-step cross-trial moments. Index t runs over 0..T; e and cross are defined for t < T,
/// drift for t >= drift_lag.
struct MonteCarloEstimate {
    std::size_t trials = 0;
    std::size_t steps = 0;
    std::size_t drift_lag = 0;
    std::size_t aborted = 0;
    bool valid = true;
    std::vector<double> d_mean, d_sq, e_mean, e_sq, cross, drift_mean, drift_sq;

    [[nodiscard]] double d_hat(std::size_t t) const { return d_mean[t]; }
    [[nodiscard]] double d_se(std::size_t t) const { return standard_error(d_mean[t], d_sq[t], trials); }
    [[nodiscard]] double e_hat(std::size_t t) const { return e_mean[t]; }
    [[nodiscard]] double e_se(std::size_t t) const { return standard_error(e_mean[t], e_sq[t], trials); }
    [[nodiscard]] double drift_hat(std::size_t t) const { return drift_mean[t]; }
    [[nodiscard]] double drift_se(std::size_t t) const { return standard_error(drift_mean[t], drift_sq[t], trials); }

    /// Standard error of the paired statistic d_{t+1} - rho d_t.
    [[nodiscard]] double recursion_se(std::size_t t, double rho) const {
        if (trials < 2) return 0.0;
        const double N = static_cast<double>(trials);
        const double var_a = d_sq[t + 1] - d_mean[t + 1] * d_mean[t + 1];
        const double var_b = d_sq[t] - d_mean[t] * d_mean[t];
        const double cov = cross[t] - d_mean[t] * d_mean[t + 1];
        const double var = std::max(0.0, var_a + rho * rho * var_b - 2.0 * rho * cov) * N / (N - 1.0);
        return std::sqrt(var / N);
    }
};

namespace detail {

struct StepSums {
    std::vector<double> d, d2, e, e2, cross, drift, drift2;

    explicit StepSums(std::size_t T)
        : d(T + 1, 0.0), d2(T + 1, 0.0), e(T + 1, 0.0), e2(T + 1, 0.0), cross(T + 1, 0.0), drift(T + 1, 0.0),
          drift2(T + 1, 0.0) {}

    void add(const StepSums& o) {
        for (std::size_t t = 0; t < d.size(); ++t) {
            d[t] += o.d[t];
            d2[t] += o.d2[t];
            e[t] += o.e[t];
            e2[t] += o.e2[t];
            cross[t] += o.cross[t];
            drift[t] += o.drift[t];
            drift2[t] += o.drift2[t];
        }
    }
};

template <DirectionProvider P>
struct TrialState {
    TrialState(const MarkovRewardProcess& mrp, const Vector& pi, const Vector& theta0, const ExperimentConfig& cfg,
               std::uint64_t seed)
        : stream(mrp, pi, cfg.start_state, cfg.sampling, seed),
          delay(cfg.delays, seed),
          theta(theta0),
          g(theta0.size()),
          gbar(theta0.size()),
          applied(theta0.size()) {
        if (cfg.delays.active()) {
            past_theta.resize(cfg.delays.tau_max + 1);
            past_x.resize(cfg.delays.tau_max + 1);
        }
        if (cfg.drift_lag > 0) lagged.resize(cfg.drift_lag + 1, theta0);
    }

    ObservationStream stream;
    DelaySampler delay;
    Vector theta, g, gbar, applied;
    std::vector<Vector> past_theta;
    std::vector<Transition> past_x;
    std::vector<Vector> lagged;  // ring of the last drift_lag + 1 iterates
    double prev_d = 0.0;
    bool alive = true;
};

template <DirectionProvider P>
void run_block(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi, const Vector& theta0,
               const StepSizeSpec& spec, const ExperimentConfig& cfg, std::size_t first, std::size_t last,
               StepSums& out, std::size_t& aborted) {
    const Vector& star = provider.theta_star();
    const double alpha = spec.alpha;
    const std::size_t T = cfg.T;
    const std::size_t lag = cfg.drift_lag;
    const bool delayed = cfg.delays.active();
    const std::size_t window = cfg.delays.tau_max + 1;

    std::vector<TrialState<P>> trials;
    trials.reserve(last - first);
    for (std::size_t i = first; i < last; ++i)
        trials.emplace_back(mrp, pi, theta0, cfg, derive_seed(cfg.master_seed, i));

    Vector diff(theta0.size());
    for (std::size_t t = 0; t <= T; ++t) {
        double sd = 0, sd2 = 0, se = 0, se2 = 0, scross = 0, sdrift = 0, sdrift2 = 0;
        for (auto& tr : trials) {
            if (!tr.alive) continue;
            diff = tr.theta - star;
            const double d = diff.squaredNorm();
            sd += d;
            sd2 += d * d;
            if (t > 0) scross += tr.prev_d * d;
            tr.prev_d = d;
            if (lag > 0) {
                auto& slot = tr.lagged[t % (lag + 1)];
                if (t >= lag) {
                    const double dr = (tr.theta - tr.lagged[(t - lag) % (lag + 1)]).squaredNorm();
                    sdrift += dr;
                    sdrift2 += dr * dr;
                }
                slot = tr.theta;
            }
            if (t == T) continue;

            const Transition x = tr.stream.next();
            provider.direction(tr.theta, x, tr.g);
            provider.steady(tr.theta, tr.gbar);
            const double e = diff.dot(tr.g - tr.gbar);
            se += e;
            se2 += e * e;
            if (delayed) {
                tr.past_theta[t % window] = tr.theta;
                tr.past_x[t % window] = x;
                const std::size_t slot = (t - tr.delay.next(t)) % window;
                provider.direction(tr.past_theta[slot], tr.past_x[slot], tr.applied);
                tr.theta += alpha * tr.applied;
            } else {
                tr.theta += alpha * tr.g;
            }
            const double norm = tr.theta.norm();
            if (!std::isfinite(norm) || norm > kDivergenceNorm) {
                tr.alive = false;
                ++aborted;
            }
        }
        out.d[t] = sd;
        out.d2[t] = sd2;
        out.e[t] = se;
        out.e2[t] = se2;
        if (t > 0) out.cross[t - 1] = scross;
        out.drift[t] = sdrift;
        out.drift2[t] = sdrift2;
    }
}

}  // namespace detail

/// Runs `trials` independent trajectories (seeds derived from master_seed and the trial index)
/// and reduces per-step moments in a fixed order, so results do not depend on the thread count.
template <DirectionProvider P>
MonteCarloEstimate estimate_dt_et(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi,
                                  const Vector& theta0, const StepSizeSpec& spec, const ExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t T = cfg.T;
    const std::size_t blocks = (cfg.trials + kBlockTrials - 1) / kBlockTrials;
    const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(blocks)));

    detail::StepSums total(T);
    std::vector<detail::StepSums> scratch(threads, detail::StepSums(T));
    std::vector<std::size_t> aborted(threads, 0);
    std::size_t aborted_total = 0;

    for (std::size_t start = 0; start < blocks; start += threads) {
        const std::size_t end = std::min(blocks, start + threads);
        auto work = [&](std::size_t b) {
            const unsigned slot = static_cast<unsigned>(b - start);
            aborted[slot] = 0;
            const std::size_t first = b * kBlockTrials;
            const std::size_t last = std::min(cfg.trials, first + kBlockTrials);
            detail::run_block(provider, mrp, pi, theta0, spec, cfg, first, last, scratch[slot], aborted[slot]);
        };
        if (end - start == 1) {
            work(start);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t b = start; b < end; ++b) pool.emplace_back(work, b);
            for (auto& th : pool) th.join();
        }
        for (std::size_t b = start; b < end; ++b) {
            total.add(scratch[b - start]);
            aborted_total += aborted[b - start];
        }
    }

    MonteCarloEstimate est;
    est.trials = cfg.trials;
    est.steps = T;
    est.drift_lag = cfg.drift_lag;
    est.aborted = aborted_total;
    est.valid = aborted_total == 0;
    const double inv = 1.0 / static_cast<double>(cfg.trials);
    auto scale = [inv](std::vector<double>& v) {
        for (auto& x : v) x *= inv;
        return std::move(v);
    };
    est.d_mean = scale(total.d);
    est.d_sq = scale(total.d2);
    est.e_mean = scale(total.e);
    est.e_sq = scale(total.e2);
    est.cross = scale(total.cross);
    est.drift_mean = scale(total.drift);
    est.drift_sq = scale(total.drift2);
    return est;
}

// ---------------------------------------------------------------------------
// Ledgers
// ---------------------------------------------------------------------------

enum class Verdict { pass, fail, out_of_contract, invalid };

inline const char* to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::fail: return "fail";
        case Verdict::out_of_contract: return "out-of-contract";
        case Verdict::invalid: return "invalid";
    }
    return "invalid";
}

struct Hypothesis {
    double alpha = 0.0;
    std::size_t tau = 1;
    double B = 0.0;
    double C = 8.0;
    double cap = 0.0;
    bool compliant = false;
    StepMode mode = StepMode::td0;
    double beta = 0.0;       // rate factor is (1 - alpha beta)
    double lipschitz = 2.0;

    static Hypothesis from(const StepSizeSpec& spec, double B) {
        return {spec.alpha, spec.tau_alpha, B, spec.C, spec.cap(), spec.compliant, spec.mode, spec.beta,
                spec.lipschitz};
    }

    /// L^2 for the nonlinear form, 1 for TD(0) whose constants are absorbed in the O().
    [[nodiscard]] double l2() const noexcept { return mode == StepMode::td0 ? 1.0 : lipschitz * lipschitz; }
};

struct BoundLedger {
    std::string theorem;
    Hypothesis hypothesis;
    Verdict verdict = Verdict::pass;
    double slack_se = kSlackSE;
    std::size_t checked_steps = 0;
    std::size_t violations = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::size_t worst_step = 0;
    std::map<std::string, double> fitted;
    std::string note;

    [[nodiscard]] bool passed() const noexcept { return verdict == Verdict::pass; }
};

namespace detail {
inline Verdict gate(const MonteCarloEstimate& est, const Hypothesis& h, bool ok) {
    if (!h.compliant) return Verdict::out_of_contract;
    if (!est.valid) return Verdict::invalid;
    return ok ? Verdict::pass : Verdict::fail;
}
}  // namespace detail

/// d_hat(t) - 3 SE(t) <= B at every step.
inline BoundLedger check_boundedness(const MonteCarloEstimate& est, const Hypothesis& h) {
    BoundLedger L;
    L.theorem = "boundedness";
    L.hypothesis = h;
    for (std::size_t t = 0; t <= est.steps; ++t) {
        const double margin = h.B - (est.d_hat(t) - kSlackSE * est.d_se(t));
        ++L.checked_steps;
        if (margin < 0) ++L.violations;
        if (margin < L.worst_margin) {
            L.worst_margin = margin;
            L.worst_step = t;
        }
    }
    L.fitted["max_d_hat"] = *std::max_element(est.d_mean.begin(), est.d_mean.end());
    L.verdict = detail::gate(est, h, L.violations == 0);
    if (!est.valid) L.note = std::to_string(est.aborted) + " trials aborted by the divergence guard";
    if (!h.compliant) L.note += (L.note.empty() ? "" : "; ") + std::string("step size violates its hypothesis");
    return L;
}

/// Fits the smallest c with d(t+1) <= (1 - alpha beta) d(t) + c alpha^2 L^2 tau B for t >= tau, and
/// the smallest c' with e(t) <= c' alpha L^2 tau B for t >= tau. Before tau, e(t) <= 4 L B.
inline BoundLedger check_recursion(const MonteCarloEstimate& est, const Hypothesis& h,
                                   double ceiling = kDefaultCeiling) {
    BoundLedger L;
    L.theorem = "recursion";
    L.hypothesis = h;
    const double rho = 1.0 - h.alpha * h.beta;
    const double tau = static_cast<double>(h.tau);
    const double rec_scale = h.alpha * h.alpha * h.l2() * tau * h.B;
    const double mix_scale = h.alpha * h.l2() * tau * h.B;
    const double early_bound = 4.0 * h.lipschitz * h.B;

    double c = 0.0, c_mix = 0.0;
    std::size_t c_step = h.tau, mix_step = h.tau, early_violations = 0;
    double early_worst = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < est.steps; ++t) {
        const double e_low = est.e_hat(t) - kSlackSE * est.e_se(t);
        if (t < h.tau) {
            early_worst = std::min(early_worst, early_bound - e_low);
            if (e_low > early_bound) ++early_violations;
            continue;
        }
        ++L.checked_steps;
        const double excess = est.d_hat(t + 1) - rho * est.d_hat(t) - kSlackSE * est.recursion_se(t, rho);
        if (excess / rec_scale > c) {
            c = excess / rec_scale;
            c_step = t;
        }
        if (e_low / mix_scale > c_mix) {
            c_mix = e_low / mix_scale;
            mix_step = t;
        }
    }
    L.fitted["c"] = c;
    L.fitted["c_step"] = static_cast<double>(c_step);
    L.fitted["c_mixing"] = c_mix;
    L.fitted["c_mixing_step"] = static_cast<double>(mix_step);
    L.fitted["early_violations"] = static_cast<double>(early_violations);
    L.fitted["ceiling"] = ceiling;
    L.worst_margin = std::min(ceiling - std::max(c, c_mix), early_worst);
    L.worst_step = c >= c_mix ? c_step : mix_step;
    L.violations = (c > ceiling) + (c_mix > ceiling) + early_violations;
    L.verdict = detail::gate(est, h, std::isfinite(c) && std::isfinite(c_mix) && L.violations == 0);
    return L;
}

/// E||theta_t - theta_{t-lag}||^2 <= c alpha^2 lag^2 B for t >= lag.
inline BoundLedger check_drift(const MonteCarloEstimate& est, const Hypothesis& h,
                               double ceiling = kDefaultCeiling) {
    if (est.drift_lag == 0) throw std::invalid_argument("estimate was run without a drift lag");
    BoundLedger L;
    L.theorem = "drift";
    L.hypothesis = h;
    const double lag = static_cast<double>(est.drift_lag);
    const double scale = h.alpha * h.alpha * lag * lag * h.l2() * h.B;
    double c = 0.0;
    for (std::size_t t = est.drift_lag; t <= est.steps; ++t) {
        ++L.checked_steps;
        const double v = (est.drift_hat(t) - kSlackSE * est.drift_se(t)) / scale;
        if (v > c) {
            c = v;
            L.worst_step = t;
        }
    }
    L.fitted["c"] = c;
    L.fitted["ceiling"] = ceiling;
    L.worst_margin = ceiling - c;
    L.violations = c > ceiling ? 1 : 0;
    L.verdict = detail::gate(est, h, L.violations == 0);
    return L;
}

/// i.i.d. control: e_hat(t) within 3 SE of zero for t >= 1.
struct ZeroDisturbanceCheck {
    std::size_t checked = 0;
    std::size_t exceedances = 0;
    double max_abs_z = 0.0;
    std::size_t max_step = 0;
};

inline ZeroDisturbanceCheck check_zero_disturbance(const MonteCarloEstimate& est, std::size_t from = 1) {
    ZeroDisturbanceCheck out;
    for (std::size_t t = from; t < est.steps; ++t) {
        const double se = est.e_se(t);
        const double z = se > 0 ? std::abs(est.e_hat(t)) / se : (est.e_hat(t) == 0.0 ? 0.0 : HUGE_VAL);
        ++out.checked;
        if (z > kSlackSE) ++out.exceedances;
        if (z > out.max_abs_z) {
            out.max_abs_z = z;
            out.max_step = t;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regressions
// ---------------------------------------------------------------------------

/// Least-squares slope of log(y) on log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("slope fit needs two or more points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

/// Least-squares slope of y on x.
inline double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

/// Mean of d_hat over the final 10% of steps, restricted to t >= 5 / (alpha beta).
inline double asymptotic_floor(const MonteCarloEstimate& est, double alpha, double beta) {
    const auto burn = static_cast<std::size_t>(std::ceil(5.0 / (alpha * beta)));
    const std::size_t from = std::max(burn, est.steps - est.steps / 10);
    if (from > est.steps) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t t = from; t <= est.steps; ++t) acc += est.d_hat(t);
    return acc / static_cast<double>(est.steps - from + 1);
}

/// Horizon used by the boundedness runs: ceil(10 / (alpha beta)).
inline std::size_t default_horizon(double alpha, double beta) {
    return static_cast<std::size_t>(std::ceil(10.0 / (alpha * beta)));
}

// ---------------------------------------------------------------------------
// Weighted iterate averaging
// ---------------------------------------------------------------------------

/// Normalized weights w_t proportional to (1 - alpha A)^{-(t+1)}, t = 0..T, built from ratios.
inline std::vector<double> averaging_weights(double q, std::size_t T) {
    // w_t / w_T = q^{T-t}; normalize by the geometric sum.
    std::vector<double> w(T + 1);
    double acc = 1.0;
    for (std::size_t i = 0; i <= T; ++i) {
        w[T - i] = acc;
        acc *= q;
    }
    double total = 0.0;
    for (double v : w) total += v;
    for (double& v : w) v /= total;
    return w;
}

/// Running weighted mean with weights (1 - alpha A)^{-(t+1)}; keeps only the ratio
/// W_{t-1} / wbar_t, never wbar_t itself.
class WeightedAverager {
public:
    WeightedAverager(double q, const Vector& theta0) : q_(q), mean_(theta0) {}

    void push(const Vector& theta) {
        ratio_ = q_ * (ratio_ + 1.0);
        const double lambda = 1.0 / (1.0 + ratio_);
        mean_ += lambda * (theta - mean_);
    }

    [[nodiscard]] const Vector& mean() const noexcept { return mean_; }

private:
    double q_;
    double ratio_ = 0.0;
    Vector mean_;
};

struct TunedStep {
    double alpha = 0.0;
    double lambda = 0.0;
    int which_case = 2;
    double cap = 0.0;  // omega (1-gamma) / (C tau)
};

/// Two-case tuning: lambda = max{e, A (T+1)^2 / tau}; alpha = ln(lambda) / (A (T+1)) when that
/// does not exceed the cap, else alpha = cap.
inline TunedStep tune_averaging_step(double A, std::size_t T, std::size_t tau, double cap) {
    TunedStep s;
    s.cap = cap;
    const double T1 = static_cast<double>(T + 1);
    s.lambda = std::max(std::exp(1.0), A * T1 * T1 / static_cast<double>(tau));
    const double candidate = std::log(s.lambda) / (A * T1);
    if (candidate <= cap) {
        s.which_case = 1;
        s.alpha = candidate;
    } else {
        s.which_case = 2;
        s.alpha = cap;
    }
    return s;
}

struct AveragingPoint {
    std::size_t T = 0;
    TunedStep step;
    std::size_t tau_alpha = 0;
    bool compliant = false;
    double error = 0.0;  // E[(thetabar_T - theta*)^T Sigma (thetabar_T - theta*)]
    double error_se = 0.0;
};

struct AveragingResult {
    std::vector<AveragingPoint> points;
    double tail_slope = 0.0;
    std::size_t tail_points = 0;
    BoundLedger ledger;
};

inline constexpr std::size_t kAveragingTailPoints = 4;
inline constexpr double kAveragingSlopeThreshold = -0.8;

/// Weighted-average D-norm error over a T grid with the two-case tuned step size.
template <DirectionProvider P>
AveragingResult weighted_average_experiment(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi,
                                            const Matrix& Sigma, double omega_contraction, const Vector& theta0,
                                            const StepSizeSpec& spec, const MixingTimeFn& tau_of,
                                            const std::vector<std::size_t>& T_grid, const ExperimentConfig& cfg) {
    if (T_grid.empty()) throw std::invalid_argument("averaging experiment needs at least one horizon");
    if (cfg.trials < kMinLedgerTrials) throw std::invalid_argument("averaging experiment needs >= 100 trials");
    const double A = 0.5 * omega_contraction;
    const double cap = omega_contraction / (spec.C * static_cast<double>(spec.tau_alpha));
    const Vector& star = provider.theta_star();

    AveragingResult res;
    bool all_compliant = true;
    for (std::size_t T : T_grid) {
        AveragingPoint pt;
        pt.T = T;
        pt.step = tune_averaging_step(A, T, spec.tau_alpha, std::min(cap, spec.alpha));
        pt.tau_alpha = tau_of(pt.step.alpha);
        pt.compliant = pt.step.alpha <= std::min(omega_contraction / spec.C, 0.125) /
                                            static_cast<double>(pt.tau_alpha) * (1.0 + 1e-12);
        all_compliant = all_compliant && pt.compliant;
        const double q = 1.0 - pt.step.alpha * A;

        double sum = 0.0, sq = 0.0;
        Vector g(theta0.size());
        for (std::size_t i = 0; i < cfg.trials; ++i) {
            ObservationStream stream(mrp, pi, cfg.start_state, cfg.sampling, derive_seed(cfg.master_seed, i));
            Vector theta = theta0;
            WeightedAverager avg(q, theta0);
            for (std::size_t t = 0; t < T; ++t) {
                provider.direction(theta, stream.next(), g);
                theta += pt.step.alpha * g;
                avg.push(theta);
            }
            const Vector diff = avg.mean() - star;
            const double err = diff.dot(Sigma * diff);
            sum += err;
            sq += err * err;
        }
        pt.error = sum / static_cast<double>(cfg.trials);
        pt.error_se = standard_error(pt.error, sq / static_cast<double>(cfg.trials), cfg.trials);
        res.points.push_back(pt);
    }

    res.tail_points = std::min(kAveragingTailPoints, res.points.size());
    std::vector<double> xs, ys;
    for (std::size_t i = res.points.size() - res.tail_points; i < res.points.size(); ++i) {
        xs.push_back(static_cast<double>(res.points[i].T));
        ys.push_back(res.points[i].error);
    }
    res.tail_slope = xs.size() >= 2 ? loglog_slope(xs, ys) : std::numeric_limits<double>::quiet_NaN();

    BoundLedger& L = res.ledger;
    L.theorem = "weighted-averaging";
    L.hypothesis = Hypothesis::from(spec, iterate_bound(provider, theta0));
    L.hypothesis.compliant = all_compliant;
    L.checked_steps = res.points.size();
    L.fitted["tail_slope"] = res.tail_slope;
    L.fitted["threshold"] = kAveragingSlopeThreshold;
    L.worst_margin = kAveragingSlopeThreshold - res.tail_slope;
    L.violations = res.tail_slope <= kAveragingSlopeThreshold ? 0 : 1;
    if (res.tail_points < 2) {
        L.verdict = Verdict::invalid;
        L.note = "slope needs at least two horizons";
    } else if (!all_compliant)
        L.verdict = Verdict::out_of_contract;
    else
        L.verdict = L.violations == 0 ? Verdict::pass : Verdict::fail;
    return res;
}

// ---------------------------------------------------------------------------
// General SA entry point
// ---------------------------------------------------------------------------

class ProviderAuditError : public std::runtime_error {
public:
    ProviderAuditError(ProviderAudit audit)
        : std::runtime_error("provider audit failed: " + audit.witness), audit_(std::move(audit)) {}
    [[nodiscard]] const ProviderAudit& audit() const noexcept { return audit_; }

private:
    ProviderAudit audit_;
};

inline constexpr std::size_t kAuditSamples = 4000;

struct NonlinearRun {
    ProviderAudit audit;
    MonteCarloEstimate estimate;
    BoundLedger boundedness;
    BoundLedger recursion;
};

/// Audits the declared constants, then estimates d_t, e_t and checks both ledgers.
/// Refuses to run when the audit finds a witness against L, sigma or beta.
template <DirectionProvider P>
NonlinearRun nonlinear_sa_experiment(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi,
                                     const Vector& theta0, const StepSizeSpec& spec, const ExperimentConfig& cfg,
                                     double ceiling = kDefaultCeiling) {
    NonlinearRun run;
    run.audit = audit_provider(provider, mrp, kAuditSamples, derive_seed(cfg.master_seed, ~0ULL));
    if (!run.audit.passed) throw ProviderAuditError(run.audit);
    run.estimate = estimate_dt_et(provider, mrp, pi, theta0, spec, cfg);
    const Hypothesis h = Hypothesis::from(spec, iterate_bound(provider, theta0));
    run.boundedness = check_boundedness(run.estimate, h);
    run.recursion = check_recursion(run.estimate, h, ceiling);
    return run;
}

}  // namespace tdsa
