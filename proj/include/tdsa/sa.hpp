#pragma once

// Update-direction providers, step-size policy, delay processes and the SA update loops.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdsa/chain.hpp"
#include "tdsa/features.hpp"
#include "tdsa/oracle.hpp"
#include "tdsa/rng.hpp"

namespace tdsa {

/// Sampled direction g(theta; X), steady-state direction gbar(theta), and the
/// declared constants: Lipschitz bound L, scale sigma and monotonicity modulus beta.
template <class P>
concept DirectionProvider = requires(const P& p, const Vector& theta, const Transition& x, Vector& out) {
    { p.dim() } -> std::convertible_to<std::size_t>;
    p.direction(theta, x, out);
    p.steady(theta, out);
    { p.theta_star() } -> std::convertible_to<const Vector&>;
    { p.lipschitz() } -> std::convertible_to<double>;
    { p.sigma() } -> std::convertible_to<double>;
    { p.beta() } -> std::convertible_to<double>;
};

/// Linear TD(0) with features Phi: L = 2, beta = omega (1 - gamma).
class TD0Provider {
public:
    TD0Provider(const MarkovRewardProcess& mrp, FeatureMatrix features, const Vector& theta0)
        : features_(std::move(features)), gamma_(mrp.gamma()), model_(build_steady_state(mrp, features_, theta0)) {}

    [[nodiscard]] std::size_t dim() const noexcept { return features_.dim(); }
    void direction(const Vector& theta, const Transition& x, Vector& out) const {
        td0_direction(features_, gamma_, theta, x, out);
    }
    void steady(const Vector& theta, Vector& out) const {
        out.noalias() = model_.A_bar * theta;
        out += model_.b_neg;
    }
    [[nodiscard]] const Vector& theta_star() const noexcept { return model_.theta_star; }
    [[nodiscard]] double lipschitz() const noexcept { return 2.0; }
    [[nodiscard]] double sigma() const noexcept { return model_.sigma_const; }
    [[nodiscard]] double beta() const noexcept { return model_.contraction(); }

    [[nodiscard]] const SteadyStateModel& model() const noexcept { return model_; }
    [[nodiscard]] const FeatureMatrix& features() const noexcept { return features_; }

private:
    FeatureMatrix features_;
    double gamma_;
    SteadyStateModel model_;
};

namespace detail {
inline double max_row_norm(const Matrix& m) {
    double out = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) out = std::max(out, m.row(i).norm());
    return out;
}
}  // namespace detail

/// g(theta; X) = -theta + c(s): a noisy linear contraction with beta = L = 1 and
/// theta* = E_pi[c].
class LinearContractionProvider {
public:
    LinearContractionProvider(Matrix centers, const Vector& pi) : centers_(std::move(centers)) {
        if (centers_.rows() != pi.size()) throw std::invalid_argument("one center per state is required");
        theta_star_ = centers_.transpose() * pi;
        sigma_ = std::max({1.0, detail::max_row_norm(centers_), theta_star_.norm()});
    }

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(centers_.cols()); }
    void direction(const Vector& theta, const Transition& x, Vector& out) const {
        out = centers_.row(x.s).transpose() - theta;
    }
    void steady(const Vector& theta, Vector& out) const { out = theta_star_ - theta; }
    [[nodiscard]] const Vector& theta_star() const noexcept { return theta_star_; }
    [[nodiscard]] double lipschitz() const noexcept { return 1.0; }
    [[nodiscard]] double sigma() const noexcept { return sigma_; }
    [[nodiscard]] double beta() const noexcept { return 1.0; }

    /// E_pi ||c(s) - theta*||^2, the per-step noise variance under i.i.d. sampling.
    [[nodiscard]] double noise_variance(const Vector& pi) const {
        double v = 0.0;
        for (Eigen::Index s = 0; s < centers_.rows(); ++s)
            v += pi(s) * (centers_.row(s).transpose() - theta_star_).squaredNorm();
        return v;
    }

private:
    Matrix centers_;
    Vector theta_star_;
    double sigma_ = 1.0;
};

/// Saturating monotone map g(theta; X) = -(kappa u + tanh(u)), u = theta - c(s), componentwise.
/// Strongly monotone with beta = kappa, Lipschitz with L = 1 + kappa.
class SaturatingProvider {
public:
    SaturatingProvider(Matrix centers, const Vector& pi, double kappa)
        : centers_(std::move(centers)), pi_(pi), kappa_(kappa) {
        if (centers_.rows() != pi.size()) throw std::invalid_argument("one center per state is required");
        if (!(kappa_ > 0.0)) throw std::invalid_argument("kappa must be positive");
        theta_star_.resize(centers_.cols());
        for (Eigen::Index i = 0; i < centers_.cols(); ++i) {
            // Per-coordinate root of a strictly increasing function, by bisection.
            double lo = centers_.col(i).minCoeff() - 1.0;
            double hi = centers_.col(i).maxCoeff() + 1.0;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (coordinate_mean(i, mid) > 0.0 ? hi : lo) = mid;
            }
            theta_star_(i) = 0.5 * (lo + hi);
        }
        sigma_ = std::max({1.0, detail::max_row_norm(centers_), theta_star_.norm()});
    }

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(centers_.cols()); }
    void direction(const Vector& theta, const Transition& x, Vector& out) const {
        out.resize(theta.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            const double u = theta(i) - centers_(x.s, i);
            out(i) = -(kappa_ * u + std::tanh(u));
        }
    }
    void steady(const Vector& theta, Vector& out) const {
        out.resize(theta.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i) out(i) = -coordinate_mean(i, theta(i));
    }
    [[nodiscard]] const Vector& theta_star() const noexcept { return theta_star_; }
    [[nodiscard]] double lipschitz() const noexcept { return 1.0 + kappa_; }
    [[nodiscard]] double sigma() const noexcept { return sigma_; }
    [[nodiscard]] double beta() const noexcept { return kappa_; }

private:
    [[nodiscard]] double coordinate_mean(Eigen::Index i, double x) const {
        double acc = 0.0;
        for (Eigen::Index s = 0; s < centers_.rows(); ++s) {
            const double u = x - centers_(s, i);
            acc += pi_(s) * (kappa_ * u + std::tanh(u));
        }
        return acc;
    }

    Matrix centers_;
    Vector pi_;
    double kappa_;
    Vector theta_star_;
    double sigma_ = 1.0;
};

/// Wraps a provider and overrides its declared constants (audits, misdeclaration tests).
template <DirectionProvider Inner>
class DeclaredConstants {
public:
    DeclaredConstants(Inner inner, double lipschitz, double sigma, double beta)
        : inner_(std::move(inner)), L_(lipschitz), sigma_(sigma), beta_(beta) {}

    [[nodiscard]] std::size_t dim() const noexcept { return inner_.dim(); }
    void direction(const Vector& theta, const Transition& x, Vector& out) const { inner_.direction(theta, x, out); }
    void steady(const Vector& theta, Vector& out) const { inner_.steady(theta, out); }
    [[nodiscard]] const Vector& theta_star() const noexcept { return inner_.theta_star(); }
    [[nodiscard]] double lipschitz() const noexcept { return L_; }
    [[nodiscard]] double sigma() const noexcept { return sigma_; }
    [[nodiscard]] double beta() const noexcept { return beta_; }

private:
    Inner inner_;
    double L_, sigma_, beta_;
};

/// B = 10 max{||theta0 - theta*||^2, sigma^2} for any provider.
template <DirectionProvider P>
double iterate_bound(const P& provider, const Vector& theta0) {
    const double s = provider.sigma();
    return 10.0 * std::max((theta0 - provider.theta_star()).squaredNorm(), s * s);
}

// ---------------------------------------------------------------------------
// Step size
// ---------------------------------------------------------------------------

enum class StepMode { td0, nonlinear };

inline const char* to_string(StepMode m) noexcept { return m == StepMode::td0 ? "td0" : "nonlinear"; }

using MixingTimeFn = std::function<std::size_t(double)>;

struct StepSizeSpec {
    double C = 8.0;
    double alpha = 0.0;
    std::size_t tau_alpha = 1;
    StepMode mode = StepMode::td0;
    double rate_bound = 0.0;  // omega (1-gamma) for td0, beta_bar / L^2 for nonlinear
    double lipschitz = 2.0;
    double beta = 0.0;        // contraction modulus in the rate factor (1 - alpha beta)
    bool compliant = false;   // alpha <= min{rate_bound / C, 1/8} / tau_alpha

    [[nodiscard]] double cap() const noexcept {
        return std::min(rate_bound / C, 0.125) / static_cast<double>(tau_alpha);
    }
};

class StepSizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void require_c(double C) {
    if (!(C >= 8.0)) throw std::invalid_argument("step-size constant C must be at least 8");
}
}  // namespace detail

/// Wraps an arbitrary alpha into a spec and records whether it meets the hypothesis.
inline StepSizeSpec step_size_from_alpha(double alpha, double rate_bound, double beta, double lipschitz, double C,
                                         StepMode mode, const MixingTimeFn& tau_of) {
    detail::require_c(C);
    StepSizeSpec spec;
    spec.C = C;
    spec.alpha = alpha;
    spec.mode = mode;
    spec.rate_bound = rate_bound;
    spec.beta = beta;
    spec.lipschitz = lipschitz;
    spec.tau_alpha = tau_of(alpha);
    spec.compliant = alpha > 0.0 && alpha <= spec.cap() * (1.0 + 1e-12);
    return spec;
}

/// Solves the circular constraint alpha <= k / tau(alpha), k = min{rate_bound / C, 1/8}, by
/// fixed-point iteration on the integer mixing time.
inline StepSizeSpec resolve_step_size(double rate_bound, double beta, double lipschitz, double C, StepMode mode,
                                      const MixingTimeFn& tau_of, std::optional<double> start = std::nullopt) {
    detail::require_c(C);
    const double k = std::min(rate_bound / C, 0.125);
    double alpha = start.value_or(k);
    std::size_t tau = tau_of(alpha);
    for (int it = 0; it < 100; ++it) {
        const double next = k / static_cast<double>(tau);
        const std::size_t next_tau = tau_of(next);
        if (next_tau == tau) {
            auto spec = step_size_from_alpha(next, rate_bound, beta, lipschitz, C, mode, tau_of);
            if (!spec.compliant) break;
            return spec;
        }
        alpha = next;
        tau = next_tau;
    }
    throw StepSizeError("step-size iteration did not reach a self-consistent mixing time within 100 rounds");
}

inline MixingTimeFn td0_mixing_fn(const MarkovRewardProcess& mrp, const FeatureMatrix& features) {
    auto profile = std::make_shared<MixingProfile>(tv_mixing_profile(mrp, kProfileHorizon));
    return [mrp, features, profile](double eps) { return mixing_time(mrp, features, eps, *profile).tau; };
}

/// Envelope-based mixing time for a generic provider: deviation <= 2 L sigma TV (||theta|| + 1).
template <DirectionProvider P>
MixingTimeFn envelope_mixing_fn(const MarkovRewardProcess& mrp, const P& provider) {
    auto profile = std::make_shared<MixingProfile>(tv_mixing_profile(mrp, kProfileHorizon));
    const double scale = 2.0 * provider.lipschitz() * provider.sigma();
    return [mrp, profile, scale](double eps) { return envelope_mixing_time(mrp, *profile, scale, eps).tau; };
}

inline StepSizeSpec resolve_td0_step_size(const TD0Provider& provider, const MarkovRewardProcess& mrp,
                                          double C = 8.0) {
    const double rate = provider.model().contraction();
    return resolve_step_size(rate, rate, 2.0, C, StepMode::td0, td0_mixing_fn(mrp, provider.features()));
}

/// alpha <= beta_bar / (C tau L^2), beta_bar = min{beta, 1/beta}.
template <DirectionProvider P>
StepSizeSpec resolve_nonlinear_step_size(const P& provider, const MixingTimeFn& tau_of, double C = 8.0) {
    const double beta = provider.beta();
    const double beta_bar = std::min(beta, 1.0 / beta);
    const double L = provider.lipschitz();
    return resolve_step_size(beta_bar / (L * L), beta, L, C, StepMode::nonlinear, tau_of);
}

// ---------------------------------------------------------------------------
// Delays
// ---------------------------------------------------------------------------

enum class DelayKind { none, constant, uniform, sawtooth };

inline const char* to_string(DelayKind k) noexcept {
    switch (k) {
        case DelayKind::none: return "none";
        case DelayKind::constant: return "constant";
        case DelayKind::uniform: return "uniform";
        case DelayKind::sawtooth: return "sawtooth";
    }
    return "none";
}

struct DelayProcess {
    DelayKind kind = DelayKind::none;
    std::size_t tau_max = 0;
    std::uint64_t seed = 0;

    [[nodiscard]] bool active() const noexcept { return kind != DelayKind::none && tau_max > 0; }
};

/// Emits tau_t with 0 <= tau_t <= min(t, tau_max).
class DelaySampler {
public:
    DelaySampler(const DelayProcess& p, std::uint64_t stream_seed) : p_(p), rng_(derive_seed(p.seed, stream_seed)) {}

    std::size_t next(std::size_t t) {
        std::size_t d = 0;
        switch (p_.kind) {
            case DelayKind::none: d = 0; break;
            case DelayKind::constant: d = p_.tau_max; break;
            case DelayKind::uniform: d = static_cast<std::size_t>(rng_() % (p_.tau_max + 1)); break;
            case DelayKind::sawtooth: d = t % (p_.tau_max + 1); break;
        }
        return std::min(d, t);
    }

private:
    DelayProcess p_;
    Xoshiro256 rng_;
};

// ---------------------------------------------------------------------------
// Update loops
// ---------------------------------------------------------------------------

enum class Sampling { markov, iid };

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

inline constexpr double kDivergenceNorm = 1e12;

/// Draws the observation stream of one trial: a single Markov trajectory, or the i.i.d.
/// control where s_t ~ pi afresh every step.
class ObservationStream {
public:
    ObservationStream(const MarkovRewardProcess& mrp, const Vector& pi, std::optional<std::size_t> start,
                      Sampling mode, std::uint64_t seed)
        : mrp_(&mrp), mode_(mode), rng_(seed) {
        pi_cdf_.resize(pi.size());
        double acc = 0.0;
        for (Eigen::Index i = 0; i < pi.size(); ++i) pi_cdf_[static_cast<std::size_t>(i)] = (acc += pi(i));
        pi_cdf_.back() = 1.0;
        if (start) {
            if (*start >= mrp.size()) throw ChainError("start state out of range");
            state_ = *start;
        } else {
            state_ = draw_stationary();
        }
    }

    Transition next() {
        if (mode_ == Sampling::iid) state_ = draw_stationary();
        const std::size_t s = state_;
        state_ = mrp_->next_state(s, rng_.uniform());
        return {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(state_),
                mrp_->rewards()(static_cast<Eigen::Index>(s))};
    }

private:
    std::size_t draw_stationary() {
        const double u = rng_.uniform();
        std::size_t j = 0;
        while (j + 1 < pi_cdf_.size() && !(u < pi_cdf_[j])) ++j;
        return j;
    }

    const MarkovRewardProcess* mrp_;
    Sampling mode_;
    Xoshiro256 rng_;
    std::vector<double> pi_cdf_;
    std::size_t state_ = 0;
};

struct Trajectory {
    std::vector<Vector> thetas;
    std::vector<Transition> observations;
    std::uint64_t seed = 0;
    std::string fingerprint;
};

struct RunOptions {
    std::optional<std::size_t> start_state = 0;
    Sampling sampling = Sampling::markov;
    std::string fingerprint;
};

namespace detail {
inline void guard(const Vector& theta, std::size_t step) {
    const double norm = theta.norm();
    if (!std::isfinite(norm) || norm > kDivergenceNorm) {
        std::ostringstream os;
        os << "iterate diverged at step " << step << " (norm " << norm << "); step size is out of contract";
        throw DivergenceError(step, os.str());
    }
}
}  // namespace detail

/// theta_{t+1} = theta_t + alpha g(theta_t; X_t) along one sampled trajectory.
template <DirectionProvider P>
Trajectory run_sa(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi, const Vector& theta0,
                  const StepSizeSpec& spec, std::size_t T, std::uint64_t seed, const RunOptions& opt = {}) {
    Trajectory out;
    out.seed = seed;
    out.fingerprint = opt.fingerprint;
    out.thetas.reserve(T + 1);
    out.observations.reserve(T);
    ObservationStream stream(mrp, pi, opt.start_state, opt.sampling, seed);
    Vector theta = theta0;
    Vector g(theta.size());
    out.thetas.push_back(theta);
    for (std::size_t t = 0; t < T; ++t) {
        const Transition x = stream.next();
        provider.direction(theta, x, g);
        theta += spec.alpha * g;
        detail::guard(theta, t + 1);
        out.thetas.push_back(theta);
        out.observations.push_back(x);
    }
    return out;
}

/// theta_{t+1} = theta_t + alpha g(theta_{t - tau_t}; X_{t - tau_t}).
template <DirectionProvider P>
Trajectory run_delayed_sa(const P& provider, const MarkovRewardProcess& mrp, const Vector& pi,
                          const Vector& theta0, const StepSizeSpec& spec, std::size_t T,
                          const DelayProcess& delays, std::uint64_t seed, const RunOptions& opt = {}) {
    Trajectory out;
    out.seed = seed;
    out.fingerprint = opt.fingerprint;
    out.thetas.reserve(T + 1);
    out.observations.reserve(T);
    ObservationStream stream(mrp, pi, opt.start_state, opt.sampling, seed);
    DelaySampler delay(delays, seed);
    const std::size_t window = delays.tau_max + 1;
    std::vector<Vector> past_theta(window);
    std::vector<Transition> past_x(window);
    Vector theta = theta0;
    Vector g(theta.size());
    out.thetas.push_back(theta);
    for (std::size_t t = 0; t < T; ++t) {
        const Transition x = stream.next();
        past_theta[t % window] = theta;
        past_x[t % window] = x;
        const std::size_t lag = delay.next(t);
        const std::size_t slot = (t - lag) % window;
        provider.direction(past_theta[slot], past_x[slot], g);
        theta += spec.alpha * g;
        detail::guard(theta, t + 1);
        out.thetas.push_back(theta);
        out.observations.push_back(x);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Provider audit
// ---------------------------------------------------------------------------

struct ProviderAudit {
    double max_lipschitz_ratio = 0.0;  // ||g(t1;X)-g(t2;X)|| / ||t1-t2||
    double max_growth_ratio = 0.0;     // ||g(t;X)|| / (||t|| + sigma)
    double worst_monotonicity = -std::numeric_limits<double>::infinity();  // <d, gbar(t)-gbar(t*)> / ||d||^2
    double max_envelope_excess = -std::numeric_limits<double>::infinity(); // ||g|| - (2||t-t*|| + 4 sigma)
    double max_steady_excess = -std::numeric_limits<double>::infinity();   // ||gbar|| - 2||t-t*||
    bool passed = true;
    std::string witness;
};

/// Samples (theta1, theta2, X) and checks the declared L, sigma and beta.
template <DirectionProvider P>
ProviderAudit audit_provider(const P& provider, const MarkovRewardProcess& mrp, std::size_t sample_count,
                             std::uint64_t seed) {
    const auto K = static_cast<Eigen::Index>(provider.dim());
    const double L = provider.lipschitz();
    const double sigma = provider.sigma();
    const double beta = provider.beta();
    const Vector& star = provider.theta_star();
    Xoshiro256 rng(seed);
    std::normal_distribution<double> normal;
    auto draw = [&] {
        const double scale = std::pow(10.0, 4.0 * rng.uniform() - 2.0);
        Vector v(K);
        for (Eigen::Index i = 0; i < K; ++i) v(i) = scale * normal(rng);
        return v;
    };
    auto fmt = [](const Vector& v) {
        std::ostringstream os;
        os << '[';
        for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v(i);
        os << ']';
        return os.str();
    };

    ProviderAudit audit;
    Vector g1(K), g2(K), gs(K), gstar(K);
    provider.steady(star, gstar);
    constexpr double tol = 1e-10;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const Vector t1 = star + draw();
        const Vector t2 = star + draw();
        const auto s = static_cast<std::size_t>(rng() % mrp.size());
        const std::size_t next = mrp.next_state(s, rng.uniform());
        const Transition x{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(next),
                           mrp.rewards()(static_cast<Eigen::Index>(s))};
        provider.direction(t1, x, g1);
        provider.direction(t2, x, g2);
        provider.steady(t1, gs);

        const double dist = (t1 - t2).norm();
        const double lip = (g1 - g2).norm() / dist;
        const double growth = g1.norm() / (t1.norm() + sigma);
        const Vector d = t1 - star;
        const double mono = d.dot(gs - gstar) / d.squaredNorm();
        audit.max_lipschitz_ratio = std::max(audit.max_lipschitz_ratio, lip);
        audit.max_growth_ratio = std::max(audit.max_growth_ratio, growth);
        audit.worst_monotonicity = std::max(audit.worst_monotonicity, mono);
        audit.max_envelope_excess = std::max(audit.max_envelope_excess, g1.norm() - (2.0 * d.norm() + 4.0 * sigma));
        audit.max_steady_excess = std::max(audit.max_steady_excess, gs.norm() - 2.0 * d.norm());

        if (audit.passed) {
            std::string why;
            if (lip > L * (1.0 + tol)) why = "Lipschitz ratio " + std::to_string(lip) + " > L";
            else if (growth > L * (1.0 + tol)) why = "growth ratio " + std::to_string(growth) + " > L";
            else if (mono > -beta * (1.0 - tol)) why = "monotonicity " + std::to_string(mono) + " > -beta";
            if (!why.empty()) {
                audit.passed = false;
                audit.witness = why + " at theta1=" + fmt(t1) + " theta2=" + fmt(t2) + " X=(" + std::to_string(x.s) +
                                "," + std::to_string(x.next) + "," + std::to_string(x.reward) + ")";
            }
        }
    }
    return audit;
}

}  // namespace tdsa
