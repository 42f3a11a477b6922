#pragma once

// Closed-form steady-state quantities for linear TD(0) and the mixing-time certificate.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdsa/chain.hpp"
#include "tdsa/features.hpp"
#include "tdsa/rng.hpp"

namespace tdsa {

class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact steady-state model. gbar(theta) = A_bar theta + b_neg, where
/// A_bar = Phi^T D (gamma P - I) Phi and b_neg = Phi^T D R.
struct SteadyStateModel {
    Matrix A_bar;
    Vector b_neg;
    Matrix Sigma;
    double omega = 0.0;
    Vector theta_star;
    double sigma_const = 1.0;  // max{1, r_bar, ||theta*||}
    double gamma = 0.0;
    double r_bar = 0.0;
    Vector pi;
    Vector theta0;
    double condition_number = 0.0;

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(theta_star.size()); }

    /// omega (1 - gamma): the strong-monotonicity modulus of gbar.
    [[nodiscard]] double contraction() const noexcept { return omega * (1.0 - gamma); }

    /// B(theta0) = 10 max{||theta0 - theta*||^2, sigma^2}.
    [[nodiscard]] double B(const Vector& from) const {
        return 10.0 * std::max((from - theta_star).squaredNorm(), sigma_const * sigma_const);
    }
    [[nodiscard]] double B() const { return B(theta0); }
};

inline SteadyStateModel build_steady_state(const MarkovRewardProcess& mrp, const FeatureMatrix& features,
                                           const Vector& theta0) {
    if (features.states() != mrp.size())
        throw OracleError("feature matrix has " + std::to_string(features.states()) + " rows but the chain has " +
                          std::to_string(mrp.size()) + " states");
    if (static_cast<std::size_t>(theta0.size()) != features.dim())
        throw OracleError("theta0 dimension does not match the feature count");

    const Matrix& Phi = features.matrix();
    const auto n = static_cast<Eigen::Index>(mrp.size());
    SteadyStateModel m;
    m.pi = stationary_distribution(mrp).pi;
    m.gamma = mrp.gamma();
    m.r_bar = mrp.reward_bound();
    m.theta0 = theta0;

    const auto D = m.pi.asDiagonal();
    m.A_bar = Phi.transpose() * D * (mrp.gamma() * mrp.transition() - Matrix::Identity(n, n)) * Phi;
    m.b_neg = Phi.transpose() * (D * mrp.rewards());
    m.Sigma = Phi.transpose() * D * Phi;
    m.Sigma = 0.5 * (m.Sigma + m.Sigma.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.Sigma, Eigen::EigenvaluesOnly);
    m.omega = eig.eigenvalues()(0);
    if (!(m.omega > 1e-10)) throw OracleError("Sigma is not positive definite; features are rank-deficient under pi");

    Eigen::JacobiSVD<Matrix> svd(m.A_bar);
    const auto& sv = svd.singularValues();
    m.condition_number = sv(0) / sv(sv.size() - 1);
    if (!std::isfinite(m.condition_number) || m.condition_number > 1e12) {
        std::ostringstream os;
        os << "A_bar is numerically singular (condition number " << m.condition_number
           << "); an input violating the chain or feature assumptions slipped through";
        throw OracleError(os.str());
    }
    Eigen::FullPivLU<Matrix> lu(m.A_bar);
    m.theta_star = lu.solve(-m.b_neg);
    m.theta_star += lu.solve(-m.b_neg - m.A_bar * m.theta_star);
    m.sigma_const = std::max({1.0, m.r_bar, m.theta_star.norm()});
    return m;
}

/// gbar(theta) = A_bar theta + Phi^T D R.
inline Vector steady_state_direction(const SteadyStateModel& model, const Vector& theta) {
    return model.A_bar * theta + model.b_neg;
}

/// <theta* - theta, gbar(theta)> - omega (1-gamma) ||theta* - theta||^2; non-negative by the
/// pseudo-gradient inequality.
inline double lemma1_margin(const SteadyStateModel& model, const Vector& theta) {
    const Vector diff = model.theta_star - theta;
    // gbar(theta) = A_bar (theta - theta*) + gbar(theta*); the second term is the solve residual.
    const Vector g = model.A_bar * (-diff) + steady_state_direction(model, model.theta_star);
    return diff.dot(g) - model.contraction() * diff.squaredNorm();
}

inline double d_norm(const Vector& x, const Vector& pi) { return std::sqrt(x.dot(pi.cwiseProduct(x))); }

/// ||P x||_D - ||x||_D (non-positive when P is a D-norm contraction).
inline double lemma5_excess(const MarkovRewardProcess& mrp, const Vector& pi, const Vector& x) {
    return d_norm(mrp.transition() * x, pi) - d_norm(x, pi);
}

// ---------------------------------------------------------------------------
// Mixing time
// ---------------------------------------------------------------------------

struct MixingTimeCertificate {
    double epsilon = 0.0;
    std::size_t tau = 1;
    std::size_t horizon_checked = 0;
    std::vector<double> margin_curve;  // margin_curve[k-1]: worst deviation at step k
    // Tail beyond horizon_checked: deviation(k) <= scale * c0 * rho^(k-1).
    double tail_scale = 0.0;
    double tail_c0 = 0.0;
    double tail_rho = 0.0;

    /// Re-checks the certificate against its own recorded data.
    [[nodiscard]] bool verify() const {
        if (tau < 1) return false;
        for (std::size_t k = tau; k <= horizon_checked; ++k)
            if (margin_curve[k - 1] > epsilon) return false;
        const double tail = tail_scale * tail_c0 * std::pow(tail_rho, static_cast<double>(horizon_checked));
        return tail <= epsilon;
    }
};

inline constexpr std::size_t kDefaultMaxHorizon = 200000;
inline constexpr std::size_t kProfileHorizon = 400;

namespace detail {

// Smallest H >= 1 with scale * c0 * rho^H <= eps.
inline std::size_t envelope_horizon(double scale, const MixingProfile& prof, double eps, std::size_t max_horizon) {
    const double lead = scale * prof.c0;
    if (lead <= eps || prof.rho == 0.0) return 1;
    const double h = std::ceil(std::log(lead / eps) / std::log(1.0 / prof.rho));
    if (!(h < static_cast<double>(max_horizon))) {
        std::ostringstream os;
        os << "epsilon " << eps << " needs a mixing horizon of about " << h << " steps, above the limit "
           << max_horizon;
        throw OracleError(os.str());
    }
    return std::max<std::size_t>(1, static_cast<std::size_t>(h));
}

inline std::size_t first_certified(const std::vector<double>& curve, double eps) {
    std::size_t tau = 1;
    for (std::size_t k = curve.size(); k >= 1; --k)
        if (curve[k - 1] > eps) {
            tau = k + 1;
            break;
        }
    return tau;
}

}  // namespace detail

/// Exact mixing time for linear TD(0). The condition over all theta reduces to
/// max_{s1} max{||Phi^T (D_k - D)(gamma P - I) Phi||_op, ||Phi^T (D_k - D) R||} <= eps with
/// D_k = diag(P^{k-1}(s1, .)); enumerated out to a horizon where the TV envelope takes over.
inline MixingTimeCertificate mixing_time(const MarkovRewardProcess& mrp, const FeatureMatrix& features,
                                         double epsilon, const MixingProfile& profile,
                                         std::size_t max_horizon = kDefaultMaxHorizon) {
    if (!(epsilon > 0.0)) throw OracleError("mixing_time needs epsilon > 0");
    const Matrix& P = mrp.transition();
    const Matrix& Phi = features.matrix();
    const auto n = P.rows();
    const Vector pi = stationary_distribution(mrp).pi;
    const Matrix M0 = (mrp.gamma() * P - Matrix::Identity(n, n)) * Phi;
    const Vector& R = mrp.rewards();

    double scale = 0.0;
    for (Eigen::Index s = 0; s < n; ++s)
        scale = std::max(scale, Phi.row(s).norm() * std::max(M0.row(s).norm(), std::abs(R(s))));
    scale *= 2.0;

    MixingTimeCertificate cert;
    cert.epsilon = epsilon;
    cert.tail_scale = scale;
    cert.tail_c0 = profile.c0;
    cert.tail_rho = profile.rho;
    cert.horizon_checked = detail::envelope_horizon(scale, profile, epsilon, max_horizon);
    cert.margin_curve.resize(cert.horizon_checked);

    Matrix Pk = Matrix::Identity(n, n);  // P^{k-1}
    Matrix Mk(Phi.cols(), Phi.cols());
    for (std::size_t k = 1; k <= cert.horizon_checked; ++k) {
        double worst = 0.0;
        for (Eigen::Index s1 = 0; s1 < n; ++s1) {
            const Vector delta = Pk.row(s1).transpose() - pi;
            Mk.noalias() = Phi.transpose() * delta.asDiagonal() * M0;
            const double op = Mk.jacobiSvd().singularValues()(0);
            const double rn = (Phi.transpose() * delta.cwiseProduct(R)).norm();
            worst = std::max({worst, op, rn});
        }
        cert.margin_curve[k - 1] = worst;
        Pk = Pk * P;
    }
    cert.tau = detail::first_certified(cert.margin_curve, epsilon);
    return cert;
}

inline MixingTimeCertificate mixing_time(const MarkovRewardProcess& mrp, const FeatureMatrix& features,
                                         double epsilon) {
    return mixing_time(mrp, features, epsilon, tv_mixing_profile(mrp, kProfileHorizon));
}

/// Certified over-estimate for a generic direction whose conditional-mean deviation is
/// bounded by scale * TV(P^{k-1}(s1,.), pi) * (||theta|| + 1).
inline MixingTimeCertificate envelope_mixing_time(const MarkovRewardProcess& mrp, const MixingProfile& profile,
                                                  double scale, double epsilon,
                                                  std::size_t max_horizon = kDefaultMaxHorizon) {
    if (!(epsilon > 0.0)) throw OracleError("mixing_time needs epsilon > 0");
    MixingTimeCertificate cert;
    cert.epsilon = epsilon;
    cert.tail_scale = scale;
    cert.tail_c0 = profile.c0;
    cert.tail_rho = profile.rho;
    cert.horizon_checked = detail::envelope_horizon(scale, profile, epsilon, max_horizon);
    cert.margin_curve.resize(cert.horizon_checked);
    const double tv0 = 1.0 - stationary_distribution(mrp).pi.minCoeff();
    for (std::size_t k = 1; k <= cert.horizon_checked; ++k) {
        const std::size_t j = k - 1;
        double tv = 0.0;
        if (j == 0)
            tv = tv0;
        else if (j <= profile.tv_curve.size())
            tv = profile.tv_curve[j - 1];
        else
            tv = profile.envelope(static_cast<double>(j));
        cert.margin_curve[k - 1] = scale * tv;
    }
    cert.tau = detail::first_certified(cert.margin_curve, epsilon);
    return cert;
}

// ---------------------------------------------------------------------------
// Lipschitz / norm audit for the TD(0) direction
// ---------------------------------------------------------------------------

struct LipschitzAudit {
    double max_sampled_ratio = 0.0;  // ||g(t1;X) - g(t2;X)|| / ||t1 - t2||
    double max_steady_ratio = 0.0;   // ||gbar(t1) - gbar(t2)|| / ||t1 - t2||
    double max_norm_ratio = 0.0;     // ||g(t;X)|| / (2||t|| + 2 r_bar)
    std::size_t samples = 0;

    [[nodiscard]] bool ok() const noexcept {
        return max_sampled_ratio <= 2.0 + 1e-12 && max_steady_ratio <= 2.0 + 1e-12 && max_norm_ratio <= 1.0 + 1e-12;
    }
};

inline LipschitzAudit lipschitz_audit(const MarkovRewardProcess& mrp, const FeatureMatrix& features,
                                      std::size_t sample_count, std::uint64_t seed) {
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(features.dim()));
    const SteadyStateModel model = build_steady_state(mrp, features, zero);
    const auto K = static_cast<Eigen::Index>(features.dim());
    const std::size_t n = mrp.size();
    Xoshiro256 rng(seed);
    std::normal_distribution<double> normal;
    auto draw = [&] {
        const double scale = std::pow(10.0, 4.0 * rng.uniform() - 2.0);
        Vector v(K);
        for (Eigen::Index i = 0; i < K; ++i) v(i) = scale * normal(rng);
        return v;
    };

    LipschitzAudit audit;
    audit.samples = sample_count;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const Vector t1 = draw();
        const Vector t2 = draw();
        const auto s = static_cast<std::size_t>(rng() % n);
        const std::size_t next = mrp.next_state(s, rng.uniform());
        const Transition x{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(next),
                           mrp.rewards()(static_cast<Eigen::Index>(s))};
        const Vector g1 = td0_direction(features, mrp.gamma(), t1, x);
        const Vector g2 = td0_direction(features, mrp.gamma(), t2, x);
        const double dist = (t1 - t2).norm();
        if (dist > 0.0) {
            audit.max_sampled_ratio = std::max(audit.max_sampled_ratio, (g1 - g2).norm() / dist);
            audit.max_steady_ratio = std::max(
                audit.max_steady_ratio,
                (steady_state_direction(model, t1) - steady_state_direction(model, t2)).norm() / dist);
        }
        const double cap = 2.0 * t1.norm() + 2.0 * mrp.reward_bound();
        if (cap > 0.0) audit.max_norm_ratio = std::max(audit.max_norm_ratio, g1.norm() / cap);
    }
    return audit;
}

}  // namespace tdsa
