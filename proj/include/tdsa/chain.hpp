#pragma once

// Finite Markov reward processes: validation, stationary distribution,
// total-variation mixing profile and trajectory sampling.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdsa/rng.hpp"

namespace tdsa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ChainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kRowSumTolerance = 1e-9;

/// A fixed-policy MRP: transition matrix, expected rewards, discount.
/// Immutable once constructed.
class MarkovRewardProcess {
public:
    MarkovRewardProcess(Matrix transition, Vector rewards, double gamma)
        : P_(std::move(transition)), R_(std::move(rewards)), gamma_(gamma) {
        const auto n = P_.rows();
        if (n == 0 || P_.cols() != n)
            throw ChainError("transition matrix must be square and non-empty");
        if (R_.size() != n)
            throw ChainError("reward vector length " + std::to_string(R_.size()) +
                             " does not match state count " + std::to_string(n));
        if (!(gamma_ > 0.0 && gamma_ < 1.0))
            throw ChainError("discount factor must lie strictly inside (0,1)");
        if (!R_.allFinite()) throw ChainError("rewards must be finite");
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                const double p = P_(i, j);
                if (!std::isfinite(p) || p < 0.0 || p > 1.0)
                    throw ChainError("transition row " + std::to_string(i) +
                                     " has an entry outside [0,1]");
            }
            const double sum = P_.row(i).sum();
            if (std::abs(sum - 1.0) > kRowSumTolerance) {
                std::ostringstream os;
                os << "transition row " << i << " sums to " << sum << ", not 1";
                throw ChainError(os.str());
            }
            P_.row(i) /= sum;
        }
        r_bar_ = R_.cwiseAbs().maxCoeff();

        cdf_.resize(static_cast<std::size_t>(n * n));
        for (Eigen::Index i = 0; i < n; ++i) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                acc += P_(i, j);
                cdf_[static_cast<std::size_t>(i * n + j)] = acc;
            }
            // Last positive column absorbs the rounding so every u in [0,1) maps somewhere.
            Eigen::Index last = n - 1;
            while (last > 0 && P_(i, last) == 0.0) --last;
            for (Eigen::Index j = last; j < n; ++j) cdf_[static_cast<std::size_t>(i * n + j)] = 1.0;
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(P_.rows()); }
    [[nodiscard]] const Matrix& transition() const noexcept { return P_; }
    [[nodiscard]] const Vector& rewards() const noexcept { return R_; }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    /// max_s |R(s)|
    [[nodiscard]] double reward_bound() const noexcept { return r_bar_; }

    /// Inverse-CDF draw of the successor of `state` given u in [0,1).
    [[nodiscard]] std::size_t next_state(std::size_t state, double u) const noexcept {
        const std::size_t n = size();
        const double* row = cdf_.data() + state * n;
        std::size_t j = 0;
        while (j + 1 < n && !(u < row[j])) ++j;
        return j;
    }

private:
    Matrix P_;
    Vector R_;
    double gamma_;
    double r_bar_ = 0.0;
    std::vector<double> cdf_;
};

struct ValidationReport {
    bool irreducible = false;
    bool aperiodic = false;
    std::size_t period = 0;  // period of the chain when irreducible
    std::vector<std::size_t> unreachable_states;  // not mutually reachable with state 0
    std::vector<std::size_t> periodic_states;

    [[nodiscard]] bool ok() const noexcept { return irreducible && aperiodic; }

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        os << "irreducible=" << (irreducible ? "yes" : "no") << " aperiodic=" << (aperiodic ? "yes" : "no");
        if (irreducible) os << " period=" << period;
        auto list = [&os](const char* label, const std::vector<std::size_t>& v) {
            if (v.empty()) return;
            os << ' ' << label << "=[";
            for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
            os << ']';
        };
        list("unreachable", unreachable_states);
        list("periodic", periodic_states);
        return os.str();
    }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> adjacency(const Matrix& P, bool reversed) {
    const auto n = static_cast<std::size_t>(P.rows());
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0)
                (reversed ? adj[j] : adj[i]).push_back(reversed ? i : j);
    return adj;
}

inline std::vector<bool> reach(const std::vector<std::vector<std::size_t>>& adj, std::size_t from) {
    std::vector<bool> seen(adj.size(), false);
    std::vector<std::size_t> stack{from};
    seen[from] = true;
    while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        for (auto v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    return seen;
}

// gcd of (level[u] + 1 - level[v]) over edges inside `members`, BFS-levelled from members[0].
inline std::size_t class_period(const std::vector<std::vector<std::size_t>>& adj,
                                const std::vector<int>& component, int id, std::size_t root) {
    std::vector<long> level(adj.size(), -1);
    std::queue<std::size_t> q;
    level[root] = 0;
    q.push(root);
    std::size_t g = 0;
    while (!q.empty()) {
        const auto u = q.front();
        q.pop();
        for (auto v : adj[u]) {
            if (component[v] != id) continue;
            if (level[v] < 0) {
                level[v] = level[u] + 1;
                q.push(v);
            } else {
                g = std::gcd(g, static_cast<std::size_t>(std::labs(level[u] + 1 - level[v])));
            }
        }
    }
    return g;  // 0 when the class has no cycle
}

}  // namespace detail

/// Strong connectivity of the positive-entry graph plus the gcd-of-cycle-lengths period test.
inline ValidationReport validate_chain(const MarkovRewardProcess& mrp) {
    const Matrix& P = mrp.transition();
    const std::size_t n = mrp.size();
    const auto fwd = detail::adjacency(P, false);
    const auto bwd = detail::adjacency(P, true);

    ValidationReport report;
    const auto from0 = detail::reach(fwd, 0);
    const auto to0 = detail::reach(bwd, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (!(from0[i] && to0[i])) report.unreachable_states.push_back(i);
    report.irreducible = report.unreachable_states.empty();

    // Strongly connected classes by mutual reachability (n is small).
    std::vector<int> component(n, -1);
    int next_id = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (component[i] >= 0) continue;
        const auto f = detail::reach(fwd, i);
        const auto b = detail::reach(bwd, i);
        for (std::size_t j = 0; j < n; ++j)
            if (f[j] && b[j]) component[j] = next_id;
        ++next_id;
    }
    report.aperiodic = true;
    for (int id = 0; id < next_id; ++id) {
        std::size_t root = n;
        for (std::size_t i = 0; i < n && root == n; ++i)
            if (component[i] == id) root = i;
        const std::size_t period = detail::class_period(fwd, component, id, root);
        if (report.irreducible) report.period = period;
        if (period > 1) {
            report.aperiodic = false;
            for (std::size_t i = 0; i < n; ++i)
                if (component[i] == id) report.periodic_states.push_back(i);
        }
    }
    return report;
}

struct StationaryDistribution {
    Vector pi;

    [[nodiscard]] Eigen::DiagonalMatrix<double, Eigen::Dynamic> D() const { return pi.asDiagonal(); }
};

/// Exact solve of (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
inline StationaryDistribution stationary_distribution(const MarkovRewardProcess& mrp) {
    const Matrix& P = mrp.transition();
    const auto n = P.rows();
    Matrix A = P.transpose() - Matrix::Identity(n, n);
    A.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;

    Eigen::FullPivLU<Matrix> lu(A);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
        throw ChainError("stationary distribution is not unique (singular solve); run validate_chain");
    Vector pi = lu.solve(rhs);
    pi += lu.solve(rhs - A * pi);  // one step of iterative refinement
    if (!(pi.minCoeff() > 0.0))
        throw ChainError("stationary distribution has non-positive mass; run validate_chain");
    pi /= pi.sum();
    return {std::move(pi)};
}

struct MixingProfile {
    double rho = 0.0;
    double c0 = 0.0;
    double lambda2 = 0.0;           // |second eigenvalue| of P
    std::vector<double> tv_curve;   // tv_curve[k-1] = max_s TV(P^k(s,.), pi)
    std::size_t clamp_index = 0;    // first k clamped to 0, or 0 if none

    /// Certified geometric bound c0 * rho^k on the worst-case TV distance at step k.
    [[nodiscard]] double envelope(double k) const noexcept {
        if (c0 == 0.0) return 0.0;
        return c0 * std::pow(rho, k);
    }
};

inline double second_eigenvalue_modulus(const Matrix& P) {
    if (P.rows() < 2) return 0.0;
    Eigen::EigenSolver<Matrix> es(P, false);
    std::vector<double> mods;
    for (Eigen::Index i = 0; i < P.rows(); ++i) mods.push_back(std::abs(es.eigenvalues()(i)));
    std::sort(mods.begin(), mods.end(), std::greater<>());
    return mods[1];
}

// TV distances below this are indistinguishable from rounding in pi.
inline constexpr double kTvFloor = 1e-14;

inline MixingProfile tv_mixing_profile(const MarkovRewardProcess& mrp, std::size_t horizon) {
    if (horizon < 2) throw ChainError("mixing profile horizon must be at least 2");
    const Matrix& P = mrp.transition();
    const Vector pi = stationary_distribution(mrp).pi;
    const auto n = P.rows();

    MixingProfile prof;
    prof.lambda2 = second_eigenvalue_modulus(P);
    prof.tv_curve.resize(horizon, 0.0);
    Matrix Pk = P;
    for (std::size_t k = 1; k <= horizon; ++k) {
        double worst = 0.0;
        for (Eigen::Index s = 0; s < n; ++s)
            worst = std::max(worst, 0.5 * (Pk.row(s).transpose() - pi).cwiseAbs().sum());
        if (worst < kTvFloor) {
            prof.clamp_index = k;
            break;
        }
        prof.tv_curve[k - 1] = worst;
        Pk = Pk * P;
    }

    const std::size_t live = prof.clamp_index ? prof.clamp_index - 1 : horizon;
    if (live == 0) return prof;  // mixes exactly in one step; rho = c0 = 0

    // Smallest grid rate whose ratio tv(k)/rho^k peaks in the first half of the live range,
    // so the tail beyond the enumerated horizon is dominated by the envelope.
    const double base = std::max(prof.lambda2, 1e-3);
    for (int j = 0;; ++j) {
        const double rho = base * (1.0 + 0.01 * j);
        if (rho >= 1.0) throw ChainError("no geometric envelope below 1; chain does not mix");
        double best = 0.0;
        std::size_t arg = 0;
        for (std::size_t k = 1; k <= live; ++k) {
            const double ratio = prof.tv_curve[k - 1] / std::pow(rho, static_cast<double>(k));
            if (ratio > best) {
                best = ratio;
                arg = k;
            }
        }
        if (live < 4 || arg <= (live + 1) / 2) {
            prof.rho = rho;
            prof.c0 = best * (1.0 + 1e-12);
            return prof;
        }
    }
}

struct Transition {
    std::uint32_t s = 0;
    std::uint32_t next = 0;
    double reward = 0.0;
};

struct TrajectorySample {
    std::vector<Transition> tuples;
    std::uint64_t seed = 0;
    std::size_t start_state = 0;
};

inline TrajectorySample sample_trajectory(const MarkovRewardProcess& mrp, std::size_t start_state,
                                          std::size_t length, std::uint64_t seed) {
    if (start_state >= mrp.size()) throw ChainError("start state out of range");
    TrajectorySample out{{}, seed, start_state};
    out.tuples.reserve(length);
    Xoshiro256 rng(seed);
    std::size_t s = start_state;
    for (std::size_t t = 0; t < length; ++t) {
        const std::size_t next = mrp.next_state(s, rng.uniform());
        out.tuples.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(next),
                              mrp.rewards()(static_cast<Eigen::Index>(s))});
        s = next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Named transition-matrix generators
// ---------------------------------------------------------------------------

/// Lazy random walk on an n-cycle: stay with probability 1 - epsilon, else step to a neighbour.
inline Matrix cycle_transition(std::size_t n, double epsilon) {
    if (n == 0) throw ChainError("cycle generator needs n >= 1");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ChainError("cycle generator needs epsilon in (0,1]");
    const auto N = static_cast<Eigen::Index>(n);
    Matrix P = Matrix::Zero(N, N);
    if (n == 1) {
        P(0, 0) = 1.0;
        return P;
    }
    for (Eigen::Index s = 0; s < N; ++s) {
        P(s, s) += 1.0 - epsilon;
        P(s, (s + 1) % N) += 0.5 * epsilon;
        P(s, (s + N - 1) % N) += 0.5 * epsilon;
    }
    return P;
}

/// Random sparse stochastic matrix, rejection-sampled until irreducible and aperiodic.
inline Matrix random_transition(std::size_t n, double density, std::uint64_t seed,
                                std::size_t max_attempts = 10000) {
    if (n == 0) throw ChainError("random generator needs n >= 1");
    if (!(density > 0.0 && density <= 1.0)) throw ChainError("random generator needs density in (0,1]");
    const auto N = static_cast<Eigen::Index>(n);
    Xoshiro256 rng(seed);
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        Matrix P = Matrix::Zero(N, N);
        for (Eigen::Index i = 0; i < N; ++i) {
            for (Eigen::Index j = 0; j < N; ++j)
                if (rng.uniform() < density) P(i, j) = 0.05 + rng.uniform();
            if (P.row(i).sum() == 0.0) P(i, static_cast<Eigen::Index>(rng() % n)) = 1.0;
            P.row(i) /= P.row(i).sum();
        }
        MarkovRewardProcess probe(P, Vector::Zero(N), 0.5);
        if (validate_chain(probe).ok()) return probe.transition();
    }
    throw ChainError("random generator failed to produce an irreducible aperiodic chain");
}

}  // namespace tdsa
