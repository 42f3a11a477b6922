#pragma once

#include <cstdint>
#include <optional>

#include "tdsa/tdsa.hpp"

namespace tdsa::fixtures {

struct RandomInstance {
    MarkovRewardProcess mrp;
    FeatureMatrix features;
    SteadyStateModel model;
    std::uint64_t seed;
};

/// Random irreducible aperiodic chain with n <= 10 states and K <= min(4, n) unit-norm features.
/// Returns nullopt when the draw is rejected (rank-deficient features or an ill-conditioned A_bar).
inline std::optional<RandomInstance> random_instance(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    const std::size_t n = 2 + rng() % 9;
    const std::size_t K = 1 + rng() % std::min<std::size_t>(4, n);
    const double gamma = 0.3 + 0.65 * rng.uniform();
    Matrix P = random_transition(n, 0.3 + 0.6 * rng.uniform(), rng());
    Vector R(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < R.size(); ++i) R(i) = 2.0 * rng.uniform() - 1.0;
    try {
        MarkovRewardProcess mrp(std::move(P), std::move(R), gamma);
        FeatureMatrix features(detail::random_features(n, K, rng()));
        SteadyStateModel model = build_steady_state(mrp, features, Vector::Zero(static_cast<Eigen::Index>(K)));
        return RandomInstance{std::move(mrp), std::move(features), std::move(model), seed};
    } catch (const FeatureError&) {
        return std::nullopt;
    } catch (const OracleError&) {
        return std::nullopt;
    }
}

inline MarkovRewardProcess two_state_mrp() {
    Matrix P(2, 2);
    P << 0.9, 0.1, 0.2, 0.8;
    Vector R(2);
    R << 1.0, 0.0;
    return {P, R, 0.9};
}

inline FeatureMatrix two_state_features() {
    Matrix phi(2, 1);
    phi << 1.0, 0.0;
    return FeatureMatrix(phi);
}

inline MarkovRewardProcess one_state_mrp(double reward = 1.0, double gamma = 0.5) {
    return {Matrix::Ones(1, 1), Vector::Constant(1, reward), gamma};
}

}  // namespace tdsa::fixtures
