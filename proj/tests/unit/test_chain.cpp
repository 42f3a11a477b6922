#include <gtest/gtest.h>

#include <cmath>

#include "../support.hpp"

using namespace tdsa;

TEST(Chain, RowSumErrorNamesTheRow) {
    Matrix P(2, 2);
    P << 0.9, 0.1, 0.3, 0.8;
    try {
        MarkovRewardProcess mrp(P, Vector::Zero(2), 0.9);
        FAIL() << "expected ChainError";
    } catch (const ChainError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
}

TEST(Chain, RejectsNegativeEntriesAndBadGamma) {
    Matrix P(2, 2);
    P << 1.1, -0.1, 0.5, 0.5;
    EXPECT_THROW(MarkovRewardProcess(P, Vector::Zero(2), 0.5), ChainError);
    EXPECT_THROW(MarkovRewardProcess(Matrix::Ones(1, 1), Vector::Zero(1), 1.0), ChainError);
    EXPECT_THROW(MarkovRewardProcess(Matrix::Ones(1, 1), Vector::Zero(2), 0.5), ChainError);
}

TEST(Chain, PeriodicTwoCycleIsFlagged) {
    Matrix P(2, 2);
    P << 0, 1, 1, 0;
    const auto report = validate_chain(MarkovRewardProcess(P, Vector::Zero(2), 0.5));
    EXPECT_TRUE(report.irreducible);
    EXPECT_FALSE(report.aperiodic);
    EXPECT_EQ(report.period, 2u);
    EXPECT_FALSE(report.ok());
    EXPECT_NE(report.describe().find("period=2"), std::string::npos);
}

TEST(Chain, ReducibleChainListsUnreachableStates) {
    Matrix P(3, 3);
    P << 0.5, 0.5, 0, 0.5, 0.5, 0, 0, 0, 1;
    const auto report = validate_chain(MarkovRewardProcess(P, Vector::Zero(3), 0.5));
    EXPECT_FALSE(report.irreducible);
    ASSERT_EQ(report.unreachable_states.size(), 1u);
    EXPECT_EQ(report.unreachable_states[0], 2u);
}

TEST(Chain, TwoStateStationaryDistribution) {
    const auto st = stationary_distribution(fixtures::two_state_mrp());
    EXPECT_NEAR(st.pi(0), 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(st.pi(1), 1.0 / 3.0, 1e-14);
    EXPECT_NEAR(st.D().diagonal()(0), 2.0 / 3.0, 1e-14);
}

TEST(Chain, StationaryIsInvariantOnRandomChains) {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const std::size_t n = 2 + seed % 9;
        MarkovRewardProcess mrp(random_transition(n, 0.5, seed), Vector::Zero(static_cast<Eigen::Index>(n)), 0.5);
        const auto st = stationary_distribution(mrp);
        EXPECT_NEAR(st.pi.sum(), 1.0, 1e-12);
        EXPECT_GT(st.pi.minCoeff(), 0.0);
        EXPECT_LE((mrp.transition().transpose() * st.pi - st.pi).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Chain, CycleGeneratorIsDoublyStochastic) {
    const Matrix P = cycle_transition(5, 0.4);
    for (Eigen::Index i = 0; i < 5; ++i) {
        EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-15);
        EXPECT_NEAR(P.col(i).sum(), 1.0, 1e-15);
    }
    const auto st = stationary_distribution(MarkovRewardProcess(P, Vector::Zero(5), 0.5));
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(st.pi(i), 0.2, 1e-13);
}

TEST(Chain, SecondEigenvalueOfKnownChains) {
    EXPECT_NEAR(second_eigenvalue_modulus(fixtures::two_state_mrp().transition()), 0.7, 1e-12);
    EXPECT_NEAR(second_eigenvalue_modulus(cycle_transition(6, 0.3)), 1.0 - 0.3 + 0.3 * std::cos(2 * M_PI / 6), 1e-12);
}

TEST(Chain, NextStateFollowsInverseCdf) {
    const auto mrp = fixtures::two_state_mrp();
    EXPECT_EQ(mrp.next_state(0, 0.0), 0u);
    EXPECT_EQ(mrp.next_state(0, 0.899), 0u);
    EXPECT_EQ(mrp.next_state(0, 0.901), 1u);
    EXPECT_EQ(mrp.next_state(1, 0.1), 0u);
    EXPECT_EQ(mrp.next_state(1, 0.3), 1u);
}

TEST(Chain, EmpiricalTransitionFrequencies) {
    const auto sample = sample_trajectory(fixtures::two_state_mrp(), 0, 200000, 42);
    std::size_t from0 = 0, stay0 = 0;
    for (const auto& x : sample.tuples) {
        if (x.s != 0) continue;
        ++from0;
        stay0 += x.next == 0;
        EXPECT_EQ(x.reward, 1.0);
    }
    EXPECT_NEAR(static_cast<double>(stay0) / static_cast<double>(from0), 0.9, 0.005);
}

TEST(Chain, TrajectoriesAreSeedDeterministic) {
    const auto mrp = fixtures::two_state_mrp();
    const auto a = sample_trajectory(mrp, 1, 1000, 7);
    const auto b = sample_trajectory(mrp, 1, 1000, 7);
    const auto c = sample_trajectory(mrp, 1, 1000, 8);
    ASSERT_EQ(a.tuples.size(), 1000u);
    bool differs = false;
    for (std::size_t i = 0; i < a.tuples.size(); ++i) {
        EXPECT_EQ(a.tuples[i].s, b.tuples[i].s);
        EXPECT_EQ(a.tuples[i].next, b.tuples[i].next);
        differs = differs || a.tuples[i].s != c.tuples[i].s;
    }
    EXPECT_TRUE(differs);
    EXPECT_EQ(a.tuples.front().s, 1u);
    for (std::size_t i = 1; i < a.tuples.size(); ++i) EXPECT_EQ(a.tuples[i].s, a.tuples[i - 1].next);
}

TEST(Chain, TvEnvelopeDominatesTheCurve) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        MarkovRewardProcess mrp(random_transition(6, 0.4, seed), Vector::Zero(6), 0.5);
        const auto prof = tv_mixing_profile(mrp, 200);
        ASSERT_FALSE(prof.tv_curve.empty());
        for (std::size_t k = 1; k <= prof.tv_curve.size(); ++k)
            EXPECT_LE(prof.tv_curve[k - 1], prof.envelope(static_cast<double>(k)) * (1 + 1e-9) + 1e-15) << k;
        EXPECT_LT(prof.rho, 1.0);
    }
}

TEST(Chain, TwoStateTvCurveIsGeometric) {
    const auto prof = tv_mixing_profile(fixtures::two_state_mrp(), 50);
    // max_s TV(P^k(s,.), pi) = (2/3) 0.7^k, attained from state 1.
    for (std::size_t k = 1; k <= 30; ++k)
        EXPECT_NEAR(prof.tv_curve[k - 1], (2.0 / 3.0) * std::pow(0.7, static_cast<double>(k)), 1e-13);
}
