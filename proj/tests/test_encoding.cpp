#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <random>
#include <set>

#include "eqemu/encoding.hpp"
#include "eqemu/error.hpp"

namespace eqemu {
namespace {

EquationCoeffs coeffs(std::array<double, 7> v) { return EquationCoeffs{v}; }

TEST(Encode, BurgersUsesAdvectionAndDiffusionSlots) {
    const auto c = encode(default_family(Family::Burgers), {{"b", -1.5}, {"nu", 1.5}});
    EXPECT_EQ(c, coeffs({0, 0, 0, -1.5, 1.5, 0, 0}));
}

TEST(Encode, FisherSplitsReactionAcrossTwoSlots) {
    const auto c = encode(default_family(Family::Fisher), {{"r", 0.02}, {"nu", 1.0}});
    EXPECT_EQ(c, coeffs({0.02, -0.02, 0, 0, 1.0, 0, 0}));
}

TEST(Encode, KdV) {
    const auto c = encode(default_family(Family::KdV), {{"b", -1.0}, {"epsilon", -10.0}, {"zeta", -5.0}});
    EXPECT_EQ(c, coeffs({0, 0, 0, -1.0, 0, -10.0, -5.0}));
}

TEST(Encode, AllZeroParametersGiveZeroVector) {
    const auto registry = FamilyRegistry::defaults();
    for (const auto& fam : registry.families()) {
        ParamMap p;
        for (const auto& spec : fam.parameters) p[spec.name] = 0.0;
        EXPECT_EQ(encode(fam, p), EquationCoeffs{}) << fam.name;
    }
}

TEST(Encode, RejectsMissingExtraAndNonFinite) {
    const auto& kdv = default_family(Family::KdV);
    EXPECT_THROW(encode(kdv, {{"b", -1.0}, {"epsilon", -10.0}}), Error);
    EXPECT_THROW(encode(kdv, {{"b", -1.0}, {"epsilon", -10.0}, {"zeta", -5.0}, {"nu", 1.0}}), Error);
    EXPECT_THROW(encode(kdv, {{"b", NAN}, {"epsilon", -10.0}, {"zeta", -5.0}}), Error);
    EXPECT_THROW(family_from_name("navier_stokes"), Error);
}

// Reconstructing the RHS from the encoding must match the textbook form,
// and every slot the family does not name must be exactly zero.
TEST(Encode, RoundTripsDeclaredRhsForRandomParameters) {
    std::mt19937_64 rng(7);
    const auto registry = FamilyRegistry::defaults();
    for (const auto& fam : registry.families()) {
        for (int trial = 0; trial < 50; ++trial) {
            ParamMap p;
            for (const auto& spec : fam.parameters) {
                std::uniform_real_distribution<double> d(spec.low - 5.0, spec.high + 5.0);
                p[spec.name] = d(rng);
            }
            const auto c = encode(fam, p);
            EquationCoeffs expected;
            for (const auto& [term, value] : declared_rhs(fam.id, p)) expected[term] += value;
            for (std::size_t j = 0; j < kNumTerms; ++j) EXPECT_EQ(c[j], expected[j]) << fam.name << " slot " << j;
        }
    }
}

TEST(Registry, PublishedRangesAndHoldOut) {
    const auto reg = FamilyRegistry::defaults();
    const auto& kdv = reg.get(Family::KdV);
    EXPECT_EQ(kdv.parameter("b").low, -2.0);
    EXPECT_EQ(kdv.parameter("b").high, -1.0);
    EXPECT_EQ(kdv.parameter("epsilon").low, -20.0);
    EXPECT_EQ(kdv.parameter("epsilon").high, -7.0);
    EXPECT_EQ(kdv.parameter("zeta").low, -9.0);
    EXPECT_EQ(kdv.parameter("zeta").high, -3.0);
    const auto& cks = reg.get(Family::ConservedKS);
    EXPECT_EQ(cks.parameter("nu").low, -2.0);
    EXPECT_EQ(cks.parameter("nu").high, -0.5);
    EXPECT_EQ(cks.parameter("zeta").low, -27.0);
    EXPECT_EQ(cks.parameter("zeta").high, -12.0);
    const auto& fisher = reg.get(Family::Fisher);
    EXPECT_EQ(fisher.parameter("r").low, 0.01);
    EXPECT_EQ(fisher.parameter("r").high, 0.05);
    EXPECT_EQ(fisher.parameter("nu").low, 0.2);
    EXPECT_EQ(fisher.parameter("nu").high, 5.0);
    const auto& ad = reg.get(Family::AdvectionDiffusion);
    EXPECT_EQ(ad.parameter("c").low, -4.0);
    EXPECT_EQ(ad.parameter("nu").high, 8.0);
    EXPECT_TRUE(reg.get(Family::Burgers).held_out);
    for (Family f : {Family::AdvectionDiffusion, Family::KdV, Family::ConservedKS, Family::Fisher})
        EXPECT_FALSE(reg.get(f).held_out);
}

TEST(Registry, ConfigTextOverridesRanges) {
    const auto reg = FamilyRegistry::from_config_text("# sweep wider\nkdv.epsilon = -30, -2\n\ncks.zeta=-40,-5\n");
    EXPECT_EQ(reg.get(Family::KdV).parameter("epsilon").low, -30.0);
    EXPECT_EQ(reg.get(Family::KdV).parameter("epsilon").high, -2.0);
    EXPECT_EQ(reg.get(Family::ConservedKS).parameter("zeta").low, -40.0);
    EXPECT_EQ(reg.get(Family::KdV).parameter("b").low, -2.0);
    EXPECT_THROW(FamilyRegistry::from_config_text("kdv.nu = 1,2"), Error);
    EXPECT_THROW(FamilyRegistry::from_config_text("kdv.b = 1"), Error);
    EXPECT_THROW(FamilyRegistry::from_config_text("kdv.b = 2,1"), Error);
}

TEST(ParameterGrid, KdVTwoPointsPerAxis) {
    const auto grid = parameter_grid(default_family(Family::KdV), 2);
    ASSERT_EQ(grid.size(), 8u);
    std::set<double> b, eps, zeta;
    for (const auto& p : grid) {
        b.insert(p.at("b"));
        eps.insert(p.at("epsilon"));
        zeta.insert(p.at("zeta"));
    }
    EXPECT_EQ(b, (std::set<double>{-2.0, -1.0}));
    EXPECT_EQ(eps, (std::set<double>{-20.0, -7.0}));
    EXPECT_EQ(zeta, (std::set<double>{-9.0, -3.0}));
}

TEST(ParameterGrid, OnePointIsMidpoint) {
    const auto grid = parameter_grid(default_family(Family::ConservedKS), 1);
    ASSERT_EQ(grid.size(), 1u);
    EXPECT_DOUBLE_EQ(grid[0].at("b"), -1.5);
    EXPECT_DOUBLE_EQ(grid[0].at("nu"), -1.25);
    EXPECT_DOUBLE_EQ(grid[0].at("zeta"), -19.5);
}

TEST(ParameterGrid, AdvectionDiffusionThreePoints) {
    const auto grid = parameter_grid(default_family(Family::AdvectionDiffusion), 3);
    ASSERT_EQ(grid.size(), 9u);
    std::set<double> c, nu;
    for (const auto& p : grid) {
        c.insert(p.at("c"));
        nu.insert(p.at("nu"));
    }
    EXPECT_EQ(c, (std::set<double>{-4.0, 0.0, 4.0}));
    EXPECT_EQ(nu, (std::set<double>{2.0, 5.0, 8.0}));
}

TEST(ParameterGrid, DeterministicAndRejectsEmpty) {
    const auto& fam = default_family(Family::Fisher);
    EXPECT_EQ(parameter_grid(fam, 4), parameter_grid(fam, 4));
    EXPECT_THROW(parameter_grid(fam, 0), Error);
    auto broken = fam;
    broken.parameters[0].low = 1.0;
    broken.parameters[0].high = 0.0;
    EXPECT_THROW(parameter_grid(broken, 2), Error);
}

TEST(OodSweep, EvenlySpaced) {
    const auto& kdv = default_family(Family::KdV);
    EXPECT_EQ(ood_sweep_values(kdv, "epsilon", -20, -7, 2), (std::vector<double>{-20, -7}));
    const auto v = ood_sweep_values(default_family(Family::ConservedKS), "zeta", -30, -10, 5);
    const std::vector<double> expected{-30, -25, -20, -15, -10};
    ASSERT_EQ(v.size(), expected.size());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], expected[i], 1e-12);
}

TEST(OodSweep, ExtendsBeyondTrainingBand) {
    const auto& kdv = default_family(Family::KdV);
    const auto v = ood_sweep_values(kdv, "epsilon", -25, -2, 24);
    ASSERT_EQ(v.size(), 24u);
    const auto outside = std::count_if(v.begin(), v.end(), [&](double e) { return !kdv.in_training_range("epsilon", e); });
    EXPECT_GT(outside, 0);
    EXPECT_LT(outside, 24);
    EXPECT_THROW(ood_sweep_values(kdv, "epsilon", -7, -20, 5), Error);
    EXPECT_THROW(ood_sweep_values(kdv, "epsilon", -20, -7, 1), Error);
    EXPECT_THROW(ood_sweep_values(kdv, "nu", -20, -7, 3), Error);
}

}  // namespace
}  // namespace eqemu
