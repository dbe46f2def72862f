#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dxchoice/errors.hpp"
#include "dxchoice/simulator.hpp"

using namespace dxchoice;

namespace {

PopulationSpec fixed_spec(PhysicianParams theta, std::size_t physicians, std::size_t patients, std::uint64_t seed) {
    PopulationSpec spec;
    spec.n_physicians = physicians;
    spec.patients_per_physician = patients;
    spec.param_law.fixed = theta;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("truncated normal parameter law stays in bounds") {
    const TruncatedNormalLaw law{6.38, 3.59, 0.0, 20.0};
    for (double u : {1e-12, 0.01, 0.5, 0.99, 1.0 - 1e-12}) {
        const double x = sample_truncated_normal(law, u);
        CHECK(x >= 0.0);
        CHECK(x <= 20.0);
    }
    CHECK(sample_truncated_normal(law, 0.5) > sample_truncated_normal(law, 0.4));
    CHECK(sample_truncated_normal(TruncatedNormalLaw{3.0, 0.0, 0.0, 1.0}, 0.3) == 1.0);
}

TEST_CASE("population layout and determinism") {
    PopulationSpec spec;
    spec.n_physicians = 3;
    spec.patients_per_physician = 50;
    spec.seed = 4;
    const auto a = simulate_population(spec);
    const auto b = simulate_population(spec);
    REQUIRE(a.cases.size() == 150);
    REQUIRE(a.truth.size() == 3);
    CHECK(a.cases.front().physician_id == "P0001");
    CHECK(a.cases.front().patient_id == "P0001-00001");
    CHECK(a.cases.back().patient_id == "P0003-00050");
    for (std::size_t i = 0; i < a.cases.size(); ++i) {
        CHECK(a.cases[i].risk == b.cases[i].risk);
        CHECK(a.cases[i].d == b.cases[i].d);
        CHECK(a.cases[i].risk >= kRiskFloor);
        CHECK(a.cases[i].risk <= kRiskCeiling);
    }
    CHECK(std::is_sorted(a.cases.begin(), a.cases.end(), [](const auto& x, const auto& y) {
        return std::tie(x.physician_id, x.patient_id) < std::tie(y.physician_id, y.patient_id);
    }));
    for (const auto& t : a.truth) CHECK_NOTHROW(validate(t.params));

    spec.n_physicians = 0;
    CHECK_THROWS_AS(simulate_population(spec), ValidationError);
}

TEST_CASE("outcomes follow the risk") {
    PopulationSpec spec = fixed_spec({0.5, 1.0, 1.0}, 4, 5000, 8);
    spec.risk_law.kind = RiskLaw::Kind::fixed;
    spec.risk_law.a = 0.5;
    const auto pop = simulate_population(spec);
    double ybar = 0.0;
    for (const auto& c : pop.cases) ybar += c.y;
    ybar /= static_cast<double>(pop.cases.size());
    CHECK(std::abs(ybar - 0.5) < 4.0 * 0.5 / std::sqrt(20000.0));

    // Beta risks: mean outcome matches mean risk within sampling error, by risk bin
    const auto beta_pop = simulate_population(fixed_spec({0.5, 1.0, 1.0}, 4, 10000, 9));
    for (double lo = 0.0; lo < 1.0; lo += 0.2) {
        double n = 0.0;
        double y = 0.0;
        double m = 0.0;
        double var = 0.0;
        for (const auto& c : beta_pop.cases) {
            if (c.risk < lo || c.risk >= lo + 0.2) continue;
            n += 1.0;
            y += c.y;
            m += c.risk;
            var += c.risk * (1.0 - c.risk);
        }
        if (n < 100.0) continue;
        CHECK(std::abs(y - m) < 4.0 * std::sqrt(var));
    }
}

TEST_CASE("near-perfect signals reveal the sickness") {
    const auto pop = simulate_population(fixed_spec({0.5, 1e-7, 1e-7}, 2, 5000, 10));
    std::size_t mismatches = 0;
    for (const auto& c : pop.cases) mismatches += c.d != c.y ? 1 : 0;
    CHECK(mismatches == 0);
}

TEST_CASE("simulated prescribing matches the quadrature average") {
    const PhysicianParams theta{0.56, 6.38, 2.18};
    const auto pop = simulate_population(fixed_spec(theta, 4, 5000, 12));
    double d = 0.0;
    double over = 0.0;
    double p = 0.0;
    double p_over = 0.0;
    double var = 0.0;
    double var_over = 0.0;
    for (const auto& c : pop.cases) {
        const double q = choice_probability_exact(c.tau, c.y, theta, 16).probability;
        d += c.d;
        p += q;
        var += q * (1.0 - q);
        if (c.y == 0) {
            over += c.d;
            p_over += q;
            var_over += q * (1.0 - q);
        }
    }
    CHECK(std::abs(d - p) < 3.0 * std::sqrt(var));
    CHECK(std::abs(over - p_over) < 3.0 * std::sqrt(var_over));
}

TEST_CASE("ROC curves") {
    const auto pop = simulate_population(fixed_spec({0.5, 1.0, 1.0}, 1, 1000, 13));
    std::vector<double> grid;
    for (int k = 1; k < 20; ++k) grid.push_back(0.05 * k);

    const auto curve = simulate_roc({0.5, 2.0, 1.0}, pop.cases, grid);
    REQUIRE(curve.points.size() == grid.size() + 2);
    CHECK(curve.points.front().fpr == 0.0);
    CHECK(curve.points.front().tpr == 0.0);
    CHECK(curve.points.back().fpr == 1.0);
    CHECK(curve.points.back().tpr == 1.0);
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        CHECK(curve.points[k].fpr >= curve.points[k - 1].fpr);
        CHECK(curve.points[k].tpr >= curve.points[k - 1].tpr);
    }

    const auto sharp = simulate_roc({0.5, 1e-4, 1e-4}, pop.cases, grid);
    CHECK(roc_tpr_at(sharp, 0.02) > 0.97);

    // more informative signals dominate
    const auto better = simulate_roc({0.5, 1.0, 0.5}, pop.cases, grid);
    const auto worse = simulate_roc({0.5, 3.0, 2.0}, pop.cases, grid);
    for (double f = 0.05; f < 1.0; f += 0.05) CHECK(roc_tpr_at(better, f) >= roc_tpr_at(worse, f) - 1e-3);

    std::vector<PatientCase> only_sick;
    for (const auto& c : pop.cases)
        if (c.y == 1) only_sick.push_back(c);
    CHECK_THROWS_AS(simulate_roc({0.5, 1.0, 1.0}, only_sick, grid), ValidationError);
}

TEST_CASE("sigma_xi sensitivity sweep") {
    const auto pop = simulate_population(fixed_spec({0.56, 6.38, 2.18}, 1, 300, 14));
    const PhysicianParams base{0.56, 6.38, 2.18};
    SensitivityConfig cfg;
    cfg.sigma_xi_grid = {0.0, 6.0, 50.0};
    const auto zero = sensitivity_sweep(base, pop.cases, 0.0, cfg);
    for (const auto& p : zero) CHECK(p.pct_change == 0.0);

    const auto unit = sensitivity_sweep(base, pop.cases, 1.0, cfg);
    REQUIRE(unit.size() == 3);
    CHECK(unit[2].pct_change < 0.1);
    CHECK(unit[0].pct_change > unit[1].pct_change);
    CHECK(unit[1].pct_change > unit[2].pct_change);

    // quadrature difference as the oracle at sigma_xi = 6
    double exact = 0.0;
    for (const auto& c : pop.cases) {
        PhysicianParams lo = base;
        lo.sigma_xi = 6.0;
        PhysicianParams hi = base;
        hi.sigma_xi = 7.0;
        exact += std::abs(choice_probability_exact(c.tau, c.y, hi).probability -
                          choice_probability_exact(c.tau, c.y, lo).probability);
    }
    exact = 100.0 * exact / static_cast<double>(pop.cases.size());
    CHECK(std::abs(unit[1].pct_change - exact) < 0.25);

    CHECK_THROWS_AS(sensitivity_sweep(base, pop.cases, -1.0, cfg), ValidationError);
}
