#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "swpower/design.hpp"
#include "swpower/gls.hpp"
#include "swpower/model.hpp"
#include "swpower/simulate.hpp"
#include "swpower/twoseq.hpp"

using namespace swpower;

namespace {

// GLS ETI estimates of (delta1, delta2) through the general pipeline, feeding
// the cell means in as single observations with residual variance sigma2/K.
twoseq::Estimates pipeline_estimates(const twoseq::TwoSeqCells& cells, int first_col,
                                     int n_cols) {
    simulate::Dataset data;
    data.n_clusters = 2;
    data.n_periods = n_cols;
    for (int c = 0; c < 2; ++c) {
        for (int p = 0; p < n_cols; ++p) {
            simulate::DataRow row;
            row.cluster = c;
            row.period = p;
            row.individual = 0;
            const int crossover = (c == 0) ? 1 + (first_col == 0 ? 1 : 0)
                                           : 2 + (first_col == 0 ? 1 : 0);
            row.exposure = std::max(0, p - crossover + 1);
            row.outcome = cells.y(c + 1, p + first_col);
            data.rows.push_back(row);
        }
    }
    gls::VarianceComponents vc{cells.tau2, 0.0, cells.sigma2 / cells.individuals_per_cell};
    const auto fit = simulate::fit(data, model::ModelSpec::eti(), simulate::FitMethod::known(vc));
    twoseq::Estimates est;
    for (int j = 0; j < static_cast<int>(fit.labels.size()); ++j) {
        if (fit.labels[j] == "delta1") est.delta1 = fit.estimates(j);
        if (fit.labels[j] == "delta2") est.delta2 = fit.estimates(j);
    }
    return est;
}

twoseq::TwoSeqCells random_cells(std::mt19937_64& rng, double tau2, int k = 1) {
    std::normal_distribution<double> normal(0.0, 1.0);
    twoseq::TwoSeqCells cells;
    for (int p = 0; p < 5; ++p) {
        cells.row1[static_cast<std::size_t>(p)] = normal(rng);
        cells.row2[static_cast<std::size_t>(p)] = normal(rng);
    }
    cells.tau2 = tau2;
    cells.sigma2 = 1.0;
    cells.individuals_per_cell = k;
    return cells;
}

}  // namespace

TEST_CASE("phi reference points") {
    CHECK(twoseq::phi(1.0, 1.0, 1) == doctest::Approx(0.5));
    CHECK(twoseq::phi(0.0, 2.0, 3) == doctest::Approx(0.0));
    double prev = 0.0;
    for (int k : {1, 2, 5, 20, 1000}) {
        const double f = twoseq::phi(1.0, 1.0, k);
        CHECK(f > prev);
        CHECK(f < 1.0);
        prev = f;
    }
    CHECK(twoseq::phi(1.0, 1.0, 100000) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("base estimators") {
    SUBCASE("phi one is difference in differences") {
        twoseq::TwoSeqCells cells;
        cells.row1 = {0.0, 1.0, 3.0, 4.0, 0.0};
        cells.row2 = {0.0, 0.5, 1.0, 1.5, 0.0};
        cells.tau2 = 1.0;
        cells.sigma2 = 1e-12;  // phi -> 1
        cells.individuals_per_cell = 1;
        const auto est = twoseq::base_estimators(cells);
        CHECK(est.delta1 ==
              doctest::Approx((3.0 - 1.0) - (1.0 - 0.5)).epsilon(1e-6));
    }
    SUBCASE("flat cells estimate zero") {
        twoseq::TwoSeqCells cells;
        cells.row1 = {2.0, 2.0, 2.0, 2.0, 2.0};
        cells.row2 = {2.0, 2.0, 2.0, 2.0, 2.0};
        cells.tau2 = 0.7;
        const auto est = twoseq::base_estimators(cells);
        CHECK(est.delta1 == doctest::Approx(0.0));
        CHECK(est.delta2 == doctest::Approx(0.0));
    }
}

TEST_CASE("add1c estimators") {
    SUBCASE("phi zero reduces to the vertical contrast") {
        std::mt19937_64 rng(5);
        auto cells = random_cells(rng, 0.0);
        const auto est = twoseq::add1c_estimators(cells);
        CHECK(est.delta1 == doctest::Approx(cells.y(1, 2) - cells.y(2, 2)));
    }
    SUBCASE("equal baseline pair pools to twice the single-period difference") {
        std::mt19937_64 rng(6);
        auto cells = random_cells(rng, 0.8);
        cells.row1[0] = cells.row1[1];
        cells.row2[0] = cells.row2[1];
        const double f = cells.phi();
        const auto est = twoseq::add1c_estimators(cells);
        const double expected = (cells.y(1, 2) - cells.y(2, 2)) -
                                2.0 * (f / (1.0 + f)) * (cells.y(1, 1) - cells.y(2, 1));
        CHECK(est.delta1 == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("closed forms agree with the GLS pipeline on random instances") {
    std::mt19937_64 rng(314159);
    const double phis[] = {0.0, 0.25, 0.5, 0.9};
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const double phi_target = phis[i % 4];
        // Solve for tau2 at K=1, sigma2=1: phi = tau2/(tau2+1).
        const double tau2 = (phi_target == 0.0) ? 0.0 : phi_target / (1.0 - phi_target);
        auto cells = random_cells(rng, tau2);

        const auto closed = twoseq::base_estimators(cells);
        const auto piped = pipeline_estimates(cells, 1, 3);
        CHECK(piped.delta1 == doctest::Approx(closed.delta1).epsilon(1e-10));
        CHECK(piped.delta2 == doctest::Approx(closed.delta2).epsilon(1e-10));

        const auto closed_add1c = twoseq::add1c_estimators(cells);
        const auto piped_add1c = pipeline_estimates(cells, 0, 4);
        CHECK(piped_add1c.delta1 == doctest::Approx(closed_add1c.delta1).epsilon(1e-10));
        CHECK(piped_add1c.delta2 == doctest::Approx(closed_add1c.delta2).epsilon(1e-10));
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("add1t invariance") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 200; ++i) {
        auto cells = random_cells(rng, 0.4 + 0.1 * (i % 5), 1 + i % 3);
        CHECK(twoseq::add1t_invariance_check(cells));

        // Perturbing the added final column leaves the estimates unchanged.
        auto perturbed = cells;
        perturbed.row1[4] += 3.7;
        perturbed.row2[4] -= 1.2;
        const auto a = twoseq::base_estimators(cells);
        const auto b = twoseq::base_estimators(perturbed);
        CHECK(a.delta1 == b.delta1);
        CHECK(a.delta2 == b.delta2);
        CHECK(twoseq::add1t_invariance_check(perturbed));

        // Perturbing an in-window cell does change delta1.
        auto shifted = cells;
        shifted.row1[2] += 1.0;
        CHECK(twoseq::base_estimators(shifted).delta1 != a.delta1);
    }
}

TEST_CASE("pooled baseline reduces the estimator variance") {
    // Both estimators are linear in the eight cell means; compute their
    // variances from the known covariance of the cells.
    auto variance_of = [](const std::vector<std::pair<std::pair<int, int>, double>>& weights,
                          double tau2, double cell_var) {
        double var = 0.0;
        for (const auto& [ci, wi] : weights) {
            for (const auto& [cj, wj] : weights) {
                double cov = 0.0;
                if (ci.first == cj.first) {
                    cov = tau2 + (ci.second == cj.second ? cell_var : 0.0);
                }
                var += wi * wj * cov;
            }
        }
        return var;
    };

    for (double tau2 : {0.0, 0.2, 1.0, 4.0}) {
        const double cell_var = 1.0;  // sigma2 / K
        const double f = tau2 / (tau2 + cell_var);
        const double g = f / (1.0 + f);
        // Base delta1: (Y12 - Y22) - f (Y11 - Y21); columns indexed 0..4.
        std::vector<std::pair<std::pair<int, int>, double>> base{
            {{1, 2}, 1.0}, {{2, 2}, -1.0}, {{1, 1}, -f}, {{2, 1}, f}};
        // Add-1C delta1: (Y12 - Y22) - g {(Y10 + Y11) - (Y20 + Y21)}.
        std::vector<std::pair<std::pair<int, int>, double>> add1c{
            {{1, 2}, 1.0}, {{2, 2}, -1.0}, {{1, 0}, -g}, {{1, 1}, -g},
            {{2, 0}, g},   {{2, 1}, g}};
        const double v_base = variance_of(base, tau2, cell_var);
        const double v_add1c = variance_of(add1c, tau2, cell_var);
        if (tau2 == 0.0) {
            CHECK(v_add1c == doctest::Approx(v_base).epsilon(1e-12));
        } else {
            CHECK(v_add1c < v_base);
        }
    }
}
