#include "swpower/twoseq.hpp"

#include <cmath>

#include "swpower/design.hpp"
#include "swpower/gls.hpp"
#include "swpower/model.hpp"

namespace swpower::twoseq {

double phi(double tau2, double sigma2, int individuals_per_cell) {
    return tau2 / (tau2 + sigma2 / static_cast<double>(individuals_per_cell));
}

double TwoSeqCells::phi() const {
    return twoseq::phi(tau2, sigma2, individuals_per_cell);
}

Estimates base_estimators(const TwoSeqCells& cells) {
    const double f = cells.phi();
    const double cluster_diff = cells.y(1, 1) - cells.y(2, 1);
    Estimates est;
    est.delta1 = (cells.y(1, 2) - cells.y(2, 2)) - f * cluster_diff;
    est.delta2 = (cells.y(1, 3) - cells.y(2, 3)) + est.delta1 - f * cluster_diff;
    return est;
}

Estimates add1c_estimators(const TwoSeqCells& cells) {
    const double f = cells.phi();
    const double pooled = (f / (1.0 + f)) *
                          ((cells.y(1, 0) + cells.y(1, 1)) -
                           (cells.y(2, 0) + cells.y(2, 1)));
    Estimates est;
    est.delta1 = (cells.y(1, 2) - cells.y(2, 2)) - pooled;
    // The recursive term is delta1-star, confirmed against the GLS pipeline.
    est.delta2 = (cells.y(1, 3) - cells.y(2, 3)) + est.delta1 - pooled;
    return est;
}

namespace {

// GLS ETI fit over a two-cluster layout with the given cell means.
Estimates gls_eti_fit(const design::DesignLayout& layout, const TwoSeqCells& cells,
                      int first_mean_column) {
    const model::LabeledMatrix X = model::build_X(layout, model::ModelSpec::eti());
    gls::VarianceComponents vc{cells.tau2, 0.0, cells.sigma2};
    const gls::CellCovariance V = gls::cell_covariance(layout, vc);
    const gls::GlsSolver solver = gls::GlsSolver::make(X, V);

    Eigen::VectorXd y(static_cast<int>(X.rows.size()));
    for (int r = 0; r < y.size(); ++r) {
        const auto& rc = X.rows[r];
        y(r) = cells.y(rc.cluster + 1, rc.period + first_mean_column);
    }
    const Eigen::VectorXd beta = solver.projector * y;

    Estimates est;
    est.delta1 = beta(X.col("delta1"));
    est.delta2 = beta(X.col("delta2"));
    return est;
}

}  // namespace

bool add1t_invariance_check(const TwoSeqCells& cells) {
    design::DesignSpec spec;
    spec.n_sequences = 2;
    spec.clusters_per_sequence = 1;
    spec.individuals_per_cell = cells.individuals_per_cell;
    spec.extra_end_periods = 1;
    const Estimates gls_est = gls_eti_fit(design::build_standard(spec), cells, 1);
    const Estimates closed = base_estimators(cells);
    return std::fabs(gls_est.delta1 - closed.delta1) < 1e-10 &&
           std::fabs(gls_est.delta2 - closed.delta2) < 1e-10;
}

}  // namespace swpower::twoseq
