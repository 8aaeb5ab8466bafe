#include "oracles.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace oracles {

Eigen::MatrixXd dense_cell_covariance(const swpower::design::DesignLayout& layout,
                                      const swpower::gls::VarianceComponents& vc) {
    struct CellRef {
        int cluster;
        double diag;
    };
    std::vector<CellRef> cells;
    for (int c = 0; c < layout.n_clusters; ++c)
        for (int p = 0; p < layout.n_periods; ++p)
            if (layout.cells[c][p].observed)
                cells.push_back({c, vc.gamma2 + vc.sigma2 / layout.cells[c][p].cell_size});

    const int m = static_cast<int>(cells.size());
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (cells[i].cluster != cells[j].cluster) continue;
            V(i, j) = vc.tau2 + (i == j ? cells[i].diag : 0.0);
        }
    }
    return V;
}

Eigen::MatrixXd dense_fixed_effects_covariance(const Eigen::MatrixXd& X,
                                               const Eigen::MatrixXd& V) {
    const Eigen::MatrixXd vinv = V.inverse();
    return (X.transpose() * vinv * X).inverse();
}

NaturalSplineInterpolant::NaturalSplineInterpolant(std::vector<double> x,
                                                   std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
    const int n = static_cast<int>(x_.size());
    if (n < 2 || y_.size() != x_.size())
        throw std::invalid_argument("spline interpolant needs matched x/y, n >= 2");
    second_.assign(n, 0.0);
    if (n == 2) return;

    // Tridiagonal system for interior second derivatives, natural ends.
    std::vector<double> diag(n, 0.0), rhs(n, 0.0), upper(n, 0.0);
    for (int i = 1; i < n - 1; ++i) {
        const double h0 = x_[i] - x_[i - 1];
        const double h1 = x_[i + 1] - x_[i];
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    }
    // Forward sweep over the interior block 1..n-2 (lower diag = h0 of next row).
    for (int i = 2; i < n - 1; ++i) {
        const double h0 = x_[i] - x_[i - 1];
        const double factor = h0 / diag[i - 1];
        diag[i] -= factor * upper[i - 1];
        rhs[i] -= factor * rhs[i - 1];
    }
    for (int i = n - 2; i >= 1; --i) {
        second_[i] = (rhs[i] - upper[i] * second_[i + 1]) / diag[i];
    }
}

double NaturalSplineInterpolant::operator()(double x) const {
    const int n = static_cast<int>(x_.size());
    if (x <= x_[0]) {
        // Natural spline is linear beyond the first knot; slope from the
        // first interval's cubic at its left end.
        const double h = x_[1] - x_[0];
        const double slope = (y_[1] - y_[0]) / h - h * (2.0 * second_[0] + second_[1]) / 6.0;
        return y_[0] + slope * (x - x_[0]);
    }
    if (x >= x_[n - 1]) {
        const double h = x_[n - 1] - x_[n - 2];
        const double slope =
            (y_[n - 1] - y_[n - 2]) / h + h * (second_[n - 2] + 2.0 * second_[n - 1]) / 6.0;
        return y_[n - 1] + slope * (x - x_[n - 1]);
    }
    int lo = 0, hi = n - 1;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (x_[mid] > x) hi = mid; else lo = mid;
    }
    const double h = x_[hi] - x_[lo];
    const double a = (x_[hi] - x) / h;
    const double b = (x - x_[lo]) / h;
    return a * y_[lo] + b * y_[hi] +
           ((a * a * a - a) * second_[lo] + (b * b * b - b) * second_[hi]) * h * h / 6.0;
}

double direct_restricted_loglik(const swpower::simulate::Dataset& data,
                                const swpower::model::ModelSpec& model,
                                const swpower::gls::VarianceComponents& vc) {
    using namespace swpower;

    // Reconstruct the layout the way the library sees the dataset.
    int n_clusters = 0, n_periods = 0, max_exposure = 0;
    for (const auto& r : data.rows) {
        n_clusters = std::max(n_clusters, r.cluster + 1);
        n_periods = std::max(n_periods, r.period + 1);
        max_exposure = std::max(max_exposure, r.exposure);
    }
    design::DesignLayout layout;
    layout.n_clusters = n_clusters;
    layout.n_periods = n_periods;
    layout.max_exposure = max_exposure;
    layout.cluster_sequence.assign(n_clusters, 0);
    layout.cells.assign(n_clusters, std::vector<design::Cell>(n_periods));
    for (const auto& r : data.rows) {
        auto& cell = layout.cells[r.cluster][r.period];
        cell.observed = true;
        cell.exposure = r.exposure;
        cell.cell_size += 1;
    }
    const model::LabeledMatrix Xc = model::build_X(layout, model);
    std::map<std::pair<int, int>, int> cell_of;
    for (int r = 0; r < static_cast<int>(Xc.rows.size()); ++r)
        cell_of[{Xc.rows[r].cluster, Xc.rows[r].period}] = r;

    // Individual-level design, outcome vector, and covariance.
    std::vector<int> row_cell;
    std::vector<double> y;
    std::vector<int> row_cluster;
    for (const auto& r : data.rows) {
        const auto it = cell_of.find({r.cluster, r.period});
        if (it == cell_of.end()) continue;  // cells the model drops
        row_cell.push_back(it->second);
        row_cluster.push_back(r.cluster);
        y.push_back(r.outcome);
    }
    const int n = static_cast<int>(y.size());
    const int p = static_cast<int>(Xc.values.cols());

    Eigen::MatrixXd Xa(n, p);
    Eigen::VectorXd yv(n);
    for (int i = 0; i < n; ++i) {
        Xa.row(i) = Xc.values.row(row_cell[i]);
        yv(i) = y[i];
    }
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (row_cluster[i] != row_cluster[j]) continue;
            double v = vc.tau2;
            if (row_cell[i] == row_cell[j]) v += vc.gamma2;
            if (i == j) v += vc.sigma2;
            sigma(i, j) = v;
        }
    }

    // Orthonormal error contrasts: the trailing n-p columns of Q from a full
    // QR of the design.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Xa);
    const Eigen::MatrixXd Q = qr.householderQ();
    const Eigen::MatrixXd A = Q.rightCols(n - p);

    const Eigen::MatrixXd ASA = A.transpose() * sigma * A;
    const Eigen::VectorXd Ay = A.transpose() * yv;
    Eigen::LLT<Eigen::MatrixXd> llt(ASA);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("direct REML: contrast covariance not PD");
    double logdet = 0.0;
    const Eigen::MatrixXd L = llt.matrixL();
    for (int i = 0; i < n - p; ++i) logdet += 2.0 * std::log(L(i, i));
    const double quad = Ay.dot(llt.solve(Ay));
    const double log2pi = 1.8378770664093454836;
    return -0.5 * ((n - p) * log2pi + logdet + quad);
}

}  // namespace oracles
