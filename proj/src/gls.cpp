#include "swpower/gls.hpp"

#include <cmath>
#include <stdexcept>

#include "swpower/stats.hpp"

namespace swpower::gls {

void VarianceComponents::check() const {
    if (!(tau2 >= 0.0) || !std::isfinite(tau2))
        throw std::invalid_argument("tau2 must be finite and >= 0");
    if (!(gamma2 >= 0.0) || !std::isfinite(gamma2))
        throw std::invalid_argument("gamma2 must be finite and >= 0");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw std::invalid_argument("sigma2 must be finite and > 0");
}

VarianceComponents vc_from_icc_cac(const CorrelationSpec& spec) {
    if (!(spec.icc >= 0.0 && spec.icc < 1.0))
        throw std::invalid_argument("icc must be in [0,1)");
    if (!(spec.cac >= 0.0 && spec.cac <= 1.0))
        throw std::invalid_argument("cac must be in [0,1]");
    if (!(spec.sigma2 > 0.0))
        throw std::invalid_argument("sigma2 must be > 0");

    VarianceComponents vc;
    vc.sigma2 = spec.sigma2;
    const double cluster_total = spec.sigma2 * spec.icc / (1.0 - spec.icc);
    vc.tau2 = spec.cac * cluster_total;
    vc.gamma2 = (1.0 - spec.cac) * cluster_total;
    return vc;
}

Eigen::VectorXd ContrastVector::expand(const std::vector<std::string>& labels) const {
    if (weights.empty())
        throw std::invalid_argument("contrast has no weights");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<int>(labels.size()));
    for (const auto& [label, weight] : weights) {
        int idx = -1;
        for (int j = 0; j < static_cast<int>(labels.size()); ++j)
            if (labels[j] == label) { idx = j; break; }
        if (idx < 0)
            throw std::invalid_argument("contrast label not in model: " + label);
        v(idx) += weight;
    }
    return v;
}

int CellCovariance::n_rows() const {
    int n = 0;
    for (const auto& b : blocks) n += static_cast<int>(b.diag.size());
    return n;
}

Eigen::MatrixXd CellCovariance::dense() const {
    const int n = n_rows();
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
    int offset = 0;
    for (const auto& b : blocks) {
        const int m = static_cast<int>(b.diag.size());
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                V(offset + i, offset + j) = tau2 + (i == j ? b.diag(i) : 0.0);
            }
        }
        offset += m;
    }
    return V;
}

CellCovariance cell_covariance(const design::DesignLayout& layout,
                               const VarianceComponents& vc) {
    vc.check();
    CellCovariance V;
    V.tau2 = vc.tau2;
    for (int c = 0; c < layout.n_clusters; ++c) {
        CellCovariance::Block block;
        block.cluster = c;
        std::vector<double> d;
        for (int p = 0; p < layout.n_periods; ++p) {
            const auto& cell = layout.cells[c][p];
            if (!cell.observed) continue;
            block.periods.push_back(p);
            d.push_back(vc.gamma2 + vc.sigma2 / static_cast<double>(cell.cell_size));
        }
        block.diag = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<int>(d.size()));
        V.blocks.push_back(std::move(block));
    }
    return V;
}

namespace {

void check_block_pd(const CellCovariance& V) {
    if (V.tau2 < 0.0)
        throw std::runtime_error("covariance not positive definite: tau2 < 0");
    // Block eigenvalues lie between min diag and max diag + m*tau2; require
    // the smallest to exceed 1e-12 of the largest.
    double largest = 0.0;
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& b : V.blocks) {
        const int m = static_cast<int>(b.diag.size());
        for (int i = 0; i < m; ++i) {
            largest = std::max(largest, b.diag(i) + m * V.tau2);
            dmin = std::min(dmin, b.diag(i));
        }
    }
    if (!(dmin > 1e-12 * largest) || !std::isfinite(largest))
        throw std::runtime_error("covariance not positive definite: degenerate cell variance");
}

// V^-1 X for one block via Sherman-Morrison on diag + tau2 * ones.
Eigen::MatrixXd block_vinv_apply(const CellCovariance::Block& block, double tau2,
                                 const Eigen::Ref<const Eigen::MatrixXd>& Xb) {
    const Eigen::ArrayXd dinv = block.diag.array().inverse();
    Eigen::MatrixXd DX = dinv.matrix().asDiagonal() * Xb;
    if (tau2 == 0.0) return DX;
    const double t = dinv.sum();
    const double w = tau2 / (1.0 + tau2 * t);
    const Eigen::VectorXd u = dinv.matrix();  // D^-1 * ones
    DX.noalias() -= (w * u) * (u.transpose() * Xb);
    return DX;
}

}  // namespace

LabeledCovariance fixed_effects_covariance(const model::LabeledMatrix& X,
                                           const CellCovariance& V) {
    GlsSolver solver = GlsSolver::make(X, V);
    return {solver.labels, solver.cov};
}

GlsSolver GlsSolver::make(const model::LabeledMatrix& X, const CellCovariance& V) {
    check_block_pd(V);
    const int n = static_cast<int>(X.values.rows());
    const int p = static_cast<int>(X.values.cols());

    Eigen::MatrixXd vinv_x(n, p);
    int row = 0;
    std::size_t bi = 0;
    while (row < n) {
        const int cluster = X.rows[row].cluster;
        int end = row;
        while (end < n && X.rows[end].cluster == cluster) ++end;

        while (bi < V.blocks.size() && V.blocks[bi].cluster < cluster) ++bi;
        if (bi == V.blocks.size() || V.blocks[bi].cluster != cluster)
            throw std::invalid_argument("covariance has no block for a design-matrix cluster");
        const auto& full = V.blocks[bi];

        // Restrict the block to the periods X actually retains.
        const int m = end - row;
        CellCovariance::Block sub;
        sub.cluster = cluster;
        sub.diag.resize(m);
        std::size_t k = 0;
        for (int r = 0; r < m; ++r) {
            const int period = X.rows[row + r].period;
            while (k < full.periods.size() && full.periods[k] < period) ++k;
            if (k == full.periods.size() || full.periods[k] != period)
                throw std::invalid_argument("covariance block missing a design-matrix period");
            sub.diag(r) = full.diag(static_cast<int>(k));
        }

        vinv_x.middleRows(row, m) =
            block_vinv_apply(sub, V.tau2, X.values.middleRows(row, m));
        row = end;
    }

    Eigen::MatrixXd info = X.values.transpose() * vinv_x;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    const double dmax = ldlt.vectorD().maxCoeff();
    const double dmin = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || !(dmin > 1e-12 * dmax)) {
        throw model::identifiability_error(
            "fixed-effects information matrix is singular on this layout");
    }

    GlsSolver solver;
    solver.labels = X.labels;
    solver.cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    solver.projector = solver.cov * vinv_x.transpose();
    return solver;
}

PowerResult analytic_power(const ContrastVector& c, double effect_value,
                           const LabeledCovariance& cov, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("alpha must be in (0,1)");
    const Eigen::VectorXd w = c.expand(cov.labels);
    const double var = w.dot(cov.cov * w);
    if (!(var > 0.0) || !std::isfinite(var))
        throw std::runtime_error("contrast variance is not positive");
    PowerResult result;
    result.standard_error = std::sqrt(var);
    result.effect_value = effect_value;
    result.alpha = alpha;
    result.power = stats::normal_cdf(std::fabs(effect_value) / result.standard_error -
                                     stats::z_two_sided(alpha));
    return result;
}

}  // namespace swpower::gls
