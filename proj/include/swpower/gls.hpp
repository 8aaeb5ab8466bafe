#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "swpower/design.hpp"
#include "swpower/model.hpp"

namespace swpower::gls {

struct VarianceComponents {
    double tau2 = 0.0;    // cluster intercept variance
    double gamma2 = 0.0;  // cluster-period intercept variance
    double sigma2 = 1.0;  // residual variance

    void check() const;
};

struct CorrelationSpec {
    double icc = 0.0;     // (tau2 + gamma2) / (tau2 + gamma2 + sigma2), in [0,1)
    double cac = 1.0;     // tau2 / (tau2 + gamma2), in [0,1]
    double sigma2 = 1.0;
};

// Invert the ICC/CAC definitions into variance components.
VarianceComponents vc_from_icc_cac(const CorrelationSpec& spec);

// Weights over fixed-effect column labels; nonzero only on treatment columns.
struct ContrastVector {
    std::vector<std::pair<std::string, double>> weights;

    // Align against a label set; throws if a weighted label is absent.
    Eigen::VectorXd expand(const std::vector<std::string>& labels) const;
};

// Covariance of cluster-period means, block diagonal by cluster. Each block
// is diag(gamma2 + sigma2/K_ij) + tau2 * ones, stored in that structured form
// so solves use the rank-one update instead of dense inversion.
struct CellCovariance {
    struct Block {
        int cluster = 0;
        std::vector<int> periods;   // observed periods, ascending
        Eigen::VectorXd diag;       // gamma2 + sigma2 / K_ij per period
    };
    double tau2 = 0.0;
    std::vector<Block> blocks;      // cluster-ascending

    int n_rows() const;
    Eigen::MatrixXd dense() const;  // debugging / oracle comparisons
};

CellCovariance cell_covariance(const design::DesignLayout& layout,
                               const VarianceComponents& vc);

struct LabeledCovariance {
    std::vector<std::string> labels;
    Eigen::MatrixXd cov;
};

// (X' V^-1 X)^-1 over the fixed-effect labels, accumulated cluster by
// cluster via the rank-one block inverses. X rows may be a subset of the
// layout's observed cells (washout dropping); they must stay in
// (cluster, period) order.
LabeledCovariance fixed_effects_covariance(const model::LabeledMatrix& X,
                                           const CellCovariance& V);

// Factored GLS machinery for repeated solves on a fixed (X, V):
// beta_hat = projector * y, cov(beta_hat) = cov.
struct GlsSolver {
    std::vector<std::string> labels;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd projector;

    static GlsSolver make(const model::LabeledMatrix& X, const CellCovariance& V);
};

struct PowerResult {
    double power = 0.0;
    double standard_error = 0.0;
    double effect_value = 0.0;
    double alpha = 0.05;
};

// Two-sided z-test power: Phi(|effect|/se - z_{1-alpha/2}).
PowerResult analytic_power(const ContrastVector& c, double effect_value,
                           const LabeledCovariance& cov, double alpha);

}  // namespace swpower::gls
