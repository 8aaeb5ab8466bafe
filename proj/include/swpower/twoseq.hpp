#pragma once

#include <array>

namespace swpower::twoseq {

// Cluster-period means for the two-sequence closed-form designs. The base
// design is 2x3 (columns 1..3); Add-1T appends a treatment period (column 4);
// Add-1C prepends a control period (column 0). Unused columns are ignored.
// The underlying mixed model has a cluster random intercept only (gamma2 = 0).
struct TwoSeqCells {
    std::array<double, 5> row1{};  // Y_{1,0} .. Y_{1,4}
    std::array<double, 5> row2{};  // Y_{2,0} .. Y_{2,4}
    int individuals_per_cell = 1;
    double tau2 = 0.0;
    double sigma2 = 1.0;

    double y(int cluster, int period) const {
        return cluster == 1 ? row1[static_cast<std::size_t>(period)]
                            : row2[static_cast<std::size_t>(period)];
    }
    double phi() const;
};

struct Estimates {
    double delta1 = 0.0;
    double delta2 = 0.0;
};

// Shrinkage factor tau2 / (tau2 + sigma2/K), in [0,1).
double phi(double tau2, double sigma2, int individuals_per_cell);

// Closed-form ETI estimators on the base 2x3 design:
//   delta1 = (Y12-Y22) - phi (Y11-Y21)
//   delta2 = (Y13-Y23) + delta1 - phi (Y11-Y21)
Estimates base_estimators(const TwoSeqCells& cells);

// Closed-form ETI estimators on the Add-1C design; the cluster-difference
// term pools periods 0 and 1 and carries a factor phi/(1+phi).
Estimates add1c_estimators(const TwoSeqCells& cells);

// True iff the GLS ETI fit on the Add-1T layout reproduces base_estimators
// on the first three columns to 1e-10.
bool add1t_invariance_check(const TwoSeqCells& cells);

}  // namespace swpower::twoseq
