#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "swpower/design.hpp"

namespace swpower::model {

enum class EffectStructure {
    IT,              // single treatment indicator
    ETI,             // one indicator per exposure time
    DCT,             // indicators through washout, constant after
    NCS,             // natural cubic spline in exposure time
    IT_DROP_WASHOUT  // IT with washout-period cells removed
};

enum class TimeTrend { Categorical, Linear };

struct ModelSpec {
    EffectStructure effect = EffectStructure::IT;
    TimeTrend time = TimeTrend::Categorical;
    int washout = 0;     // w, for DCT / IT_DROP_WASHOUT
    int spline_df = 0;   // d, for NCS

    static ModelSpec it(TimeTrend t = TimeTrend::Categorical) { return {EffectStructure::IT, t, 0, 0}; }
    static ModelSpec eti(TimeTrend t = TimeTrend::Categorical) { return {EffectStructure::ETI, t, 0, 0}; }
    static ModelSpec dct(int w, TimeTrend t = TimeTrend::Categorical) { return {EffectStructure::DCT, t, w, 0}; }
    static ModelSpec ncs(int d, TimeTrend t = TimeTrend::Categorical) { return {EffectStructure::NCS, t, 0, d}; }
    static ModelSpec it_drop_washout(int w, TimeTrend t = TimeTrend::Categorical) {
        return {EffectStructure::IT_DROP_WASHOUT, t, w, 0};
    }

    std::string describe() const;
};

struct identifiability_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Location of a design-matrix row in the cluster-period grid.
struct RowCell {
    int cluster = 0;
    int period = 0;
    int exposure = 0;
    int cell_size = 0;
};

struct LabeledMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd values;          // one row per retained observed cell
    std::vector<RowCell> rows;       // (cluster, period) order, cluster-major

    int col(const std::string& label) const;  // -1 if absent
};

// d-column natural cubic spline basis: intercept + linear + curvature terms,
// linear beyond the boundary knots. Interior knots are placed at equally
// spaced quantiles of the unit grid spanning [boundary_low, boundary_high].
Eigen::MatrixXd ncs_basis(int d, const std::vector<double>& eval_points,
                          double boundary_low, double boundary_high);

// Fixed-effects design matrix over observed cells. Throws
// identifiability_error (naming the dependent columns) if the result is
// numerically rank deficient on this layout.
LabeledMatrix build_X(const design::DesignLayout& layout, const ModelSpec& model);

}  // namespace swpower::model
