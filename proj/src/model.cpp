#include "swpower/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace swpower::model {

std::string ModelSpec::describe() const {
    std::string s;
    switch (effect) {
        case EffectStructure::IT: s = "it"; break;
        case EffectStructure::ETI: s = "eti"; break;
        case EffectStructure::DCT: s = "dct:" + std::to_string(washout); break;
        case EffectStructure::NCS: s = "ncs:" + std::to_string(spline_df); break;
        case EffectStructure::IT_DROP_WASHOUT: s = "it-drop:" + std::to_string(washout); break;
    }
    s += (time == TimeTrend::Categorical) ? "/cat" : "/lin";
    return s;
}

int LabeledMatrix::col(const std::string& label) const {
    for (int j = 0; j < static_cast<int>(labels.size()); ++j)
        if (labels[j] == label) return j;
    return -1;
}

Eigen::MatrixXd ncs_basis(int d, const std::vector<double>& eval_points,
                          double boundary_low, double boundary_high) {
    if (d < 2) throw std::invalid_argument("ncs_basis: d must be >= 2");
    if (!(boundary_low < boundary_high))
        throw std::invalid_argument("ncs_basis: boundary_low must be < boundary_high");

    // Interior knots at equally spaced quantiles of the unit grid spanning
    // the boundary interval; d may not exceed the number of distinct grid
    // points (interior points + the two boundaries).
    const int interior_grid =
        std::max(0, static_cast<int>(std::floor(boundary_high - 1e-9)) -
                        static_cast<int>(std::ceil(boundary_low + 1e-9)) + 1);
    if (d > interior_grid + 2) {
        throw std::invalid_argument(
            "ncs_basis: d exceeds number of distinct interior grid points + 2");
    }

    std::vector<double> knots;
    knots.reserve(d);
    knots.push_back(boundary_low);
    for (int i = 1; i <= d - 2; ++i) {
        knots.push_back(boundary_low +
                        (boundary_high - boundary_low) * static_cast<double>(i) /
                            static_cast<double>(d - 1));
    }
    knots.push_back(boundary_high);
    const int m = d;  // total knots

    auto cube_plus = [](double x) { return x > 0.0 ? x * x * x : 0.0; };
    const double xi_last = knots[m - 1];
    auto dk = [&](int k, double x) {
        return (cube_plus(x - knots[k]) - cube_plus(x - xi_last)) /
               (xi_last - knots[k]);
    };

    Eigen::MatrixXd basis(static_cast<int>(eval_points.size()), d);
    for (int r = 0; r < static_cast<int>(eval_points.size()); ++r) {
        const double x = eval_points[r];
        basis(r, 0) = 1.0;
        basis(r, 1) = x;
        for (int k = 0; k < m - 2; ++k) {
            basis(r, k + 2) = dk(k, x) - dk(m - 2, x);
        }
    }
    return basis;
}

namespace {

void check_model_against_layout(const ModelSpec& model, const design::DesignLayout& layout) {
    const int s_max = layout.max_exposure;
    switch (model.effect) {
        case EffectStructure::DCT:
        case EffectStructure::IT_DROP_WASHOUT:
            if (model.washout < 1)
                throw std::invalid_argument("washout w must be >= 1");
            if (model.washout >= s_max)
                throw std::invalid_argument("washout w must be < max exposure of the layout");
            break;
        case EffectStructure::NCS:
            if (model.spline_df < 2)
                throw std::invalid_argument("spline df d must be >= 2");
            if (model.spline_df > s_max)
                throw std::invalid_argument("spline df d must be <= max exposure of the layout");
            break;
        default:
            break;
    }
    if (model.effect == EffectStructure::ETI || model.effect == EffectStructure::IT ||
        model.effect == EffectStructure::DCT || model.effect == EffectStructure::NCS) {
        if (s_max < 1)
            throw std::invalid_argument("layout has no treated cells");
    }
}

void check_rank(const LabeledMatrix& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.values);
    qr.setThreshold(1e-10);
    const int rank = static_cast<int>(qr.rank());
    const int p = static_cast<int>(X.values.cols());
    if (rank < p) {
        const auto& perm = qr.colsPermutation().indices();
        std::ostringstream msg;
        msg << "design matrix is rank deficient (rank " << rank << " of " << p
            << "); dependent columns:";
        for (int j = rank; j < p; ++j) msg << " " << X.labels[perm(j)];
        throw identifiability_error(msg.str());
    }
}

}  // namespace

LabeledMatrix build_X(const design::DesignLayout& layout, const ModelSpec& model) {
    check_model_against_layout(model, layout);

    const int s_max = layout.max_exposure;
    const int w = model.washout;

    LabeledMatrix X;
    for (int c = 0; c < layout.n_clusters; ++c) {
        for (int p = 0; p < layout.n_periods; ++p) {
            const auto& cell = layout.cells[c][p];
            if (!cell.observed) continue;
            if (model.effect == EffectStructure::IT_DROP_WASHOUT &&
                cell.exposure >= 1 && cell.exposure <= w)
                continue;
            X.rows.push_back({c, p, cell.exposure, cell.cell_size});
        }
    }
    const int n = static_cast<int>(X.rows.size());

    X.labels.push_back("intercept");
    if (model.time == TimeTrend::Categorical) {
        for (int p = 1; p < layout.n_periods; ++p)
            X.labels.push_back("t" + std::to_string(p + 1));
    } else {
        X.labels.push_back("time");
    }
    const int n_time_cols = static_cast<int>(X.labels.size());

    int n_trt_cols = 0;
    switch (model.effect) {
        case EffectStructure::IT:
        case EffectStructure::IT_DROP_WASHOUT:
            X.labels.push_back("delta");
            n_trt_cols = 1;
            break;
        case EffectStructure::ETI:
            for (int s = 1; s <= s_max; ++s)
                X.labels.push_back("delta" + std::to_string(s));
            n_trt_cols = s_max;
            break;
        case EffectStructure::DCT:
            for (int s = 1; s <= w; ++s)
                X.labels.push_back("delta" + std::to_string(s));
            X.labels.push_back("delta");
            n_trt_cols = w + 1;
            break;
        case EffectStructure::NCS:
            for (int k = 1; k <= model.spline_df; ++k)
                X.labels.push_back("ncs" + std::to_string(k));
            n_trt_cols = model.spline_df;
            break;
    }

    Eigen::MatrixXd spline;  // basis rows for exposures 1..S
    if (model.effect == EffectStructure::NCS) {
        std::vector<double> pts(s_max);
        for (int s = 1; s <= s_max; ++s) pts[s - 1] = static_cast<double>(s);
        spline = ncs_basis(model.spline_df, pts, 1.0, static_cast<double>(s_max));
    }

    X.values = Eigen::MatrixXd::Zero(n, n_time_cols + n_trt_cols);
    for (int r = 0; r < n; ++r) {
        const RowCell& rc = X.rows[r];
        X.values(r, 0) = 1.0;
        if (model.time == TimeTrend::Categorical) {
            if (rc.period >= 1) X.values(r, rc.period) = 1.0;
        } else {
            X.values(r, 1) = static_cast<double>(rc.period + 1);
        }
        const int s = rc.exposure;
        if (s < 1) continue;
        switch (model.effect) {
            case EffectStructure::IT:
            case EffectStructure::IT_DROP_WASHOUT:
                X.values(r, n_time_cols) = 1.0;
                break;
            case EffectStructure::ETI:
                X.values(r, n_time_cols + s - 1) = 1.0;
                break;
            case EffectStructure::DCT:
                if (s <= w)
                    X.values(r, n_time_cols + s - 1) = 1.0;
                else
                    X.values(r, n_time_cols + w) = 1.0;
                break;
            case EffectStructure::NCS:
                for (int k = 0; k < model.spline_df; ++k)
                    X.values(r, n_time_cols + k) = spline(s - 1, k);
                break;
        }
    }

    check_rank(X);
    return X;
}

}  // namespace swpower::model
