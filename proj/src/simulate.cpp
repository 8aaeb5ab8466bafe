#include "swpower/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

#include "swpower/stats.hpp"

namespace swpower::simulate {

// ---------------------------------------------------------------------------
// Effect curves and calendar trends
// ---------------------------------------------------------------------------

EffectCurve EffectCurve::immediate(double delta) {
    EffectCurve c;
    c.kind = Kind::Immediate;
    c.delta = delta;
    return c;
}

EffectCurve EffectCurve::jump_linear(double start, double end) {
    EffectCurve c;
    c.kind = Kind::JumpLinear;
    c.start = start;
    c.end = end;
    return c;
}

EffectCurve EffectCurve::washout_constant(int w, std::vector<double> ramp, double delta) {
    if (w < 1) throw std::invalid_argument("washout_constant: w must be >= 1");
    if (static_cast<int>(ramp.size()) != w)
        throw std::invalid_argument("washout_constant: ramp must have w values");
    EffectCurve c;
    c.kind = Kind::WashoutConstant;
    c.washout = w;
    c.values = std::move(ramp);
    c.delta = delta;
    return c;
}

EffectCurve EffectCurve::tabulated(std::vector<double> per_exposure) {
    if (per_exposure.empty())
        throw std::invalid_argument("tabulated curve needs at least one value");
    EffectCurve c;
    c.kind = Kind::Tabulated;
    c.values = std::move(per_exposure);
    return c;
}

double EffectCurve::value(int exposure, int max_exposure) const {
    if (exposure <= 0) return 0.0;
    switch (kind) {
        case Kind::Immediate:
            return delta;
        case Kind::JumpLinear:
            if (max_exposure <= 1) return start;
            return start + (end - start) * static_cast<double>(exposure - 1) /
                               static_cast<double>(max_exposure - 1);
        case Kind::WashoutConstant:
            return exposure <= washout
                       ? values[static_cast<std::size_t>(exposure - 1)]
                       : delta;
        case Kind::Tabulated:
            if (exposure > static_cast<int>(values.size()))
                throw std::out_of_range("tabulated curve has no value at this exposure");
            return values[static_cast<std::size_t>(exposure - 1)];
    }
    return 0.0;
}

std::string EffectCurve::describe() const {
    switch (kind) {
        case Kind::Immediate: return "immediate(" + std::to_string(delta) + ")";
        case Kind::JumpLinear:
            return "jump-linear(" + std::to_string(start) + "," + std::to_string(end) + ")";
        case Kind::WashoutConstant:
            return "washout-constant(w=" + std::to_string(washout) + ")";
        case Kind::Tabulated: return "tabulated";
    }
    return "";
}

double estimand_value(const EffectCurve& curve, const estimand::Estimand& e,
                      int max_exposure) {
    if (e.kind == estimand::Kind::PTE) return curve.value(e.s2, max_exposure);
    double sum = 0.0;
    for (int s = e.s1 + 1; s <= e.s2; ++s) sum += curve.value(s, max_exposure);
    return sum / static_cast<double>(e.s2 - e.s1);
}

CalendarTrend CalendarTrend::linear(double from, double to) {
    CalendarTrend t;
    t.kind = Kind::Linear;
    t.from = from;
    t.to = to;
    return t;
}

CalendarTrend CalendarTrend::tabulated(std::vector<double> per_period) {
    CalendarTrend t;
    t.kind = Kind::Tabulated;
    t.values = std::move(per_period);
    return t;
}

double CalendarTrend::value(int period, int n_periods) const {
    if (kind == Kind::Linear) {
        if (n_periods <= 1) return from;
        return from + (to - from) * static_cast<double>(period) /
                          static_cast<double>(n_periods - 1);
    }
    if (period >= static_cast<int>(values.size()))
        throw std::out_of_range("tabulated trend has no value at this period");
    return values[static_cast<std::size_t>(period)];
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

Dataset generate(const SimScenario& scenario, int rep_index) {
    const auto& layout = scenario.layout;
    scenario.vc.check();
    const double sd_cluster = std::sqrt(scenario.vc.tau2);
    const double sd_cell = std::sqrt(scenario.vc.gamma2);
    const double sd_resid = std::sqrt(scenario.vc.sigma2);

    Dataset data;
    data.n_clusters = layout.n_clusters;
    data.n_periods = layout.n_periods;
    data.max_exposure = layout.max_exposure;

    for (int c = 0; c < layout.n_clusters; ++c) {
        stats::NormalStream rng(scenario.seed, static_cast<std::uint64_t>(rep_index),
                                static_cast<std::uint64_t>(c));
        const double cluster_effect = sd_cluster * rng.next_normal();
        for (int p = 0; p < layout.n_periods; ++p) {
            const auto& cell = layout.cells[c][p];
            if (!cell.observed) continue;
            const double cell_effect = sd_cell * rng.next_normal();
            const double mean = scenario.trend.value(p, layout.n_periods) +
                                scenario.curve.value(cell.exposure, layout.max_exposure);
            for (int k = 0; k < cell.cell_size; ++k) {
                DataRow row;
                row.cluster = c;
                row.period = p;
                row.individual = k;
                row.exposure = cell.exposure;
                row.outcome = mean + cluster_effect + cell_effect + sd_resid * rng.next_normal();
                data.rows.push_back(row);
            }
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Cell-level workspace shared by the fitting paths
// ---------------------------------------------------------------------------

namespace {

design::DesignLayout layout_from_dataset(const Dataset& data) {
    if (data.rows.empty()) throw std::invalid_argument("dataset is empty");
    int n_clusters = 0, n_periods = 0, max_exposure = 0;
    for (const auto& r : data.rows) {
        n_clusters = std::max(n_clusters, r.cluster + 1);
        n_periods = std::max(n_periods, r.period + 1);
        max_exposure = std::max(max_exposure, r.exposure);
    }
    n_clusters = std::max(n_clusters, data.n_clusters);
    n_periods = std::max(n_periods, data.n_periods);
    max_exposure = std::max(max_exposure, data.max_exposure);

    design::DesignLayout layout;
    layout.n_clusters = n_clusters;
    layout.n_periods = n_periods;
    layout.max_exposure = max_exposure;
    layout.cluster_sequence.assign(n_clusters, 0);
    layout.cells.assign(n_clusters, std::vector<design::Cell>(n_periods));
    for (const auto& r : data.rows) {
        design::Cell& cell = layout.cells[r.cluster][r.period];
        if (cell.observed && cell.exposure != r.exposure)
            throw std::invalid_argument("dataset has inconsistent exposure within a cell");
        cell.observed = true;
        cell.exposure = r.exposure;
        cell.cell_size += 1;
    }
    return layout;
}

struct CellData {
    Eigen::VectorXd means;   // per retained design-matrix row
    Eigen::VectorXd counts;
    double rss_within = 0.0;
    long long n_individuals = 0;
};

// Workspace for repeated fits on one (layout, model): the design matrix,
// per-cluster row ranges, and sufficient statistics for the REML objective.
// The sufficient-statistic fast path applies when every retained cell has the
// same size and every cluster retains the same number of cells, which makes
// each block covariance d*I + tau2*ones with a common d.
class FitEngine {
public:
    FitEngine(const design::DesignLayout& layout, const model::ModelSpec& model)
        : layout_(layout), model_(model), X_(model::build_X(layout, model)) {
        const int m = static_cast<int>(X_.rows.size());
        int row = 0;
        while (row < m) {
            const int cluster = X_.rows[row].cluster;
            int end = row;
            while (end < m && X_.rows[end].cluster == cluster) ++end;
            cluster_ranges_.emplace_back(row, end);
            row = end;
        }
        for (int r = 0; r < m; ++r)
            cell_index_[key(X_.rows[r].cluster, X_.rows[r].period)] = r;
    }

    const model::LabeledMatrix& X() const { return X_; }
    const design::DesignLayout& layout() const { return layout_; }

    CellData collapse(const Dataset& data) const {
        const int m = static_cast<int>(X_.rows.size());
        CellData cd;
        cd.means = Eigen::VectorXd::Zero(m);
        cd.counts = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(m);
        for (const auto& row : data.rows) {
            auto it = cell_index_.find(key(row.cluster, row.period));
            if (it == cell_index_.end()) continue;  // cell dropped by the model
            const int r = it->second;
            cd.means(r) += row.outcome;
            sumsq(r) += row.outcome * row.outcome;
            cd.counts(r) += 1.0;
        }
        for (int r = 0; r < m; ++r) {
            if (cd.counts(r) < 1.0)
                throw std::invalid_argument("dataset has no observations for a model cell");
            cd.means(r) /= cd.counts(r);
            cd.rss_within += sumsq(r) - cd.counts(r) * cd.means(r) * cd.means(r);
            cd.n_individuals += static_cast<long long>(cd.counts(r));
        }
        cd.rss_within = std::max(cd.rss_within, 0.0);
        return cd;
    }

    // Full restricted log-likelihood (cell-level decomposition, constants
    // included). Returns -inf at inadmissible component values.
    double reml_loglik(const CellData& cd, const gls::VarianceComponents& vc) const;

    FitResult fit_known(const CellData& cd, const gls::VarianceComponents& vc) const;
    FitResult fit_reml(const CellData& cd) const;

private:
    static long long key(int cluster, int period) {
        return static_cast<long long>(cluster) * 1'000'000LL + period;
    }

    struct Suffstats {
        bool balanced = false;
        double k_common = 0.0;
        int periods_per_cluster = 0;
        int n_clusters = 0;
        Eigen::MatrixXd gram;       // sum_b X_b' X_b
        Eigen::MatrixXd ones_gram;  // sum_b (X_b'1)(X_b'1)'
        Eigen::VectorXd xy;         // sum_b X_b' y_b
        Eigen::VectorXd ones_xy;    // sum_b (X_b'1)(1'y_b)
        double yy = 0.0;            // sum_b y_b' y_b
        double mm = 0.0;            // sum_b (1'y_b)^2
        double sum_log_k = 0.0;
        double logdet_xtwx = 0.0;
    };

    Suffstats build_suffstats(const CellData& cd) const;
    double reml_loglik_fast(const CellData& cd, const Suffstats& ss,
                            const gls::VarianceComponents& vc) const;
    double reml_loglik_generic(const CellData& cd, const gls::VarianceComponents& vc,
                               double sum_log_k, double logdet_xtwx) const;

    design::DesignLayout layout_;
    model::ModelSpec model_;
    model::LabeledMatrix X_;
    std::vector<std::pair<int, int>> cluster_ranges_;
    std::map<long long, int> cell_index_;
};

FitEngine::Suffstats FitEngine::build_suffstats(const CellData& cd) const {
    Suffstats ss;
    const int p = static_cast<int>(X_.values.cols());
    ss.n_clusters = static_cast<int>(cluster_ranges_.size());

    ss.sum_log_k = cd.counts.array().log().sum();
    {
        const Eigen::MatrixXd xtwx =
            X_.values.transpose() * cd.counts.asDiagonal() * X_.values;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
        ss.logdet_xtwx = ldlt.vectorD().array().log().sum();
    }

    ss.balanced = true;
    ss.k_common = cd.counts(0);
    ss.periods_per_cluster = cluster_ranges_.front().second - cluster_ranges_.front().first;
    for (int r = 0; r < cd.counts.size(); ++r)
        if (cd.counts(r) != ss.k_common) { ss.balanced = false; break; }
    if (ss.balanced) {
        for (const auto& [lo, hi] : cluster_ranges_)
            if (hi - lo != ss.periods_per_cluster) { ss.balanced = false; break; }
    }
    if (!ss.balanced) return ss;

    ss.gram = Eigen::MatrixXd::Zero(p, p);
    ss.ones_gram = Eigen::MatrixXd::Zero(p, p);
    ss.xy = Eigen::VectorXd::Zero(p);
    ss.ones_xy = Eigen::VectorXd::Zero(p);
    for (const auto& [lo, hi] : cluster_ranges_) {
        const auto Xb = X_.values.middleRows(lo, hi - lo);
        const auto yb = cd.means.segment(lo, hi - lo);
        const Eigen::VectorXd h = Xb.colwise().sum().transpose();
        const double m1 = yb.sum();
        ss.gram.noalias() += Xb.transpose() * Xb;
        ss.ones_gram.noalias() += h * h.transpose();
        ss.xy.noalias() += Xb.transpose() * yb;
        ss.ones_xy.noalias() += h * m1;
        ss.yy += yb.squaredNorm();
        ss.mm += m1 * m1;
    }
    return ss;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

struct MeanPart {
    double logdet_v = 0.0;
    double logdet_info = 0.0;
    double quad = 0.0;  // r' V^-1 r at the GLS solution
    bool ok = false;
};

double assemble_loglik(double n_minus_m, double rss_within, double sigma2,
                       double m_minus_p, double sum_log_k, double logdet_xtwx,
                       const MeanPart& mp) {
    if (!mp.ok) return kNegInf;
    const double within =
        n_minus_m * (kLog2Pi + std::log(sigma2)) + rss_within / sigma2;
    const double mean = m_minus_p * kLog2Pi + sum_log_k + mp.logdet_v +
                        mp.logdet_info - logdet_xtwx + mp.quad;
    return -0.5 * (within + mean);
}

MeanPart solve_mean_part(const Eigen::MatrixXd& info, const Eigen::VectorXd& rhs,
                         double yquad, double logdet_v) {
    MeanPart mp;
    mp.logdet_v = logdet_v;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) return mp;
    mp.logdet_info = ldlt.vectorD().array().log().sum();
    const Eigen::VectorXd beta = ldlt.solve(rhs);
    mp.quad = yquad - beta.dot(rhs);
    if (!std::isfinite(mp.quad) || mp.quad < -1e-8) return mp;
    mp.quad = std::max(mp.quad, 0.0);
    mp.ok = true;
    return mp;
}

}  // namespace

double FitEngine::reml_loglik_fast(const CellData& cd, const Suffstats& ss,
                                   const gls::VarianceComponents& vc) const {
    if (!(vc.sigma2 > 0.0) || vc.tau2 < 0.0 || vc.gamma2 < 0.0) return kNegInf;
    const double d = vc.gamma2 + vc.sigma2 / ss.k_common;
    if (!(d > 0.0)) return kNegInf;
    const int j_per = ss.periods_per_cluster;
    const double t = static_cast<double>(j_per) / d;
    const double w = vc.tau2 / (1.0 + vc.tau2 * t);

    const Eigen::MatrixXd info = ss.gram / d - (w / (d * d)) * ss.ones_gram;
    const Eigen::VectorXd rhs = ss.xy / d - (w / (d * d)) * ss.ones_xy;
    const double yquad = ss.yy / d - (w / (d * d)) * ss.mm;
    const double logdet_v =
        ss.n_clusters * (j_per * std::log(d) + std::log1p(vc.tau2 * t));

    const MeanPart mp = solve_mean_part(info, rhs, yquad, logdet_v);
    const double m = static_cast<double>(cd.means.size());
    const double n = static_cast<double>(cd.n_individuals);
    const double p = static_cast<double>(X_.values.cols());
    return assemble_loglik(n - m, cd.rss_within, vc.sigma2, m - p, ss.sum_log_k,
                           ss.logdet_xtwx, mp);
}

double FitEngine::reml_loglik_generic(const CellData& cd,
                                      const gls::VarianceComponents& vc,
                                      double sum_log_k, double logdet_xtwx) const {
    if (!(vc.sigma2 > 0.0) || vc.tau2 < 0.0 || vc.gamma2 < 0.0) return kNegInf;
    const int p = static_cast<int>(X_.values.cols());
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    double yquad = 0.0;
    double logdet_v = 0.0;

    for (const auto& [lo, hi] : cluster_ranges_) {
        const int rows = hi - lo;
        const auto Xb = X_.values.middleRows(lo, rows);
        const auto yb = cd.means.segment(lo, rows);
        Eigen::VectorXd dinv(rows);
        for (int r = 0; r < rows; ++r) {
            const double d = vc.gamma2 + vc.sigma2 / cd.counts(lo + r);
            if (!(d > 0.0)) return kNegInf;
            dinv(r) = 1.0 / d;
            logdet_v += std::log(d);
        }
        const double t = dinv.sum();
        const double w = vc.tau2 / (1.0 + vc.tau2 * t);
        logdet_v += std::log1p(vc.tau2 * t);

        const Eigen::MatrixXd DX = dinv.asDiagonal() * Xb;
        const Eigen::VectorXd xu = Xb.transpose() * dinv;
        const Eigen::VectorXd dy = dinv.cwiseProduct(yb);
        const double uy = yb.dot(dinv);
        info.noalias() += Xb.transpose() * DX - w * xu * xu.transpose();
        rhs.noalias() += Xb.transpose() * dy - (w * uy) * xu;
        yquad += yb.dot(dy) - w * uy * uy;
    }

    const MeanPart mp = solve_mean_part(info, rhs, yquad, logdet_v);
    const double m = static_cast<double>(cd.means.size());
    const double n = static_cast<double>(cd.n_individuals);
    return assemble_loglik(n - m, cd.rss_within, vc.sigma2, m - static_cast<double>(p),
                           sum_log_k, logdet_xtwx, mp);
}

double FitEngine::reml_loglik(const CellData& cd, const gls::VarianceComponents& vc) const {
    const Suffstats ss = build_suffstats(cd);
    if (ss.balanced) return reml_loglik_fast(cd, ss, vc);
    return reml_loglik_generic(cd, vc, ss.sum_log_k, ss.logdet_xtwx);
}

FitResult FitEngine::fit_known(const CellData& cd, const gls::VarianceComponents& vc) const {
    vc.check();
    // Cell variances come from the actual per-cell counts.
    gls::CellCovariance V;
    V.tau2 = vc.tau2;
    for (const auto& [lo, hi] : cluster_ranges_) {
        gls::CellCovariance::Block block;
        block.cluster = X_.rows[lo].cluster;
        block.diag.resize(hi - lo);
        for (int r = lo; r < hi; ++r) {
            block.periods.push_back(X_.rows[r].period);
            block.diag(r - lo) = vc.gamma2 + vc.sigma2 / cd.counts(r);
        }
        V.blocks.push_back(std::move(block));
    }
    const gls::GlsSolver solver = gls::GlsSolver::make(X_, V);

    FitResult result;
    result.labels = X_.labels;
    result.estimates = solver.projector * cd.means;
    result.covariance = solver.cov;
    result.vc_estimates = vc;
    result.converged = true;
    result.log_restricted_likelihood = reml_loglik(cd, vc);
    return result;
}

// ---------------------------------------------------------------------------
// REML optimization: Nelder-Mead on clamped components, then coordinate
// Newton refinement with numeric derivatives.
// ---------------------------------------------------------------------------

namespace {

gls::VarianceComponents clamp_components(const Eigen::Vector3d& x, double sigma_floor) {
    gls::VarianceComponents vc;
    vc.tau2 = std::max(x(0), 0.0);
    vc.gamma2 = std::max(x(1), 0.0);
    vc.sigma2 = std::max(x(2), sigma_floor);
    return vc;
}

struct SimplexPoint {
    Eigen::Vector3d x;
    double f = 0.0;
};

}  // namespace

FitResult FitEngine::fit_reml(const CellData& cd) const {
    const Suffstats ss = build_suffstats(cd);
    const double n = static_cast<double>(cd.n_individuals);
    const double m = static_cast<double>(cd.means.size());
    const double p = static_cast<double>(X_.values.cols());

    // Moment-based starting values: pooled within-cell variance for sigma2,
    // OLS cell-mean residual variance split between tau2 and gamma2.
    double sigma0 = (n > m) ? cd.rss_within / (n - m) : 0.0;
    double cell_resid_var;
    {
        const Eigen::VectorXd beta =
            (X_.values.transpose() * X_.values)
                .ldlt()
                .solve(X_.values.transpose() * cd.means);
        const Eigen::VectorXd resid = cd.means - X_.values * beta;
        cell_resid_var = resid.squaredNorm() / std::max(m - p, 1.0);
    }
    if (!(sigma0 > 0.0)) sigma0 = std::max(cell_resid_var, 1e-8);
    const double sigma_floor = 1e-10 * sigma0;
    const double kbar = cd.counts.mean();
    const double excess = std::max(cell_resid_var - sigma0 / kbar, 0.01 * sigma0);

    auto objective = [&](const Eigen::Vector3d& x) {
        const gls::VarianceComponents vc = clamp_components(x, sigma_floor);
        double ll = ss.balanced ? reml_loglik_fast(cd, ss, vc)
                                : reml_loglik_generic(cd, vc, ss.sum_log_k, ss.logdet_xtwx);
        return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
    };

    // Nelder-Mead
    std::array<SimplexPoint, 4> simplex;
    simplex[0].x = Eigen::Vector3d(excess / 2.0, excess / 2.0, sigma0);
    for (int i = 1; i < 4; ++i) {
        simplex[i].x = simplex[0].x;
        const double step = std::max(0.5 * simplex[0].x(i - 1), 0.05 * sigma0);
        simplex[i].x(i - 1) += step;
    }
    for (auto& pt : simplex) pt.f = objective(pt.x);

    bool converged = false;
    const int max_iter = 600;
    for (int iter = 0; iter < max_iter; ++iter) {
        std::sort(simplex.begin(), simplex.end(),
                  [](const SimplexPoint& a, const SimplexPoint& b) { return a.f < b.f; });
        const double spread = std::fabs(simplex[3].f - simplex[0].f);
        if (spread < 1e-10 * (std::fabs(simplex[0].f) + 1e-12)) {
            converged = true;
            break;
        }
        const Eigen::Vector3d centroid =
            (simplex[0].x + simplex[1].x + simplex[2].x) / 3.0;
        const Eigen::Vector3d reflected = centroid + (centroid - simplex[3].x);
        const double f_reflected = objective(reflected);
        if (f_reflected < simplex[0].f) {
            const Eigen::Vector3d expanded = centroid + 2.0 * (centroid - simplex[3].x);
            const double f_expanded = objective(expanded);
            if (f_expanded < f_reflected) {
                simplex[3] = {expanded, f_expanded};
            } else {
                simplex[3] = {reflected, f_reflected};
            }
        } else if (f_reflected < simplex[2].f) {
            simplex[3] = {reflected, f_reflected};
        } else {
            const Eigen::Vector3d contracted =
                centroid + 0.5 * (simplex[3].x - centroid);
            const double f_contracted = objective(contracted);
            if (f_contracted < simplex[3].f) {
                simplex[3] = {contracted, f_contracted};
            } else {
                for (int i = 1; i < 4; ++i) {
                    simplex[i].x = simplex[0].x + 0.5 * (simplex[i].x - simplex[0].x);
                    simplex[i].f = objective(simplex[i].x);
                }
            }
        }
    }
    std::sort(simplex.begin(), simplex.end(),
              [](const SimplexPoint& a, const SimplexPoint& b) { return a.f < b.f; });

    // Coordinate Newton refinement on the clamped scale.
    Eigen::Vector3d x = simplex[0].x;
    double fx = simplex[0].f;
    for (int pass = 0; pass < 30; ++pass) {
        const double f_before = fx;
        for (int coord = 0; coord < 3; ++coord) {
            const double scale = std::max(std::fabs(x(coord)), 1e-3 * sigma0);
            const double h = 1e-4 * scale;
            Eigen::Vector3d xp = x, xm = x;
            xp(coord) += h;
            xm(coord) -= h;
            const double fp = objective(xp);
            const double fm = objective(xm);
            const double g = (fp - fm) / (2.0 * h);
            const double hess = (fp - 2.0 * fx + fm) / (h * h);
            double step;
            if (std::isfinite(hess) && hess > 0.0) {
                step = -g / hess;
            } else {
                step = (g > 0.0 ? -1.0 : 1.0) * scale * 0.1;
            }
            step = std::clamp(step, -2.0 * scale, 2.0 * scale);
            Eigen::Vector3d xn = x;
            xn(coord) += step;
            const double fn = objective(xn);
            if (fn < fx) {
                x = xn;
                fx = fn;
            }
        }
        if (std::fabs(f_before - fx) < 1e-10 * (std::fabs(fx) + 1e-12)) break;
    }

    const gls::VarianceComponents vc_hat = clamp_components(x, sigma_floor);
    FitResult result = fit_known(cd, vc_hat);
    result.vc_estimates = vc_hat;
    result.converged = converged;
    result.at_boundary = (vc_hat.tau2 <= 0.0) || (vc_hat.gamma2 <= 0.0) ||
                         (vc_hat.sigma2 <= sigma_floor);
    result.log_restricted_likelihood = -fx;
    return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public fitting API
// ---------------------------------------------------------------------------

FitResult fit(const Dataset& data, const model::ModelSpec& model, const FitMethod& method) {
    const design::DesignLayout layout = layout_from_dataset(data);
    const FitEngine engine(layout, model);
    const CellData cd = engine.collapse(data);
    if (method.kind == FitMethod::Kind::KnownVariance)
        return engine.fit_known(cd, method.vc);
    return engine.fit_reml(cd);
}

double restricted_loglik(const Dataset& data, const model::ModelSpec& model,
                         const gls::VarianceComponents& vc) {
    const design::DesignLayout layout = layout_from_dataset(data);
    const FitEngine engine(layout, model);
    return engine.reml_loglik(engine.collapse(data), vc);
}

// ---------------------------------------------------------------------------
// Monte Carlo power
// ---------------------------------------------------------------------------

McPowerResult mc_power(const SimScenario& scenario, const model::ModelSpec& model,
                       const estimand::Estimand& e, const FitMethod& method,
                       int jobs) {
    if (scenario.reps < 100)
        throw std::invalid_argument("mc_power needs reps >= 100");
    const FitEngine engine(scenario.layout, model);
    const gls::ContrastVector contrast =
        estimand::contrast_for(e, model, scenario.layout);
    const Eigen::VectorXd cvec = contrast.expand(engine.X().labels);
    const double z_crit = stats::z_two_sided(scenario.alpha);

    // With known components the projector and contrast SE are data-free.
    Eigen::MatrixXd known_projector;
    double known_se = 0.0;
    if (method.kind == FitMethod::Kind::KnownVariance) {
        method.vc.check();
        const gls::CellCovariance V =
            gls::cell_covariance(scenario.layout, method.vc);
        const gls::GlsSolver solver = gls::GlsSolver::make(engine.X(), V);
        known_projector = solver.projector;
        known_se = std::sqrt(cvec.dot(solver.cov * cvec));
    }

    auto run_rep = [&](int rep, int& rejections, int& failures) {
        try {
            const Dataset data = generate(scenario, rep);
            const CellData cd = engine.collapse(data);
            double est, se;
            if (method.kind == FitMethod::Kind::KnownVariance) {
                est = cvec.dot(known_projector * cd.means);
                se = known_se;
            } else {
                const FitResult f = engine.fit_reml(cd);
                if (!f.converged) {
                    ++failures;
                    return;
                }
                est = cvec.dot(f.estimates);
                se = std::sqrt(cvec.dot(f.covariance * cvec));
            }
            if (!(se > 0.0) || !std::isfinite(est)) {
                ++failures;
                return;
            }
            if (std::fabs(est) / se > z_crit) ++rejections;
        } catch (const std::exception&) {
            ++failures;
        }
    };

    int rejections = 0;
    int failures = 0;
    if (jobs <= 1) {
        for (int rep = 0; rep < scenario.reps; ++rep) run_rep(rep, rejections, failures);
    } else {
        const int n_threads = std::min(jobs, scenario.reps);
        std::vector<int> rej(n_threads, 0), fail(n_threads, 0);
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) {
            threads.emplace_back([&, t] {
                for (int rep = t; rep < scenario.reps; rep += n_threads)
                    run_rep(rep, rej[t], fail[t]);
            });
        }
        for (auto& th : threads) th.join();
        for (int t = 0; t < n_threads; ++t) {
            rejections += rej[t];
            failures += fail[t];
        }
    }

    McPowerResult result;
    result.reps_failed = failures;
    result.reps_used = scenario.reps - failures;
    if (result.reps_used > 0) {
        result.power = static_cast<double>(rejections) / result.reps_used;
        result.mc_standard_error =
            std::sqrt(result.power * (1.0 - result.power) / result.reps_used);
    }
    result.failure_warning = failures * 20 > scenario.reps;  // > 5%
    return result;
}

}  // namespace swpower::simulate
