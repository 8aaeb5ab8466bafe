#include "swpower/search.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace swpower::search {

namespace {

constexpr int kSizeCap = 1'000'000;

gls::PowerResult power_with_vc(const PowerQuery& q, const gls::VarianceComponents& vc) {
    const design::DesignLayout layout = design::build(q.design);
    const model::LabeledMatrix X = model::build_X(layout, q.model);
    const gls::CellCovariance V = gls::cell_covariance(layout, vc);
    const gls::LabeledCovariance cov = gls::fixed_effects_covariance(X, V);
    const gls::ContrastVector c = estimand::contrast_for(q.estimand, q.model, layout);
    return gls::analytic_power(c, q.effect_value, cov, q.alpha);
}

// Power in the sigma2/K -> 0 limit. With gamma2 = 0 the cell-mean noise
// vanishes entirely and within-cluster contrasts become exact, so the limit
// is 1 for any layout where the contrast is identified.
double limiting_power(const PowerQuery& q, const gls::VarianceComponents& vc) {
    if (vc.gamma2 == 0.0) return 1.0;
    const design::DesignLayout layout = design::build(q.design);
    const model::LabeledMatrix X = model::build_X(layout, q.model);
    gls::CellCovariance V = gls::cell_covariance(layout, vc);
    for (auto& block : V.blocks) block.diag.setConstant(vc.gamma2);
    const gls::LabeledCovariance cov = gls::fixed_effects_covariance(X, V);
    const gls::ContrastVector c = estimand::contrast_for(q.estimand, q.model, layout);
    return gls::analytic_power(c, q.effect_value, cov, q.alpha).power;
}

// Smallest n in [1, cap] with power(n) >= target, assuming monotone power.
// Returns 0 if even the cap falls short.
int smallest_reaching(const std::function<double(int)>& power_at, double target,
                      double* achieved) {
    int lo = 1;
    double p_lo = power_at(lo);
    if (p_lo >= target) {
        *achieved = p_lo;
        return 1;
    }
    int hi = 1;
    double p_hi = p_lo;
    while (p_hi < target) {
        if (hi >= kSizeCap) return 0;
        lo = hi;
        hi = std::min(kSizeCap, hi * 2);
        p_hi = power_at(hi);
    }
    // Invariant: power(lo) < target <= power(hi).
    while (hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        const double p_mid = power_at(mid);
        if (p_mid >= target) {
            hi = mid;
            p_hi = p_mid;
        } else {
            lo = mid;
        }
    }
    *achieved = p_hi;
    return hi;
}

}  // namespace

gls::PowerResult evaluate_power(const PowerQuery& q) {
    return power_with_vc(q, gls::vc_from_icc_cac(q.correlation));
}

void SearchProblem::check() const {
    if (!(target_power > query.alpha && target_power < 1.0))
        throw std::invalid_argument("target_power must be in (alpha, 1)");
    if (query.effect_value == 0.0)
        throw std::invalid_argument("effect_value must be nonzero for a size search");
}

SearchResult required_individuals(const SearchProblem& p) {
    p.check();
    if (p.free_variable != FreeVariable::Individuals)
        throw std::invalid_argument("free variable is not individuals_per_cell");
    const gls::VarianceComponents vc = gls::vc_from_icc_cac(p.query.correlation);

    const double limit = limiting_power(p.query, vc);
    SearchResult result;
    result.limiting_power = limit;
    if (limit < p.target_power) return result;

    auto power_at = [&](int k) {
        PowerQuery q = p.query;
        q.design.individuals_per_cell = k;
        return power_with_vc(q, vc).power;
    };
    double achieved = 0.0;
    const int n = smallest_reaching(power_at, p.target_power, &achieved);
    if (n == 0)
        throw std::runtime_error("individuals search exceeded the cap of 1e6 per cell");
    result.solved = true;
    result.n = n;
    result.achieved_power = achieved;
    return result;
}

SearchResult required_clusters(const SearchProblem& p) {
    p.check();
    if (p.free_variable != FreeVariable::Clusters)
        throw std::invalid_argument("free variable is not clusters_per_sequence");
    const gls::VarianceComponents vc = gls::vc_from_icc_cac(p.query.correlation);

    auto power_at = [&](int c) {
        PowerQuery q = p.query;
        q.design.clusters_per_sequence = c;
        return power_with_vc(q, vc).power;
    };
    double achieved = 0.0;
    const int n = smallest_reaching(power_at, p.target_power, &achieved);
    if (n == 0)
        throw std::runtime_error("cluster search exceeded the cap of 1e6 per sequence");
    SearchResult result;
    result.solved = true;
    result.n = n;
    result.achieved_power = achieved;
    result.limiting_power = 1.0;
    return result;
}

std::optional<double> ssr(const SearchProblem& p_it, const SearchProblem& p_eti,
                          FreeVariable axis) {
    auto solve = [&](const SearchProblem& p) {
        SearchProblem prob = p;
        prob.free_variable = axis;
        return (axis == FreeVariable::Individuals) ? required_individuals(prob)
                                                   : required_clusters(prob);
    };
    const SearchResult it = solve(p_it);
    if (!it.solved)
        throw std::runtime_error("IT-model sample size search is infeasible");
    const SearchResult eti = solve(p_eti);
    if (!eti.solved) return std::nullopt;
    return static_cast<double>(eti.n) / static_cast<double>(it.n);
}

double calibrate_effect(const PowerQuery& q, double target_power) {
    if (!(target_power > q.alpha && target_power < 1.0))
        throw std::invalid_argument("target_power must be in (alpha, 1)");

    auto power_at = [&](double effect) {
        PowerQuery qq = q;
        qq.effect_value = effect;
        return evaluate_power(qq).power;
    };

    double lo = 0.0;
    double hi = 1.0;
    while (power_at(hi) < target_power) {
        hi *= 2.0;
        if (hi > 1e12) throw std::runtime_error("effect calibration failed to bracket");
    }
    // Power is strictly increasing in |effect|; bisect the bracket.
    for (int iter = 0; iter < 400; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double p = power_at(mid);
        if (std::fabs(p - target_power) < 1e-9) return mid;
        if (p < target_power) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace swpower::search
