#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "swpower/design.hpp"
#include "swpower/estimand.hpp"
#include "swpower/gls.hpp"
#include "swpower/model.hpp"

namespace swpower::simulate {

// Treatment effect as a function of exposure time; delta(0) = 0 always.
struct EffectCurve {
    enum class Kind { Immediate, JumpLinear, WashoutConstant, Tabulated };
    Kind kind = Kind::Immediate;
    double delta = 0.0;                // Immediate / WashoutConstant plateau
    double start = 0.0, end = 0.0;     // JumpLinear endpoints at s = 1 and s = S
    int washout = 0;                   // WashoutConstant ramp length
    std::vector<double> values;        // WashoutConstant ramp / Tabulated values

    static EffectCurve immediate(double delta);
    static EffectCurve jump_linear(double start, double end);
    static EffectCurve washout_constant(int w, std::vector<double> ramp, double delta);
    static EffectCurve tabulated(std::vector<double> per_exposure);

    // delta(s) given the design's maximum exposure S.
    double value(int exposure, int max_exposure) const;
    std::string describe() const;
};

// Discrete value of an estimand applied to an effect curve: the mean of
// delta(s) over s in (s1, s2] for a TATE, delta(s) for a PTE.
double estimand_value(const EffectCurve& curve, const estimand::Estimand& e,
                      int max_exposure);

struct CalendarTrend {
    enum class Kind { Linear, Tabulated };
    Kind kind = Kind::Linear;
    double from = 0.0, to = 0.0;
    std::vector<double> values;  // one per calendar period

    static CalendarTrend linear(double from, double to);
    static CalendarTrend tabulated(std::vector<double> per_period);

    double value(int period, int n_periods) const;  // 0-based period
};

struct SimScenario {
    design::DesignLayout layout;
    EffectCurve curve;
    CalendarTrend trend = CalendarTrend::linear(0.0, 1.0);
    gls::VarianceComponents vc;
    int reps = 1000;
    std::uint64_t seed = 0;
    double alpha = 0.05;
};

struct DataRow {
    int cluster = 0;
    int period = 0;
    int individual = 0;
    int exposure = 0;
    double outcome = 0.0;

    bool treatment() const { return exposure >= 1; }
};

struct Dataset {
    int n_clusters = 0;
    int n_periods = 0;
    int max_exposure = 0;
    std::vector<DataRow> rows;  // cluster-major, then period, then individual
};

// One replication's individual-level data. Deterministic in
// (scenario.seed, rep_index): each (rep, cluster) pair owns an independent
// random substream, so replications are order-independent.
Dataset generate(const SimScenario& scenario, int rep_index);

struct FitMethod {
    enum class Kind { KnownVariance, Reml };
    Kind kind = Kind::KnownVariance;
    gls::VarianceComponents vc;  // for KnownVariance

    static FitMethod known(const gls::VarianceComponents& vc) { return {Kind::KnownVariance, vc}; }
    static FitMethod reml() { return {Kind::Reml, {}}; }
};

struct FitResult {
    std::vector<std::string> labels;
    Eigen::VectorXd estimates;
    Eigen::MatrixXd covariance;
    gls::VarianceComponents vc_estimates;
    bool converged = true;
    bool at_boundary = false;  // tau2 or gamma2 estimated at zero
    double log_restricted_likelihood = 0.0;
};

// Fit the mixed model to a dataset: GLS at known components, or REML over
// (tau2, gamma2, sigma2) followed by GLS at the estimates. REML
// non-convergence is flagged on the result, not thrown.
FitResult fit(const Dataset& data, const model::ModelSpec& model, const FitMethod& method);

// Restricted log-likelihood of the two-random-intercept model at the given
// components, computed on the cell-level decomposition (within-cell
// residuals carry sigma2; cell means carry the rest). Includes all constant
// terms so it can be compared against an individual-level evaluation.
double restricted_loglik(const Dataset& data, const model::ModelSpec& model,
                         const gls::VarianceComponents& vc);

struct McPowerResult {
    double power = 0.0;
    double mc_standard_error = 0.0;
    int reps_used = 0;
    int reps_failed = 0;
    bool failure_warning = false;  // more than 5% of reps failed to fit
};

// Monte Carlo power: the fraction of replications whose two-sided Wald test
// of the estimand contrast rejects at scenario.alpha. Requires reps >= 100.
// jobs > 1 runs replications in parallel; results are identical regardless.
McPowerResult mc_power(const SimScenario& scenario, const model::ModelSpec& model,
                       const estimand::Estimand& e, const FitMethod& method,
                       int jobs = 1);

}  // namespace swpower::simulate
