#pragma once

#include <optional>

#include "swpower/design.hpp"
#include "swpower/estimand.hpp"
#include "swpower/gls.hpp"
#include "swpower/model.hpp"

namespace swpower::search {

// One fully specified analytic power evaluation.
struct PowerQuery {
    design::DesignSpec design;
    model::ModelSpec model;
    estimand::Estimand estimand;
    gls::CorrelationSpec correlation;
    double effect_value = 0.0;
    double alpha = 0.05;
};

// Build the layout, model matrix, covariance and contrast, then evaluate.
gls::PowerResult evaluate_power(const PowerQuery& q);

enum class FreeVariable { Individuals, Clusters };

struct SearchProblem {
    PowerQuery query;        // the free variable's field in query.design is the start value
    FreeVariable free_variable = FreeVariable::Individuals;
    double target_power = 0.9;

    void check() const;
};

struct SearchResult {
    bool solved = false;
    int n = 0;                    // smallest size reaching the target
    double achieved_power = 0.0;  // power at n when solved
    double limiting_power = 0.0;  // sigma2/K -> 0 limit when infeasible
};

// Smallest individuals-per-cell count K with power >= target, or infeasible
// with the K -> infinity limiting power.
SearchResult required_individuals(const SearchProblem& p);

// Smallest clusters-per-sequence count with power >= target. Always solvable;
// throws if the search cap (1e6) is exceeded.
SearchResult required_clusters(const SearchProblem& p);

// ETI-required size divided by IT-required size on the same axis. Empty when
// the ETI side is infeasible; throws if the IT side is infeasible.
std::optional<double> ssr(const SearchProblem& p_it, const SearchProblem& p_eti,
                          FreeVariable axis);

// The positive effect value whose power equals target_power, found by
// bisection to |power - target| < 1e-9.
double calibrate_effect(const PowerQuery& q, double target_power);

}  // namespace swpower::search
