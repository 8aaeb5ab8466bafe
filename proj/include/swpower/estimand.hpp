#pragma once

#include <string>

#include "swpower/design.hpp"
#include "swpower/gls.hpp"
#include "swpower/model.hpp"

namespace swpower::estimand {

enum class Kind { TATE, PTE };

// TATE(s1, s2): mean of the effect curve over exposure times s1+1 .. s2.
// PTE(s): effect curve value at exposure time s.
struct Estimand {
    Kind kind = Kind::TATE;
    int s1 = 0;  // TATE lower bound (exclusive); unused for PTE
    int s2 = 0;  // TATE upper bound; the point s for PTE

    static Estimand tate(int s1, int s2);
    static Estimand pte(int s);

    int max_exposure_needed() const { return s2; }
    std::string describe() const;
};

// Parse the CLI grammar "TATE(a,b)" / "PTE(s)" (case-insensitive).
Estimand parse(const std::string& text);

// Map an estimand to a contrast over the model's treatment columns.
// Throws std::out_of_range when the estimand exceeds the layout's maximum
// exposure and model::identifiability_error when the model cannot target it.
gls::ContrastVector contrast_for(const Estimand& e, const model::ModelSpec& model,
                                 const design::DesignLayout& layout);

}  // namespace swpower::estimand
