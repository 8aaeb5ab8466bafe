#include "swpower/design.hpp"

#include <cmath>
#include <stdexcept>

namespace swpower::design {

namespace {

int scaled_baseline_size(const DesignSpec& spec) {
    // Round half up; must land on an integer >= 1.
    const double scaled = spec.baseline_multiplier * spec.individuals_per_cell;
    const int k = static_cast<int>(std::floor(scaled + 0.5));
    if (k < 1) {
        throw std::invalid_argument(
            "baseline_multiplier: scaled baseline cell size rounds below 1");
    }
    return k;
}

}  // namespace

void DesignSpec::check() const {
    if (n_sequences < 1) throw std::invalid_argument("n_sequences must be >= 1");
    if (clusters_per_sequence < 1)
        throw std::invalid_argument("clusters_per_sequence must be >= 1");
    if (individuals_per_cell < 1)
        throw std::invalid_argument("individuals_per_cell must be >= 1");
    if (extra_start_periods < 0)
        throw std::invalid_argument("extra_start_periods must be >= 0");
    if (extra_end_periods < 0)
        throw std::invalid_argument("extra_end_periods must be >= 0");
    if (!(baseline_multiplier > 0.0))
        throw std::invalid_argument("baseline_multiplier must be > 0");
    if (staircase) {
        if (staircase->r0 < 1) throw std::invalid_argument("staircase.r0 must be >= 1");
        if (staircase->r1 < 1) throw std::invalid_argument("staircase.r1 must be >= 1");
        if (extra_start_periods != 0 || extra_end_periods != 0)
            throw std::invalid_argument(
                "extra_start_periods/extra_end_periods must be 0 for staircase designs");
    }
    scaled_baseline_size(*this);
}

int DesignLayout::observed_cell_count() const {
    int n = 0;
    for (const auto& row : cells)
        for (const auto& c : row)
            if (c.observed) ++n;
    return n;
}

DesignLayout build_standard(const DesignSpec& spec) {
    spec.check();
    if (spec.staircase) {
        throw std::invalid_argument("staircase must be absent for build_standard");
    }

    DesignLayout layout;
    layout.spec = spec;
    const int s = spec.n_sequences;
    const int cps = spec.clusters_per_sequence;
    layout.n_clusters = s * cps;
    layout.n_periods = s + 1 + spec.extra_start_periods + spec.extra_end_periods;
    layout.max_exposure = s + spec.extra_end_periods;

    const int baseline_k = scaled_baseline_size(spec);

    layout.cluster_sequence.resize(layout.n_clusters);
    layout.cells.assign(layout.n_clusters,
                        std::vector<Cell>(layout.n_periods));
    for (int c = 0; c < layout.n_clusters; ++c) {
        const int seq = c / cps;
        layout.cluster_sequence[c] = seq;
        for (int p = 0; p < layout.n_periods; ++p) {
            Cell& cell = layout.cells[c][p];
            cell.observed = true;
            // Sequence q stays in control for 1 + extra_start + q periods.
            const int control_periods = 1 + spec.extra_start_periods + seq;
            cell.exposure = (p >= control_periods) ? p - control_periods + 1 : 0;
            cell.cell_size = (p == 0) ? baseline_k : spec.individuals_per_cell;
        }
    }
    return layout;
}

DesignLayout build_staircase(const DesignSpec& spec) {
    spec.check();
    if (!spec.staircase) {
        throw std::invalid_argument("staircase must be present for build_staircase");
    }
    const int r0 = spec.staircase->r0;
    const int r1 = spec.staircase->r1;

    DesignLayout layout;
    layout.spec = spec;
    const int s = spec.n_sequences;
    const int cps = spec.clusters_per_sequence;
    layout.n_clusters = s * cps;
    // Sequence q (0-based) observes periods q .. q + r0 + r1 - 1.
    layout.n_periods = (s - 1) + r0 + r1;
    layout.max_exposure = r1;

    layout.cluster_sequence.resize(layout.n_clusters);
    layout.cells.assign(layout.n_clusters,
                        std::vector<Cell>(layout.n_periods));
    for (int c = 0; c < layout.n_clusters; ++c) {
        const int seq = c / cps;
        layout.cluster_sequence[c] = seq;
        const int first = seq;
        const int crossover = seq + r0;  // first treated period
        for (int p = first; p < first + r0 + r1; ++p) {
            Cell& cell = layout.cells[c][p];
            cell.observed = true;
            cell.exposure = (p >= crossover) ? p - crossover + 1 : 0;
            cell.cell_size = spec.individuals_per_cell;
        }
    }
    return layout;
}

DesignLayout build(const DesignSpec& spec) {
    return spec.staircase ? build_staircase(spec) : build_standard(spec);
}

std::vector<std::string> validate(const DesignLayout& layout) {
    std::vector<std::string> violations;
    auto add = [&](const std::string& msg) { violations.push_back(msg); };

    if (static_cast<int>(layout.cells.size()) != layout.n_clusters ||
        static_cast<int>(layout.cluster_sequence.size()) != layout.n_clusters) {
        add("cluster count inconsistent with grid dimensions");
        return violations;
    }

    int observed_max_exposure = 0;
    for (int c = 0; c < layout.n_clusters; ++c) {
        if (static_cast<int>(layout.cells[c].size()) != layout.n_periods) {
            add("period count inconsistent with grid dimensions");
            return violations;
        }
        int prev_exposure = -1;
        bool seen_treated = false;
        for (int p = 0; p < layout.n_periods; ++p) {
            const Cell& cell = layout.cells[c][p];
            if (!cell.observed) {
                if (cell.exposure != 0 || cell.cell_size != 0) {
                    add("unobserved cell carries exposure or cell size");
                }
                continue;
            }
            if (cell.cell_size < 1) add("observed cell has cell_size < 1");
            if (cell.exposure < 0) add("negative exposure");
            if (cell.exposure > observed_max_exposure)
                observed_max_exposure = cell.exposure;
            if (cell.exposure >= 1) {
                seen_treated = true;
            } else if (seen_treated) {
                add("exposure returns to control after crossover");
            }
            if (prev_exposure >= 1 && cell.exposure != prev_exposure + 1) {
                add("exposure not incremented by 1");
            }
            if (prev_exposure == 0 && cell.exposure > 1) {
                add("exposure not incremented by 1");
            }
            prev_exposure = cell.exposure;
        }
    }
    if (observed_max_exposure != layout.max_exposure) {
        add("max_exposure does not match largest observed exposure");
    }

    if (layout.spec.staircase) {
        const int r0 = layout.spec.staircase->r0;
        const int r1 = layout.spec.staircase->r1;
        for (int c = 0; c < layout.n_clusters; ++c) {
            const int seq = layout.cluster_sequence[c];
            const int first = seq;
            const int last = seq + r0 + r1 - 1;
            int n_control = 0, n_treated = 0;
            for (int p = 0; p < layout.n_periods; ++p) {
                const Cell& cell = layout.cells[c][p];
                if (!cell.observed) continue;
                if (p < first || p > last) {
                    add("cell observed outside staircase window");
                    continue;
                }
                if (cell.exposure >= 1) ++n_treated; else ++n_control;
            }
            if (n_control != r0) add("staircase sequence does not observe R0 control periods");
            if (n_treated != r1) add("staircase sequence does not observe R1 treatment periods");
        }
    } else {
        for (int c = 0; c < layout.n_clusters; ++c)
            for (int p = 0; p < layout.n_periods; ++p)
                if (!layout.cells[c][p].observed) {
                    add("standard design has unobserved cell");
                }
    }

    // Each calendar period must be observed somewhere, otherwise categorical
    // time effects cannot be estimated at all.
    for (int p = 0; p < layout.n_periods; ++p) {
        bool any = false;
        for (int c = 0; c < layout.n_clusters && !any; ++c)
            any = layout.cells[c][p].observed;
        if (!any) add("calendar period observed by no cluster");
    }

    return violations;
}

}  // namespace swpower::design
