#pragma once

#include <optional>
#include <string>
#include <vector>

namespace swpower::design {

struct StaircaseSpec {
    int r0 = 1;  // control periods observed per sequence
    int r1 = 1;  // treatment periods observed per sequence
};

struct DesignSpec {
    int n_sequences = 1;
    int clusters_per_sequence = 1;
    int individuals_per_cell = 1;
    int extra_start_periods = 0;
    int extra_end_periods = 0;
    double baseline_multiplier = 1.0;  // scales cell size in period 1 only
    std::optional<StaircaseSpec> staircase;

    // Throws std::invalid_argument naming the offending field.
    void check() const;
};

struct Cell {
    bool observed = false;
    int exposure = 0;   // periods since crossover; 0 while in control
    int cell_size = 0;  // individuals sampled in this cluster-period
};

// Cluster-by-period grid of treatment status, exposure times and cell sizes.
// Cluster and period indices are 0-based internally; exports are 1-based.
struct DesignLayout {
    DesignSpec spec;
    int n_clusters = 0;
    int n_periods = 0;
    int max_exposure = 0;
    std::vector<int> cluster_sequence;       // cluster -> sequence index
    std::vector<std::vector<Cell>> cells;    // [cluster][period]

    bool observed(int cluster, int period) const { return cells[cluster][period].observed; }
    int exposure(int cluster, int period) const { return cells[cluster][period].exposure; }
    bool treated(int cluster, int period) const { return cells[cluster][period].exposure >= 1; }
    int cell_size(int cluster, int period) const { return cells[cluster][period].cell_size; }

    int observed_cell_count() const;
};

// Standard stepped wedge: sequence q crosses over at period
// 2 + extra_start_periods + q (0-based q), all cells observed.
DesignLayout build_standard(const DesignSpec& spec);

// Staircase SC(S, K, R0, R1): sequence q observes only its last R0 control
// periods and first R1 treatment periods, a contiguous diagonal band.
DesignLayout build_staircase(const DesignSpec& spec);

// Dispatch on spec.staircase.
DesignLayout build(const DesignSpec& spec);

// Structural invariant checks. Returns human-readable violations; empty
// means the layout is internally consistent.
std::vector<std::string> validate(const DesignLayout& layout);

}  // namespace swpower::design
