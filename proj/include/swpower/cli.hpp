#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swpower/design.hpp"

namespace swpower::cli {

struct GridAxis {
    std::string name;                 // icc|cac|sequences|estimand|extra_start|extra_end|staircase_r
    std::vector<std::string> values;
};

struct RunConfig {
    std::string command;              // design|power|samplesize|ssr|simulate|sweep
    design::DesignSpec design;
    std::string model = "it";         // it|eti|dct:W|ncs:D|it-drop:W
    std::string time = "cat";         // cat|lin
    std::string estimand;             // "TATE(a,b)" | "PTE(s)"
    double icc = 0.0;
    double cac = 1.0;
    double sigma2 = 1.0;
    double effect = 0.0;
    std::string curve;                // immediate:D | jump-linear:A,B | washout:W:R1,..,RW:D | tabulated:V1,..,VS
    std::string trend = "linear:0,1";
    double target_power = 0.9;
    double alpha = 0.05;
    int reps = 1000;
    std::uint64_t seed = 0;
    std::string method = "known";     // known|reml
    std::string axis = "individuals"; // individuals|clusters
    std::string quantity = "power";   // sweep: power|individuals|clusters|ssr-individuals|ssr-clusters
    std::vector<GridAxis> grid;
    int jobs = 1;
    std::string format = "json";      // json|csv
    std::string out_path;
};

// Exit codes: 0 success, 2 validation error, 3 infeasible sample size
// (report still produced), 4 I/O failure.
struct RunOutput {
    int exit_code = 0;
    std::string report;
};

// Execute one command. Never throws; failures are encoded in the exit code
// and a diagnostic report.
RunOutput run(const RunConfig& config);

inline constexpr const char* kVersion = "swpower 1.0.0";

}  // namespace swpower::cli
