#pragma once

#include <cstdint>

namespace swpower::stats {

// Standard normal CDF.
double normal_cdf(double x);

// Standard normal quantile (Wichura's AS 241, double precision).
// Requires 0 < p < 1.
double normal_quantile(double p);

// Two-sided critical value z_{1-alpha/2}.
double z_two_sided(double alpha);

// Counter-based normal stream keyed by (seed, rep, cluster). Streams with
// distinct keys are independent; a stream's output depends only on its key
// and draw index, so replications can run in any order (or in parallel)
// and still reproduce bit-identical results.
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t rep, std::uint64_t cluster);

    // Uniform in the open interval (0, 1).
    double next_u01();

    // Standard normal via inverse-CDF of next_u01().
    double next_normal();

private:
    std::uint64_t state_;
};

}  // namespace swpower::stats
