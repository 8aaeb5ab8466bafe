#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "swpower/cli.hpp"
#include "swpower/io.hpp"

namespace {

using swpower::cli::GridAxis;
using swpower::cli::RunConfig;

void add_common_options(CLI::App* cmd, RunConfig& cfg, std::string& design_file,
                        bool& seed_given) {
    cmd->add_option("--design", design_file, "design spec JSON file");
    cmd->add_option("--sequences", cfg.design.n_sequences, "number of sequences");
    cmd->add_option("--clusters-per-sequence", cfg.design.clusters_per_sequence,
                    "clusters per sequence");
    cmd->add_option("--individuals", cfg.design.individuals_per_cell,
                    "individuals per cluster-period");
    cmd->add_option("--extra-start", cfg.design.extra_start_periods,
                    "extra periods added to the start");
    cmd->add_option("--extra-end", cfg.design.extra_end_periods,
                    "extra periods added to the end");
    cmd->add_option("--baseline-multiplier", cfg.design.baseline_multiplier,
                    "cell-size multiplier for period 1");
    auto* r0 = cmd->add_option_function<int>(
        "--staircase-r0",
        [&cfg](const int& v) {
            if (!cfg.design.staircase) cfg.design.staircase = swpower::design::StaircaseSpec{};
            cfg.design.staircase->r0 = v;
        },
        "staircase control periods per sequence");
    auto* r1 = cmd->add_option_function<int>(
        "--staircase-r1",
        [&cfg](const int& v) {
            if (!cfg.design.staircase) cfg.design.staircase = swpower::design::StaircaseSpec{};
            cfg.design.staircase->r1 = v;
        },
        "staircase treatment periods per sequence");
    r0->needs(r1);
    r1->needs(r0);

    cmd->add_option("--model", cfg.model, "it|eti|dct:w|ncs:d|it-drop:w");
    cmd->add_option("--time", cfg.time, "cat|lin");
    cmd->add_option("--estimand", cfg.estimand, "TATE(a,b) or PTE(s)");
    cmd->add_option("--icc", cfg.icc, "intraclass correlation");
    cmd->add_option("--cac", cfg.cac, "cluster autocorrelation");
    cmd->add_option("--sigma2", cfg.sigma2, "residual variance");
    cmd->add_option("--effect", cfg.effect, "treatment effect value");
    cmd->add_option("--curve", cfg.curve,
                    "immediate:D | jump-linear:A,B | washout:W:R1,..:D | tabulated:V1,..");
    cmd->add_option("--trend", cfg.trend, "linear:FROM,TO | tabulated:V1,..");
    cmd->add_option("--target-power", cfg.target_power, "target power");
    cmd->add_option("--alpha", cfg.alpha, "two-sided significance level");
    cmd->add_option("--reps", cfg.reps, "simulation replications");
    cmd->add_option_function<std::uint64_t>(
           "--seed", [&cfg, &seed_given](const std::uint64_t& v) {
               cfg.seed = v;
               seed_given = true;
           },
           "random seed (falls back to SWPOWER_SEED)");
    cmd->add_option("--method", cfg.method, "known|reml");
    cmd->add_option("--axis", cfg.axis, "individuals|clusters");
    cmd->add_option("--quantity", cfg.quantity,
                    "sweep quantity: power|individuals|clusters|ssr-individuals|ssr-clusters");
    cmd->add_option("--jobs", cfg.jobs, "parallel workers");
    cmd->add_option("--format", cfg.format, "json|csv");
    cmd->add_option("--out", cfg.out_path, "output file path");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stepped wedge trial power and sample size engine"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string design_file;
    bool seed_given = false;
    std::vector<std::string> grid_specs;

    for (const char* name : {"design", "power", "samplesize", "ssr", "simulate", "sweep"}) {
        auto* cmd = app.add_subcommand(name);
        add_common_options(cmd, cfg, design_file, seed_given);
        if (std::string(name) == "sweep") {
            cmd->add_option("--grid", grid_specs,
                            "axis=v1;v2;... (repeatable; axes: icc, cac, sequences, "
                            "estimand, extra_start, extra_end, staircase_r)");
        }
        cmd->callback([&cfg, name] { cfg.command = name; });
    }

    CLI11_PARSE(app, argc, argv);

    if (!design_file.empty()) {
        std::ifstream in(design_file);
        if (!in) {
            std::fprintf(stderr, "cannot read design file: %s\n", design_file.c_str());
            return 4;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        try {
            cfg.design = swpower::io::design_from_json(nlohmann::json::parse(buf.str()));
        } catch (const std::exception& e) {
            std::fprintf(stderr, "design: %s\n", e.what());
            return 2;
        }
    }

    if (!seed_given) {
        if (const char* env = std::getenv("SWPOWER_SEED")) {
            cfg.seed = std::strtoull(env, nullptr, 10);
        }
    }

    for (const auto& spec : grid_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "grid: expected axis=v1;v2;..., got '%s'\n", spec.c_str());
            return 2;
        }
        GridAxis axis;
        axis.name = spec.substr(0, eq);
        std::string values = spec.substr(eq + 1);
        // ';' separates values (estimands contain commas); ',' also accepted
        // for purely numeric axes.
        const char sep = values.find(';') != std::string::npos ? ';' : ',';
        std::istringstream vs(values);
        std::string tok;
        while (std::getline(vs, tok, sep))
            if (!tok.empty()) axis.values.push_back(tok);
        cfg.grid.push_back(std::move(axis));
    }

    const swpower::cli::RunOutput out = swpower::cli::run(cfg);
    std::fputs(out.report.c_str(), stdout);
    return out.exit_code;
}
