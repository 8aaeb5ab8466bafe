#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "swpower/cli.hpp"
#include "swpower/design.hpp"
#include "swpower/estimand.hpp"
#include "swpower/io.hpp"
#include "swpower/search.hpp"
#include "swpower/simulate.hpp"

using namespace swpower;
using nlohmann::json;

namespace {

cli::RunConfig base_config() {
    cli::RunConfig cfg;
    cfg.design.n_sequences = 4;
    cfg.design.clusters_per_sequence = 2;
    cfg.design.individuals_per_cell = 5;
    cfg.model = "eti";
    cfg.estimand = "TATE(0,4)";
    cfg.icc = 0.05;
    cfg.cac = 0.75;
    cfg.effect = 0.25;
    return cfg;
}

json results_of(const cli::RunOutput& out) {
    return json::parse(out.report).at("results");
}

}  // namespace

TEST_CASE("power command reproduces the library result and echoes inputs") {
    auto cfg = base_config();
    cfg.command = "power";
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    const json report = json::parse(out.report);
    CHECK(report.at("version") == cli::kVersion);
    CHECK(report.at("inputs").at("estimand") == "TATE(0,4)");
    CHECK(report.at("inputs").at("icc") == 0.05);

    search::PowerQuery q;
    q.design = cfg.design;
    q.model = model::ModelSpec::eti();
    q.estimand = estimand::parse(cfg.estimand);
    q.correlation = {cfg.icc, cfg.cac, cfg.sigma2};
    q.effect_value = cfg.effect;
    const auto lib = search::evaluate_power(q);
    CHECK(report.at("results").at("power").get<double>() ==
          doctest::Approx(lib.power).epsilon(1e-15));
}

TEST_CASE("samplesize reports are byte-identical across runs") {
    auto cfg = base_config();
    cfg.command = "samplesize";
    cfg.axis = "individuals";
    cfg.target_power = 0.9;
    const auto a = cli::run(cfg);
    const auto b = cli::run(cfg);
    CHECK(a.exit_code == b.exit_code);
    CHECK(a.report == b.report);
}

TEST_CASE("infeasible samplesize exits 3 but still reports") {
    auto cfg = base_config();
    cfg.command = "samplesize";
    cfg.estimand = "TATE(2,4)";
    cfg.icc = 0.1;
    cfg.cac = 0.5;
    cfg.effect = 0.15;
    cfg.target_power = 0.95;
    const auto out = cli::run(cfg);
    CHECK(out.exit_code == 3);
    const json results = results_of(out);
    CHECK(results.at("status") == "infeasible");
    CHECK(results.at("limiting_power").get<double>() < 0.95);
}

TEST_CASE("validation failures exit 2 and name the field") {
    auto cfg = base_config();
    cfg.command = "power";
    cfg.estimand = "MEDIAN(2)";
    const auto out = cli::run(cfg);
    CHECK(out.exit_code == 2);
    CHECK(json::parse(out.report).at("error").get<std::string>().find("estimand") !=
          std::string::npos);

    cfg = base_config();
    cfg.command = "simulate";
    cfg.method = "bogus";
    const auto out2 = cli::run(cfg);
    CHECK(out2.exit_code == 2);
    CHECK(json::parse(out2.report).at("error").get<std::string>().find("method") !=
          std::string::npos);
}

TEST_CASE("unwritable output path exits 4") {
    auto cfg = base_config();
    cfg.command = "power";
    cfg.out_path = "/nonexistent-dir/report.json";
    const auto out = cli::run(cfg);
    CHECK(out.exit_code == 4);
}

TEST_CASE("simulate command equals the library mc_power call") {
    auto cfg = base_config();
    cfg.command = "simulate";
    cfg.reps = 200;
    cfg.seed = 99;
    cfg.method = "known";
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);

    simulate::SimScenario sc;
    sc.layout = design::build(cfg.design);
    sc.curve = simulate::EffectCurve::immediate(cfg.effect);
    sc.trend = simulate::CalendarTrend::linear(0.0, 1.0);
    sc.vc = gls::vc_from_icc_cac({cfg.icc, cfg.cac, cfg.sigma2});
    sc.reps = cfg.reps;
    sc.seed = cfg.seed;
    const auto lib = simulate::mc_power(sc, model::ModelSpec::eti(),
                                        estimand::parse(cfg.estimand),
                                        simulate::FitMethod::known(sc.vc));
    CHECK(results_of(out).at("power").get<double>() == doctest::Approx(lib.power));
    CHECK(results_of(out).at("reps_used").get<int>() == lib.reps_used);
}

TEST_CASE("design command emits the layout CSV") {
    auto cfg = base_config();
    cfg.command = "design";
    cfg.format = "csv";
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    CHECK(out.report.rfind("cluster,sequence,period,observed,treatment,exposure,cell_size",
                           0) == 0);
    // 8 clusters x 5 periods data lines + header.
    int lines = 0;
    for (char c : out.report)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 8 * 5);
}

TEST_CASE("sweep produces sorted tidy rows") {
    auto cfg = base_config();
    cfg.command = "sweep";
    cfg.quantity = "power";
    cfg.grid = {{"icc", {"0.1", "0.01", "0.05"}}, {"estimand", {"TATE(0,4)", "PTE(1)"}}};
    cfg.jobs = 2;
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    std::istringstream is(out.report);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#') rows.push_back(line);
    REQUIRE(rows.size() == 1 + 6);
    CHECK(rows[0] == "icc,estimand,value");
    CHECK(rows[1].rfind("0.01,PTE(1),", 0) == 0);
    CHECK(rows[2].rfind("0.01,TATE(0,4),", 0) == 0);
    CHECK(rows[3].rfind("0.05,PTE(1),", 0) == 0);
    CHECK(rows[6].rfind("0.1,TATE(0,4),", 0) == 0);
    // Deterministic under a different worker count.
    cfg.jobs = 1;
    CHECK(cli::run(cfg).report == out.report);
}

TEST_CASE("sweep marks out-of-design grid points NA instead of failing") {
    cli::RunConfig cfg = base_config();
    cfg.command = "sweep";
    cfg.quantity = "individuals";
    cfg.target_power = 0.9;
    cfg.grid = {{"sequences", {"4", "8"}}, {"estimand", {"TATE(0,8)"}}};
    cfg.jobs = 2;
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    CHECK(out.report.find("4,TATE(0,8),NA\n") != std::string::npos);
    CHECK(out.report.find("8,TATE(0,8),") != std::string::npos);

    cfg.quantity = "nonsense";
    CHECK(cli::run(cfg).exit_code == 2);
}

TEST_CASE("sweep with an empty axis is header-only") {
    auto cfg = base_config();
    cfg.command = "sweep";
    cfg.grid = {{"icc", {}}};
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    std::istringstream is(out.report);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#') rows.push_back(line);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0] == "icc,value");
}

TEST_CASE("sweep refuses oversized grids") {
    auto cfg = base_config();
    cfg.command = "sweep";
    std::vector<std::string> big;
    for (int i = 0; i < 400; ++i) big.push_back(std::to_string(i));
    cfg.grid = {{"extra_start", big}, {"extra_end", big}};
    const auto out = cli::run(cfg);
    CHECK(out.exit_code == 2);
}

TEST_CASE("calibrated scenario through the CLI reproduces the start-period gain") {
    search::PowerQuery q;
    q.design.n_sequences = 6;
    q.design.clusters_per_sequence = 4;
    q.design.individuals_per_cell = 50;
    q.model = model::ModelSpec::eti();
    q.estimand = estimand::parse("TATE(0,6)");
    q.correlation = {0.05, 1.0, 1.0};
    q.alpha = 0.10;
    const double effect = search::calibrate_effect(q, 0.70);

    cli::RunConfig cfg;
    cfg.command = "power";
    cfg.design = q.design;
    cfg.design.extra_start_periods = 1;
    cfg.model = "eti";
    cfg.estimand = "TATE(0,6)";
    cfg.icc = 0.05;
    cfg.cac = 1.0;
    cfg.alpha = 0.10;
    cfg.effect = effect;
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    CHECK(results_of(out).at("power").get<double>() == doctest::Approx(0.78).epsilon(0.03));
}

TEST_CASE("DCT reports flag estimands that straddle the washout") {
    auto cfg = base_config();
    cfg.command = "power";
    cfg.model = "dct:2";
    cfg.estimand = "TATE(0,4)";
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);
    CHECK(results_of(out).contains("notes"));
    cfg.estimand = "TATE(2,4)";
    CHECK_FALSE(results_of(cli::run(cfg)).contains("notes"));
}

TEST_CASE("sweep values agree with the samplesize command") {
    cli::RunConfig cfg;
    cfg.command = "sweep";
    cfg.design.n_sequences = 8;
    cfg.design.clusters_per_sequence = 9;
    cfg.design.individuals_per_cell = 1;
    cfg.model = "eti";
    cfg.icc = 0.05;
    cfg.cac = 0.75;
    cfg.effect = 0.2;
    cfg.target_power = 0.9;
    cfg.quantity = "individuals";
    cfg.grid = {{"estimand", {"TATE(0,8)", "PTE(1)"}}};
    const auto out = cli::run(cfg);
    REQUIRE(out.exit_code == 0);

    auto row_value = [&](const std::string& prefix) -> std::string {
        std::istringstream is(out.report);
        std::string line;
        while (std::getline(is, line)) {
            if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
        }
        return "";
    };
    cli::RunConfig single = cfg;
    single.command = "samplesize";
    single.axis = "individuals";
    single.estimand = "TATE(0,8)";
    const auto direct = cli::run(single);
    REQUIRE(direct.exit_code == 0);
    const int n = results_of(direct).at("n").get<int>();
    CHECK(row_value("TATE(0,8),") == std::to_string(n));
    CHECK(n >= 8);
    CHECK(n <= 12);
    const std::string pte1 = row_value("PTE(1),");
    REQUIRE_FALSE(pte1.empty());
    CHECK(std::stoi(pte1) >= 5);
    CHECK(std::stoi(pte1) <= 8);
}

TEST_CASE("floats are formatted with 12 significant digits and a point") {
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(1.0 / 3.0) == "0.333333333333");
    CHECK(io::format_double(12345.678901234) == "12345.6789012");
    CHECK(io::format_double(-2.5e-07) == "-2.5e-07");
}

TEST_CASE("matrix export has the labels as header") {
    design::DesignSpec spec;
    spec.n_sequences = 2;
    const auto layout = design::build(spec);
    const auto X = model::build_X(layout, model::ModelSpec::eti());
    const auto csv = io::matrix_csv(X);
    CHECK(csv.rfind("intercept,t2,t3,delta1,delta2\n", 0) == 0);
    int lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 6);
}

TEST_CASE("design specs round-trip through JSON") {
    design::DesignSpec spec;
    spec.n_sequences = 6;
    spec.clusters_per_sequence = 4;
    spec.individuals_per_cell = 5;
    spec.extra_start_periods = 1;
    spec.baseline_multiplier = 2.0;
    const auto j = io::design_to_json(spec);
    const auto back = io::design_from_json(j);
    CHECK(back.n_sequences == 6);
    CHECK(back.extra_start_periods == 1);
    CHECK(back.baseline_multiplier == 2.0);
    CHECK_FALSE(back.staircase.has_value());

    spec.extra_start_periods = 0;
    spec.staircase = design::StaircaseSpec{2, 3};
    const auto j2 = io::design_to_json(spec);
    const auto back2 = io::design_from_json(j2);
    REQUIRE(back2.staircase.has_value());
    CHECK(back2.staircase->r0 == 2);
    CHECK(back2.staircase->r1 == 3);
}

TEST_CASE("dataset CSV round trip") {
    simulate::SimScenario sc;
    design::DesignSpec spec;
    spec.n_sequences = 3;
    spec.clusters_per_sequence = 1;
    spec.individuals_per_cell = 2;
    sc.layout = design::build(spec);
    sc.curve = simulate::EffectCurve::immediate(0.2);
    sc.vc = {0.1, 0.05, 1.0};
    sc.seed = 5;
    const auto data = simulate::generate(sc, 0);
    const auto text = io::dataset_csv(data);
    const auto back = io::dataset_from_csv(text);
    REQUIRE(back.rows.size() == data.rows.size());
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        CHECK(back.rows[i].cluster == data.rows[i].cluster);
        CHECK(back.rows[i].period == data.rows[i].period);
        CHECK(back.rows[i].exposure == data.rows[i].exposure);
        CHECK(back.rows[i].outcome ==
              doctest::Approx(data.rows[i].outcome).epsilon(1e-11));
    }
}

#ifdef SWPOWER_BIN_PATH
TEST_CASE("the installed binary agrees with the library") {
    const std::string tmp = "cli_test_report.json";
    const std::string cmd = std::string(SWPOWER_BIN_PATH) +
                            " power --sequences 4 --clusters-per-sequence 2"
                            " --individuals 5 --model eti --estimand 'TATE(0,4)'"
                            " --icc 0.05 --cac 0.75 --effect 0.25 --out " +
                            tmp + " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    std::ifstream in(tmp);
    REQUIRE(in.good());
    json report;
    in >> report;
    std::remove(tmp.c_str());

    auto cfg = base_config();
    cfg.command = "power";
    const auto lib = cli::run(cfg);
    CHECK(report.at("results").at("power").get<double>() ==
          json::parse(lib.report).at("results").at("power").get<double>());
}

TEST_CASE("design JSON files are accepted via --design") {
    const std::string spec_path = "cli_design_spec.json";
    {
        std::ofstream out(spec_path);
        out << R"({"sequences": 3, "clusters_per_sequence": 2, "individuals_per_cell": 4,
                   "extra_start": 0, "extra_end": 0, "baseline_multiplier": 1.0,
                   "staircase": {"r0": 1, "r1": 2}})";
    }
    const std::string from_file = "cli_design_file.csv";
    REQUIRE(std::system((std::string(SWPOWER_BIN_PATH) + " design --design " + spec_path +
                         " --format csv --out " + from_file + " > /dev/null")
                            .c_str()) == 0);
    const std::string from_flags = "cli_design_flags.csv";
    REQUIRE(std::system((std::string(SWPOWER_BIN_PATH) +
                         " design --sequences 3 --clusters-per-sequence 2 --individuals 4"
                         " --staircase-r0 1 --staircase-r1 2 --format csv --out " +
                         from_flags + " > /dev/null")
                            .c_str()) == 0);
    std::ifstream a(from_file), b(from_flags);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    std::remove(spec_path.c_str());
    std::remove(from_file.c_str());
    std::remove(from_flags.c_str());
    REQUIRE_FALSE(sa.str().empty());
    CHECK(sa.str() == sb.str());
}

TEST_CASE("SWPOWER_SEED is the seed fallback") {
    const std::string args =
        " simulate --sequences 3 --clusters-per-sequence 2 --individuals 4"
        " --model it --estimand 'TATE(0,3)' --icc 0.05 --cac 0.75"
        " --effect 0.3 --reps 150 --method known --out ";
    const std::string via_env = "cli_seed_env.json";
    const std::string via_flag = "cli_seed_flag.json";
    REQUIRE(std::system(("SWPOWER_SEED=4242 " + std::string(SWPOWER_BIN_PATH) + args +
                         via_env + " > /dev/null")
                            .c_str()) == 0);
    REQUIRE(std::system((std::string(SWPOWER_BIN_PATH) + args + via_flag +
                         " --seed 4242 > /dev/null")
                            .c_str()) == 0);
    std::ifstream env_in(via_env), flag_in(via_flag);
    json env_report, flag_report;
    env_in >> env_report;
    flag_in >> flag_report;
    std::remove(via_env.c_str());
    std::remove(via_flag.c_str());
    CHECK(env_report.at("inputs").at("seed") == 4242);
    CHECK(env_report.at("results") == flag_report.at("results"));
}
#endif
