#include "swpower/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "swpower/estimand.hpp"
#include "swpower/io.hpp"
#include "swpower/model.hpp"
#include "swpower/search.hpp"
#include "swpower/simulate.hpp"

namespace swpower::cli {

namespace {

using nlohmann::json;

struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream is(s);
    while (std::getline(is, tok, sep)) out.push_back(tok);
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

double parse_number(const std::string& s, const std::string& field) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw validation_error(field + ": cannot parse number '" + s + "'");
    }
}

model::ModelSpec parse_model(const std::string& model, const std::string& time) {
    model::TimeTrend trend;
    if (time == "cat") trend = model::TimeTrend::Categorical;
    else if (time == "lin") trend = model::TimeTrend::Linear;
    else throw validation_error("time: expected cat|lin, got '" + time + "'");

    const auto colon = model.find(':');
    const std::string head = model.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : model.substr(colon + 1);
    auto int_arg = [&](const char* what) {
        if (arg.empty())
            throw validation_error(std::string("model: ") + head + " requires :" + what);
        return static_cast<int>(parse_number(arg, "model"));
    };
    if (head == "it") return model::ModelSpec::it(trend);
    if (head == "eti") return model::ModelSpec::eti(trend);
    if (head == "dct") return model::ModelSpec::dct(int_arg("w"), trend);
    if (head == "ncs") return model::ModelSpec::ncs(int_arg("d"), trend);
    if (head == "it-drop") return model::ModelSpec::it_drop_washout(int_arg("w"), trend);
    throw validation_error("model: expected it|eti|dct:w|ncs:d|it-drop:w, got '" + model + "'");
}

simulate::EffectCurve parse_curve(const std::string& text, double fallback_effect) {
    if (text.empty()) return simulate::EffectCurve::immediate(fallback_effect);
    const auto parts = split(text, ':');
    const std::string& head = parts[0];
    auto nums = [&](const std::string& s) {
        std::vector<double> vals;
        for (const auto& tok : split(s, ','))
            vals.push_back(parse_number(tok, "curve"));
        return vals;
    };
    if (head == "immediate") {
        if (parts.size() != 2) throw validation_error("curve: immediate:DELTA");
        return simulate::EffectCurve::immediate(parse_number(parts[1], "curve"));
    }
    if (head == "jump-linear") {
        if (parts.size() != 2) throw validation_error("curve: jump-linear:START,END");
        const auto v = nums(parts[1]);
        if (v.size() != 2) throw validation_error("curve: jump-linear needs two values");
        return simulate::EffectCurve::jump_linear(v[0], v[1]);
    }
    if (head == "washout") {
        if (parts.size() != 4) throw validation_error("curve: washout:W:R1,..,RW:DELTA");
        const int w = static_cast<int>(parse_number(parts[1], "curve"));
        return simulate::EffectCurve::washout_constant(w, nums(parts[2]),
                                                       parse_number(parts[3], "curve"));
    }
    if (head == "tabulated") {
        if (parts.size() != 2) throw validation_error("curve: tabulated:V1,..,VS");
        return simulate::EffectCurve::tabulated(nums(parts[1]));
    }
    throw validation_error("curve: unknown kind '" + head + "'");
}

simulate::CalendarTrend parse_trend(const std::string& text) {
    if (text.empty()) return simulate::CalendarTrend::linear(0.0, 1.0);
    const auto parts = split(text, ':');
    if (parts[0] == "linear") {
        if (parts.size() != 2) throw validation_error("trend: linear:FROM,TO");
        const auto v = split(parts[1], ',');
        if (v.size() != 2) throw validation_error("trend: linear needs two values");
        return simulate::CalendarTrend::linear(parse_number(v[0], "trend"),
                                               parse_number(v[1], "trend"));
    }
    if (parts[0] == "tabulated") {
        if (parts.size() != 2) throw validation_error("trend: tabulated:V1,..,VJ");
        std::vector<double> vals;
        for (const auto& tok : split(parts[1], ','))
            vals.push_back(parse_number(tok, "trend"));
        return simulate::CalendarTrend::tabulated(vals);
    }
    throw validation_error("trend: unknown kind '" + parts[0] + "'");
}

gls::CorrelationSpec correlation_of(const RunConfig& cfg) {
    return {cfg.icc, cfg.cac, cfg.sigma2};
}

json inputs_json(const RunConfig& cfg) {
    json j{
        {"command", cfg.command},
        {"design", io::design_to_json(cfg.design)},
        {"model", cfg.model},
        {"time", cfg.time},
        {"estimand", cfg.estimand},
        {"icc", cfg.icc},
        {"cac", cfg.cac},
        {"sigma2", cfg.sigma2},
        {"effect", cfg.effect},
        {"curve", cfg.curve},
        {"trend", cfg.trend},
        {"target_power", cfg.target_power},
        {"alpha", cfg.alpha},
        {"reps", cfg.reps},
        {"seed", cfg.seed},
        {"method", cfg.method},
        {"axis", cfg.axis},
        {"format", cfg.format},
    };
    return j;
}

RunOutput report_json(const RunConfig& cfg, json results, int exit_code = 0) {
    json j{{"version", kVersion}, {"inputs", inputs_json(cfg)}, {"results", std::move(results)}};
    return {exit_code, j.dump(2) + "\n"};
}

// Resolve the effect value: an explicit curve wins over the scalar effect.
double resolve_effect(const RunConfig& cfg, const estimand::Estimand& e, int max_exposure) {
    if (!cfg.curve.empty()) {
        return simulate::estimand_value(parse_curve(cfg.curve, cfg.effect), e, max_exposure);
    }
    return cfg.effect;
}

search::PowerQuery query_of(const RunConfig& cfg) {
    search::PowerQuery q;
    q.design = cfg.design;
    q.model = parse_model(cfg.model, cfg.time);
    q.estimand = estimand::parse(cfg.estimand);
    q.correlation = correlation_of(cfg);
    q.alpha = cfg.alpha;
    const design::DesignLayout layout = design::build(cfg.design);
    q.effect_value = resolve_effect(cfg, q.estimand, layout.max_exposure);
    return q;
}

// DCT contrasts that span the washout boundary mix per-exposure and constant
// columns by a proportional-weight rule; surface that in the report.
void add_notes(json& results, const search::PowerQuery& q) {
    if (q.model.effect != model::EffectStructure::DCT) return;
    if (q.estimand.kind != estimand::Kind::TATE) return;
    if (q.estimand.s1 < q.model.washout && q.estimand.s2 > q.model.washout) {
        results["notes"] = json::array(
            {"estimand straddles the DCT washout boundary; contrast weights the "
             "constant effect by the share of exposures beyond the washout"});
    }
}

RunOutput run_design(const RunConfig& cfg) {
    const design::DesignLayout layout = design::build(cfg.design);
    const auto violations = design::validate(layout);
    if (cfg.format == "csv") {
        return {0, io::layout_csv(layout)};
    }
    json cells = json::array();
    for (int c = 0; c < layout.n_clusters; ++c) {
        for (int p = 0; p < layout.n_periods; ++p) {
            const auto& cell = layout.cells[c][p];
            if (!cell.observed) continue;
            cells.push_back({{"cluster", c + 1},
                             {"sequence", layout.cluster_sequence[c] + 1},
                             {"period", p + 1},
                             {"treatment", cell.exposure >= 1 ? 1 : 0},
                             {"exposure", cell.exposure},
                             {"cell_size", cell.cell_size}});
        }
    }
    return report_json(cfg, {{"n_clusters", layout.n_clusters},
                             {"n_periods", layout.n_periods},
                             {"max_exposure", layout.max_exposure},
                             {"violations", violations},
                             {"cells", std::move(cells)}});
}

RunOutput run_power(const RunConfig& cfg) {
    const search::PowerQuery q = query_of(cfg);
    const gls::PowerResult r = search::evaluate_power(q);
    json results{{"power", r.power},
                 {"standard_error", r.standard_error},
                 {"effect_value", r.effect_value},
                 {"alpha", r.alpha}};
    add_notes(results, q);
    return report_json(cfg, std::move(results));
}

RunOutput run_samplesize(const RunConfig& cfg) {
    search::SearchProblem problem;
    problem.query = query_of(cfg);
    problem.target_power = cfg.target_power;
    if (cfg.axis == "individuals")
        problem.free_variable = search::FreeVariable::Individuals;
    else if (cfg.axis == "clusters")
        problem.free_variable = search::FreeVariable::Clusters;
    else
        throw validation_error("axis: expected individuals|clusters, got '" + cfg.axis + "'");

    const search::SearchResult r = (problem.free_variable == search::FreeVariable::Individuals)
                                       ? search::required_individuals(problem)
                                       : search::required_clusters(problem);
    json results;
    int exit_code = 0;
    if (r.solved) {
        results = {{"status", "solved"},
                   {"n", r.n},
                   {"achieved_power", r.achieved_power},
                   {"target_power", cfg.target_power}};
    } else {
        results = {{"status", "infeasible"},
                   {"limiting_power", r.limiting_power},
                   {"target_power", cfg.target_power}};
        exit_code = 3;
    }
    add_notes(results, problem.query);
    return report_json(cfg, std::move(results), exit_code);
}

RunOutput run_ssr(const RunConfig& cfg) {
    search::SearchProblem base;
    base.query = query_of(cfg);
    base.target_power = cfg.target_power;

    search::SearchProblem p_it = base;
    p_it.query.model = parse_model("it", cfg.time);
    search::SearchProblem p_eti = base;
    p_eti.query.model = parse_model("eti", cfg.time);

    if (cfg.axis != "clusters" && cfg.axis != "individuals")
        throw validation_error("axis: expected individuals|clusters, got '" + cfg.axis + "'");
    const auto axis = (cfg.axis == "clusters") ? search::FreeVariable::Clusters
                                               : search::FreeVariable::Individuals;

    const auto ratio = search::ssr(p_it, p_eti, axis);
    if (ratio) {
        return report_json(cfg, {{"status", "solved"}, {"ssr", *ratio}});
    }
    return report_json(cfg, {{"status", "eti_infeasible"}}, 3);
}

RunOutput run_simulate(const RunConfig& cfg) {
    simulate::SimScenario scenario;
    scenario.layout = design::build(cfg.design);
    scenario.curve = parse_curve(cfg.curve, cfg.effect);
    scenario.trend = parse_trend(cfg.trend);
    scenario.vc = gls::vc_from_icc_cac(correlation_of(cfg));
    scenario.reps = cfg.reps;
    scenario.seed = cfg.seed;
    scenario.alpha = cfg.alpha;

    const model::ModelSpec m = parse_model(cfg.model, cfg.time);
    const estimand::Estimand e = estimand::parse(cfg.estimand);
    simulate::FitMethod method;
    if (cfg.method == "known")
        method = simulate::FitMethod::known(scenario.vc);
    else if (cfg.method == "reml")
        method = simulate::FitMethod::reml();
    else
        throw validation_error("method: expected known|reml, got '" + cfg.method + "'");

    const simulate::McPowerResult r =
        simulate::mc_power(scenario, m, e, method, std::max(1, cfg.jobs));
    return report_json(cfg, {{"power", r.power},
                             {"mc_standard_error", r.mc_standard_error},
                             {"reps_used", r.reps_used},
                             {"reps_failed", r.reps_failed},
                             {"failure_warning", r.failure_warning},
                             {"resolved_model", m.describe()},
                             {"resolved_curve", scenario.curve.describe()}});
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

bool axis_is_numeric(const std::string& name) { return name != "estimand"; }

void apply_axis(RunConfig& cfg, const std::string& name, const std::string& value) {
    if (name == "icc") cfg.icc = parse_number(value, "grid icc");
    else if (name == "cac") cfg.cac = parse_number(value, "grid cac");
    else if (name == "sequences")
        cfg.design.n_sequences = static_cast<int>(parse_number(value, "grid sequences"));
    else if (name == "estimand") cfg.estimand = value;
    else if (name == "extra_start")
        cfg.design.extra_start_periods = static_cast<int>(parse_number(value, "grid extra_start"));
    else if (name == "extra_end")
        cfg.design.extra_end_periods = static_cast<int>(parse_number(value, "grid extra_end"));
    else if (name == "staircase_r") {
        const int r = static_cast<int>(parse_number(value, "grid staircase_r"));
        cfg.design.staircase = design::StaircaseSpec{r, r};
    } else {
        throw validation_error("grid: unknown axis '" + name + "'");
    }
}

void check_quantity(const std::string& quantity) {
    if (quantity != "power" && quantity != "individuals" && quantity != "clusters" &&
        quantity != "ssr-individuals" && quantity != "ssr-clusters") {
        throw validation_error(
            "quantity: expected power|individuals|clusters|ssr-individuals|ssr-clusters, got '" +
            quantity + "'");
    }
}

// One grid point's result cell. "NA" marks points that are infeasible or not
// evaluable (estimand outside the design, unidentifiable model), matching the
// convention of leaving such points off a plot.
std::string sweep_value(const RunConfig& cfg) try {
    if (cfg.quantity == "power") {
        return io::format_double(search::evaluate_power(query_of(cfg)).power);
    }
    if (cfg.quantity == "individuals" || cfg.quantity == "clusters") {
        search::SearchProblem problem;
        problem.query = query_of(cfg);
        problem.target_power = cfg.target_power;
        problem.free_variable = (cfg.quantity == "individuals")
                                    ? search::FreeVariable::Individuals
                                    : search::FreeVariable::Clusters;
        const search::SearchResult r = (problem.free_variable == search::FreeVariable::Individuals)
                                           ? search::required_individuals(problem)
                                           : search::required_clusters(problem);
        return r.solved ? std::to_string(r.n) : "NA";
    }
    search::SearchProblem base;
    base.query = query_of(cfg);
    base.target_power = cfg.target_power;
    search::SearchProblem p_it = base;
    p_it.query.model = parse_model("it", cfg.time);
    search::SearchProblem p_eti = base;
    p_eti.query.model = parse_model("eti", cfg.time);
    const auto axis = (cfg.quantity == "ssr-clusters") ? search::FreeVariable::Clusters
                                                       : search::FreeVariable::Individuals;
    const auto ratio = search::ssr(p_it, p_eti, axis);
    return ratio ? io::format_double(*ratio) : "NA";
} catch (const std::exception&) {
    return "NA";
}

RunOutput run_sweep(const RunConfig& cfg) {
    if (cfg.grid.empty()) throw validation_error("grid: sweep needs at least one axis");
    check_quantity(cfg.quantity);

    std::vector<GridAxis> axes = cfg.grid;
    for (auto& axis : axes) {
        if (axis_is_numeric(axis.name)) {
            std::sort(axis.values.begin(), axis.values.end(),
                      [&](const std::string& a, const std::string& b) {
                          return parse_number(a, "grid " + axis.name) <
                                 parse_number(b, "grid " + axis.name);
                      });
        } else {
            std::sort(axis.values.begin(), axis.values.end());
        }
    }

    std::size_t n_points = 1;
    for (const auto& axis : axes) n_points *= axis.values.size();
    if (n_points > 100'000) throw validation_error("grid: more than 1e5 points refused");

    // Cartesian product in axis order; since every axis is sorted, rows come
    // out lexicographically sorted by the axis columns.
    std::vector<std::vector<std::string>> points;
    points.reserve(n_points);
    std::vector<std::size_t> idx(axes.size(), 0);
    while (points.size() < n_points) {
        std::vector<std::string> point(axes.size());
        for (std::size_t a = 0; a < axes.size(); ++a) point[a] = axes[a].values[idx[a]];
        points.push_back(std::move(point));
        for (std::size_t a = axes.size(); a-- > 0;) {
            if (++idx[a] < axes[a].values.size()) break;
            idx[a] = 0;
        }
    }

    std::vector<std::string> values(points.size());
    const int n_jobs = std::max(1, cfg.jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            RunConfig point_cfg = cfg;
            for (std::size_t a = 0; a < axes.size(); ++a)
                apply_axis(point_cfg, axes[a].name, points[i][a]);
            values[i] = sweep_value(point_cfg);
        }
    };
    if (n_jobs <= 1 || points.size() <= 1) {
        worker();
    } else {
        const int n_workers = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(n_jobs), points.size()));
        std::vector<std::thread> threads;
        for (int t = 0; t < n_workers; ++t) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }

    std::ostringstream os;
    os << "# " << kVersion << "\n";
    os << "# config: " << inputs_json(cfg).dump() << "\n";
    for (const auto& axis : axes) os << axis.name << ',';
    os << "value\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (const auto& v : points[i]) os << v << ',';
        os << values[i] << '\n';
    }
    return {0, os.str()};
}

}  // namespace

RunOutput run(const RunConfig& config) {
    RunOutput out;
    try {
        config.design.check();
        if (config.command == "design") out = run_design(config);
        else if (config.command == "power") out = run_power(config);
        else if (config.command == "samplesize") out = run_samplesize(config);
        else if (config.command == "ssr") out = run_ssr(config);
        else if (config.command == "simulate") out = run_simulate(config);
        else if (config.command == "sweep") out = run_sweep(config);
        else throw validation_error("command: unknown command '" + config.command + "'");
    } catch (const std::exception& e) {
        json err{{"version", kVersion}, {"error", e.what()}};
        return {2, err.dump(2) + "\n"};
    }

    if (!config.out_path.empty()) {
        try {
            io::write_file(config.out_path, out.report);
        } catch (const std::exception& e) {
            json err{{"version", kVersion}, {"error", e.what()}};
            return {4, err.dump(2) + "\n"};
        }
    }
    return out;
}

}  // namespace swpower::cli
