#include "swpower/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace swpower::io {

std::string format_double(double value) {
    char buf[48];
    const auto [ptr, ec] =
        std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 12);
    if (ec != std::errc()) throw std::runtime_error("float formatting failed");
    return std::string(buf, ptr);
}

nlohmann::json design_to_json(const design::DesignSpec& spec) {
    nlohmann::json j{
        {"sequences", spec.n_sequences},
        {"clusters_per_sequence", spec.clusters_per_sequence},
        {"individuals_per_cell", spec.individuals_per_cell},
        {"extra_start", spec.extra_start_periods},
        {"extra_end", spec.extra_end_periods},
        {"baseline_multiplier", spec.baseline_multiplier},
    };
    if (spec.staircase) {
        j["staircase"] = {{"r0", spec.staircase->r0}, {"r1", spec.staircase->r1}};
    } else {
        j["staircase"] = nullptr;
    }
    return j;
}

design::DesignSpec design_from_json(const nlohmann::json& j) {
    design::DesignSpec spec;
    spec.n_sequences = j.at("sequences").get<int>();
    spec.clusters_per_sequence = j.value("clusters_per_sequence", 1);
    spec.individuals_per_cell = j.value("individuals_per_cell", 1);
    spec.extra_start_periods = j.value("extra_start", 0);
    spec.extra_end_periods = j.value("extra_end", 0);
    spec.baseline_multiplier = j.value("baseline_multiplier", 1.0);
    if (j.contains("staircase") && !j.at("staircase").is_null()) {
        design::StaircaseSpec sc;
        sc.r0 = j.at("staircase").at("r0").get<int>();
        sc.r1 = j.at("staircase").at("r1").get<int>();
        spec.staircase = sc;
    }
    spec.check();
    return spec;
}

std::string layout_csv(const design::DesignLayout& layout) {
    std::ostringstream os;
    os << "cluster,sequence,period,observed,treatment,exposure,cell_size\n";
    for (int c = 0; c < layout.n_clusters; ++c) {
        for (int p = 0; p < layout.n_periods; ++p) {
            const auto& cell = layout.cells[c][p];
            os << (c + 1) << ',' << (layout.cluster_sequence[c] + 1) << ',' << (p + 1)
               << ',' << (cell.observed ? 1 : 0) << ','
               << (cell.observed && cell.exposure >= 1 ? 1 : 0) << ','
               << (cell.observed ? cell.exposure : 0) << ','
               << (cell.observed ? cell.cell_size : 0) << '\n';
        }
    }
    return os.str();
}

std::string matrix_csv(const model::LabeledMatrix& X) {
    std::ostringstream os;
    for (std::size_t j = 0; j < X.labels.size(); ++j) {
        if (j) os << ',';
        os << X.labels[j];
    }
    os << '\n';
    for (int r = 0; r < X.values.rows(); ++r) {
        for (int j = 0; j < X.values.cols(); ++j) {
            if (j) os << ',';
            os << format_double(X.values(r, j));
        }
        os << '\n';
    }
    return os.str();
}

std::string dataset_csv(const simulate::Dataset& data) {
    std::ostringstream os;
    os << "cluster,period,individual,exposure,treatment,outcome\n";
    for (const auto& row : data.rows) {
        os << (row.cluster + 1) << ',' << (row.period + 1) << ','
           << (row.individual + 1) << ',' << row.exposure << ','
           << (row.treatment() ? 1 : 0) << ',' << format_double(row.outcome) << '\n';
    }
    return os.str();
}

simulate::Dataset dataset_from_csv(const std::string& text) {
    simulate::Dataset data;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line))
        throw std::invalid_argument("dataset CSV is empty");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::vector<std::string> fields;
        while (std::getline(ls, tok, ',')) fields.push_back(tok);
        if (fields.size() != 6)
            throw std::invalid_argument("dataset CSV row does not have 6 fields");
        simulate::DataRow row;
        row.cluster = std::stoi(fields[0]) - 1;
        row.period = std::stoi(fields[1]) - 1;
        row.individual = std::stoi(fields[2]) - 1;
        row.exposure = std::stoi(fields[3]);
        row.outcome = std::stod(fields[5]);
        if (row.cluster < 0 || row.period < 0 || row.individual < 0 || row.exposure < 0)
            throw std::invalid_argument("dataset CSV row has out-of-range ids");
        const bool treated = std::stoi(fields[4]) != 0;
        if (treated != (row.exposure >= 1))
            throw std::invalid_argument("dataset CSV treatment flag contradicts exposure");
        data.rows.push_back(row);
        data.n_clusters = std::max(data.n_clusters, row.cluster + 1);
        data.n_periods = std::max(data.n_periods, row.period + 1);
        data.max_exposure = std::max(data.max_exposure, row.exposure);
    }
    return data;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << contents;
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace swpower::io
