#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <string>

#include "swpower/design.hpp"
#include "swpower/model.hpp"
#include "swpower/simulate.hpp"

namespace swpower::io {

// Locale-independent float formatting: '.' decimal separator, 12 significant
// digits.
std::string format_double(double value);

// JSON design spec:
// {"sequences": , "clusters_per_sequence": , "individuals_per_cell": ,
//  "extra_start": , "extra_end": , "baseline_multiplier": ,
//  "staircase": {"r0": , "r1": } | null}
nlohmann::json design_to_json(const design::DesignSpec& spec);
design::DesignSpec design_from_json(const nlohmann::json& j);

// Layout export: cluster,sequence,period,observed,treatment,exposure,cell_size
// with 1-based cluster/sequence/period ids.
std::string layout_csv(const design::DesignLayout& layout);

// Matrix export with the column labels as header.
std::string matrix_csv(const model::LabeledMatrix& X);

// Dataset CSV: cluster,period,individual,exposure,treatment,outcome.
std::string dataset_csv(const simulate::Dataset& data);
simulate::Dataset dataset_from_csv(const std::string& text);

void write_file(const std::string& path, const std::string& contents);

}  // namespace swpower::io
