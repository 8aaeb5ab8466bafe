#include "swpower/estimand.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace swpower::estimand {

Estimand Estimand::tate(int s1, int s2) {
    if (s1 < 0) throw std::invalid_argument("TATE s1 must be >= 0");
    if (s2 <= s1) throw std::invalid_argument("TATE s2 must be > s1");
    return {Kind::TATE, s1, s2};
}

Estimand Estimand::pte(int s) {
    if (s < 1) throw std::invalid_argument("PTE s must be >= 1");
    return {Kind::PTE, 0, s};
}

std::string Estimand::describe() const {
    std::ostringstream os;
    if (kind == Kind::TATE)
        os << "TATE(" << s1 << "," << s2 << ")";
    else
        os << "PTE(" << s2 << ")";
    return os.str();
}

Estimand parse(const std::string& text) {
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c)))
            s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));

    auto fail = [&] {
        throw std::invalid_argument("cannot parse estimand '" + text +
                                    "'; expected TATE(a,b) or PTE(s)");
    };
    auto parse_int = [&](const std::string& tok) {
        if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) {
                return std::isdigit(static_cast<unsigned char>(c));
            }))
            fail();
        return std::stoi(tok);
    };

    if (s.rfind("TATE(", 0) == 0 && s.back() == ')') {
        const std::string body = s.substr(5, s.size() - 6);
        const auto comma = body.find(',');
        if (comma == std::string::npos) fail();
        return Estimand::tate(parse_int(body.substr(0, comma)),
                              parse_int(body.substr(comma + 1)));
    }
    if (s.rfind("PTE(", 0) == 0 && s.back() == ')') {
        return Estimand::pte(parse_int(s.substr(4, s.size() - 5)));
    }
    fail();
    return {};
}

gls::ContrastVector contrast_for(const Estimand& e, const model::ModelSpec& model,
                                 const design::DesignLayout& layout) {
    const int s_max = layout.max_exposure;
    if (e.max_exposure_needed() > s_max) {
        throw std::out_of_range("estimand " + e.describe() +
                                " exceeds the layout's maximum exposure " +
                                std::to_string(s_max));
    }

    const int lo = (e.kind == Kind::TATE) ? e.s1 + 1 : e.s2;  // inclusive range
    const int hi = e.s2;
    const double weight = 1.0 / static_cast<double>(hi - lo + 1);

    gls::ContrastVector c;
    switch (model.effect) {
        case model::EffectStructure::IT:
        case model::EffectStructure::IT_DROP_WASHOUT:
            c.weights.emplace_back("delta", 1.0);
            break;
        case model::EffectStructure::ETI:
            for (int s = lo; s <= hi; ++s)
                c.weights.emplace_back("delta" + std::to_string(s), weight);
            break;
        case model::EffectStructure::DCT: {
            const int w = model.washout;
            int beyond = 0;
            for (int s = lo; s <= hi; ++s) {
                if (s <= w)
                    c.weights.emplace_back("delta" + std::to_string(s), weight);
                else
                    ++beyond;
            }
            if (beyond > 0)
                c.weights.emplace_back("delta", weight * static_cast<double>(beyond));
            break;
        }
        case model::EffectStructure::NCS: {
            std::vector<double> pts;
            for (int s = lo; s <= hi; ++s) pts.push_back(static_cast<double>(s));
            const Eigen::MatrixXd basis =
                model::ncs_basis(model.spline_df, pts, 1.0, static_cast<double>(s_max));
            const Eigen::RowVectorXd mean = basis.colwise().mean();
            for (int k = 0; k < model.spline_df; ++k)
                c.weights.emplace_back("ncs" + std::to_string(k + 1), mean(k));
            break;
        }
    }
    return c;
}

}  // namespace swpower::estimand
