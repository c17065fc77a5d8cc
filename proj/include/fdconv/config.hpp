#pragma once

#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/analysis.hpp"
#include "fdconv/layer.hpp"

namespace fdconv {

// Training run description.  Serialized as `key = value` lines, `#` starts a
// comment.  Unknown keys are rejected so typos fail loudly.

struct TrainConfig {
    FDConvConfig layer;
    std::string optimizer = "adam";  // "sgd" (momentum 0.9) or "adam"
    double lr = 0.01;
    int batch = 32;
    int steps = 500;
    std::size_t dataset_size = 2000;
    std::size_t dataset_s = 32;      // spatial extent of the synthetic images
    double dataset_sigma = 0.05;     // additive pixel noise
};

inline void validate_train_config(const TrainConfig& c) {
    validate_config(c.layer);
    if (c.optimizer != "sgd" && c.optimizer != "adam")
        throw std::invalid_argument("config: optimizer must be 'sgd' or 'adam', got '" + c.optimizer + "'");
    if (!(c.lr > 0.0) || !std::isfinite(c.lr))
        throw std::invalid_argument("config: lr must be positive and finite");
    if (c.batch < 1) throw std::invalid_argument("config: batch must be at least 1");
    if (c.steps < 0) throw std::invalid_argument("config: steps must be non-negative");
    if (c.dataset_size < 5) throw std::invalid_argument("config: dataset.size too small to split");
    if (c.dataset_s < static_cast<std::size_t>(c.layer.k))
        throw std::invalid_argument("config: dataset.s smaller than the kernel");
    if (!(c.dataset_sigma >= 0.0) || !std::isfinite(c.dataset_sigma))
        throw std::invalid_argument("config: dataset.sigma must be non-negative");
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& v, const std::string& key, int line) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty())
        throw std::invalid_argument("config line " + std::to_string(line) + ": key '" + key +
                                    "' expects an integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string& v, const std::string& key, int line) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty())
        throw std::invalid_argument("config line " + std::to_string(line) + ": key '" + key +
                                    "' expects a number, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config line " + std::to_string(line) + ": key '" + key +
                                "' expects true/false, got '" + v + "'");
}

}  // namespace detail

inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
        if (seen.count(key))
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                                        "' (first at line " + std::to_string(seen[key]) + ")");
        seen[key] = line_no;

        if (key == "k") c.layer.k = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "c_in") c.layer.c_in = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "c_out") c.layer.c_out = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "n") c.layer.n = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "tau") c.layer.tau = detail::parse_double(val, key, line_no);
        else if (key == "bands") {
            std::vector<double> psi;
            std::stringstream ss(val);
            std::string cell;
            while (std::getline(ss, cell, ','))
                psi.push_back(detail::parse_double(detail::trim(cell), key, line_no));
            c.layer.bands = std::move(psi);
        } else if (key == "enable_ksm") c.layer.enable_ksm = detail::parse_bool(val, key, line_no);
        else if (key == "enable_fbm") c.layer.enable_fbm = detail::parse_bool(val, key, line_no);
        else if (key == "seed") c.layer.seed = static_cast<std::uint64_t>(detail::parse_int(val, key, line_no));
        else if (key == "optimizer") c.optimizer = val;
        else if (key == "lr") c.lr = detail::parse_double(val, key, line_no);
        else if (key == "batch") c.batch = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "steps") c.steps = static_cast<int>(detail::parse_int(val, key, line_no));
        else if (key == "dataset.size")
            c.dataset_size = static_cast<std::size_t>(detail::parse_int(val, key, line_no));
        else if (key == "dataset.s")
            c.dataset_s = static_cast<std::size_t>(detail::parse_int(val, key, line_no));
        else if (key == "dataset.sigma") c.dataset_sigma = detail::parse_double(val, key, line_no);
        else
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key +
                                        "'");
    }
    validate_train_config(c);
    return c;
}

// Canonical text form; parse(serialize(c)) reproduces c exactly.
inline std::string serialize_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "k = " << c.layer.k << '\n';
    out << "c_in = " << c.layer.c_in << '\n';
    out << "c_out = " << c.layer.c_out << '\n';
    out << "n = " << c.layer.n << '\n';
    out << "tau = " << format_g17(c.layer.tau) << '\n';
    out << "bands = ";
    for (std::size_t i = 0; i < c.layer.bands.size(); ++i) {
        if (i) out << ',';
        out << format_g17(c.layer.bands[i]);
    }
    out << '\n';
    out << "enable_ksm = " << (c.layer.enable_ksm ? "true" : "false") << '\n';
    out << "enable_fbm = " << (c.layer.enable_fbm ? "true" : "false") << '\n';
    out << "seed = " << c.layer.seed << '\n';
    out << "optimizer = " << c.optimizer << '\n';
    out << "lr = " << format_g17(c.lr) << '\n';
    out << "batch = " << c.batch << '\n';
    out << "steps = " << c.steps << '\n';
    out << "dataset.size = " << c.dataset_size << '\n';
    out << "dataset.s = " << c.dataset_s << '\n';
    out << "dataset.sigma = " << format_g17(c.dataset_sigma) << '\n';
    return out.str();
}

}  // namespace fdconv
