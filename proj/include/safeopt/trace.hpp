#pragma once

#include "safeopt/model.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace safeopt {

/// One outer iteration of a SafeOpt run.
struct IterationRecord {
    std::size_t n = 0;
    Recommendation recommendation;
    Point best_estimate;       // x*_n
    double l_star = 0.0;       // l(x*_n, 0)
    std::vector<double> observation;  // oracle values at the recommendation, objective first
    std::string expander_status = "none";  // valid / invalid / skipped / none
    bool x_tol_met = false;
    bool f_tol_met = false;
    bool max_iter_met = false;
    // Wall-clock milliseconds: best-estimate solve, all maximizer solves, all
    // expander solves, and the whole selection step.
    double lstar_ms = 0.0;
    double maximizer_ms = 0.0;
    double expander_ms = 0.0;
    double select_ms = 0.0;
};

struct RunTrace {
    std::string algorithm;
    std::vector<IterationRecord> records;
    Point best_point;
    double best_lower = 0.0;
    std::string stop_reason;
    std::string error;  // nonempty when the run ended with an algorithm error

    std::size_t iterations() const { return records.size(); }
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Shortest round-trip decimal, independent of the C locale.
inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_number(std::size_t v) { return std::to_string(v); }

/// trace.csv column names for an n-dimensional run with `gp_count` GPs.
/// Timing columns all end in "_ms".
inline std::vector<std::string> trace_columns(Eigen::Index dim, std::size_t gp_count) {
    std::vector<std::string> cols{"n"};
    for (Eigen::Index i = 0; i < dim; ++i) cols.push_back("x" + std::to_string(i));
    cols.insert(cols.end(), {"source", "driving_index", "width", "l_star"});
    for (Eigen::Index i = 0; i < dim; ++i) cols.push_back("xstar" + std::to_string(i));
    for (std::size_t i = 0; i < gp_count; ++i) cols.push_back("obs" + std::to_string(i));
    cols.insert(cols.end(), {"expander_status", "x_tol_met", "f_tol_met", "max_iter_met", "lstar_ms",
                             "maximizer_ms", "expander_ms", "select_ms"});
    return cols;
}

inline void write_trace_csv(std::ostream& os, const RunTrace& trace, Eigen::Index dim, std::size_t gp_count) {
    const auto cols = trace_columns(dim, gp_count);
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : trace.records) {
        os << r.n;
        for (Eigen::Index i = 0; i < dim; ++i) os << ',' << format_number(r.recommendation.point[i]);
        os << ',' << to_string(r.recommendation.source) << ',' << r.recommendation.driving_index << ','
           << format_number(r.recommendation.width) << ',' << format_number(r.l_star);
        for (Eigen::Index i = 0; i < dim; ++i)
            os << ',' << (r.best_estimate.size() == dim ? format_number(r.best_estimate[i]) : std::string("nan"));
        for (std::size_t i = 0; i < gp_count; ++i)
            os << ',' << (i < r.observation.size() ? format_number(r.observation[i]) : std::string("nan"));
        os << ',' << r.expander_status << ',' << int(r.x_tol_met) << ',' << int(r.f_tol_met) << ','
           << int(r.max_iter_met) << ',' << format_number(r.lstar_ms) << ',' << format_number(r.maximizer_ms)
           << ',' << format_number(r.expander_ms) << ',' << format_number(r.select_ms) << '\n';
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError("not a number: '" + s + "'");
    return v;
}

}  // namespace safeopt
