#pragma once

#include "safeopt/benchmarks/pid.hpp"
#include "safeopt/benchmarks/quadratic.hpp"
#include "safeopt/grid.hpp"
#include "safeopt/reform.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

// Config loading, benchmark wiring and output files for the command-line driver.
namespace safeopt::exp {

using json = nlohmann::json;

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Benchmark { Quadratic, Pid };

struct SweepSpec {
    std::vector<double> mesh_tolerances;
    std::vector<double> initial_meshes;
    std::vector<std::pair<double, double>> eps;  // (eps_x, eps_f)
};

struct RunConfig {
    Benchmark benchmark = Benchmark::Quadratic;
    std::string algorithm = "reform";
    std::uint64_t seed = 0;
    ModelSpec model;
    std::vector<Point> initial_safe_set;
    std::vector<std::size_t> grid_counts;
    grid::GridRunConfig grid;
    reform::ReformConfig reform;
    bench::QuadraticProblem quad;
    bench::PidBenchmark pid;
    SweepSpec sweep;
    json echo;  // the parsed document, with the effective seed

    std::size_t gp_count() const { return benchmark == Benchmark::Quadratic ? 3 : 2; }
    Eigen::Index dim() const { return benchmark == Benchmark::Quadratic ? 2 : 3; }
};

inline std::string benchmark_name(Benchmark b) { return b == Benchmark::Quadratic ? "quad" : "pid"; }

namespace detail {

/// Field access with dotted-path diagnostics and unknown-key rejection.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("", "expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    double number(const std::string& key) { return as_number(at(key), where(key)); }
    double number(const std::string& key, double def) { return has(key) ? number(key) : def; }

    std::uint64_t count(const std::string& key) { return as_count(at(key), where(key)); }
    std::uint64_t count(const std::string& key, std::uint64_t def) { return has(key) ? count(key) : def; }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_boolean()) fail(key, "expected true or false");
        return v.get<bool>();
    }

    std::string string(const std::string& key) {
        const json& v = at(key);
        if (!v.is_string()) fail(key, "expected a string");
        return v.get<std::string>();
    }
    std::string string(const std::string& key, const std::string& def) { return has(key) ? string(key) : def; }

    std::vector<double> numbers(const std::string& key) {
        const json& v = at(key);
        if (!v.is_array() || v.empty()) fail(key, "expected a nonempty array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], where(key) + "[" + std::to_string(i) + "]"));
        return out;
    }

    std::vector<std::uint64_t> counts(const std::string& key) {
        const json& v = at(key);
        if (!v.is_array() || v.empty()) fail(key, "expected a nonempty array of integers");
        std::vector<std::uint64_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_count(v[i], where(key) + "[" + std::to_string(i) + "]"));
        return out;
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError("missing field '" + where(key) + "'");
        return j_.at(key);
    }

    Reader child(const std::string& key) { return Reader(at(key), where(key)); }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError("unknown field '" + where(item.key()) + "'");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError("field '" + (key.empty() ? path_ : where(key)) + "': " + msg);
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    static double as_number(const json& v, const std::string& where) {
        if (!v.is_number()) throw ConfigError("field '" + where + "': expected a number");
        return v.get<double>();
    }
    static std::uint64_t as_count(const json& v, const std::string& where) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw ConfigError("field '" + where + "': expected a nonnegative integer");
        return v.get<std::uint64_t>();
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline Point point_of(const std::vector<double>& v, Eigen::Index dim, const std::string& where) {
    if (static_cast<Eigen::Index>(v.size()) != dim)
        throw ConfigError("field '" + where + "': expected " + std::to_string(dim) + " components");
    return from_vector(v);
}

inline void parse_kernels(Reader& r, RunConfig& cfg) {
    const json& arr = r.at("kernels");
    if (!arr.is_array() || arr.empty()) r.fail("kernels", "expected a nonempty array");
    const std::size_t gps = cfg.gp_count();
    if (arr.size() != 1 && arr.size() != gps)
        r.fail("kernels", "expected 1 entry (shared) or " + std::to_string(gps) + " entries (objective first)");
    for (std::size_t i = 0; i < gps; ++i) {
        const std::size_t src = arr.size() == 1 ? 0 : i;
        Reader k(arr[src], "kernels[" + std::to_string(src) + "]");
        KernelSpec spec;
        try {
            spec.family = parse_kernel_family(k.string("family", "squared_exponential"));
        } catch (const InputError& e) {
            k.fail("family", e.what());
        }
        spec.lengthscales = point_of(k.numbers("lengthscales"), cfg.dim(), k.where("lengthscales"));
        spec.signal_variance = k.number("signal_variance", 1.0);
        const double noise = k.number("noise_variance");
        k.finish();
        cfg.model.kernels.push_back(spec);
        cfg.model.noise_variances.push_back(noise);
    }
}

inline void parse_grid(Reader r, RunConfig& cfg) {
    for (auto c : r.counts("counts")) cfg.grid_counts.push_back(static_cast<std::size_t>(c));
    if (static_cast<Eigen::Index>(cfg.grid_counts.size()) != cfg.dim())
        r.fail("counts", "expected one count per input dimension");
    cfg.grid.max_iterations = r.count("max_iterations", cfg.grid.max_iterations);
    cfg.grid.eps_x = r.number("eps_x", cfg.grid.eps_x);
    cfg.grid.eps_f = r.number("eps_f", cfg.grid.eps_f);
    r.finish();
}

inline void parse_reform(Reader r, RunConfig& cfg) {
    auto& c = cfg.reform;
    c.eps_x = r.number("eps_x", c.eps_x);
    c.eps_f = r.number("eps_f", c.eps_f);
    c.max_iterations = r.count("max_iterations", c.max_iterations);
    c.penalty_weight = r.number("penalty_weight", c.penalty_weight);
    c.expander_validity_tol = r.number("expander_validity_tol", c.expander_validity_tol);
    c.strict_margin = r.number("strict_margin", c.strict_margin);
    c.probes_per_face = r.count("probes_per_face", c.probes_per_face);
    c.literal_and_stopping = r.boolean("literal_and_stopping", c.literal_and_stopping);
    c.iteration_cap = r.count("iteration_cap", c.iteration_cap);
    c.printed_penalty_sign = r.boolean("printed_penalty_sign", c.printed_penalty_sign);
    c.remembered_expanders = r.count("remembered_expanders", c.remembered_expanders);
    c.start_samples = r.count("start_samples", c.start_samples);
    c.pattern = r.string("pattern", c.pattern);
    c.subproblem.initial_mesh = r.number("initial_mesh", c.subproblem.initial_mesh);
    c.subproblem.mesh_tolerance = r.number("mesh_tolerance", c.subproblem.mesh_tolerance);
    c.subproblem.max_evaluations = r.count("max_evaluations", c.subproblem.max_evaluations);
    c.subproblem.multistart_count = r.count("multistart_count", c.subproblem.multistart_count);
    r.finish();
}

inline void parse_pid(Reader r, RunConfig& cfg) {
    bench::SurrogateParams sp;
    double dt = 1e-3, t_f = 2.0;
    if (r.has("plant")) {
        Reader p = r.child("plant");
        sp.gain = p.number("gain", sp.gain);
        sp.natural_frequency = p.number("natural_frequency", sp.natural_frequency);
        sp.damping = p.number("damping", sp.damping);
        sp.actuator_lag = p.number("actuator_lag", sp.actuator_lag);
        dt = p.number("sample_time", dt);
        t_f = p.number("t_f", t_f);
        p.finish();
    }
    auto& b = cfg.pid;
    b.plant = bench::PlantModel::surrogate(sp, dt, t_f);
    b.spec.gamma = r.number("gamma", b.spec.gamma);
    b.spec.stability_margin = r.number("stability_margin", b.spec.stability_margin);
    try {
        b.spec.reference = bench::parse_reference(r.string("reference", "trapezoid"));
    } catch (const InputError& e) {
        r.fail("reference", e.what());
    }
    b.objective_noise_std = r.number("objective_noise_std", 0.0);
    b.constraint_noise_std = r.number("constraint_noise_std", 0.0);
    b.objective_offset = r.number("objective_offset", 0.0);
    b.objective_floor = r.number("objective_floor", b.objective_floor);
    if (r.has("constraint_floor")) {
        b.constraint_floor = r.number("constraint_floor");
        if (!(b.constraint_floor < 0.0)) r.fail("constraint_floor", "must be negative to keep unsafe values unsafe");
    }
    if (!(b.objective_noise_std >= 0.0) || !(b.constraint_noise_std >= 0.0)) r.fail("", "noise std must be nonnegative");
    r.finish();
}

inline void parse_sweep(Reader r, RunConfig& cfg) {
    cfg.sweep.mesh_tolerances = r.numbers("mesh_tolerance");
    cfg.sweep.initial_meshes =
        r.has("initial_mesh") ? r.numbers("initial_mesh") : std::vector<double>{cfg.reform.subproblem.initial_mesh};
    if (r.has("eps")) {
        const json& e = r.at("eps");
        if (!e.is_array() || e.empty()) r.fail("eps", "expected a nonempty array of [eps_x, eps_f] pairs");
        for (std::size_t i = 0; i < e.size(); ++i) {
            const std::string w = r.where("eps") + "[" + std::to_string(i) + "]";
            if (!e[i].is_array() || e[i].size() != 2 || !e[i][0].is_number() || !e[i][1].is_number())
                throw ConfigError("field '" + w + "': expected [eps_x, eps_f]");
            cfg.sweep.eps.emplace_back(e[i][0].get<double>(), e[i][1].get<double>());
        }
    } else {
        cfg.sweep.eps.emplace_back(cfg.reform.eps_x, cfg.reform.eps_f);
    }
    r.finish();
}

}  // namespace detail

/// Validates a parsed document. `needs` lists sections the subcommand requires
/// ("grid", "sweep").
inline RunConfig parse_config(const json& doc, const std::vector<std::string>& needs = {}) {
    detail::Reader r(doc, "");
    RunConfig cfg;
    const std::string bench_name = r.string("benchmark");
    if (bench_name == "quad") cfg.benchmark = Benchmark::Quadratic;
    else if (bench_name == "pid") cfg.benchmark = Benchmark::Pid;
    else r.fail("benchmark", "expected \"quad\" or \"pid\"");
    cfg.algorithm = r.string("algorithm", "reform");
    if (cfg.algorithm != "reform" && cfg.algorithm != "grid") r.fail("algorithm", "expected \"reform\" or \"grid\"");
    cfg.seed = r.count("seed");

    try {
        cfg.model.band = ConfidenceBand(r.number("beta"));
    } catch (const InputError& e) {
        r.fail("beta", e.what());
    }
    cfg.model.j_min = r.number("j_min");
    detail::parse_kernels(r, cfg);
    if (r.has("width_indices"))
        for (auto i : r.counts("width_indices")) cfg.model.width_indices.push_back(static_cast<std::size_t>(i));

    if (r.has("initial_safe_set")) {
        const json& s = r.at("initial_safe_set");
        if (!s.is_array() || s.empty()) r.fail("initial_safe_set", "expected a nonempty array of points");
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::string w = "initial_safe_set[" + std::to_string(i) + "]";
            if (!s[i].is_array()) throw ConfigError("field '" + w + "': expected an array of numbers");
            std::vector<double> v;
            for (const auto& e : s[i]) {
                if (!e.is_number()) throw ConfigError("field '" + w + "': expected an array of numbers");
                v.push_back(e.get<double>());
            }
            cfg.initial_safe_set.push_back(detail::point_of(v, cfg.dim(), w));
        }
    } else if (cfg.benchmark == Benchmark::Pid) {
        for (const auto& c : bench::pid_initial_safe_set()) cfg.initial_safe_set.push_back(c.to_point());
    } else {
        r.at("initial_safe_set");  // throws the missing-field error
    }

    const bool need_grid = cfg.algorithm == "grid" || std::count(needs.begin(), needs.end(), "grid");
    if (need_grid || r.has("grid")) detail::parse_grid(r.child("grid"), cfg);
    if (r.has("reform")) detail::parse_reform(r.child("reform"), cfg);

    if (r.has("quad")) {
        if (cfg.benchmark != Benchmark::Quadratic) r.fail("quad", "only valid for the quad benchmark");
        detail::Reader q = r.child("quad");
        if (q.has("noise_std")) cfg.quad.noise_std = q.numbers("noise_std");
        q.finish();
    }
    if (r.has("pid")) {
        if (cfg.benchmark != Benchmark::Pid) r.fail("pid", "only valid for the pid benchmark");
        try {
            detail::parse_pid(r.child("pid"), cfg);
        } catch (const InputError& e) {
            throw ConfigError(std::string("field 'pid': ") + e.what());
        }
    }
    const bool need_sweep = std::count(needs.begin(), needs.end(), "sweep") > 0;
    if (need_sweep || r.has("sweep")) detail::parse_sweep(r.child("sweep"), cfg);
    r.finish();

    try {
        cfg.model.validate();
        for (auto i : cfg.model.width_indices)
            if (i >= cfg.gp_count()) throw InputError("width index out of range");
        cfg.reform.validate();
        cfg.quad.validate();
        cfg.pid.spec.validate();
        if (cfg.grid.eps_x < 0.0 || cfg.grid.eps_f < 0.0) throw InputError("grid tolerances must be nonnegative");
        for (double t : cfg.sweep.mesh_tolerances)
            for (double m : cfg.sweep.initial_meshes)
                if (!(t > 0.0) || !(t < m)) throw InputError("sweep mesh tolerances must be positive and below the initial mesh");
        for (const auto& [ex, ef] : cfg.sweep.eps)
            if (ex < 0.0 || ef < 0.0) throw InputError("sweep tolerances must be nonnegative");
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    cfg.echo = doc;
    return cfg;
}

/// Parses JSON text; syntax errors carry line and column.
inline json parse_json_text(const std::string& text, const std::string& name) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error");
    }
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& needs = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(parse_json_text(ss.str(), path), needs);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.rfind(path, 0) == 0 ? msg : path + ": " + msg);
    }
}

inline void set_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.echo["seed"] = seed;
}

inline Box benchmark_box(const RunConfig& cfg) {
    return cfg.benchmark == Benchmark::Quadratic ? bench::QuadraticProblem::default_box()
                                                 : bench::CascadeController::search_box();
}

inline VectorOracle benchmark_oracle(const RunConfig& cfg) {
    return cfg.benchmark == Benchmark::Quadratic ? cfg.quad.oracle(cfg.seed) : cfg.pid.oracle(cfg.seed);
}

/// Noise-free objective (as maximized) and constraint values, on the
/// benchmark's own scale (no offsets).
struct TrueValues {
    double objective = 0.0;
    std::vector<double> constraints;
    double margin() const { return *std::min_element(constraints.begin(), constraints.end()); }
};

inline TrueValues true_values(const RunConfig& cfg, const Point& x) {
    if (cfg.benchmark == Benchmark::Quadratic) {
        const auto g = bench::quad_constraints(x);
        return {bench::quad_objective(x), {g.g1, g.g2}};
    }
    const auto r = bench::simulate(cfg.pid.plant, bench::CascadeController::from_point(x), cfg.pid.spec);
    return {-bench::tuning_objective(r, cfg.pid.spec), {bench::stability_oracle(r, cfg.pid.spec)}};
}

/// Queries the oracle at every initial safe point.
inline Observations initial_observations(const RunConfig& cfg, const VectorOracle& oracle) {
    Observations obs;
    for (const auto& x : cfg.initial_safe_set) obs.append(x, oracle(x));
    return obs;
}

/// One algorithm run plus everything the summary needs.
struct RunOutcome {
    std::string algorithm;
    RunTrace trace;
    double total_ms = 0.0;
    std::size_t true_violations = 0;
    double worst_true_margin = std::numeric_limits<double>::infinity();
    bool model_safe = true;  // every recommendation had min_j l(x, j) >= j_min at selection
    std::size_t grid_points = 0;
    double final_true_objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> final_true_constraints;
    double best_initial_true_objective = -std::numeric_limits<double>::infinity();

    double violation_rate() const {
        return trace.records.empty() ? 0.0 : double(true_violations) / double(trace.records.size());
    }

    double mean_ms(double IterationRecord::*field) const {
        if (trace.records.empty()) return 0.0;
        double s = 0.0;
        for (const auto& r : trace.records) s += r.*field;
        return s / double(trace.records.size());
    }
};

inline RunOutcome run_algorithm(const RunConfig& cfg, const std::string& algorithm, const Observations& initial,
                                const VectorOracle& oracle) {
    RunOutcome out;
    out.algorithm = algorithm;
    const Box box = benchmark_box(cfg);
    Stopwatch sw;
    if (algorithm == "grid") {
        const auto g = grid::Grid::lattice(box, cfg.grid_counts);
        out.grid_points = g.size();
        out.trace = grid::run(oracle, initial, cfg.model, g, cfg.grid);
    } else {
        out.trace = reform::run(oracle, initial, cfg.model, box, cfg.reform);
    }
    out.total_ms = sw.elapsed_ms();

    for (const auto& x : cfg.initial_safe_set)
        out.best_initial_true_objective = std::max(out.best_initial_true_objective, true_values(cfg, x).objective);
    for (const auto& r : out.trace.records) {
        const auto tv = true_values(cfg, r.recommendation.point);
        if (tv.margin() < 0.0) ++out.true_violations;
        out.worst_true_margin = std::min(out.worst_true_margin, tv.margin());
        for (std::size_t j = 1; j < r.recommendation.bounds_at_point.size(); ++j)
            if (!(r.recommendation.bounds_at_point[j].lower >= cfg.model.j_min)) out.model_safe = false;
    }
    if (out.trace.best_point.size() == cfg.dim()) {
        const auto tv = true_values(cfg, out.trace.best_point);
        out.final_true_objective = tv.objective;
        out.final_true_constraints = tv.constraints;
    }
    return out;
}

/// Runs the configured algorithm on the configured benchmark.
inline RunOutcome run_config(const RunConfig& cfg) {
    const auto oracle = benchmark_oracle(cfg);
    const auto initial = initial_observations(cfg, oracle);
    return run_algorithm(cfg, cfg.algorithm, initial, oracle);
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json summary_json(const RunConfig& cfg, const RunOutcome& o) {
    json s;
    s["config"] = cfg.echo;
    s["benchmark"] = benchmark_name(cfg.benchmark);
    s["algorithm"] = o.algorithm;
    s["seed"] = cfg.seed;
    s["stop_reason"] = o.trace.stop_reason;
    s["error"] = o.trace.error.empty() ? json(nullptr) : json(o.trace.error);
    s["iterations"] = o.trace.iterations();
    s["final_point"] = o.trace.best_point.size() ? json(to_vector(o.trace.best_point)) : json(nullptr);
    s["final_lower_bound"] = o.trace.best_point.size() ? number_or_null(o.trace.best_lower) : json(nullptr);
    s["final_true_objective"] = number_or_null(o.final_true_objective);
    s["final_true_constraints"] = o.final_true_constraints;
    s["best_initial_true_objective"] = number_or_null(o.best_initial_true_objective);
    s["true_violations"] = o.true_violations;
    s["true_violation_rate"] = o.violation_rate();
    s["worst_true_margin"] = number_or_null(o.worst_true_margin);
    s["model_safe"] = o.model_safe;
    s["total_ms"] = o.total_ms;
    s["mean_lstar_ms"] = o.mean_ms(&IterationRecord::lstar_ms);
    s["mean_maximizer_ms"] = o.mean_ms(&IterationRecord::maximizer_ms);
    s["mean_expander_ms"] = o.mean_ms(&IterationRecord::expander_ms);
    if (o.algorithm == "reform") {
        s["penalty_weight"] = cfg.reform.penalty_weight;
        s["penalty_sign"] = cfg.reform.printed_penalty_sign ? "printed" : "subtracted";
        s["stopping"] = cfg.reform.literal_and_stopping ? "and" : "or";
    } else {
        s["grid_points"] = o.grid_points;
    }
    return s;
}

/// One row of the compare/sweep tables.
struct SummaryRow {
    std::string algorithm;
    double eps_x = 0.0;
    double eps_f = 0.0;
    double mesh_tolerance = std::numeric_limits<double>::quiet_NaN();
    double initial_mesh = std::numeric_limits<double>::quiet_NaN();
    std::size_t grid_points = 0;
    Point solution;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::size_t iterations = 0;
    double total_ms = 0.0;
    double mean_maximizer_ms = 0.0;
    double mean_expander_ms = 0.0;
    std::size_t true_violations = 0;
    std::string stop_reason;
};

inline SummaryRow summary_row(const RunConfig& cfg, const RunOutcome& o) {
    SummaryRow row;
    row.algorithm = o.algorithm;
    if (o.algorithm == "reform") {
        row.eps_x = cfg.reform.eps_x;
        row.eps_f = cfg.reform.eps_f;
        row.mesh_tolerance = cfg.reform.subproblem.mesh_tolerance;
        row.initial_mesh = cfg.reform.subproblem.initial_mesh;
    } else {
        row.eps_x = cfg.grid.eps_x;
        row.eps_f = cfg.grid.eps_f;
        row.grid_points = o.grid_points;
    }
    row.solution = o.trace.best_point.size() == cfg.dim()
                       ? o.trace.best_point
                       : Point::Constant(cfg.dim(), std::numeric_limits<double>::quiet_NaN());
    row.objective = o.final_true_objective;
    row.iterations = o.trace.iterations();
    row.total_ms = o.total_ms;
    row.mean_maximizer_ms = o.mean_ms(&IterationRecord::maximizer_ms);
    row.mean_expander_ms = o.mean_ms(&IterationRecord::expander_ms);
    row.true_violations = o.true_violations;
    row.stop_reason = o.trace.stop_reason;
    return row;
}

inline std::vector<std::string> summary_columns(Eigen::Index dim) {
    std::vector<std::string> c{"algorithm", "eps_x", "eps_f", "mesh_tolerance", "initial_mesh", "grid_points"};
    for (Eigen::Index i = 0; i < dim; ++i) c.push_back("x" + std::to_string(i));
    c.insert(c.end(), {"objective", "iterations", "total_ms", "mean_maximizer_ms", "mean_expander_ms",
                       "true_violations", "stop_reason"});
    return c;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows, Eigen::Index dim) {
    const auto cols = summary_columns(dim);
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows) {
        os << r.algorithm << ',' << format_number(r.eps_x) << ',' << format_number(r.eps_f) << ','
           << format_number(r.mesh_tolerance) << ',' << format_number(r.initial_mesh) << ',' << r.grid_points;
        for (Eigen::Index i = 0; i < dim; ++i) os << ',' << format_number(r.solution[i]);
        os << ',' << format_number(r.objective) << ',' << r.iterations << ',' << format_number(r.total_ms) << ','
           << format_number(r.mean_maximizer_ms) << ',' << format_number(r.mean_expander_ms) << ','
           << r.true_violations << ',' << r.stop_reason << '\n';
    }
}

inline void write_trajectory_csv(std::ostream& os, const bench::SimResult& r) {
    os << "t,speed,position,speed_setpoint,position_setpoint\n";
    for (std::size_t i = 0; i < r.size(); ++i)
        os << format_number(r.time[i]) << ',' << format_number(r.speed[i]) << ',' << format_number(r.position[i])
           << ',' << format_number(r.speed_setpoint[i]) << ',' << format_number(r.position_setpoint[i]) << '\n';
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << content;
}

/// trace.csv, summary.json and (pid) trajectory files for one run.
inline void write_run_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const RunOutcome& o) {
    std::filesystem::create_directories(dir);
    std::ostringstream trace;
    write_trace_csv(trace, o.trace, cfg.dim(), cfg.gp_count());
    write_file(dir / "trace.csv", trace.str());
    write_file(dir / "summary.json", summary_json(cfg, o).dump(2) + "\n");
    if (cfg.benchmark != Benchmark::Pid) return;
    auto dump = [&](const std::string& name, const Point& x) {
        std::ostringstream os;
        write_trajectory_csv(os, bench::simulate(cfg.pid.plant, bench::CascadeController::from_point(x), cfg.pid.spec));
        write_file(dir / ("trajectory_" + name + ".csv"), os.str());
    };
    const Point* best_init = nullptr;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& x : cfg.initial_safe_set) {
        const double v = true_values(cfg, x).objective;
        if (v > best) {
            best = v;
            best_init = &x;
        }
    }
    if (best_init) dump("initial", *best_init);
    if (o.trace.best_point.size() == cfg.dim()) dump("final", o.trace.best_point);
}

/// Grid and reform on the same initial data and oracle seed.
inline std::vector<RunOutcome> compare(const RunConfig& cfg) {
    std::vector<RunOutcome> out;
    for (const std::string alg : {"grid", "reform"}) {
        const auto oracle = benchmark_oracle(cfg);
        const auto initial = initial_observations(cfg, oracle);
        out.push_back(run_algorithm(cfg, alg, initial, oracle));
    }
    return out;
}

/// Reform runs over the Cartesian product of sweep settings, ordered
/// (initial_mesh, eps, mesh_tolerance) with mesh_tolerance fastest.
inline std::vector<RunConfig> sweep_cells(const RunConfig& cfg) {
    std::vector<RunConfig> cells;
    for (double m : cfg.sweep.initial_meshes)
        for (const auto& [ex, ef] : cfg.sweep.eps)
            for (double t : cfg.sweep.mesh_tolerances) {
                RunConfig c = cfg;
                c.algorithm = "reform";
                c.reform.subproblem.initial_mesh = m;
                c.reform.subproblem.mesh_tolerance = t;
                c.reform.eps_x = ex;
                c.reform.eps_f = ef;
                cells.push_back(std::move(c));
            }
    return cells;
}

inline std::vector<RunOutcome> sweep(const RunConfig& cfg, unsigned jobs = 1) {
    const auto cells = sweep_cells(cfg);
    std::vector<RunOutcome> out(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < cells.size();) out[i] = run_config(cells[i]);
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, unsigned(cells.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return out;
}

/// GP posterior against a dense LU solve, and virtual observations against
/// full refits, on seeded random instances.
struct GpCheckReport {
    std::size_t instances = 0;
    double max_mean_error = 0.0;      // relative
    double max_variance_error = 0.0;  // relative
    double max_virtual_error = 0.0;   // absolute on mean and variance
    bool pass(double rel_tol = 1e-8, double virtual_tol = 1e-10) const {
        return max_mean_error <= rel_tol && max_variance_error <= rel_tol && max_virtual_error <= virtual_tol;
    }
};

inline GpCheckReport gp_check(std::uint64_t seed, std::size_t instances = 200) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GpCheckReport rep;
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const int n = 1 + int(u(rng) * 3);
        const int rows = 1 + int(u(rng) * 50);
        const double sf2 = 0.5 + 2.0 * u(rng);
        const double noise = std::pow(10.0, -4.0 + 3.0 * u(rng));
        Point ls(n);
        for (int i = 0; i < n; ++i) ls[i] = 0.2 + u(rng);
        const KernelSpec k(u(rng) < 0.5 ? KernelFamily::SquaredExponential : KernelFamily::Matern52, ls, sf2);
        Eigen::MatrixXd x(rows, n);
        Eigen::VectorXd y(rows);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < n; ++j) x(i, j) = u(rng);
            y[i] = 2.0 * u(rng) - 1.0;
        }
        const auto post = fit(k, GpData(x, y, noise));
        Eigen::MatrixXd kk(rows, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < rows; ++j)
                kk(i, j) = kernel_eval(k, x.row(i).transpose(), x.row(j).transpose()) + (i == j ? noise : 0.0);
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(kk);
        for (int q = 0; q < 5; ++q) {
            Point z(n);
            for (int j = 0; j < n; ++j) z[j] = u(rng);
            Eigen::VectorXd kz(rows);
            for (int i = 0; i < rows; ++i) kz[i] = kernel_eval(k, x.row(i).transpose(), z);
            const double mean = kz.dot(lu.solve(y));
            const double var = std::max(0.0, sf2 - kz.dot(lu.solve(kz)));
            const auto p = post.predict(z);
            rep.max_mean_error = std::max(rep.max_mean_error, std::abs(p.mean - mean) / std::max(std::abs(mean), sf2));
            rep.max_variance_error = std::max(rep.max_variance_error, std::abs(p.variance - var) / std::max(var, sf2));
        }
        if (inst % 2 == 0) {
            Point v(n);
            for (int j = 0; j < n; ++j) v[j] = u(rng);
            const double yv = 2.0 * u(rng) - 1.0;
            const auto ext = post.with_observation(v, yv);
            const auto ref = fit(k, post.data().appended(v, yv));
            for (int q = 0; q < 5; ++q) {
                Point z(n);
                for (int j = 0; j < n; ++j) z[j] = u(rng);
                const auto a = ext.predict(z), b = ref.predict(z);
                rep.max_virtual_error =
                    std::max({rep.max_virtual_error, std::abs(a.mean - b.mean), std::abs(a.variance - b.variance)});
            }
        }
        ++rep.instances;
    }
    return rep;
}

}  // namespace safeopt::exp
