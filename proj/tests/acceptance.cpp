// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "oracles.hpp"

#include "safeopt/benchmarks/quadratic.hpp"
#include "safeopt/experiment.hpp"
#include "safeopt/grid.hpp"
#include "safeopt/pattern_search.hpp"
#include "safeopt/reform.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace safeopt;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const std::string config_dir = std::string(SAFEOPT_SOURCE_DIR) + "/configs/";

// Quadratic benchmark from configs/quad.json. Noise-free runs do not depend on
// the seed, so each seed draws the second initial point uniformly from the
// disk of radius 0.3 around the origin (feasible, checked below).
Verdict quad_safety() {
    const auto t0 = std::chrono::steady_clock::now();
    auto base = exp::load_config(config_dir + "quad.json");
    base.model.band = ConfidenceBand(2.0);
    base.model.j_min = 0.0;
    base.reform.eps_x = base.reform.eps_f = 0.001;
    std::size_t violations = 0, iterates = 0;
    double worst_final = INFINITY;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto cfg = base;
        exp::set_seed(cfg, seed);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double r = 0.3 * std::sqrt(u(rng)), a = 2.0 * M_PI * u(rng);
        cfg.initial_safe_set = {make_point({0.0, 0.0}), make_point({r * std::cos(a), r * std::sin(a)})};
        for (const auto& x : cfg.initial_safe_set)
            if (!bench::quad_constraints(x).feasible()) return {false, "initial point infeasible"};
        const auto o = exp::run_config(cfg);
        if (!o.trace.error.empty()) return {false, "seed " + std::to_string(seed) + ": " + o.trace.error};
        const auto audit = bench::true_feasibility_audit(o.trace);
        violations += audit.violations;
        iterates += audit.checked;
        worst_final = std::min(worst_final, o.final_true_objective);
    }
    const double secs = seconds_since(t0);
    return {violations == 0 && worst_final >= -0.35 && secs < 120.0,
            fmt("10 seeds, %zu/%zu iterates infeasible, worst final objective %.4f (>= -0.35), %.1f s", violations,
                iterates, worst_final, secs)};
}

double rel_error(double a, double b, double scale) { return std::abs(a - b) / std::max(std::abs(b), scale); }

// Posterior against explicit extended-precision inversion; virtual
// observations against a refit on the appended data.
Verdict gp_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0, worst_virtual = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const int n = 1 + int(u(rng) * 3);
        const int rows = 1 + int(u(rng) * 50);
        const double sf2 = 0.5 + 2.0 * u(rng);
        const double noise = std::pow(10.0, -4.0 + 3.0 * u(rng));
        Point ls(n);
        for (int i = 0; i < n; ++i) ls[i] = 0.2 + u(rng);
        const KernelSpec k(u(rng) < 0.5 ? KernelFamily::SquaredExponential : KernelFamily::Matern52, ls, sf2);
        const Eigen::MatrixXd x = oracle::uniform_points(rng, rows, n);
        Eigen::VectorXd y(rows);
        for (int i = 0; i < rows; ++i) y[i] = 2.0 * u(rng) - 1.0;
        const auto post = fit(k, GpData(x, y, noise));
        for (int q = 0; q < 5; ++q) {
            const Point z = oracle::uniform_points(rng, 1, n).row(0).transpose();
            const auto ref = oracle::dense_predict(k, x, y, noise, z);
            const auto p = post.predict(z);
            worst = std::max({worst, rel_error(p.mean, ref.mean, sf2), rel_error(p.variance, ref.variance, sf2)});
        }
        if (inst % 2 == 0) {
            const Point v = oracle::uniform_points(rng, 1, n).row(0).transpose();
            const double yv = 2.0 * u(rng) - 1.0;
            const auto ext = with_virtual_observation(post, v, yv);
            const auto refit = fit(k, post.data().appended(v, yv));
            for (int q = 0; q < 5; ++q) {
                const Point z = oracle::uniform_points(rng, 1, n).row(0).transpose();
                const auto a = ext.predict(z), b = refit.predict(z);
                worst_virtual = std::max({worst_virtual, std::abs(a.mean - b.mean), std::abs(a.variance - b.variance)});
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-8 && worst_virtual <= 1e-10 && secs < 30.0,
            fmt("200 instances, max relative error %.2e (<= 1e-8); 100 virtual observations, max error %.2e "
                "(<= 1e-10), %.1f s",
                worst, worst_virtual, secs)};
}

struct RandomModel {
    SafeOptModel model;
    Box box;
};

// Unit-box model with 2..7 data points, constraint data in [0.5, 2]; retried
// until a nonempty safe set exists on `grid_counts`.
RandomModel random_model(std::mt19937_64& rng, int dim, std::size_t constraints, std::size_t per_axis) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Box box(Point::Zero(dim), Point::Ones(dim));
    for (;;) {
        const int r = 2 + int(u(rng) * 6);
        const auto x = oracle::uniform_points(rng, r, dim);
        const double ls = 0.1 + 0.25 * u(rng);
        std::vector<GpPosterior> posts;
        for (std::size_t i = 0; i <= constraints; ++i) {
            Eigen::VectorXd y(r);
            for (int j = 0; j < r; ++j) y[j] = i == 0 ? 2.0 * u(rng) - 1.0 : 0.5 + 1.5 * u(rng);
            posts.push_back(fit(KernelSpec::squared_exponential(Point::Constant(dim, ls), 0.5 + u(rng)),
                                GpData(x, y, 1e-4)));
        }
        SafeOptModel m(std::move(posts), ConfidenceBand(1.5 + u(rng)), 0.0);
        const auto g = grid::Grid::lattice(box, std::vector<std::size_t>(std::size_t(dim), per_axis));
        try {
            grid::safe_set(m, g);
            return {std::move(m), box};
        } catch (const SafeSetEmpty&) {
        }
    }
}

std::vector<Point> points_of(const grid::Grid& g) {
    std::vector<Point> out;
    for (std::size_t i = 0; i < g.size(); ++i) out.push_back(g.point(i));
    return out;
}

Verdict grid_sets() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(77);
    int mismatches = 0;
    std::size_t largest = 0, nonempty_expanders = 0;
    for (int inst = 0; inst < 50; ++inst) {
        const int dim = 1 + inst % 3;
        const std::size_t per_axis = dim == 1 ? 200 : dim == 2 ? 31 : 10;
        const std::size_t constraints = 1 + std::size_t(inst % 2);
        const auto rm = random_model(rng, dim, constraints, per_axis);
        const auto g = grid::Grid::lattice(rm.box, std::vector<std::size_t>(std::size_t(dim), per_axis));
        largest = std::max(largest, g.size());
        const auto sets = grid::compute_sets(rm.model, g, grid::BoundsTable::compute(rm.model, g));
        const auto loop = oracle::loop_sets(rm.model, points_of(g));
        if (sets.safe != loop.safe || sets.maximizers != loop.maximizers || sets.expanders != loop.expanders)
            ++mismatches;
        if (!loop.expanders.empty()) ++nonempty_expanders;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && largest <= 1000 && secs < 120.0,
            fmt("50 instances (<= %zu points, %zu with expanders), %d mismatches, %.1f s", largest, nonempty_expanders,
                mismatches, secs)};
}

Verdict reform_vs_grid() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(31);
    reform::ReformConfig cfg;
    cfg.subproblem.initial_mesh = 0.25;
    cfg.subproblem.mesh_tolerance = 1e-5;
    cfg.subproblem.multistart_count = 4;
    int good = 0;
    double worst_ratio = INFINITY;
    for (int inst = 0; inst < 50; ++inst) {
        const int dim = 1 + inst % 2;
        const std::size_t per_axis = dim == 1 ? 201 : 31;
        const auto rm = random_model(rng, dim, 1, per_axis);
        const auto g = grid::Grid::lattice(rm.box, std::vector<std::size_t>(std::size_t(dim), per_axis));
        const auto table = grid::BoundsTable::compute(rm.model, g);
        const auto sets = grid::compute_sets(rm.model, g, table);
        const double w_grid = grid::recommend(rm.model, g, table, sets).width;

        std::vector<Point> anchors;
        const auto& data = rm.model.posterior(0).data();
        for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) anchors.push_back(data.inputs.row(i).transpose());
        const double w_reform = reform::select(rm.model, rm.box, cfg, anchors).recommendation.width;
        const double ratio = w_reform / w_grid;
        worst_ratio = std::min(worst_ratio, ratio);
        if (w_reform >= 0.95 * w_grid) ++good;
    }
    const double secs = seconds_since(t0);
    return {good >= 45 && secs < 300.0,
            fmt("%d/50 instances with w_max >= 0.95x grid (need 45), worst ratio %.3f, %.1f s", good, worst_ratio,
                secs)};
}

// Concave quadratics with eigenvalues in [0.5, 2]; coordinate polling then
// stops within cond * sqrt(n) * tol of the maximizer.
Verdict pattern_search_properties() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const ps::PsConfig cfg{1.0, 1e-6, 1000000, 0};
    bool lattice_ok = true, monotone_ok = true;
    double worst = 0.0, worst_radius = 0.0;
    int converged = 0;
    for (int inst = 0; inst < 20; ++inst) {
        const int n = 1 + inst % 5;
        Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        const Eigen::MatrixXd q = qr.householderQ();
        Eigen::VectorXd ev(n);
        for (int i = 0; i < n; ++i) ev[i] = 0.5 + 0.75 * (u(rng) + 1.0);
        const Eigen::MatrixXd h = q * ev.asDiagonal() * q.transpose();
        Point c(n);
        for (int i = 0; i < n; ++i) c[i] = u(rng);
        ps::PsProblem p;
        p.objective = [h, c](const Point& x) { return -(x - c).dot(h * (x - c)); };
        p.box = Box(Point::Constant(n, -3.0), Point::Constant(n, 3.0));
        double last = -INFINITY;
        auto observer = [&](const ps::MeshState& s, bool) {
            if (s.mesh_size() != std::ldexp(cfg.initial_mesh, s.exponent())) lattice_ok = false;
            if (s.incumbent_value() < last) monotone_ok = false;
            last = s.incumbent_value();
        };
        Point start(n);
        for (int i = 0; i < n; ++i) start[i] = 2.5 * u(rng);
        const auto r = ps::maximize(p, start, cfg, ps::Pattern::coordinate(n), {}, observer);
        const double radius = 10.0 * cfg.mesh_tolerance * (ev.maxCoeff() / ev.minCoeff()) * std::sqrt(double(n));
        const double dist = (r.best_point - c).norm();
        worst = std::max(worst, dist / radius);
        worst_radius = std::max(worst_radius, radius);
        if (r.status == ps::PsStatus::MeshConverged && dist <= radius) ++converged;
    }
    const double secs = seconds_since(t0);
    return {lattice_ok && monotone_ok && converged == 20 && secs < 30.0,
            fmt("mesh on lattice: %s, incumbent monotone: %s, %d/20 within radius (worst %.2f of radius <= %.1e), "
                "%.1f s",
                lattice_ok ? "yes" : "no", monotone_ok ? "yes" : "no", converged, worst, worst_radius, secs)};
}

// configs/pid.json swept over mesh tolerance with the iteration count fixed.
// Per-cell timings are medians over three repetitions.
Verdict pid_sweep_trend() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = exp::load_config(config_dir + "pid.json", {"sweep"});
    cfg.sweep.mesh_tolerances = {1e-6, 1e-4, 1e-2};
    const std::size_t cells = cfg.sweep.mesh_tolerances.size() * cfg.sweep.eps.size() * cfg.sweep.initial_meshes.size();
    if (cells != 3) return {false, "sweep must vary only the mesh tolerance"};
    std::vector<std::vector<double>> exp_ms(3), max_ms(3);
    for (int rep = 0; rep < 3; ++rep) {
        const auto runs = exp::sweep(cfg, 1);
        for (std::size_t i = 0; i < 3; ++i) {
            if (!runs[i].trace.error.empty()) return {false, "run error: " + runs[i].trace.error};
            exp_ms[i].push_back(runs[i].mean_ms(&IterationRecord::expander_ms));
            max_ms[i].push_back(runs[i].mean_ms(&IterationRecord::maximizer_ms));
        }
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    double e[3], m[3];
    for (int i = 0; i < 3; ++i) {
        e[i] = median(exp_ms[i]);
        m[i] = median(max_ms[i]);
    }
    const double secs = seconds_since(t0);
    const bool strict_expander = e[0] > e[1] && e[1] > e[2];
    const bool decreasing_maximizer = m[0] >= m[1] && m[1] >= m[2];
    return {strict_expander && decreasing_maximizer && secs < 600.0,
            fmt("mesh tol 1e-6/1e-4/1e-2: mean expander ms %.2f > %.2f > %.2f, mean maximizer ms %.3f >= %.3f >= %.3f, "
                "%.1f s",
                e[0], e[1], e[2], m[0], m[1], m[2], secs)};
}

Verdict pid_safety_progress() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = exp::load_config(config_dir + "pid.json");
    cfg.pid.objective_noise_std = 0.0;
    cfg.pid.constraint_noise_std = 0.0;
    cfg.initial_safe_set.clear();
    for (const auto& c : bench::pid_initial_safe_set()) cfg.initial_safe_set.push_back(c.to_point());
    const auto o = exp::run_config(cfg);
    if (!o.trace.error.empty()) return {false, "run error: " + o.trace.error};
    const double secs = seconds_since(t0);
    return {o.model_safe && o.violation_rate() <= 0.10 && o.final_true_objective > o.best_initial_true_objective &&
                secs < 600.0,
            fmt("model-safe: %s, true violations %zu/%zu (rate %.3f <= 0.10), final -J %.3f vs best initial %.3f, "
                "%.1f s",
                o.model_safe ? "yes" : "no", o.true_violations, o.trace.records.size(), o.violation_rate(),
                o.final_true_objective, o.best_initial_true_objective, secs)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"quadratic benchmark safety", quad_safety},
        {"GP oracle equivalence", gp_equivalence},
        {"grid sets match loop oracle", grid_sets},
        {"reformulated vs grid selection width", reform_vs_grid},
        {"pattern search properties", pattern_search_properties},
        {"PID sweep timing trend", pid_sweep_trend},
        {"PID safety and progress", pid_safety_progress},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
