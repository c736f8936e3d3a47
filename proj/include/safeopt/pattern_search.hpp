#pragma once

#include "safeopt/core.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace safeopt::ps {

/// Ordered list of integer poll directions. The order is the polling order
/// and the tie-breaking order.
struct Pattern {
    std::vector<Eigen::VectorXi> directions;

    Eigen::Index dim() const { return directions.empty() ? 0 : directions.front().size(); }

    /// +e_1, -e_1, +e_2, -e_2, ...
    static Pattern coordinate(Eigen::Index n) {
        Pattern p;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXi d = Eigen::VectorXi::Zero(n);
            d[i] = 1;
            p.directions.push_back(d);
            d[i] = -1;
            p.directions.push_back(d);
        }
        return p;
    }

    /// e_1, ..., e_n, -(1,...,1): the n+1 minimal positive basis.
    static Pattern minimal(Eigen::Index n) {
        Pattern p;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXi d = Eigen::VectorXi::Zero(n);
            d[i] = 1;
            p.directions.push_back(d);
        }
        p.directions.push_back(-Eigen::VectorXi::Ones(n));
        return p;
    }

    /// [0,1], [1,0], [-1,-1]
    static Pattern three_direction_2d() {
        Pattern p;
        p.directions.push_back((Eigen::VectorXi(2) << 0, 1).finished());
        p.directions.push_back((Eigen::VectorXi(2) << 1, 0).finished());
        p.directions.push_back((Eigen::VectorXi(2) << -1, -1).finished());
        return p;
    }

    static Pattern named(const std::string& name, Eigen::Index n) {
        if (name == "coordinate") return coordinate(n);
        if (name == "minimal") return minimal(n);
        if (name == "three_direction") {
            if (n != 2) throw InputError("three_direction pattern exists only in 2-D");
            return three_direction_2d();
        }
        throw InputError("unknown pattern '" + name + "'");
    }

    /// Largest Euclidean norm of a direction.
    double radius() const {
        double r = 0.0;
        for (const auto& d : directions) r = std::max(r, d.cast<double>().norm());
        return r;
    }

    /// Randomized positive-spanning check: every sampled unit vector has
    /// positive inner product with some direction.
    bool positively_spans(int samples = 1000, std::uint64_t seed = 7) const {
        const Eigen::Index n = dim();
        if (n == 0) return false;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal;
        for (int s = 0; s < samples; ++s) {
            Eigen::VectorXd v(n);
            for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
            v.normalize();
            bool hit = false;
            for (const auto& d : directions)
                if (v.dot(d.cast<double>()) > 0.0) {
                    hit = true;
                    break;
                }
            if (!hit) return false;
        }
        return true;
    }
};

/// Incumbent and mesh size. The mesh size is stored as initial_mesh * 2^exponent
/// so the lattice invariant holds exactly.
class MeshState {
public:
    MeshState(Point incumbent, double mesh_size, double incumbent_value)
        : incumbent_(std::move(incumbent)), initial_mesh_(mesh_size), incumbent_value_(incumbent_value) {
        if (!(mesh_size > 0.0) || !std::isfinite(mesh_size)) throw InputError("mesh size must be positive");
    }

    const Point& incumbent() const { return incumbent_; }
    double incumbent_value() const { return incumbent_value_; }
    double initial_mesh() const { return initial_mesh_; }
    int exponent() const { return exponent_; }
    double mesh_size() const { return std::ldexp(initial_mesh_, exponent_); }

    MeshState expanded(Point incumbent, double value) const {
        MeshState s = *this;
        s.incumbent_ = std::move(incumbent);
        s.incumbent_value_ = value;
        ++s.exponent_;
        return s;
    }

    MeshState contracted() const {
        MeshState s = *this;
        --s.exponent_;
        return s;
    }

private:
    Point incumbent_;
    double initial_mesh_;
    int exponent_ = 0;
    double incumbent_value_;
};

struct PsConfig {
    static constexpr double expansion_factor = 2.0;
    static constexpr double contraction_factor = 0.5;

    double initial_mesh = 1.0;
    double mesh_tolerance = 1e-6;
    std::size_t max_evaluations = 100000;
    std::size_t multistart_count = 0;

    void validate() const {
        if (!(initial_mesh > 0.0)) throw InputError("initial mesh must be positive");
        if (!(mesh_tolerance > 0.0)) throw InputError("mesh tolerance must be positive");
        if (!(mesh_tolerance < initial_mesh)) throw InputError("mesh tolerance must be below the initial mesh");
        if (max_evaluations == 0) throw InputError("evaluation budget must be positive");
    }
};

using Oracle = std::function<double(const Point&)>;

/// Maximize objective subject to constraint(x) >= 0 for every hard constraint
/// and x inside the box.
struct PsProblem {
    Oracle objective;
    std::vector<Oracle> hard_constraints;
    Box box;
};

enum class PsStatus { MeshConverged, EvalBudget, InfeasibleStart };

inline std::string to_string(PsStatus s) {
    switch (s) {
        case PsStatus::MeshConverged: return "mesh_converged";
        case PsStatus::EvalBudget: return "eval_budget";
        case PsStatus::InfeasibleStart: return "infeasible_start";
    }
    return "?";
}

struct PsResult {
    Point best_point;
    double best_value = -std::numeric_limits<double>::infinity();
    double final_mesh = 0.0;
    std::size_t evaluations = 0;
    PsStatus status = PsStatus::InfeasibleStart;
};

constexpr double barrier_value = -std::numeric_limits<double>::infinity();

/// Extreme-barrier value: -inf outside the box or when any constraint is
/// negative, objective otherwise. Constraints are checked before the objective.
inline double barrier_evaluate(const PsProblem& problem, const Point& x) {
    if (!problem.box.contains(x)) return barrier_value;
    for (const auto& g : problem.hard_constraints) {
        const double v = g(x);
        if (!(v >= 0.0)) return barrier_value;
    }
    const double f = problem.objective(x);
    return std::isnan(f) ? barrier_value : f;
}

inline std::vector<Point> poll_points(const MeshState& state, const Pattern& pattern) {
    if (pattern.dim() != state.incumbent().size())
        throw InputError("pattern dimension does not match incumbent");
    std::vector<Point> out;
    out.reserve(pattern.directions.size());
    const double delta = state.mesh_size();
    for (const auto& d : pattern.directions) out.push_back(state.incumbent() + delta * d.cast<double>());
    return out;
}

struct PollOutcome {
    MeshState state;
    bool moved = false;
};

/// One complete poll: all candidates are evaluated, then the best strict
/// improvement (lowest index on ties) is accepted.
inline PollOutcome poll_step(const PsProblem& problem, const MeshState& state, const Pattern& pattern,
                             std::size_t* evaluations = nullptr) {
    const auto candidates = poll_points(state, pattern);
    std::vector<double> values(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) values[i] = barrier_evaluate(problem, candidates[i]);
    if (evaluations) *evaluations += candidates.size();

    std::size_t best = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (values[i] > state.incumbent_value() && (best == candidates.size() || values[i] > values[best]))
            best = i;
    if (best == candidates.size()) return {state.contracted(), false};
    return {state.expanded(candidates[best], values[best]), true};
}

using PollObserver = std::function<void(const MeshState&, bool moved)>;

namespace detail {

inline PsResult search_from(const PsProblem& problem, const Point& start, const PsConfig& config,
                            const Pattern& pattern, const PollObserver& observer) {
    PsResult result;
    result.best_point = start;
    const double v0 = barrier_evaluate(problem, start);
    result.evaluations = 1;
    if (v0 == barrier_value) {
        result.status = PsStatus::InfeasibleStart;
        result.final_mesh = config.initial_mesh;
        return result;
    }
    MeshState state(start, config.initial_mesh, v0);
    while (state.mesh_size() > config.mesh_tolerance && result.evaluations < config.max_evaluations) {
        auto outcome = poll_step(problem, state, pattern, &result.evaluations);
        state = std::move(outcome.state);
        if (observer) observer(state, outcome.moved);
    }
    result.best_point = state.incumbent();
    result.best_value = state.incumbent_value();
    result.final_mesh = state.mesh_size();
    result.status = state.mesh_size() <= config.mesh_tolerance ? PsStatus::MeshConverged : PsStatus::EvalBudget;
    return result;
}

}  // namespace detail

/// One result per start actually searched: `start` first, then up to
/// multistart_count of `extra_starts`. Stops after an infeasible primary start.
inline std::vector<PsResult> maximize_each(const PsProblem& problem, const Point& start, const PsConfig& config,
                                           const Pattern& pattern, const std::vector<Point>& extra_starts = {},
                                           const PollObserver& observer = {}) {
    config.validate();
    problem.box.validate();
    if (start.size() != problem.box.dim() || pattern.dim() != problem.box.dim())
        throw InputError("pattern search: dimension mismatch between start, pattern and box");

    std::vector<PsResult> out{detail::search_from(problem, start, config, pattern, observer)};
    if (out.front().status == PsStatus::InfeasibleStart) return out;
    const std::size_t extra = std::min(config.multistart_count, extra_starts.size());
    for (std::size_t i = 0; i < extra; ++i) {
        if (extra_starts[i].size() != start.size()) throw InputError("pattern search: multistart dimension mismatch");
        out.push_back(detail::search_from(problem, extra_starts[i], config, pattern, observer));
    }
    return out;
}

/// Generalized pattern search with extreme-barrier constraints. Runs from
/// `start`, then from up to multistart_count of `extra_starts`; the best
/// feasible result wins (earliest start on ties). An infeasible primary start
/// yields InfeasibleStart. `evaluations` counts every start.
inline PsResult maximize(const PsProblem& problem, const Point& start, const PsConfig& config,
                         const Pattern& pattern, const std::vector<Point>& extra_starts = {},
                         const PollObserver& observer = {}) {
    auto runs = maximize_each(problem, start, config, pattern, extra_starts, observer);
    std::size_t total = 0, best = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        total += runs[i].evaluations;
        if (i > 0 && runs[i].status != PsStatus::InfeasibleStart && runs[i].best_value > runs[best].best_value)
            best = i;
    }
    PsResult r = std::move(runs[best]);
    r.evaluations = total;
    return r;
}

}  // namespace safeopt::ps
