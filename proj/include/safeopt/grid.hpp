#pragma once

#include "safeopt/model.hpp"
#include "safeopt/trace.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

// Classic SafeOpt over a finite lattice of the search box.
namespace safeopt::grid {

using IndexSet = std::vector<std::size_t>;  // sorted ascending grid indices

/// Finite lattice. Points are generated row-major (last axis varies fastest);
/// this order is the tie-breaking order of every argmax below.
class Grid {
public:
    static Grid lattice(const Box& box, const std::vector<std::size_t>& per_axis_counts) {
        box.validate();
        const auto n = static_cast<std::size_t>(box.dim());
        if (per_axis_counts.size() != n) throw InputError("grid needs one count per axis");
        std::size_t total = 1;
        for (auto c : per_axis_counts) {
            if (c == 0) throw InputError("grid axis count must be positive");
            total *= c;
        }
        Grid g;
        g.box_ = box;
        g.counts_ = per_axis_counts;
        g.points_.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(n));
        std::vector<std::size_t> idx(n, 0);
        for (std::size_t p = 0; p < total; ++p) {
            for (std::size_t a = 0; a < n; ++a) {
                const auto ai = static_cast<Eigen::Index>(a);
                const double lo = box.lower[ai], hi = box.upper[ai];
                const std::size_t c = per_axis_counts[a];
                g.points_(static_cast<Eigen::Index>(p), ai) =
                    c == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(idx[a]) / static_cast<double>(c - 1);
            }
            for (std::size_t a = n; a-- > 0;) {
                if (++idx[a] < per_axis_counts[a]) break;
                idx[a] = 0;
            }
        }
        return g;
    }

    /// Grid over explicit points (must be distinct and inside the box).
    static Grid from_points(const Box& box, Eigen::MatrixXd points) {
        Grid g;
        g.box_ = box;
        g.points_ = std::move(points);
        for (Eigen::Index i = 0; i < g.points_.rows(); ++i)
            if (!box.contains(g.points_.row(i).transpose())) throw InputError("grid point outside the box");
        return g;
    }

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    Point point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }
    const Eigen::MatrixXd& points() const { return points_; }
    const Box& box() const { return box_; }
    const std::vector<std::size_t>& per_axis_counts() const { return counts_; }

private:
    Box box_;
    std::vector<std::size_t> counts_;
    Eigen::MatrixXd points_;
};

/// l/u of every GP at every grid point.
struct BoundsTable {
    std::vector<std::vector<Interval>> rows;  // [grid index][gp index]

    static BoundsTable compute(const SafeOptModel& model, const Grid& grid) {
        BoundsTable t;
        t.rows.resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) t.rows[i] = model.all_bounds(grid.point(i));
        return t;
    }

    double lower(std::size_t i, std::size_t gp) const { return rows[i][gp].lower; }
    double upper(std::size_t i, std::size_t gp) const { return rows[i][gp].upper; }
    double width(std::size_t i, std::size_t gp) const { return rows[i][gp].width(); }
};

struct IterationSets {
    IndexSet safe;
    IndexSet maximizers;
    IndexSet expanders;
};

/// Instrumentation for the expander search.
struct ExpanderStats {
    std::size_t aux_fits = 0;           // candidate points x-bar with auxiliary posteriors built
    std::size_t bound_evaluations = 0;  // (x-bar, x') pairs whose auxiliary bounds were evaluated
};

struct ExpanderOptions {
    // Stop scanning outside points for a candidate once one is certified.
    bool short_circuit = true;
};

/// Points whose constraint lower bounds all reach j_min. The objective is not consulted.
inline IndexSet safe_set(const SafeOptModel& model, const Grid& grid, const BoundsTable& table) {
    IndexSet out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 1; j < model.gp_count() && ok; ++j) ok = table.lower(i, j) >= model.j_min();
        if (ok) out.push_back(i);
    }
    if (out.empty()) throw SafeSetEmpty();
    return out;
}

inline IndexSet safe_set(const SafeOptModel& model, const Grid& grid) {
    return safe_set(model, grid, BoundsTable::compute(model, grid));
}

inline IndexSet maximizers(const SafeOptModel& model, const BoundsTable& table, const IndexSet& safe) {
    (void)model;
    double best_lower = -std::numeric_limits<double>::infinity();
    for (auto i : safe) best_lower = std::max(best_lower, table.lower(i, 0));
    IndexSet out;
    for (auto i : safe)
        if (table.upper(i, 0) >= best_lower) out.push_back(i);
    return out;
}

inline IndexSet maximizers(const SafeOptModel& model, const Grid& grid, const IndexSet& safe) {
    return maximizers(model, BoundsTable::compute(model, grid), safe);
}

/// Safe points whose optimistic constraint models certify at least one
/// currently unsafe grid point. Candidates are visited in descending
/// max-width order; the resulting set does not depend on that order.
inline IndexSet expanders(const SafeOptModel& model, const Grid& grid, const BoundsTable& table, const IndexSet& safe,
                          const ExpanderOptions& options = {}, ExpanderStats* stats = nullptr) {
    IndexSet outside;
    {
        std::size_t s = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (s < safe.size() && safe[s] == i) {
                ++s;
                continue;
            }
            outside.push_back(i);
        }
    }
    if (outside.empty()) return {};

    auto max_width = [&](std::size_t i) {
        double w = -std::numeric_limits<double>::infinity();
        for (auto k : model.width_indices()) w = std::max(w, table.width(i, k));
        return w;
    };
    IndexSet order = safe;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return max_width(a) > max_width(b); });

    IndexSet out;
    for (auto cand : order) {
        const Point xbar = grid.point(cand);
        std::vector<GpPosterior> aux;
        aux.reserve(model.gp_count());
        for (std::size_t j = 1; j < model.gp_count(); ++j)
            aux.push_back(model.posterior(j).with_observation(xbar, table.upper(cand, j)));
        if (stats) ++stats->aux_fits;
        bool certified = false;
        for (auto o : outside) {
            if (stats) ++stats->bound_evaluations;
            const Point xp = grid.point(o);
            bool all = true;
            for (const auto& post : aux) {
                if (post.bounds(xp, model.band()).lower < model.j_min()) {
                    all = false;
                    break;
                }
            }
            if (all) {
                certified = true;
                if (options.short_circuit) break;
            }
        }
        if (certified) out.push_back(cand);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline IndexSet expanders(const SafeOptModel& model, const Grid& grid, const IndexSet& safe,
                          const ExpanderOptions& options = {}, ExpanderStats* stats = nullptr) {
    return expanders(model, grid, BoundsTable::compute(model, grid), safe, options, stats);
}

inline IterationSets compute_sets(const SafeOptModel& model, const Grid& grid, const BoundsTable& table,
                                  ExpanderStats* stats = nullptr) {
    IterationSets sets;
    sets.safe = safe_set(model, grid, table);
    sets.maximizers = maximizers(model, table, sets.safe);
    sets.expanders = expanders(model, grid, table, sets.safe, {}, stats);
    return sets;
}

/// Argmax over M ∪ G of the largest width; grid order then GP index on ties.
inline Recommendation recommend(const SafeOptModel& model, const Grid& grid, const BoundsTable& table,
                                const IterationSets& sets) {
    IndexSet candidates;
    std::set_union(sets.maximizers.begin(), sets.maximizers.end(), sets.expanders.begin(), sets.expanders.end(),
                   std::back_inserter(candidates));
    if (candidates.empty()) throw NoCandidates();
    std::size_t best_point = candidates.front();
    std::size_t best_gp = model.width_indices().front();
    double best = -std::numeric_limits<double>::infinity();
    for (auto i : candidates) {
        for (auto k : model.width_indices()) {
            const double w = table.width(i, k);
            if (w > best || (w == best && i == best_point && k < best_gp)) {
                best = w;
                best_point = i;
                best_gp = k;
            }
        }
    }
    const bool is_max = std::binary_search(sets.maximizers.begin(), sets.maximizers.end(), best_point);
    Recommendation r;
    r.point = grid.point(best_point);
    r.source = is_max ? Source::Maximizer : Source::Expander;
    r.driving_index = best_gp;
    r.bounds_at_point = table.rows[best_point];
    r.width = r.bounds_at_point[best_gp].width();
    return r;
}

inline Recommendation recommend(const SafeOptModel& model, const Grid& grid, const IterationSets& sets) {
    return recommend(model, grid, BoundsTable::compute(model, grid), sets);
}

struct BestEstimate {
    Point point;
    double lower = 0.0;
    std::size_t index = 0;
};

/// Safe grid point with the largest objective lower bound (first in grid order on ties).
inline BestEstimate best_estimate(const SafeOptModel& model, const Grid& grid, const BoundsTable& table,
                                  const IndexSet& safe) {
    (void)model;
    if (safe.empty()) throw SafeSetEmpty();
    std::size_t arg = safe.front();
    for (auto i : safe)
        if (table.lower(i, 0) > table.lower(arg, 0)) arg = i;
    return {grid.point(arg), table.lower(arg, 0), arg};
}

inline BestEstimate best_estimate(const SafeOptModel& model, const Grid& grid, const IndexSet& safe) {
    return best_estimate(model, grid, BoundsTable::compute(model, grid), safe);
}

struct StepResult {
    Recommendation recommendation;
    SafeOptModel model;
    IterationSets sets;
    BestEstimate estimate;
    std::vector<double> observation;
    ExpanderStats stats;
};

/// Compute the sets, recommend, query the oracle and append the observation.
inline StepResult grid_step(const SafeOptModel& model, const Grid& grid, const VectorOracle& oracle) {
    const BoundsTable table = BoundsTable::compute(model, grid);
    ExpanderStats stats;
    IterationSets sets = compute_sets(model, grid, table, &stats);
    BestEstimate est = best_estimate(model, grid, table, sets.safe);
    Recommendation rec = recommend(model, grid, table, sets);
    std::vector<double> obs = oracle(rec.point);
    SafeOptModel next = model.observed(rec.point, obs);
    return {std::move(rec), std::move(next), std::move(sets), std::move(est), std::move(obs), stats};
}

struct GridRunConfig {
    std::size_t max_iterations = 10;
    double eps_x = 0.0;
    double eps_f = 0.0;
};

/// Repeated grid steps. Algorithm errors end the run and are reported in
/// trace.error. Stops at max_iterations, or earlier when consecutive
/// recommendations and their observed objective both moved less than the
/// tolerances (only if a tolerance is positive).
inline RunTrace run(const VectorOracle& oracle, Observations obs, const ModelSpec& spec, const Grid& grid,
                    const GridRunConfig& cfg) {
    RunTrace trace;
    trace.algorithm = "grid";
    SafeOptModel model = build_model(spec, obs);
    std::optional<Point> prev_x;
    double prev_f = 0.0;
    for (std::size_t n = 1;; ++n) {
        IterationRecord rec;
        rec.n = n;
        Stopwatch sw;
        std::optional<StepResult> maybe;
        try {
            maybe.emplace(grid_step(model, grid, oracle));
        } catch (const std::exception& e) {
            trace.error = e.what();
            trace.stop_reason = "error";
            return trace;
        }
        StepResult& step = *maybe;
        rec.select_ms = sw.elapsed_ms();
        rec.recommendation = step.recommendation;
        rec.best_estimate = step.estimate.point;
        rec.l_star = step.estimate.lower;
        rec.observation = step.observation;
        rec.expander_status = step.sets.expanders.empty() ? "none" : "valid";
        model = std::move(step.model);
        if (prev_x) {
            rec.x_tol_met = (rec.recommendation.point - *prev_x).norm() <= cfg.eps_x;
            rec.f_tol_met = std::abs(rec.observation.front() - prev_f) <= cfg.eps_f;
        }
        rec.max_iter_met = n >= cfg.max_iterations;
        prev_x = rec.recommendation.point;
        prev_f = rec.observation.front();
        const bool tol_stop = (cfg.eps_x > 0.0 || cfg.eps_f > 0.0) && rec.x_tol_met && rec.f_tol_met;
        trace.records.push_back(std::move(rec));
        if (trace.records.back().max_iter_met || tol_stop) {
            trace.stop_reason = tol_stop ? "tolerance" : "max_iterations";
            break;
        }
    }
    try {
        const BoundsTable table = BoundsTable::compute(model, grid);
        const auto est = best_estimate(model, grid, table, safe_set(model, grid, table));
        trace.best_point = est.point;
        trace.best_lower = est.lower;
    } catch (const std::exception& e) {
        trace.error = e.what();
        trace.stop_reason = "error";
    }
    return trace;
}

}  // namespace safeopt::grid
