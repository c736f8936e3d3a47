#pragma once

#include "safeopt/model.hpp"
#include "safeopt/pattern_search.hpp"
#include "safeopt/trace.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

// SafeOpt point selection as constrained continuous subproblems solved by
// pattern search:
//   l*    = max l(z,0)        s.t. l(z,j) >= J_min
//   P1^k  = max w(x,k)        s.t. l(x,j) >= J_min, u(x,0) >= l*
//   P2^k  = max q_k(x,x')     s.t. min_s l(x,s) >= J_min, min_s l(x',s) < J_min
// where q_k penalizes x' not being certified by the optimistic constraint
// models conditioned on (x, u(x,s)).
namespace safeopt::reform {

/// No point outside the model safe set was found by the probe scan.
class NoOutsideStart : public std::runtime_error {
public:
    NoOutsideStart() : std::runtime_error("no start point outside the safe set was found") {}
};

struct ReformConfig {
    double eps_x = 1e-3;
    double eps_f = 1e-3;
    std::size_t max_iterations = 20;
    double penalty_weight = 1.0;
    double expander_validity_tol = 1e-6;
    // Open constraint min_s l(x',s) < J_min is enforced as <= J_min - strict_margin.
    double strict_margin = 1e-9;
    std::size_t probes_per_face = 16;
    // Stop when n >= M AND both tolerances hold, instead of OR.
    bool literal_and_stopping = false;
    // Hard stop for literal_and_stopping runs.
    std::size_t iteration_cap = 1000;
    // Penalty as printed: q = w - sigma * min{0, v}, which rewards violation.
    bool printed_penalty_sign = false;
    // Previous expander recommendations kept as extra subproblem starts.
    std::size_t remembered_expanders = 4;
    // Halton points in the box offered as multistart candidates; candidates
    // are ranked by width before the multistart budget is applied.
    std::size_t start_samples = 0;
    ps::PsConfig subproblem;
    std::string pattern = "coordinate";

    void validate() const {
        if (max_iterations < 1) throw InputError("max_iterations must be at least 1");
        if (!(penalty_weight > 0.0)) throw InputError("penalty_weight must be positive");
        if (!(eps_x >= 0.0) || !(eps_f >= 0.0)) throw InputError("stopping tolerances must be nonnegative");
        if (!(expander_validity_tol >= 0.0)) throw InputError("expander_validity_tol must be nonnegative");
        if (!(strict_margin >= 0.0)) throw InputError("strict_margin must be nonnegative");
        if (probes_per_face == 0) throw InputError("probes_per_face must be positive");
        subproblem.validate();
    }
};

/// Poll pattern of the joint (x, x') problem: each direction of the base
/// pattern applied to x and to x' separately.
inline ps::Pattern joint_pattern(const ps::Pattern& base) {
    const Eigen::Index n = base.dim();
    ps::Pattern p;
    for (int half = 0; half < 2; ++half)
        for (const auto& d : base.directions) {
            Eigen::VectorXi v = Eigen::VectorXi::Zero(2 * n);
            v.segment(half * n, n) = d;
            p.directions.push_back(v);
        }
    return p;
}

inline Box joint_box(const Box& box) {
    const Eigen::Index n = box.dim();
    Point lo(2 * n), hi(2 * n);
    lo << box.lower, box.lower;
    hi << box.upper, box.upper;
    return Box(lo, hi);
}

struct SubproblemSolution {
    Point point;
    Point partner;  // x' for expander problems, empty otherwise
    std::size_t gp_index = 0;
    double value = 0.0;      // subproblem objective (w for P1, q for P2)
    double width = 0.0;      // w(point, gp_index)
    double violation = 0.0;  // expander certification violation, 0 for maximizers
    ps::PsStatus status = ps::PsStatus::MeshConverged;
    std::size_t evaluations = 0;
};

struct LStar {
    Point point;
    double value = 0.0;
    ps::PsResult search;
};

inline ps::Pattern make_pattern(const ReformConfig& cfg, Eigen::Index dim) { return ps::Pattern::named(cfg.pattern, dim); }

/// max l(z,0) s.t. l(z,j) >= J_min, z in box. Throws SafeSetEmpty if the
/// start is not model-safe.
inline LStar solve_lstar(const SafeOptModel& model, const Box& box, const ReformConfig& cfg, const Point& start,
                         const std::vector<Point>& extra_starts = {}) {
    ps::PsProblem problem;
    problem.box = box;
    problem.objective = [&](const Point& z) { return model.lower(0, z); };
    for (std::size_t j = 1; j < model.gp_count(); ++j)
        problem.hard_constraints.push_back([&, j](const Point& z) { return model.lower(j, z) - model.j_min(); });
    auto res = ps::maximize(problem, start, cfg.subproblem, make_pattern(cfg, box.dim()), extra_starts);
    if (res.status == ps::PsStatus::InfeasibleStart) throw SafeSetEmpty();
    return {res.best_point, res.best_value, res};
}

/// max w(x,k) s.t. l(x,j) >= J_min, u(x,0) >= l*. An infeasible start
/// falls back to the start point with its width.
inline SubproblemSolution solve_P1k(const SafeOptModel& model, std::size_t k, double l_star, const Box& box,
                                    const ReformConfig& cfg, const Point& start,
                                    const std::vector<Point>& extra_starts = {}) {
    ps::PsProblem problem;
    problem.box = box;
    problem.objective = [&, k](const Point& x) { return model.width(k, x); };
    for (std::size_t j = 1; j < model.gp_count(); ++j)
        problem.hard_constraints.push_back([&, j](const Point& x) { return model.lower(j, x) - model.j_min(); });
    problem.hard_constraints.push_back([&, l_star](const Point& x) { return model.upper(0, x) - l_star; });
    const auto res = ps::maximize(problem, start, cfg.subproblem, make_pattern(cfg, box.dim()), extra_starts);
    SubproblemSolution sol;
    sol.gp_index = k;
    sol.status = res.status;
    sol.evaluations = res.evaluations;
    sol.point = res.status == ps::PsStatus::InfeasibleStart ? start : res.best_point;
    sol.width = model.width(k, sol.point);
    sol.value = sol.width;
    return sol;
}

/// Largest subproblem value, lowest position on ties.
inline SubproblemSolution select_x1(const std::vector<SubproblemSolution>& solutions) {
    if (solutions.empty()) throw InputError("select_x1 needs at least one solution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < solutions.size(); ++i)
        if (solutions[i].value > solutions[best].value) best = i;
    return solutions[best];
}

struct Penalty {
    double q = 0.0;
    double violation = 0.0;
};

/// q_k(x, x') = w(x,k) - sigma * max{0, J_min - min_s l_aux(x',s)}, where
/// l_aux comes from the constraint models conditioned on (x, u(x,s)).
inline Penalty expander_penalty(const SafeOptModel& model, std::size_t k, const Point& x, const Point& x_prime,
                                const ReformConfig& cfg) {
    const auto aux = model.optimistic_constraints(x);
    const double m = min_lower(aux, model.band(), x_prime);
    Penalty p;
    p.violation = std::max(0.0, model.j_min() - m);
    const double w = model.width(k, x);
    p.q = cfg.printed_penalty_sign ? w - cfg.penalty_weight * std::min(0.0, m - model.j_min())
                                   : w - cfg.penalty_weight * p.violation;
    return p;
}

/// Points strictly outside the model safe set found by scanning from x
/// toward each box face along the coordinate axes (faces ordered
/// -e_1, +e_1, -e_2, ...). At most one probe per face: the first unsafe one.
inline std::vector<Point> outside_probes(const SafeOptModel& model, const Box& box, const Point& x,
                                         const ReformConfig& cfg) {
    std::vector<Point> out;
    const double limit = model.j_min() - cfg.strict_margin;
    for (Eigen::Index a = 0; a < box.dim(); ++a) {
        for (int side = 0; side < 2; ++side) {
            const double face = side == 0 ? box.lower[a] : box.upper[a];
            if (face == x[a]) continue;
            for (std::size_t t = 1; t <= cfg.probes_per_face; ++t) {
                Point p = x;
                p[a] = x[a] + (face - x[a]) * static_cast<double>(t) / static_cast<double>(cfg.probes_per_face);
                if (t == cfg.probes_per_face) p[a] = face;
                if (model.min_constraint_lower(p) <= limit) {
                    out.push_back(p);
                    break;
                }
            }
        }
    }
    return out;
}

/// Pattern search over the joint (x, x') variable. `starts` are (x, x')
/// pairs; the first feasible one is the primary start and the rest feed the
/// multistart. Throws NoOutsideStart when no pair is feasible.
inline SubproblemSolution solve_P2k(const SafeOptModel& model, std::size_t k, const Box& box, const ReformConfig& cfg,
                                    const std::vector<std::pair<Point, Point>>& starts) {
    const Eigen::Index n = box.dim();
    const double limit = model.j_min() - cfg.strict_margin;
    ps::PsProblem problem;
    problem.box = joint_box(box);
    problem.hard_constraints.push_back(
        [&](const Point& z) { return model.min_constraint_lower(z.head(n)) - model.j_min(); });
    problem.hard_constraints.push_back(
        [&, limit](const Point& z) { return limit - model.min_constraint_lower(z.tail(n)); });
    problem.objective = [&, k](const Point& z) { return expander_penalty(model, k, z.head(n), z.tail(n), cfg).q; };

    std::vector<Point> feasible;
    for (const auto& [x, xp] : starts) {
        Point z(2 * n);
        z << x, xp;
        if (problem.box.contains(z) && model.min_constraint_lower(x) >= model.j_min() &&
            model.min_constraint_lower(xp) <= limit)
            feasible.push_back(std::move(z));
    }
    if (feasible.empty()) throw NoOutsideStart();
    const Point primary = feasible.front();
    feasible.erase(feasible.begin());
    const auto runs = ps::maximize_each(problem, primary, cfg.subproblem, joint_pattern(make_pattern(cfg, n)), feasible);
    if (runs.front().status == ps::PsStatus::InfeasibleStart) throw NoOutsideStart();

    // Per start: certified beats uncertified, then larger q; earliest on ties.
    std::optional<SubproblemSolution> best;
    std::size_t evaluations = 0;
    for (const auto& res : runs) {
        evaluations += res.evaluations;
        if (res.status == ps::PsStatus::InfeasibleStart) continue;
        SubproblemSolution sol;
        sol.gp_index = k;
        sol.point = res.best_point.head(n);
        sol.partner = res.best_point.tail(n);
        sol.status = res.status;
        const Penalty pen = expander_penalty(model, k, sol.point, sol.partner, cfg);
        sol.value = pen.q;
        sol.violation = pen.violation;
        sol.width = model.width(k, sol.point);
        if (!best) {
            best = std::move(sol);
            continue;
        }
        const bool ok = sol.violation <= cfg.expander_validity_tol;
        const bool best_ok = best->violation <= cfg.expander_validity_tol;
        if ((ok && !best_ok) || (ok == best_ok && sol.value > best->value)) best = std::move(sol);
    }
    best->evaluations = evaluations;
    return *best;
}

/// Among certified expander solutions, the widest (lowest position on ties);
/// if none is certified, the one with the largest q.
inline SubproblemSolution select_x2(const std::vector<SubproblemSolution>& solutions, const ReformConfig& cfg) {
    if (solutions.empty()) throw InputError("select_x2 needs at least one solution");
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < solutions.size(); ++i)
        if (solutions[i].violation <= cfg.expander_validity_tol && (!best || solutions[i].width > solutions[*best].width))
            best = i;
    if (best) return solutions[*best];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < solutions.size(); ++i)
        if (solutions[i].value > solutions[arg].value) arg = i;
    return solutions[arg];
}

/// Maximizer unless a certified expander is strictly wider.
inline Recommendation select_next(const SafeOptModel& model, const SubproblemSolution& x1,
                                  const std::optional<SubproblemSolution>& x2, const ReformConfig& cfg) {
    if (!x2 || x2->violation > cfg.expander_validity_tol || !(x2->width > x1.width))
        return make_recommendation(model, x1.point, Source::Maximizer, x1.gp_index);
    return make_recommendation(model, x2->point, Source::Expander, x2->gp_index);
}

/// Everything one selection step produces.
struct Selection {
    Recommendation recommendation;
    LStar lstar;
    std::vector<SubproblemSolution> maximizer_solutions;
    std::vector<SubproblemSolution> expander_solutions;
    SubproblemSolution x1;
    std::optional<SubproblemSolution> x2;
    std::string expander_status = "none";
    double lstar_ms = 0.0;
    double maximizer_ms = 0.0;
    double expander_ms = 0.0;
};

/// First `count` points of the Halton sequence (bases 2, 3, 5, ...) mapped
/// into the box.
inline std::vector<Point> halton_points(const Box& box, std::size_t count) {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    const Eigen::Index n = box.dim();
    if (n > Eigen::Index(std::size(primes))) throw InputError("halton_points supports at most 12 dimensions");
    std::vector<Point> out;
    out.reserve(count);
    for (std::size_t i = 1; i <= count; ++i) {
        Point p(n);
        for (Eigen::Index a = 0; a < n; ++a) {
            const int b = primes[a];
            double f = 1.0, r = 0.0;
            for (std::size_t k = i; k > 0; k /= std::size_t(b)) {
                f /= b;
                r += f * double(k % std::size_t(b));
            }
            p[a] = box.lower[a] + r * (box.upper[a] - box.lower[a]);
        }
        out.push_back(std::move(p));
    }
    return out;
}

/// Candidates passing `keep`, ordered by descending score (stable).
template <class Keep, class Score>
std::vector<Point> ranked(const std::vector<Point>& candidates, Keep keep, Score score) {
    std::vector<std::pair<double, Point>> tagged;
    for (const auto& c : candidates)
        if (keep(c)) tagged.emplace_back(score(c), c);
    std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Point> out;
    out.reserve(tagged.size());
    for (auto& t : tagged) out.push_back(std::move(t.second));
    return out;
}

/// Safe points of `candidates`, ordered by descending objective lower bound
/// (stable). Used as starting points.
inline std::vector<Point> safe_starts(const SafeOptModel& model, const std::vector<Point>& candidates) {
    std::vector<std::pair<double, Point>> tagged;
    for (const auto& c : candidates)
        if (model.is_safe(c)) tagged.emplace_back(model.lower(0, c), c);
    std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Point> out;
    out.reserve(tagged.size());
    for (auto& t : tagged) out.push_back(std::move(t.second));
    return out;
}

/// One reformulated selection: l*, all P1^k, all P2^k, then the final pick.
/// `anchors` are known points (observed data, past recommendations) used as
/// starting points; `expander_hints` are recent expander recommendations.
inline Selection select(const SafeOptModel& model, const Box& box, const ReformConfig& cfg,
                        const std::vector<Point>& anchors, const std::vector<Point>& expander_hints = {}) {
    Selection sel;
    const auto starts = safe_starts(model, anchors);
    if (starts.empty()) throw SafeSetEmpty();

    Stopwatch sw_l;
    sel.lstar = solve_lstar(model, box, cfg, starts.front(), {starts.begin() + 1, starts.end()});
    sel.lstar_ms = sw_l.elapsed_ms();
    const Point& xstar = sel.lstar.point;
    const double l_star = sel.lstar.value;

    Stopwatch sw_1;
    const auto samples = halton_points(box, cfg.start_samples);
    std::vector<Point> pool = expander_hints;
    pool.insert(pool.end(), starts.begin(), starts.end());
    pool.insert(pool.end(), samples.begin(), samples.end());
    auto p1_feasible = [&](const Point& x) { return model.is_safe(x) && model.upper(0, x) >= l_star; };
    for (auto k : model.width_indices()) {
        const auto extra = ranked(pool, p1_feasible, [&](const Point& x) { return model.width(k, x); });
        sel.maximizer_solutions.push_back(solve_P1k(model, k, l_star, box, cfg, xstar, extra));
    }
    sel.x1 = select_x1(sel.maximizer_solutions);
    sel.maximizer_ms = sw_1.elapsed_ms();

    Stopwatch sw_2;
    // (x*, first probe) leads, then width-ranked seeds, then x*'s other probes.
    std::vector<std::pair<Point, Point>> pairs;
    const auto xstar_probes = outside_probes(model, box, xstar, cfg);
    if (!xstar_probes.empty()) pairs.emplace_back(xstar, xstar_probes.front());
    auto widest = [&](const Point& x) {
        double w = 0.0;
        for (auto k : model.width_indices()) w = std::max(w, model.width(k, x));
        return w;
    };
    const auto seeds = ranked(pool, [&](const Point& x) { return model.is_safe(x); }, widest);
    for (const auto& s : seeds) {
        const auto probes = outside_probes(model, box, s, cfg);
        if (!probes.empty()) pairs.emplace_back(s, probes.front());
    }
    for (std::size_t i = 1; i < xstar_probes.size(); ++i) pairs.emplace_back(xstar, xstar_probes[i]);
    try {
        for (auto k : model.width_indices()) sel.expander_solutions.push_back(solve_P2k(model, k, box, cfg, pairs));
        sel.x2 = select_x2(sel.expander_solutions, cfg);
        sel.expander_status = sel.x2->violation <= cfg.expander_validity_tol ? "valid" : "invalid";
    } catch (const NoOutsideStart&) {
        sel.expander_solutions.clear();
        sel.expander_status = "skipped";
    }
    sel.expander_ms = sw_2.elapsed_ms();

    sel.recommendation = select_next(model, sel.x1, sel.x2, cfg);
    return sel;
}

/// Reformulated SafeOpt outer loop. `initial` holds the initial safe set with
/// its observations. Algorithm errors end the run and land in trace.error.
inline RunTrace run(const VectorOracle& oracle, Observations initial, const ModelSpec& spec, const Box& box,
                    const ReformConfig& cfg) {
    cfg.validate();
    spec.validate();
    box.validate();
    if (initial.size() == 0) throw InputError("initial safe set is empty");
    RunTrace trace;
    trace.algorithm = "reform";
    Observations obs = std::move(initial);
    std::deque<Point> hints;
    std::optional<Point> prev_x;
    double prev_f = 0.0;
    auto anchors_of = [](const Observations& o) {
        std::vector<Point> a;
        for (Eigen::Index r = o.size(); r-- > 0;) a.push_back(o.inputs.row(r).transpose());
        return a;
    };

    for (std::size_t n = 1;; ++n) {
        IterationRecord rec;
        rec.n = n;
        try {
            const SafeOptModel model = build_model(spec, obs);
            Stopwatch sw;
            Selection sel = select(model, box, cfg, anchors_of(obs), {hints.begin(), hints.end()});
            rec.select_ms = sw.elapsed_ms();
            rec.recommendation = sel.recommendation;
            rec.best_estimate = sel.lstar.point;
            rec.l_star = sel.lstar.value;
            rec.lstar_ms = sel.lstar_ms;
            rec.maximizer_ms = sel.maximizer_ms;
            rec.expander_ms = sel.expander_ms;
            rec.expander_status = sel.expander_status;
            if (rec.recommendation.source == Source::Expander) {
                hints.push_front(rec.recommendation.point);
                while (hints.size() > cfg.remembered_expanders) hints.pop_back();
            }
            rec.observation = oracle(rec.recommendation.point);
            if (rec.observation.size() != spec.gp_count()) throw InputError("oracle returned the wrong number of values");
        } catch (const std::exception& e) {
            trace.error = e.what();
            trace.stop_reason = "error";
            return trace;
        }
        obs.append(rec.recommendation.point, rec.observation);

        if (prev_x) {
            rec.x_tol_met = (rec.recommendation.point - *prev_x).norm() <= cfg.eps_x;
            rec.f_tol_met = std::abs(rec.observation.front() - prev_f) <= cfg.eps_f;
        }
        rec.max_iter_met = n >= cfg.max_iterations;
        prev_x = rec.recommendation.point;
        prev_f = rec.observation.front();
        const bool tol = rec.x_tol_met && rec.f_tol_met;
        const bool stop = cfg.literal_and_stopping ? (rec.max_iter_met && tol) || n >= cfg.iteration_cap
                                                   : rec.max_iter_met || tol;
        trace.records.push_back(std::move(rec));
        if (stop) {
            trace.stop_reason = tol ? "tolerance" : "max_iterations";
            break;
        }
    }

    try {
        const SafeOptModel model = build_model(spec, obs);
        const auto starts = safe_starts(model, anchors_of(obs));
        if (starts.empty()) throw SafeSetEmpty();
        const auto best = solve_lstar(model, box, cfg, starts.front(), {starts.begin() + 1, starts.end()});
        trace.best_point = best.point;
        trace.best_lower = best.value;
    } catch (const std::exception& e) {
        trace.error = e.what();
        trace.stop_reason = "error";
    }
    return trace;
}

}  // namespace safeopt::reform
