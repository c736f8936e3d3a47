#pragma once

#include "safeopt/model.hpp"
#include "safeopt/trace.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <vector>

// Concave quadratic objective over a non-convex feasible set: a disk with a
// circular hole around the unconstrained maximizer (-1, -0.5).
namespace safeopt::bench {

inline double quad_objective(const Point& p) {
    const double x = p[0], y = p[1];
    return -(x + 1.0) * (x + 1.0) - (y + 0.5) * (y + 0.5);
}

struct QuadConstraints {
    double g1 = 0.0;
    double g2 = 0.0;
    bool feasible() const { return g1 >= 0.0 && g2 >= 0.0; }
    double margin() const { return std::min(g1, g2); }
};

inline QuadConstraints quad_constraints(const Point& p) {
    const double x = p[0], y = p[1];
    return {2.0 - (x + 0.5) * (x + 0.5) - (y - 0.3) * (y - 0.3), (x + 1.0) * (x + 1.0) + (y + 0.5) * (y + 0.5) - 0.2};
}

/// Largest objective on the feasible set: the hole boundary, where it equals -0.2.
constexpr double quad_constrained_optimum = -0.2;

struct QuadraticProblem {
    // Gaussian noise std for objective, g1, g2.
    std::vector<double> noise_std{0.0, 0.0, 0.0};

    void validate() const {
        if (noise_std.size() != 3) throw InputError("quadratic problem needs three noise levels");
        for (double s : noise_std)
            if (!(s >= 0.0)) throw InputError("noise std must be nonnegative");
    }

    static Box default_box() { return Box(make_point({-2.0, -1.2}), make_point({1.0, 1.8})); }

    /// Oracle returning (f, g1, g2) with optional noise from a seeded stream.
    VectorOracle oracle(std::uint64_t seed) const {
        validate();
        auto rng = std::make_shared<std::mt19937_64>(seed);
        auto noise = noise_std;
        return [rng, noise](const Point& p) {
            std::normal_distribution<double> normal;
            const auto g = quad_constraints(p);
            std::vector<double> v{quad_objective(p), g.g1, g.g2};
            for (std::size_t i = 0; i < v.size(); ++i)
                if (noise[i] > 0.0) v[i] += noise[i] * normal(*rng);
            return v;
        };
    }
};

struct FeasibilityReport {
    std::size_t checked = 0;
    std::size_t violations = 0;
    double worst_margin = std::numeric_limits<double>::infinity();  // min over points of min(g1, g2)
};

/// Noise-free constraint check at every recommended point of a trace.
inline FeasibilityReport true_feasibility_audit(const RunTrace& trace) {
    FeasibilityReport rep;
    for (const auto& r : trace.records) {
        const auto g = quad_constraints(r.recommendation.point);
        ++rep.checked;
        if (!g.feasible()) ++rep.violations;
        rep.worst_margin = std::min(rep.worst_margin, g.margin());
    }
    return rep;
}

}  // namespace safeopt::bench
