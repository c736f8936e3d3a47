#pragma once

#include "safeopt/gp.hpp"

#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace safeopt {

/// Index 0 is the objective, 1..J are the constraints.
class SafeOptModel {
public:
    SafeOptModel(std::vector<GpPosterior> posteriors, ConfidenceBand band, double j_min,
                 std::vector<std::size_t> width_indices = {})
        : posteriors_(std::move(posteriors)), band_(band), j_min_(j_min), width_indices_(std::move(width_indices)) {
        if (posteriors_.size() < 2) throw InputError("SafeOpt model needs an objective and at least one constraint");
        for (const auto& p : posteriors_)
            if (p.dim() != posteriors_.front().dim()) throw InputError("all posteriors must share the input dimension");
        if (width_indices_.empty()) {
            width_indices_.resize(posteriors_.size());
            std::iota(width_indices_.begin(), width_indices_.end(), std::size_t{0});
        }
        for (auto i : width_indices_)
            if (i >= posteriors_.size()) throw InputError("width index out of range");
    }

    const std::vector<GpPosterior>& posteriors() const { return posteriors_; }
    const GpPosterior& posterior(std::size_t i) const { return posteriors_.at(i); }
    const ConfidenceBand& band() const { return band_; }
    double j_min() const { return j_min_; }
    const std::vector<std::size_t>& width_indices() const { return width_indices_; }
    std::size_t constraint_count() const { return posteriors_.size() - 1; }
    std::size_t gp_count() const { return posteriors_.size(); }
    Eigen::Index dim() const { return posteriors_.front().dim(); }

    Interval bounds(std::size_t i, const Point& x) const { return posteriors_.at(i).bounds(x, band_); }
    double lower(std::size_t i, const Point& x) const { return bounds(i, x).lower; }
    double upper(std::size_t i, const Point& x) const { return bounds(i, x).upper; }
    double width(std::size_t i, const Point& x) const { return bounds(i, x).width(); }

    std::vector<Interval> all_bounds(const Point& x) const {
        std::vector<Interval> out;
        out.reserve(posteriors_.size());
        for (const auto& p : posteriors_) out.push_back(p.bounds(x, band_));
        return out;
    }

    /// min_{j=1..J} l(x, j)
    double min_constraint_lower(const Point& x) const {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t j = 1; j < posteriors_.size(); ++j) m = std::min(m, lower(j, x));
        return m;
    }

    bool is_safe(const Point& x) const { return min_constraint_lower(x) >= j_min_; }

    /// Largest width over width_indices; lowest index on ties.
    std::pair<std::size_t, double> max_width(const Point& x) const {
        std::size_t arg = width_indices_.front();
        double best = -std::numeric_limits<double>::infinity();
        for (auto i : width_indices_) {
            const double w = width(i, x);
            if (w > best || (w == best && i < arg)) {
                best = w;
                arg = i;
            }
        }
        return {arg, best};
    }

    /// Constraint posteriors conditioned on the optimistic observation
    /// (x, u(x, j)); index 0 of the result is unused and left as the objective.
    std::vector<GpPosterior> optimistic_constraints(const Point& x) const {
        std::vector<GpPosterior> aux;
        aux.reserve(posteriors_.size());
        aux.push_back(posteriors_.front());
        for (std::size_t j = 1; j < posteriors_.size(); ++j)
            aux.push_back(posteriors_[j].with_observation(x, upper(j, x)));
        return aux;
    }

    /// Model with one real observation appended to every posterior.
    SafeOptModel observed(const Point& x, const std::vector<double>& values) const {
        if (values.size() != posteriors_.size()) throw InputError("observation count does not match GP count");
        std::vector<GpPosterior> next;
        next.reserve(posteriors_.size());
        for (std::size_t i = 0; i < posteriors_.size(); ++i) next.push_back(posteriors_[i].with_observation(x, values[i]));
        return SafeOptModel(std::move(next), band_, j_min_, width_indices_);
    }

private:
    std::vector<GpPosterior> posteriors_;
    ConfidenceBand band_;
    double j_min_;
    std::vector<std::size_t> width_indices_;
};

/// Minimum over the constraint posteriors of aux, evaluated at x.
inline double min_lower(const std::vector<GpPosterior>& aux, const ConfidenceBand& band, const Point& x) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < aux.size(); ++j) m = std::min(m, aux[j].bounds(x, band).lower);
    return m;
}

/// Hyperparameters and settings used to build a model from observations.
struct ModelSpec {
    std::vector<KernelSpec> kernels;      // J+1
    std::vector<double> noise_variances;  // J+1
    ConfidenceBand band;
    double j_min = 0.0;
    std::vector<std::size_t> width_indices;  // empty = all

    std::size_t gp_count() const { return kernels.size(); }

    void validate() const {
        if (kernels.size() < 2) throw InputError("model needs an objective and at least one constraint kernel");
        if (noise_variances.size() != kernels.size()) throw InputError("one noise variance per GP is required");
        for (const auto& k : kernels) {
            k.validate();
            if (k.dim() != kernels.front().dim()) throw InputError("kernels must share the input dimension");
        }
    }
};

/// Inputs (R x n) and observed values (R x (J+1), objective in column 0).
struct Observations {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd values;

    Eigen::Index size() const { return inputs.rows(); }

    void append(const Point& x, const std::vector<double>& v) {
        const Eigen::Index r = inputs.rows();
        if (r == 0) {
            inputs.resize(0, x.size());
            values.resize(0, static_cast<Eigen::Index>(v.size()));
        }
        inputs.conservativeResize(r + 1, Eigen::NoChange);
        values.conservativeResize(r + 1, Eigen::NoChange);
        inputs.row(r) = x.transpose();
        for (std::size_t i = 0; i < v.size(); ++i) values(r, static_cast<Eigen::Index>(i)) = v[i];
    }
};

inline SafeOptModel build_model(const ModelSpec& spec, const Observations& obs) {
    spec.validate();
    if (obs.values.cols() != static_cast<Eigen::Index>(spec.gp_count()) || obs.values.rows() != obs.inputs.rows())
        throw InputError("observation table does not match the model");
    std::vector<GpPosterior> posts;
    posts.reserve(spec.gp_count());
    for (std::size_t i = 0; i < spec.gp_count(); ++i)
        posts.emplace_back(spec.kernels[i], GpData(obs.inputs, obs.values.col(static_cast<Eigen::Index>(i)),
                                                   spec.noise_variances[i]));
    return SafeOptModel(std::move(posts), spec.band, spec.j_min, spec.width_indices);
}

enum class Source { Maximizer, Expander };

inline std::string to_string(Source s) { return s == Source::Maximizer ? "maximizer" : "expander"; }

struct Recommendation {
    Point point;
    Source source = Source::Maximizer;
    std::size_t driving_index = 0;
    double width = 0.0;
    std::vector<Interval> bounds_at_point;
};

inline Recommendation make_recommendation(const SafeOptModel& model, const Point& x, Source source,
                                          std::size_t driving_index) {
    Recommendation r;
    r.point = x;
    r.source = source;
    r.driving_index = driving_index;
    r.bounds_at_point = model.all_bounds(x);
    r.width = r.bounds_at_point.at(driving_index).width();
    return r;
}

/// Evaluates the objective and all constraints at a point (objective first).
using VectorOracle = std::function<std::vector<double>(const Point&)>;

}  // namespace safeopt
