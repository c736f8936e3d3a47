#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace safeopt {

using Point = Eigen::VectorXd;

/// Invalid argument, dimension mismatch or violated type invariant.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Kernel system could not be factorized even at the largest jitter.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double last_jitter)
        : std::runtime_error(what), last_jitter_(last_jitter) {}
    double last_jitter() const noexcept { return last_jitter_; }

private:
    double last_jitter_;
};

/// No point of the search space is certified safe by the constraint bounds.
class SafeSetEmpty : public std::runtime_error {
public:
    SafeSetEmpty() : std::runtime_error("safe set is empty") {}
};

/// Neither maximizers nor expanders are available for selection.
class NoCandidates : public std::runtime_error {
public:
    NoCandidates() : std::runtime_error("no maximizer or expander candidates") {}
};

/// Axis-aligned search box.
struct Box {
    Point lower;
    Point upper;

    Box() = default;
    Box(Point lo, Point hi) : lower(std::move(lo)), upper(std::move(hi)) { validate(); }

    Eigen::Index dim() const { return lower.size(); }

    void validate() const {
        if (lower.size() != upper.size() || lower.size() == 0)
            throw InputError("box bounds must be nonempty and of equal dimension");
        for (Eigen::Index i = 0; i < lower.size(); ++i)
            if (!(lower[i] < upper[i]))
                throw InputError("box lower bound must be strictly below upper bound");
    }

    bool contains(const Point& x) const {
        if (x.size() != lower.size()) return false;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
        return true;
    }

    Point clamp(const Point& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

inline Point make_point(std::initializer_list<double> values) {
    Point p(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) p[i++] = v;
    return p;
}

inline std::vector<double> to_vector(const Point& p) {
    return std::vector<double>(p.data(), p.data() + p.size());
}

inline Point from_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace safeopt
