#pragma once

#include "safeopt/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

namespace safeopt {

enum class KernelFamily { SquaredExponential, Matern52 };

inline std::string to_string(KernelFamily f) {
    return f == KernelFamily::SquaredExponential ? "squared_exponential" : "matern52";
}

inline KernelFamily parse_kernel_family(const std::string& name) {
    if (name == "squared_exponential" || name == "se") return KernelFamily::SquaredExponential;
    if (name == "matern52") return KernelFamily::Matern52;
    throw InputError("unknown kernel family '" + name + "'");
}

/// Stationary covariance function with per-dimension lengthscales.
struct KernelSpec {
    KernelFamily family = KernelFamily::SquaredExponential;
    Eigen::VectorXd lengthscales;
    double signal_variance = 1.0;

    KernelSpec() = default;
    KernelSpec(KernelFamily fam, Eigen::VectorXd ls, double sf2)
        : family(fam), lengthscales(std::move(ls)), signal_variance(sf2) {
        validate();
    }

    static KernelSpec squared_exponential(Eigen::VectorXd ls, double sf2) {
        return KernelSpec(KernelFamily::SquaredExponential, std::move(ls), sf2);
    }

    Eigen::Index dim() const { return lengthscales.size(); }

    void validate() const {
        if (lengthscales.size() == 0) throw InputError("kernel needs at least one lengthscale");
        if ((lengthscales.array() <= 0.0).any() || !lengthscales.allFinite())
            throw InputError("kernel lengthscales must be positive");
        if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
            throw InputError("kernel signal variance must be positive");
    }
};

template <typename DerivedA, typename DerivedB>
double kernel_eval(const KernelSpec& spec, const Eigen::MatrixBase<DerivedA>& a,
                   const Eigen::MatrixBase<DerivedB>& b) {
    if (a.size() != spec.dim() || b.size() != spec.dim())
        throw InputError("kernel_eval: point dimension does not match kernel");
    const double r2 = ((a - b).array() / spec.lengthscales.array()).square().sum();
    switch (spec.family) {
        case KernelFamily::SquaredExponential:
            return spec.signal_variance * std::exp(-0.5 * r2);
        case KernelFamily::Matern52: {
            const double r = std::sqrt(5.0 * r2);
            return spec.signal_variance * (1.0 + r + r * r / 3.0) * std::exp(-r);
        }
    }
    return 0.0;
}

/// Observations of one scalar output.
struct GpData {
    Eigen::MatrixXd inputs;   // R x n, one point per row
    Eigen::VectorXd outputs;  // R
    double noise_variance = 0.0;

    GpData() = default;
    GpData(Eigen::MatrixXd x, Eigen::VectorXd y, double noise)
        : inputs(std::move(x)), outputs(std::move(y)), noise_variance(noise) {
        validate();
    }

    /// Empty dataset in `dim` dimensions.
    static GpData empty(Eigen::Index dim, double noise) {
        return GpData(Eigen::MatrixXd(0, dim), Eigen::VectorXd(0), noise);
    }

    Eigen::Index size() const { return outputs.size(); }

    void validate() const {
        if (inputs.rows() != outputs.size())
            throw InputError("GP data: inputs and outputs differ in length");
        if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance))
            throw InputError("GP data: noise variance must be nonnegative");
        if (!inputs.allFinite() || !outputs.allFinite())
            throw InputError("GP data: non-finite values");
    }

    void validate_in(const Box& box) const {
        for (Eigen::Index r = 0; r < inputs.rows(); ++r)
            if (!box.contains(inputs.row(r).transpose()))
                throw InputError("GP data: input outside the search box");
    }

    GpData appended(const Point& x, double y) const {
        GpData out;
        out.noise_variance = noise_variance;
        out.inputs.resize(inputs.rows() + 1, inputs.cols() == 0 ? x.size() : inputs.cols());
        out.inputs.topRows(inputs.rows()) = inputs;
        out.inputs.row(inputs.rows()) = x.transpose();
        out.outputs.resize(outputs.size() + 1);
        out.outputs.head(outputs.size()) = outputs;
        out.outputs[outputs.size()] = y;
        return out;
    }
};

/// Confidence multiplier beta of the bounds mu -/+ beta*sigma.
struct ConfidenceBand {
    double beta = 2.0;

    ConfidenceBand() = default;
    explicit ConfidenceBand(double b) : beta(b) {
        if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("confidence beta must be positive");
    }
};

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
    bool clamped = false;
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    double width() const { return upper - lower; }
};

/// Jitter schedule for the kernel system: first try without jitter, then
/// 1e-10 * sf^2 escalating by 10x up to 1e-4 * sf^2.
struct JitterPolicy {
    static constexpr double first = 1e-10;
    static constexpr double last = 1e-4;
    // Smallest acceptable squared pivot relative to the signal variance.
    static constexpr double min_pivot = 1e-12;
};

/// Fitted zero-mean GP. Immutable after construction; predictions are safe
/// to run concurrently.
class GpPosterior {
public:
    GpPosterior(KernelSpec kernel, GpData data) : kernel_(std::move(kernel)), data_(std::move(data)) {
        kernel_.validate();
        data_.validate();
        if (data_.size() > 0 && data_.inputs.cols() != kernel_.dim())
            throw InputError("GP data dimension does not match kernel");
        if (data_.size() == 0) data_.inputs.resize(0, kernel_.dim());
        factorize();
    }

    const KernelSpec& kernel() const { return kernel_; }
    const GpData& data() const { return data_; }
    Eigen::Index dim() const { return kernel_.dim(); }
    Eigen::Index size() const { return data_.size(); }
    /// Lower Cholesky factor of K_R + (noise + jitter) I.
    const Eigen::MatrixXd& factor() const { return chol_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    double jitter() const { return jitter_; }
    std::size_t clamp_count() const { return clamps_->load(std::memory_order_relaxed); }

    /// K_R + noise I + jitter I, rebuilt from the data.
    Eigen::MatrixXd system_matrix() const { return gram() + (data_.noise_variance + jitter_) *
        Eigen::MatrixXd::Identity(size(), size()); }

    Eigen::VectorXd cross_covariance(const Point& x) const {
        if (x.size() != dim()) throw InputError("query point dimension does not match GP");
        Eigen::VectorXd k(size());
        for (Eigen::Index r = 0; r < size(); ++r) k[r] = kernel_eval(kernel_, data_.inputs.row(r).transpose(), x);
        return k;
    }

    Prediction predict(const Point& x) const {
        const Eigen::VectorXd k = cross_covariance(x);
        Prediction p;
        const double prior = kernel_eval(kernel_, x, x);
        if (size() == 0) {
            p.variance = prior;
            return p;
        }
        p.mean = k.dot(weights_);
        const Eigen::VectorXd v = chol_.triangularView<Eigen::Lower>().solve(k);
        p.variance = prior - v.squaredNorm();
        if (p.variance < 0.0) {
            p.variance = 0.0;
            p.clamped = true;
            clamps_->fetch_add(1, std::memory_order_relaxed);
        }
        return p;
    }

    Interval bounds(const Point& x, const ConfidenceBand& band) const {
        const Prediction p = predict(x);
        const double s = band.beta * std::sqrt(p.variance);
        return {p.mean - s, p.mean + s};
    }

    /// Posterior after appending (x, value) as an ordinary datum with the same
    /// noise variance. Uses a rank-1 extension of the factor when the new
    /// pivot is acceptable at the current jitter, otherwise refits.
    GpPosterior with_observation(const Point& x, double value) const {
        if (x.size() != dim()) throw InputError("observation dimension does not match GP");
        GpData grown = data_.appended(x, value);
        const double floor = JitterPolicy::min_pivot * kernel_.signal_variance;
        if (size() > 0) {
            const Eigen::VectorXd k = cross_covariance(x);
            const Eigen::VectorXd c = chol_.triangularView<Eigen::Lower>().solve(k);
            const double d2 = kernel_eval(kernel_, x, x) + data_.noise_variance + jitter_ - c.squaredNorm();
            if (d2 > floor && std::isfinite(d2)) {
                const Eigen::Index r = size();
                Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(r + 1, r + 1);
                chol.topLeftCorner(r, r) = chol_;
                chol.block(r, 0, 1, r) = c.transpose();
                chol(r, r) = std::sqrt(d2);
                return GpPosterior(kernel_, std::move(grown), std::move(chol), jitter_);
            }
        }
        return GpPosterior(kernel_, std::move(grown));
    }

private:
    GpPosterior(KernelSpec kernel, GpData data, Eigen::MatrixXd chol, double jitter)
        : kernel_(std::move(kernel)), data_(std::move(data)), chol_(std::move(chol)), jitter_(jitter) {
        solve_weights();
    }

    Eigen::MatrixXd gram() const {
        const Eigen::Index r = size();
        Eigen::MatrixXd k(r, r);
        for (Eigen::Index i = 0; i < r; ++i) {
            k(i, i) = kernel_eval(kernel_, data_.inputs.row(i).transpose(), data_.inputs.row(i).transpose());
            for (Eigen::Index j = 0; j < i; ++j) {
                k(i, j) = kernel_eval(kernel_, data_.inputs.row(i).transpose(), data_.inputs.row(j).transpose());
                k(j, i) = k(i, j);
            }
        }
        return k;
    }

    void factorize() {
        const Eigen::Index r = size();
        if (r == 0) {
            chol_.resize(0, 0);
            weights_.resize(0);
            return;
        }
        const Eigen::MatrixXd base = gram() + data_.noise_variance * Eigen::MatrixXd::Identity(r, r);
        const double sf2 = kernel_.signal_variance;
        // 0, 1e-10, 1e-9, ..., 1e-4 (times sf^2)
        constexpr int steps = 8;
        double jitter = 0.0;
        for (int step = 0; step < steps; ++step) {
            jitter = step == 0 ? 0.0 : JitterPolicy::first * sf2 * std::pow(10.0, step - 1);
            Eigen::LLT<Eigen::MatrixXd> llt(base + jitter * Eigen::MatrixXd::Identity(r, r));
            if (llt.info() != Eigen::Success) continue;
            Eigen::MatrixXd l = llt.matrixL();
            const double min_pivot2 = l.diagonal().array().square().minCoeff();
            if (min_pivot2 > JitterPolicy::min_pivot * sf2 && l.allFinite()) {
                chol_ = std::move(l);
                jitter_ = jitter;
                solve_weights();
                return;
            }
        }
        throw NumericalError("GP kernel system is not positive definite after jitter escalation", jitter);
    }

    void solve_weights() {
        weights_ = chol_.triangularView<Eigen::Lower>().solve(data_.outputs);
        chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(weights_);
    }

    KernelSpec kernel_;
    GpData data_;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd weights_;
    double jitter_ = 0.0;
    std::shared_ptr<std::atomic<std::size_t>> clamps_ = std::make_shared<std::atomic<std::size_t>>(0);
};

inline GpPosterior fit(const KernelSpec& kernel, const GpData& data) { return GpPosterior(kernel, data); }

inline Prediction predict(const GpPosterior& post, const Point& x) { return post.predict(x); }

inline Interval bounds(const GpPosterior& post, const Point& x, const ConfidenceBand& band) {
    return post.bounds(x, band);
}

inline GpPosterior with_virtual_observation(const GpPosterior& post, const Point& x, double value) {
    return post.with_observation(x, value);
}

}  // namespace safeopt
