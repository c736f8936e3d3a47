#pragma once

#include "safeopt/model.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

// Cascade position/speed controller tuning on a surrogate drive plant.
//
//   S_s = K_p (P_s - P)            position P-controller
//   u   = K_v e_s + K_vi ∫ e_s     speed PI-controller, e_s = S_s - S
//   S   = G(s) u,  P = ∫ S
//
// G(s) = k w^2 / ((tau s + 1)(s^2 + 2 zeta w s + w^2)): actuator lag followed
// by a damped second-order speed response.
namespace safeopt::bench {

/// Parameters of the default surrogate plant.
struct SurrogateParams {
    double gain = 1.5;
    double natural_frequency = 5000.0;  // rad/s
    double damping = 0.3;
    double actuator_lag = 0.06;  // s
};

/// Linear plant from control u to speed S: x' = A x + B u, S = C x.
/// Position is integrated by the simulator.
struct PlantModel {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    Eigen::RowVectorXd c;
    double sample_time = 1e-3;
    double t_f = 2.0;

    static PlantModel surrogate(const SurrogateParams& p, double sample_time = 1e-3, double t_f = 2.0) {
        if (!(p.gain > 0.0) || !(p.natural_frequency > 0.0) || !(p.damping > 0.0) || !(p.actuator_lag > 0.0))
            throw InputError("surrogate plant parameters must be positive");
        PlantModel m;
        const double w2 = p.natural_frequency * p.natural_frequency;
        // states: actuator output, speed, speed derivative
        m.a = Eigen::MatrixXd::Zero(3, 3);
        m.a(0, 0) = -1.0 / p.actuator_lag;
        m.a(1, 2) = 1.0;
        m.a(2, 0) = p.gain * w2;
        m.a(2, 1) = -w2;
        m.a(2, 2) = -2.0 * p.damping * p.natural_frequency;
        m.b = Eigen::VectorXd::Zero(3);
        m.b[0] = 1.0 / p.actuator_lag;
        m.c = Eigen::RowVectorXd::Zero(3);
        m.c[1] = 1.0;
        m.sample_time = sample_time;
        m.t_f = t_f;
        m.validate();
        return m;
    }

    Eigen::Index order() const { return a.rows(); }

    void validate() const {
        if (a.rows() == 0 || a.rows() != a.cols() || b.size() != a.rows() || c.size() != a.rows())
            throw InputError("plant matrices have inconsistent shapes");
        if (!(sample_time > 0.0)) throw InputError("plant sample_time must be positive");
        if (!(t_f >= 10.0 * sample_time)) throw InputError("plant horizon must cover at least 10 samples");
        const Eigen::VectorXcd eig = a.eigenvalues();
        for (Eigen::Index i = 0; i < eig.size(); ++i)
            if (!(eig[i].real() < 0.0)) throw InputError("surrogate plant must be open-loop stable");
    }
};

/// Zero-order-hold discretization of the plant augmented with the position
/// integrator (last state).
struct DiscretePlant {
    Eigen::MatrixXd ad;
    Eigen::VectorXd bd;
    Eigen::RowVectorXd c;  // speed output on the augmented state

    explicit DiscretePlant(const PlantModel& m) {
        const Eigen::Index n = m.order();
        Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n + 2, n + 2);
        big.topLeftCorner(n, n) = m.a;
        big.block(n, 0, 1, n) = m.c;  // P' = S
        big.block(0, n + 1, n, 1) = m.b;
        const Eigen::MatrixXd e = (big * m.sample_time).exp();
        ad = e.topLeftCorner(n + 1, n + 1);
        bd = e.block(0, n + 1, n + 1, 1);
        ad(n, n) = 1.0;  // pure integrator; the Pade approximant leaves it off by an ulp
        c = Eigen::RowVectorXd::Zero(n + 1);
        c.head(n) = m.c;
    }
};

struct CascadeController {
    double kp = 0.0;
    double kv = 0.0;
    double kvi = 0.0;

    static Box search_box() { return Box(make_point({0.0, 0.0, 0.0}), make_point({110.0, 50.0, 50.0})); }
    static CascadeController from_point(const Point& x) { return {x[0], x[1], x[2]}; }
    Point to_point() const { return make_point({kp, kv, kvi}); }
};

enum class ReferenceKind { Trapezoid, TruncatedSine };

inline ReferenceKind parse_reference(const std::string& s) {
    if (s == "trapezoid") return ReferenceKind::Trapezoid;
    if (s == "sine") return ReferenceKind::TruncatedSine;
    throw InputError("unknown reference '" + s + "'");
}

inline std::string to_string(ReferenceKind r) { return r == ReferenceKind::Trapezoid ? "trapezoid" : "sine"; }

/// Position set point in cm.
inline double reference_position(ReferenceKind kind, double t) {
    switch (kind) {
        case ReferenceKind::Trapezoid:
            // rise 0.1-0.6 s, hold at 1 until 1.2 s, return by 1.7 s
            if (t < 0.1) return 0.0;
            if (t < 0.6) return (t - 0.1) / 0.5;
            if (t < 1.2) return 1.0;
            if (t < 1.7) return 1.0 - (t - 1.2) / 0.5;
            return 0.0;
        case ReferenceKind::TruncatedSine:
            return std::clamp(std::sin(std::numbers::pi * t), 0.0, 0.9);
    }
    return 0.0;
}

struct TuningSpec {
    double gamma = 1000.0;
    ReferenceKind reference = ReferenceKind::Trapezoid;
    double stability_margin = 0.005;

    void validate() const {
        if (!(gamma > 0.0)) throw InputError("gamma must be positive");
        if (!(stability_margin > 0.0)) throw InputError("stability margin must be positive");
    }
};

struct SimResult {
    std::vector<double> time;
    std::vector<double> speed;
    std::vector<double> position;
    std::vector<double> speed_setpoint;
    std::vector<double> position_setpoint;
    bool blew_up = false;  // trajectory truncated at the first non-finite state

    std::size_t size() const { return time.size(); }
};

/// States are clipped to this magnitude so unstable runs stay finite.
constexpr double saturation_bound = 1e6;

inline SimResult simulate(const PlantModel& plant, const CascadeController& ctrl, const TuningSpec& spec,
                          double initial_position = 0.0) {
    plant.validate();
    const DiscretePlant dp(plant);
    const Eigen::Index n = plant.order();
    const auto samples = static_cast<std::size_t>(std::llround(plant.t_f / plant.sample_time)) + 1;
    SimResult r;
    r.time.reserve(samples);
    r.speed.reserve(samples);
    r.position.reserve(samples);
    r.speed_setpoint.reserve(samples);
    r.position_setpoint.reserve(samples);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n + 1);
    x[n] = initial_position;
    double integral = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double t = static_cast<double>(k) * plant.sample_time;
        const double s = dp.c.dot(x);
        const double p = x[n];
        if (!std::isfinite(s) || !std::isfinite(p)) {
            r.blew_up = true;
            break;
        }
        const double ps = reference_position(spec.reference, t);
        const double ss = ctrl.kp * (ps - p);
        const double es = ss - s;
        const double u = ctrl.kv * es + ctrl.kvi * integral;
        r.time.push_back(t);
        r.speed.push_back(s);
        r.position.push_back(p);
        r.speed_setpoint.push_back(ss);
        r.position_setpoint.push_back(ps);
        integral = std::clamp(integral + es * plant.sample_time, -saturation_bound, saturation_bound);
        x = dp.ad * x + dp.bd * u;
        x = x.cwiseMax(-saturation_bound).cwiseMin(saturation_bound);
    }
    return r;
}

/// Least-squares slope of the speed peaks (strict rise, non-strict fall);
/// 0 with fewer than two peaks.
inline double peak_slope(const SimResult& r) {
    std::vector<double> tp, sp;
    for (std::size_t i = 1; i + 1 < r.speed.size(); ++i)
        if (r.speed[i] > r.speed[i - 1] && r.speed[i] >= r.speed[i + 1]) {
            tp.push_back(r.time[i]);
            sp.push_back(r.speed[i]);
        }
    if (tp.size() < 2) return 0.0;
    const double m = static_cast<double>(tp.size());
    double mt = 0.0, ms = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        mt += tp[i];
        ms += sp[i];
    }
    mt /= m;
    ms /= m;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        sxy += (tp[i] - mt) * (sp[i] - ms);
        sxx += (tp[i] - mt) * (tp[i] - mt);
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

/// gamma * ∫|P - P_s| dt (trapezoidal) + max S.
inline double tuning_objective(const SimResult& r, const TuningSpec& spec) {
    double integral = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i)
        integral += 0.5 * (std::abs(r.position[i] - r.position_setpoint[i]) +
                           std::abs(r.position[i - 1] - r.position_setpoint[i - 1])) *
                    (r.time[i] - r.time[i - 1]);
    const double smax = r.speed.empty() ? 0.0 : *std::max_element(r.speed.begin(), r.speed.end());
    return spec.gamma * integral + smax;
}

/// sigma - p_1: nonnegative when the peaks do not grow faster than sigma.
inline double stability_oracle(const SimResult& r, const TuningSpec& spec) {
    return spec.stability_margin - peak_slope(r);
}

/// Gains of the reference initial safe set.
inline std::vector<CascadeController> pid_initial_safe_set() {
    return {{10.0, 0.0, 5.0}, {20.0, 0.4, 50.0}, {42.0, 0.3, 12.0}, {90.0, 0.5, 1.0}};
}

/// Reference unsafe gain set.
inline CascadeController pid_unsafe_point() { return {30.0, 0.0, 5.0}; }

/// High position and integral gain without speed damping; unstable on the
/// default surrogate.
inline CascadeController pid_witness_gains() { return {110.0, 0.0, 50.0}; }

struct PidBenchmark {
    PlantModel plant = PlantModel::surrogate({});
    TuningSpec spec;
    double objective_noise_std = 0.0;
    double constraint_noise_std = 0.0;
    // Subtracted from -J before it reaches the objective GP (zero-mean prior).
    double objective_offset = 0.0;
    // Observations are raised to at least these values before they reach the
    // GPs; -inf disables. Unstable gains otherwise produce values many orders
    // of magnitude outside the stable range.
    double objective_floor = -std::numeric_limits<double>::infinity();
    double constraint_floor = -std::numeric_limits<double>::infinity();

    double true_objective(const Point& x) const {
        return -tuning_objective(simulate(plant, CascadeController::from_point(x), spec), spec);
    }

    double true_constraint(const Point& x) const {
        return stability_oracle(simulate(plant, CascadeController::from_point(x), spec), spec);
    }

    /// (max(-J - offset, floor_0), max(sigma - p_1, floor_1)) with optional seeded noise.
    VectorOracle oracle(std::uint64_t seed) const {
        spec.validate();
        auto rng = std::make_shared<std::mt19937_64>(seed);
        const PidBenchmark self = *this;
        return [rng, self](const Point& x) {
            std::normal_distribution<double> normal;
            const auto r = simulate(self.plant, CascadeController::from_point(x), self.spec);
            std::vector<double> v{-tuning_objective(r, self.spec) - self.objective_offset,
                                  stability_oracle(r, self.spec)};
            if (self.objective_noise_std > 0.0) v[0] += self.objective_noise_std * normal(*rng);
            if (self.constraint_noise_std > 0.0) v[1] += self.constraint_noise_std * normal(*rng);
            v[0] = std::max(v[0], self.objective_floor);
            v[1] = std::max(v[1], self.constraint_floor);
            return v;
        };
    }
};

}  // namespace safeopt::bench
