#pragma once

#include <vector>

#include <Eigen/Dense>

#include "pinnsim/models.hpp"

namespace pinnsim {

/// Bus voltage over one step as power series in (t - t0) for magnitude and angle:
///   v(t) = (sum_k V_k (t - t0)^k) * exp(j sum_k theta_k (t - t0)^k)
struct VoltageProfile {
    double t0 = 0.0;
    Eigen::VectorXd V;      // pu, pu/s, pu/s^2, ...
    Eigen::VectorXd theta;  // rad, rad/s, rad/s^2, ...

    VoltageProfile() = default;
    VoltageProfile(double t0, Eigen::VectorXd V, Eigen::VectorXd theta);

    /// Order-r profile holding a constant phasor.
    static VoltageProfile constant(Phasor v, int order, double t0);

    [[nodiscard]] int order() const { return static_cast<int>(V.size()) - 1; }
    [[nodiscard]] int coeff_count() const { return 2 * static_cast<int>(V.size()); }

    [[nodiscard]] double magnitude(double t) const;
    [[nodiscard]] double angle(double t) const;

    /// Coefficients interleaved as (V0, theta0, V1, theta1, ...).
    [[nodiscard]] Eigen::VectorXd coefficients() const;
};

Phasor eval_profile(const VoltageProfile& p, double t);

/// dv/dt of the profile at t.
Phasor profile_time_derivative(const VoltageProfile& p, double t);

/// d(Re v, Im v)/d(V0, theta0, ..., V_r, theta_r), a 2 x 2(r+1) matrix.
Eigen::MatrixXd profile_sensitivity(const VoltageProfile& p, double t);

/// The same polynomial expressed around a new origin.
VoltageProfile shift_origin(const VoltageProfile& p, double new_t0);

/// Zero-pads (or truncates, if the dropped coefficients are zero) to another order.
VoltageProfile with_order(const VoltageProfile& p, int order);

/// Profiles of all buses, sharing t0 and order. The flat vector Xi concatenates
/// the per-bus coefficient vectors, buses ascending.
struct SystemProfile {
    double t0 = 0.0;
    std::vector<VoltageProfile> buses;

    [[nodiscard]] int bus_count() const { return static_cast<int>(buses.size()); }
    [[nodiscard]] int order() const { return buses.empty() ? 0 : buses.front().order(); }
    [[nodiscard]] int flat_size() const { return 2 * (order() + 1) * bus_count(); }

    [[nodiscard]] Eigen::VectorXcd evaluate(double t) const;
};

Eigen::VectorXd pack(const SystemProfile& profiles);
SystemProfile unpack(const Eigen::Ref<const Eigen::VectorXd>& flat, int n, int order, double t0);

}  // namespace pinnsim
