#pragma once

#include <vector>

#include <Eigen/Dense>

#include "pinnsim/system.hpp"
#include "pinnsim/trajectory.hpp"
#include "pinnsim/voltage.hpp"

namespace pinnsim {

/// Differential states, bus voltages (rectangular) and time.
struct DaeState {
    Eigen::VectorXd x;
    Eigen::VectorXcd v;
    double t = 0.0;
};

struct NewtonOptions {
    double tolerance = 1e-10;
    int max_iterations = 50;
};

/// One step of the simultaneous implicit trapezoidal rule: the trapezoidal
/// update of x and the current balance at t + dt are solved together by
/// Newton's method with the analytic Jacobian. Throws NumericalError if
/// Newton does not converge.
DaeState trapezoidal_step(const DaeState& state, double dt, const PowerSystem& system,
                          const NewtonOptions& opts = {});

/// Solves the current balance for v with x fixed (Newton from v_guess).
Eigen::VectorXcd consistent_voltages(const PowerSystem& system, const Eigen::Ref<const Eigen::VectorXd>& x,
                                     const Eigen::Ref<const Eigen::VectorXcd>& v_guess,
                                     const NewtonOptions& opts = {});

/// Fixed-step trapezoidal simulation; a final partial step is taken (and
/// flagged) when t_max is not a multiple of dt. Step failures end the
/// trajectory early with a diagnostic.
Trajectory trapezoidal_simulate(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                                double t_max, double dt, const NewtonOptions& opts = {});

struct ReferenceOptions {
    double dt_ref = 1e-4;
    /// Accept only if halving dt_ref changes every sampled speed deviation by less than this (pu).
    double verify_tolerance = 1e-7;
    bool verify = true;
};

/// Fine-step trapezoidal reference sampled at `sample_times` (multiples of
/// dt_ref / 2). Throws NumericalError when step-halving verification fails.
Trajectory reference_simulate(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                              double t_max, const std::vector<double>& sample_times,
                              const ReferenceOptions& opts = {});

/// Largest speed-deviation change between two reference runs at dt_ref and
/// dt_ref / 2 (the verification statistic).
double reference_halving_change(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                                const std::vector<double>& sample_times, double dt_ref);

/// Integrates one machine under a prescribed voltage profile from
/// profile.t0 to profile.t0 + dt_end with classic fourth-order Runge-Kutta
/// (steps of at most h, shortened to land on dt_end).
Eigen::VectorXd single_component_solve(const Machine& machine, const ControlInput& u,
                                       const Eigen::Ref<const Eigen::VectorXd>& x0, const VoltageProfile& profile,
                                       double dt_end, double h = 1e-4);

}  // namespace pinnsim
