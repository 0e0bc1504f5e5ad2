#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "pinnsim/pinn.hpp"
#include "pinnsim/system.hpp"
#include "pinnsim/trajectory.hpp"
#include "pinnsim/voltage.hpp"

namespace pinnsim {

/// Starting profile of each step's Gauss-Newton iteration.
///   constant: the step's initial voltages, higher coefficients zero
///   previous: the preceding step's polynomial re-anchored (first step: constant)
///   tangent:  initial voltages and their consistent first derivative
enum class ProfileStart { constant, previous, tangent };

struct StepConfig {
    double dt = 0.05;
    int s = 3;
    int r = 2;
    double xi_tol = 1e-8;
    int k_max = 20;
    /// Levenberg parameter; singular solves escalate it by 10x up to max_damping.
    double damping = 0.0;
    double max_damping = 1e-2;
    ProfileStart start = ProfileStart::constant;

    /// Throws ValidationError on invalid values.
    void validate() const;
    /// False when s < r + 1 (underdetermined least squares).
    [[nodiscard]] bool determined() const { return s >= r + 1; }
};

/// One network per machine of the system, in machine order.
using NetworkSet = std::vector<PinnWeights>;

/// t_j = t0 + (j - 1/2) dt / s, j = 1..s.
std::vector<double> query_points(double t0, double dt, int s);

struct ResidualAssembly {
    Eigen::VectorXd rho;              // 2 n s: bus-major, then query point, (Re, Im)
    Eigen::SparseMatrix<double> J;    // 2 n s x 2 (r + 1) n
};

/// Row of (bus, query point, component) in rho.
inline int residual_row(int bus, int point, int s, int part) { return 2 * (bus * s + point) + part; }

/// Column of coefficient c (V0, theta0, V1, ...) of bus l in the flat profile vector.
inline int profile_column(int bus, int coeff, int r) { return 2 * (r + 1) * bus + coeff; }

/// Current-balance residual i^C - i^N at the query points of [t0, t0 + dt].
/// Throws DomainError when dt exceeds a network's range or a magnitude is
/// nonpositive at a query point, LayoutMismatchError when a network's order
/// or state layout does not fit.
Eigen::VectorXd residual(const SystemProfile& xi, const PowerSystem& system, const Eigen::VectorXd& x0,
                         const NetworkSet& nets, const StepConfig& cfg);

/// Residual with its exact Jacobian with respect to the flat profile vector.
/// Every block (i, l) with Y_il != 0 or i == l is stored in full; all others are absent.
ResidualAssembly assemble(const SystemProfile& xi, const PowerSystem& system, const Eigen::VectorXd& x0,
                          const NetworkSet& nets, const StepConfig& cfg);

Eigen::SparseMatrix<double> jacobian(const SystemProfile& xi, const PowerSystem& system, const Eigen::VectorXd& x0,
                                     const NetworkSet& nets, const StepConfig& cfg);

/// dt/s * rho^T rho.
double objective(const Eigen::VectorXd& rho, double dt, int s);

struct UpdateResult {
    Eigen::VectorXd delta;
    double damping = 0.0;  // value actually used
};

/// Solves (J^T J + lambda I) d = -J^T rho by sparse LDL^T. A singular or
/// indefinite factorization raises lambda (from 1e-10 if zero) by 10x up to
/// max_damping; beyond that NumericalError.
UpdateResult gauss_newton_update(const Eigen::SparseMatrix<double>& J, const Eigen::VectorXd& rho,
                                 double damping = 0.0, double max_damping = 1e-2);

/// Constant profile at the given bus voltages.
SystemProfile init_profile(const Eigen::VectorXcd& v, int r, double t0);

/// The previous profile re-expressed around t0.
SystemProfile init_profile(const SystemProfile& previous, double t0);

/// Order-r profile with V0, theta0 from v and V1, theta1 from dv/dt obtained by
/// differentiating the current balance along the machine dynamics at (x, v).
SystemProfile init_profile(const PowerSystem& system, const Eigen::VectorXd& x, const Eigen::VectorXcd& v, int r,
                           double t0);

struct StepResult {
    SystemProfile xi_final;
    Eigen::VectorXd x_end;
    Eigen::VectorXcd v_end;
    int iterations = 0;
    double objective = 0.0;
    bool converged = false;
    /// objective_history[k] is the objective at the k-th iterate (k = 0 is the
    /// initial profile); delta_history[k - 1] is the update producing iterate k.
    std::vector<double> objective_history;
    std::vector<double> delta_history;
    double damping_used = 0.0;
    Trajectory::DenseEvaluator evaluator;
};

/// One step of the simulator from (x0, v0) at t0. When `initial` is given it
/// is used as the starting profile.
StepResult step(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0, double t0,
                const StepConfig& cfg, const NetworkSet& nets, const SystemProfile* initial = nullptr);

/// Chains steps up to t_max. Unconverged steps are counted in the
/// trajectory diagnostic; a failing step ends the trajectory early.
/// When `steps` is given, each StepResult is appended to it.
Trajectory simulate(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0, double t_max,
                    const StepConfig& cfg, const NetworkSet& nets, std::vector<StepResult>* steps = nullptr);

/// CSV with columns step, iteration, objective, delta_xi_inf_norm.
void write_step_diagnostics(std::ostream& out, const std::vector<StepResult>& steps);

}  // namespace pinnsim
