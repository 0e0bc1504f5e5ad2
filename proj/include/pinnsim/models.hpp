#pragma once

#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace pinnsim {

/// Complex bus voltage or current in per-unit, network (D-Q) frame.
using Phasor = std::complex<double>;

inline constexpr double kNominalFrequencyHz = 60.0;
inline constexpr double kSynchronousSpeed = 2.0 * std::numbers::pi * kNominalFrequencyHz;

enum class MachineModel { classical, two_axis };

/// Synchronous machine constants (per-unit on system base, times in s).
struct MachineParams {
    double H = 1.0;
    double D = 0.0;
    double X_d = 0.1;
    double X_d_p = 0.1;
    double X_q = 0.1;
    double X_q_p = 0.1;
    double T_do_p = 1.0;
    double T_qo_p = 1.0;
    double R_s = 0.0;
    double omega_s = kSynchronousSpeed;
};

/// Control inputs held constant over a simulation.
struct ControlInput {
    double P_m = 0.0;
    double E_fd = 0.0;
};

/// Machine component: parameters, model kind and, for the classical
/// reduction, the constant internal voltages behind transient reactance.
///
/// State layout:
///   classical: (delta, delta_omega)
///   two-axis:  (E_q_p, E_d_p, delta, delta_omega)
/// delta_omega is in per-unit of omega_s.
struct Machine {
    MachineParams params;
    MachineModel model = MachineModel::classical;
    double E_q0_p = 1.0;
    double E_d0_p = 0.0;

    [[nodiscard]] int state_dim() const { return model == MachineModel::classical ? 2 : 4; }
    [[nodiscard]] int delta_index() const { return model == MachineModel::classical ? 0 : 2; }
    [[nodiscard]] int speed_index() const { return delta_index() + 1; }

    /// Throws ValidationError when parameter invariants are violated.
    void validate() const;

    /// Returns a classical machine: X'_q = X_q = X'_d, E'_d = 0.
    static Machine classical(MachineParams params, double E_q0_p);
};

/// Partial derivatives of a dynamic component at one point.
/// df_dv and dh_dv are taken with respect to (Re v, Im v); dh_* rows are (Re i, Im i).
struct ComponentPartials {
    Eigen::MatrixXd df_dx;
    Eigen::MatrixXd df_dv;
    Eigen::MatrixXd dh_dx;
    Eigen::Matrix2d dh_dv;
};

/// Solves the stator equations for (I_d, I_q) given internal voltages,
/// rotor angle and terminal voltage. Throws NumericalError when
/// R_s^2 + X'_d X'_q = 0.
Eigen::Vector2d dq_currents(const MachineParams& params, double E_d_p, double E_q_p, double delta,
                            Phasor v);

Eigen::Vector2d classical_f(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v,
                            const Machine& machine, const ControlInput& u);
Phasor classical_h(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const Machine& machine);

Eigen::Vector4d two_axis_f(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v,
                           const MachineParams& params, const ControlInput& u);
Phasor two_axis_h(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const MachineParams& params);

/// Dispatch on machine.model.
Eigen::VectorXd machine_f(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state,
                          Phasor v, const ControlInput& u);
Phasor machine_h(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v);

/// Analytic partials of machine_f and machine_h.
ComponentPartials machine_partials(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state,
                                   Phasor v, const ControlInput& u);

/// Constant-impedance load.
struct StaticLoad {
    int bus = 0;
    Phasor Y_load{0.0, 0.0};

    /// Y = conj(S) / |V|^2 for scheduled consumption S at voltage magnitude V.
    static StaticLoad from_power(int bus, Phasor S, double V);
};

/// Injection of a static load: consumption enters as negative injection.
Phasor load_h(Phasor v, const StaticLoad& load);

/// 2x2 real matrix representing multiplication by a complex number on (re, im).
inline Eigen::Matrix2d complex_as_real(Phasor a)
{
    Eigen::Matrix2d m;
    m << a.real(), -a.imag(), a.imag(), a.real();
    return m;
}

/// Sparse complex bus admittance matrix.
class AdmittanceMatrix {
  public:
    using Sparse = Eigen::SparseMatrix<Phasor, Eigen::ColMajor>;

    AdmittanceMatrix() = default;
    explicit AdmittanceMatrix(Sparse entries);
    static AdmittanceMatrix from_triplets(int n, const std::vector<Eigen::Triplet<Phasor>>& triplets);

    [[nodiscard]] int size() const { return static_cast<int>(entries_.rows()); }
    [[nodiscard]] const Sparse& entries() const { return entries_; }
    [[nodiscard]] Phasor operator()(int row, int col) const { return entries_.coeff(row, col); }

    /// Buses j with a structurally nonzero Y(i, j), including i itself, ascending.
    [[nodiscard]] const std::vector<int>& neighbours(int bus) const { return neighbours_[bus]; }

  private:
    Sparse entries_;
    std::vector<std::vector<int>> neighbours_;
};

/// i^N = Y v.
Eigen::VectorXcd network_currents(const AdmittanceMatrix& Y, const Eigen::Ref<const Eigen::VectorXcd>& v);

}  // namespace pinnsim
