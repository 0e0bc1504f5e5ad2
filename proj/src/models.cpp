#include "pinnsim/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

// Inverse of [[R_s, -X'_q], [X'_d, R_s]].
Eigen::Matrix2d stator_inverse(const MachineParams& p)
{
    const double det = p.R_s * p.R_s + p.X_d_p * p.X_q_p;
    if (det == 0.0 || !std::isfinite(det)) {
        throw NumericalError("singular dq impedance: R_s^2 + X'_d X'_q = 0");
    }
    Eigen::Matrix2d inv;
    inv << p.R_s, p.X_q_p, -p.X_d_p, p.R_s;
    return inv / det;
}

// Park transform of the terminal voltage into the rotor frame.
Eigen::Vector2d park(double delta, Phasor v)
{
    const double s = std::sin(delta);
    const double c = std::cos(delta);
    return {v.real() * s - v.imag() * c, v.real() * c + v.imag() * s};
}

// Full two-axis evaluation with optional partials, variables ordered
// (E_q_p, E_d_p, delta, delta_omega) and (Re v, Im v).
struct TwoAxisEval {
    Eigen::Vector4d f;
    Phasor h;
    Eigen::Matrix4d df_dx;
    Eigen::Matrix<double, 4, 2> df_dv;
    Eigen::Matrix<double, 2, 4> dh_dx;
    Eigen::Matrix2d dh_dv;
};

TwoAxisEval evaluate_two_axis(const MachineParams& p, double E_q, double E_d, double delta,
                              double d_omega, Phasor v, const ControlInput& u, bool partials)
{
    const Eigen::Matrix2d inv = stator_inverse(p);
    const double s = std::sin(delta);
    const double c = std::cos(delta);
    const Eigen::Vector2d vdq = park(delta, v);
    const Eigen::Vector2d I = inv * Eigen::Vector2d(E_d - vdq(0), E_q - vdq(1));
    const double Id = I(0);
    const double Iq = I(1);

    // i^C = (I_d + j I_q) e^{j(delta - pi/2)} written as rotation R(delta) I.
    Eigen::Matrix2d rot;
    rot << s, c, -c, s;
    const Eigen::Vector2d ic = rot * I;

    TwoAxisEval out;
    out.f(0) = (-E_q - (p.X_d - p.X_d_p) * Id + u.E_fd) / p.T_do_p;
    out.f(1) = (-E_d + (p.X_q - p.X_q_p) * Iq) / p.T_qo_p;
    out.f(2) = p.omega_s * d_omega;
    out.f(3) = (u.P_m - E_d * Id - E_q * Iq - (p.X_q_p - p.X_d_p) * Id * Iq - p.D * d_omega) / (2.0 * p.H);
    out.h = Phasor(ic(0), ic(1));
    if (!partials) {
        return out;
    }

    // dI/d(E_q, E_d, delta, d_omega) and dI/d(vr, vi)
    Eigen::Matrix<double, 2, 4> dI_dx;
    dI_dx.col(0) = inv.col(1);
    dI_dx.col(1) = inv.col(0);
    dI_dx.col(2) = inv * Eigen::Vector2d(-vdq(1), vdq(0));
    dI_dx.col(3).setZero();
    Eigen::Matrix2d dI_dv;
    dI_dv.col(0) = inv * Eigen::Vector2d(-s, -c);
    dI_dv.col(1) = inv * Eigen::Vector2d(c, -s);

    Eigen::Matrix2d drot;
    drot << c, -s, s, c;
    out.dh_dx = rot * dI_dx;
    out.dh_dx.col(2) += drot * I;
    out.dh_dv = rot * dI_dv;

    const double kd = p.X_d - p.X_d_p;
    const double kq = p.X_q - p.X_q_p;
    const double kx = p.X_q_p - p.X_d_p;
    Eigen::Matrix<double, 1, 4> unit_Eq;
    unit_Eq << 1, 0, 0, 0;
    Eigen::Matrix<double, 1, 4> unit_Ed;
    unit_Ed << 0, 1, 0, 0;

    out.df_dx.row(0) = (-unit_Eq - kd * dI_dx.row(0)) / p.T_do_p;
    out.df_dx.row(1) = (-unit_Ed + kq * dI_dx.row(1)) / p.T_qo_p;
    out.df_dx.row(2) << 0, 0, 0, p.omega_s;
    Eigen::Matrix<double, 1, 4> dPe = Id * unit_Ed + Iq * unit_Eq + E_d * dI_dx.row(0) + E_q * dI_dx.row(1)
                                      + kx * (Iq * dI_dx.row(0) + Id * dI_dx.row(1));
    out.df_dx.row(3) = -dPe / (2.0 * p.H);
    out.df_dx(3, 3) -= p.D / (2.0 * p.H);

    out.df_dv.row(0) = -kd * dI_dv.row(0) / p.T_do_p;
    out.df_dv.row(1) = kq * dI_dv.row(1) / p.T_qo_p;
    out.df_dv.row(2).setZero();
    const Eigen::RowVector2d dPe_dv
        = E_d * dI_dv.row(0) + E_q * dI_dv.row(1) + kx * (Iq * dI_dv.row(0) + Id * dI_dv.row(1));
    out.df_dv.row(3) = -dPe_dv / (2.0 * p.H);
    return out;
}

void require_dim(const Eigen::Ref<const Eigen::VectorXd>& state, int expected, const char* what)
{
    if (state.size() != expected) {
        throw ValidationError(std::string(what) + ": expected state of dimension " + std::to_string(expected)
                              + ", got " + std::to_string(state.size()));
    }
}

}  // namespace

void Machine::validate() const
{
    const auto& p = params;
    if (!(p.H > 0.0)) {
        throw ValidationError("machine: H must be positive");
    }
    if (!(p.X_d_p > 0.0)) {
        throw ValidationError("machine: X'_d must be positive");
    }
    if (model == MachineModel::two_axis && !(p.T_do_p > 0.0 && p.T_qo_p > 0.0)) {
        throw ValidationError("machine: two-axis model requires T'_do > 0 and T'_qo > 0");
    }
    if (model == MachineModel::classical && (p.X_q_p != p.X_d_p || p.X_q != p.X_d_p)) {
        throw ValidationError("machine: classical reduction requires X'_q = X_q = X'_d");
    }
}

Machine Machine::classical(MachineParams params, double E_q0_p)
{
    params.X_q_p = params.X_d_p;
    params.X_q = params.X_d_p;
    Machine m;
    m.params = params;
    m.model = MachineModel::classical;
    m.E_q0_p = E_q0_p;
    m.E_d0_p = 0.0;
    return m;
}

Eigen::Vector2d dq_currents(const MachineParams& params, double E_d_p, double E_q_p, double delta, Phasor v)
{
    const Eigen::Vector2d vdq = park(delta, v);
    return stator_inverse(params) * Eigen::Vector2d(E_d_p - vdq(0), E_q_p - vdq(1));
}

Eigen::Vector2d classical_f(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const Machine& machine,
                            const ControlInput& u)
{
    require_dim(state, 2, "classical_f");
    const auto e = evaluate_two_axis(machine.params, machine.E_q0_p, machine.E_d0_p, state(0), state(1), v, u,
                                     false);
    return {e.f(2), e.f(3)};
}

Phasor classical_h(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const Machine& machine)
{
    require_dim(state, 2, "classical_h");
    return evaluate_two_axis(machine.params, machine.E_q0_p, machine.E_d0_p, state(0), 0.0, v, {}, false).h;
}

Eigen::Vector4d two_axis_f(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const MachineParams& params,
                           const ControlInput& u)
{
    require_dim(state, 4, "two_axis_f");
    return evaluate_two_axis(params, state(0), state(1), state(2), state(3), v, u, false).f;
}

Phasor two_axis_h(const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v, const MachineParams& params)
{
    require_dim(state, 4, "two_axis_h");
    return evaluate_two_axis(params, state(0), state(1), state(2), state(3), v, {}, false).h;
}

Eigen::VectorXd machine_f(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v,
                          const ControlInput& u)
{
    if (machine.model == MachineModel::classical) {
        return classical_f(state, v, machine, u);
    }
    return two_axis_f(state, v, machine.params, u);
}

Phasor machine_h(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state, Phasor v)
{
    if (machine.model == MachineModel::classical) {
        return classical_h(state, v, machine);
    }
    return two_axis_h(state, v, machine.params);
}

ComponentPartials machine_partials(const Machine& machine, const Eigen::Ref<const Eigen::VectorXd>& state,
                                   Phasor v, const ControlInput& u)
{
    require_dim(state, machine.state_dim(), "machine_partials");
    ComponentPartials out;
    if (machine.model == MachineModel::two_axis) {
        const auto e = evaluate_two_axis(machine.params, state(0), state(1), state(2), state(3), v, u, true);
        out.df_dx = e.df_dx;
        out.df_dv = e.df_dv;
        out.dh_dx = e.dh_dx;
        out.dh_dv = e.dh_dv;
        return out;
    }
    const auto e
        = evaluate_two_axis(machine.params, machine.E_q0_p, machine.E_d0_p, state(0), state(1), v, u, true);
    // classical state (delta, delta_omega) sits at two-axis indices (2, 3)
    out.df_dx = e.df_dx.bottomRightCorner<2, 2>();
    out.df_dv = e.df_dv.bottomRows<2>();
    out.dh_dx = e.dh_dx.rightCols<2>();
    out.dh_dv = e.dh_dv;
    return out;
}

StaticLoad StaticLoad::from_power(int bus, Phasor S, double V)
{
    return StaticLoad{bus, std::conj(S) / (V * V)};
}

Phasor load_h(Phasor v, const StaticLoad& load) { return -load.Y_load * v; }

AdmittanceMatrix::AdmittanceMatrix(Sparse entries) : entries_(std::move(entries))
{
    if (entries_.rows() != entries_.cols()) {
        throw ValidationError("admittance matrix must be square");
    }
    entries_.makeCompressed();
    const int n = size();
    neighbours_.assign(static_cast<std::size_t>(n), {});
    for (int col = 0; col < n; ++col) {
        for (Sparse::InnerIterator it(entries_, col); it; ++it) {
            neighbours_[static_cast<std::size_t>(it.row())].push_back(col);
        }
    }
    for (int i = 0; i < n; ++i) {
        auto& nb = neighbours_[static_cast<std::size_t>(i)];
        for (int j : nb) {
            const auto& back = neighbours_[static_cast<std::size_t>(j)];
            if (std::find(back.begin(), back.end(), i) == back.end()) {
                throw ValidationError("admittance matrix sparsity pattern is not symmetric");
            }
        }
        if (!nb.empty() && std::find(nb.begin(), nb.end(), i) == nb.end()) {
            throw ValidationError("admittance matrix: bus " + std::to_string(i) + " has branches but no diagonal");
        }
        if (nb.empty()) {
            nb.push_back(i);
        }
    }
}

AdmittanceMatrix AdmittanceMatrix::from_triplets(int n, const std::vector<Eigen::Triplet<Phasor>>& triplets)
{
    Sparse m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return AdmittanceMatrix(std::move(m));
}

Eigen::VectorXcd network_currents(const AdmittanceMatrix& Y, const Eigen::Ref<const Eigen::VectorXcd>& v)
{
    if (v.size() != Y.size()) {
        throw ValidationError("network_currents: voltage vector has " + std::to_string(v.size())
                              + " entries for " + std::to_string(Y.size()) + " buses");
    }
    return Y.entries() * v;
}

}  // namespace pinnsim
