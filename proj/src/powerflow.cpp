#include "pinnsim/powerflow.hpp"

#include <cmath>
#include <sstream>

#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

struct Schedule {
    Eigen::VectorXd P;  // net scheduled injection
    Eigen::VectorXd Q;
    std::vector<int> pv_pq;  // angle unknowns
    std::vector<int> pq;     // magnitude unknowns
    int slack = 0;
};

Schedule make_schedule(const CaseFile& c)
{
    const auto n = static_cast<Eigen::Index>(c.buses.size());
    Schedule s;
    s.P = Eigen::VectorXd::Zero(n);
    s.Q = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        const auto& b = c.buses[i];
        const int idx = static_cast<int>(i);
        if (b.type == BusType::slack) {
            s.slack = idx;
        } else {
            s.pv_pq.push_back(idx);
            s.P(idx) += b.P_gen;
        }
        if (b.type == BusType::pq) {
            s.pq.push_back(idx);
        }
    }
    for (const auto& l : c.loads) {
        const int idx = c.bus_index(l.bus);
        s.P(idx) -= l.P;
        s.Q(idx) -= l.Q;
    }
    return s;
}

}  // namespace

PowerFlowSolution power_flow(const CaseFile& c, const PowerFlowOptions& opts)
{
    c.validate();
    const AdmittanceMatrix Yn = build_admittance(c);
    const Eigen::MatrixXcd Y = Eigen::MatrixXcd(Yn.entries());
    const auto n = static_cast<Eigen::Index>(c.buses.size());
    const Schedule sched = make_schedule(c);

    Eigen::VectorXd Vm = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd Va = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = c.buses[static_cast<std::size_t>(i)];
        if (b.type != BusType::pq) {
            Vm(i) = b.V;
        }
        if (b.type == BusType::slack) {
            Va(i) = b.theta;
        }
    }

    const auto na = static_cast<Eigen::Index>(sched.pv_pq.size());
    const auto nm = static_cast<Eigen::Index>(sched.pq.size());
    PowerFlowSolution sol;
    Eigen::VectorXcd V(n);
    for (int iter = 0;; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            V(i) = std::polar(Vm(i), Va(i));
        }
        const Eigen::VectorXcd I = Y * V;
        const Eigen::VectorXcd S = V.cwiseProduct(I.conjugate());
        Eigen::VectorXd F(na + nm);
        for (Eigen::Index k = 0; k < na; ++k) {
            const int i = sched.pv_pq[static_cast<std::size_t>(k)];
            F(k) = S(i).real() - sched.P(i);
        }
        for (Eigen::Index k = 0; k < nm; ++k) {
            const int i = sched.pq[static_cast<std::size_t>(k)];
            F(na + k) = S(i).imag() - sched.Q(i);
        }
        const double norm = F.size() ? F.lpNorm<Eigen::Infinity>() : 0.0;
        sol.history.push_back(norm);
        if (!std::isfinite(norm)) {
            break;
        }
        if (norm < opts.tolerance) {
            sol.iterations = iter;
            sol.V = V;
            sol.mismatch_norm = norm;
            sol.S_gen = S;
            for (const auto& l : c.loads) {
                sol.S_gen(c.bus_index(l.bus)) += Phasor(l.P, l.Q);
            }
            for (const auto& m : c.machines) {
                const int b = c.bus_index(m.bus);
                sol.machine_currents.push_back(std::conj(sol.S_gen(b) / V(b)));
            }
            return sol;
        }
        if (iter >= opts.max_iterations) {
            break;
        }
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        const Eigen::VectorXcd Vnorm = V.cwiseQuotient(Vm.cast<Phasor>());
        Eigen::MatrixXcd dS_dVa = -Y * V.asDiagonal();
        dS_dVa.diagonal() += I;
        dS_dVa = (Phasor(0.0, 1.0) * (V.asDiagonal() * dS_dVa.conjugate())).eval();
        Eigen::MatrixXcd dS_dVm = V.asDiagonal() * (Y * Vnorm.asDiagonal()).conjugate();
        dS_dVm.diagonal() += I.conjugate().cwiseProduct(Vnorm);

        Eigen::MatrixXd J(na + nm, na + nm);
        for (Eigen::Index r = 0; r < na + nm; ++r) {
            const bool p_row = r < na;
            const int i = p_row ? sched.pv_pq[static_cast<std::size_t>(r)] : sched.pq[static_cast<std::size_t>(r - na)];
            for (Eigen::Index col = 0; col < na + nm; ++col) {
                const bool a_col = col < na;
                const int j
                    = a_col ? sched.pv_pq[static_cast<std::size_t>(col)] : sched.pq[static_cast<std::size_t>(col - na)];
                const Phasor d = a_col ? dS_dVa(i, j) : dS_dVm(i, j);
                J(r, col) = p_row ? d.real() : d.imag();
            }
        }
        const Eigen::VectorXd dx = J.partialPivLu().solve(-F);
        for (Eigen::Index k = 0; k < na; ++k) {
            Va(sched.pv_pq[static_cast<std::size_t>(k)]) += dx(k);
        }
        for (Eigen::Index k = 0; k < nm; ++k) {
            Vm(sched.pq[static_cast<std::size_t>(k)]) += dx(na + k);
        }
    }
    std::ostringstream msg;
    msg << "power flow did not converge; mismatch history:";
    for (double h : sol.history) {
        msg << ' ' << h;
    }
    throw NumericalError(msg.str());
}

double power_mismatch(const CaseFile& c, const AdmittanceMatrix& Y, const Eigen::Ref<const Eigen::VectorXcd>& V)
{
    const Schedule sched = make_schedule(c);
    const auto n = static_cast<int>(c.buses.size());
    const auto& Ys = Y.entries();
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& b = c.buses[static_cast<std::size_t>(i)];
        const double Vi = std::abs(V(i));
        const double ti = std::arg(V(i));
        double P = 0.0;
        double Q = 0.0;
        for (int k = 0; k < n; ++k) {
            const Phasor y = Ys.coeff(i, k);
            if (y == Phasor(0.0, 0.0)) {
                continue;
            }
            const double Vk = std::abs(V(k));
            const double dt = ti - std::arg(V(k));
            P += Vi * Vk * (y.real() * std::cos(dt) + y.imag() * std::sin(dt));
            Q += Vi * Vk * (y.real() * std::sin(dt) - y.imag() * std::cos(dt));
        }
        if (b.type != BusType::slack) {
            worst = std::max(worst, std::abs(P - sched.P(i)));
        }
        if (b.type == BusType::pq) {
            worst = std::max(worst, std::abs(Q - sched.Q(i)));
        } else {
            worst = std::max(worst, std::abs(Vi - b.V));
        }
        if (b.type == BusType::slack) {
            worst = std::max(worst, std::abs(ti - b.theta));
        }
    }
    return worst;
}

InitializedSystem init_equilibrium(const CaseFile& c, const PowerFlowSolution& pf)
{
    InitializedSystem out;
    out.system.Y = build_admittance(c);
    out.v0 = pf.V;
    std::vector<Eigen::VectorXd> states;
    for (std::size_t k = 0; k < c.machines.size(); ++k) {
        const auto& cm = c.machines[k];
        const int bus = c.bus_index(cm.bus);
        const Phasor v = pf.V(bus);
        const Phasor i = pf.machine_currents[k];
        const auto& p = cm.params;

        // Rotor angle from the q-axis: v + (R_s + j X_q) i lies on the q axis.
        const double delta = std::arg(v + Phasor(p.R_s, p.X_q) * i);
        const Phasor idq = i * std::polar(1.0, -(delta - std::numbers::pi / 2.0));
        const Phasor vdq = v * std::polar(1.0, -(delta - std::numbers::pi / 2.0));
        const double Id = idq.real();
        const double Iq = idq.imag();
        const double E_d = (p.X_q - p.X_q_p) * Iq;
        const double E_q = vdq.imag() + p.R_s * Iq + p.X_d_p * Id;

        MachineComponent mc;
        mc.id = cm.id;
        mc.bus = bus;
        mc.u.E_fd = E_q + (p.X_d - p.X_d_p) * Id;
        Eigen::VectorXd x;
        if (cm.model == MachineModel::classical) {
            mc.machine = Machine::classical(p, E_q);
            x = Eigen::Vector2d(delta, 0.0);
        } else {
            mc.machine = Machine{p, MachineModel::two_axis, E_q, E_d};
            x = Eigen::Vector4d(E_q, E_d, delta, 0.0);
        }
        // P_m balances the electrical power: evaluate the swing row with P_m = 0.
        const Eigen::VectorXd f0 = machine_f(mc.machine, x, v, ControlInput{0.0, mc.u.E_fd});
        mc.u.P_m = -2.0 * p.H * f0(mc.machine.speed_index());
        const Eigen::VectorXd f = machine_f(mc.machine, x, v, mc.u);
        if (!(f.lpNorm<Eigen::Infinity>() <= 1e-8)) {
            throw NumericalError("equilibrium initialization of '" + cm.id + "' left derivative norm "
                                 + std::to_string(f.lpNorm<Eigen::Infinity>()));
        }
        out.system.machines.push_back(mc);
        states.push_back(x);
    }
    for (const auto& l : c.loads) {
        const int bus = c.bus_index(l.bus);
        out.system.loads.push_back(StaticLoad::from_power(bus, Phasor(l.P, l.Q), std::abs(pf.V(bus))));
    }
    out.x0.resize(out.system.state_size());
    int offset = 0;
    for (const auto& x : states) {
        out.x0.segment(offset, x.size()) = x;
        offset += static_cast<int>(x.size());
    }
    out.system.validate();
    return out;
}

PowerSystem apply_disturbance(const PowerSystem& system, std::size_t machine, double factor)
{
    if (machine >= system.machines.size()) {
        throw ValidationError("apply_disturbance: no machine with index " + std::to_string(machine));
    }
    PowerSystem out = system;
    out.machines[machine].u.P_m *= factor;
    return out;
}

InitializedSystem initialize_case(const CaseFile& c) { return init_equilibrium(c, power_flow(c)); }

}  // namespace pinnsim
