#include "pinnsim/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include <Eigen/SparseLU>

#include "pinnsim/csv.hpp"
#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_layout(const PowerSystem& system, const NetworkSet& nets, const StepConfig& cfg)
{
    if (nets.size() != system.machines.size()) {
        throw LayoutMismatchError("stepper: " + std::to_string(nets.size()) + " networks for " +
                                  std::to_string(system.machines.size()) + " machines");
    }
    for (std::size_t k = 0; k < nets.size(); ++k) {
        const PinnMetadata& m = nets[k].meta;
        const Machine& machine = system.machines[k].machine;
        if (m.order != cfg.r || m.state_dim != machine.state_dim()) {
            std::ostringstream os;
            os << "stepper: network for machine '" << system.machines[k].id << "' has r=" << m.order
               << ", state_dim=" << m.state_dim << "; the solver needs r=" << cfg.r
               << ", state_dim=" << machine.state_dim();
            throw LayoutMismatchError(os.str());
        }
    }
}

void check_profile(const SystemProfile& xi, const PowerSystem& system, const StepConfig& cfg)
{
    if (xi.bus_count() != system.bus_count() || xi.order() != cfg.r) {
        throw ValidationError("stepper: profile has " + std::to_string(xi.bus_count()) + " buses of order " +
                              std::to_string(xi.order()) + ", expected " + std::to_string(system.bus_count()) +
                              " of order " + std::to_string(cfg.r));
    }
}

VectorXd network_features(const PinnWeights& w, double tau, const Eigen::Ref<const VectorXd>& x0,
                          const VoltageProfile& p, const ControlInput& u)
{
    VectorXd z(w.input_dim());
    z(0) = tau;
    z.segment(1, x0.size()) = x0;
    z.segment(w.meta.xi_feature(), p.coeff_count()) = p.coefficients();
    if (w.meta.include_control) {
        z(w.meta.control_feature()) = u.P_m;
        z(w.meta.control_feature() + 1) = u.E_fd;
    }
    return z;
}

// Shared by residual and assemble; J is filled when `triplets` is non-null.
VectorXd evaluate(const SystemProfile& xi, const PowerSystem& system, const VectorXd& x0, const NetworkSet& nets,
                  const StepConfig& cfg, std::vector<Eigen::Triplet<double>>* triplets)
{
    cfg.validate();
    check_layout(system, nets, cfg);
    check_profile(xi, system, cfg);
    const int n = system.bus_count();
    const int s = cfg.s;
    const int nc = 2 * (cfg.r + 1);
    const std::vector<double> tq = query_points(xi.t0, cfg.dt, s);

    // Voltages and profile sensitivities at each query point.
    std::vector<Eigen::VectorXcd> v(s);
    std::vector<std::vector<MatrixXd>> sens(s);
    for (int j = 0; j < s; ++j) {
        v[j] = xi.evaluate(tq[j]);
        for (int i = 0; i < n; ++i) {
            if (!(xi.buses[i].magnitude(tq[j]) > 0.0)) {
                std::ostringstream os;
                os << "stepper: nonpositive voltage magnitude at bus " << i << ", t = " << tq[j];
                throw DomainError(os.str());
            }
        }
        if (triplets) {
            sens[j].resize(n);
            for (int i = 0; i < n; ++i) sens[j][i] = profile_sensitivity(xi.buses[i], tq[j]);
        }
    }

    VectorXd rho(2 * n * s);
    // Dense blocks per (row bus, query point, column bus), added to triplets at the end.
    std::vector<MatrixXd> block;
    auto block_at = [&](int i, int j, int l) -> MatrixXd& {
        return block[(static_cast<std::size_t>(i) * s + j) * n + l];
    };
    if (triplets) block.assign(static_cast<std::size_t>(n) * s * n, MatrixXd());

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < s; ++j) {
            Phasor mismatch = 0.0;
            for (int l : system.Y.neighbours(i)) {
                const Phasor y = system.Y(i, l);
                mismatch -= y * v[j](l);
                if (triplets) block_at(i, j, l) = -complex_as_real(y) * sens[j][l];
            }
            rho(residual_row(i, j, s, 0)) = mismatch.real();
            rho(residual_row(i, j, s, 1)) = mismatch.imag();
        }
    }
    for (const StaticLoad& load : system.loads) {
        for (int j = 0; j < s; ++j) {
            const Phasor c = load_h(v[j](load.bus), load);
            rho(residual_row(load.bus, j, s, 0)) += c.real();
            rho(residual_row(load.bus, j, s, 1)) += c.imag();
            if (triplets) block_at(load.bus, j, load.bus) -= complex_as_real(load.Y_load) * sens[j][load.bus];
        }
    }
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        const MachineComponent& mc = system.machines[k];
        const PinnWeights& w = nets[k];
        const int p = mc.machine.state_dim();
        const auto xk = x0.segment(system.state_offset(k), p);
        const int i = mc.bus;
        for (int j = 0; j < s; ++j) {
            const VectorXd z = network_features(w, tq[j] - xi.t0, xk, xi.buses[i], mc.u);
            const VectorXd xhat = forward(w, z);
            const Phasor c = machine_h(mc.machine, xhat, v[j](i));
            rho(residual_row(i, j, s, 0)) += c.real();
            rho(residual_row(i, j, s, 1)) += c.imag();
            if (triplets) {
                const MatrixXd S = input_sensitivity(w, z);
                const ComponentPartials part = machine_partials(mc.machine, xhat, v[j](i), mc.u);
                block_at(i, j, i) += part.dh_dv * sens[j][i] + part.dh_dx * S.middleCols(w.meta.xi_feature(), nc);
            }
        }
    }
    if (triplets) {
        triplets->clear();
        triplets->reserve(block.size() / n * 4 * 2 * nc);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < s; ++j) {
                for (int l : system.Y.neighbours(i)) {
                    const MatrixXd& b = block_at(i, j, l);
                    for (int a = 0; a < 2; ++a) {
                        for (int c = 0; c < nc; ++c) {
                            triplets->emplace_back(residual_row(i, j, s, a), profile_column(l, c, cfg.r), b(a, c));
                        }
                    }
                }
            }
        }
    }
    return rho;
}

Trajectory::DenseEvaluator make_evaluator(const PowerSystem& system, const VectorXd& x0, const NetworkSet& nets,
                                          const SystemProfile& xi, double dt)
{
    struct Captured {
        std::vector<std::pair<std::size_t, int>> layout;  // (offset, state_dim)
        std::vector<int> bus;
        std::vector<ControlInput> u;
        NetworkSet nets;
        VectorXd x0;
        SystemProfile xi;
        double dt;
    };
    auto cap = std::make_shared<Captured>();
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        cap->layout.emplace_back(system.state_offset(k), system.machines[k].machine.state_dim());
        cap->bus.push_back(system.machines[k].bus);
        cap->u.push_back(system.machines[k].u);
    }
    cap->nets = nets;
    cap->x0 = x0;
    cap->xi = xi;
    cap->dt = dt;
    return [cap](double t) {
        const double tau = std::clamp(t - cap->xi.t0, 0.0, cap->dt);
        TrajectorySample out;
        out.t = t;
        out.x = cap->x0;
        for (std::size_t k = 0; k < cap->nets.size(); ++k) {
            const auto [off, p] = cap->layout[k];
            const VectorXd z = network_features(cap->nets[k], tau, cap->x0.segment(off, p),
                                                cap->xi.buses[cap->bus[k]], cap->u[k]);
            out.x.segment(off, p) = forward(cap->nets[k], z);
        }
        out.v = cap->xi.evaluate(cap->xi.t0 + tau);
        return out;
    };
}

}  // namespace

void StepConfig::validate() const
{
    if (!(dt > 0.0)) throw ValidationError("step config: dt must be positive");
    if (s < 1) throw ValidationError("step config: s must be at least 1");
    if (r < 0) throw ValidationError("step config: r must be nonnegative");
    if (k_max < 1) throw ValidationError("step config: k_max must be at least 1");
    if (!(damping >= 0.0) || !(max_damping >= 0.0)) throw ValidationError("step config: damping must be nonnegative");
    if (!(xi_tol > 0.0)) throw ValidationError("step config: xi_tol must be positive");
}

std::vector<double> query_points(double t0, double dt, int s)
{
    std::vector<double> t(s);
    for (int j = 0; j < s; ++j) t[j] = t0 + (static_cast<double>(j) + 0.5) * dt / static_cast<double>(s);
    return t;
}

VectorXd residual(const SystemProfile& xi, const PowerSystem& system, const VectorXd& x0, const NetworkSet& nets,
                  const StepConfig& cfg)
{
    return evaluate(xi, system, x0, nets, cfg, nullptr);
}

ResidualAssembly assemble(const SystemProfile& xi, const PowerSystem& system, const VectorXd& x0,
                          const NetworkSet& nets, const StepConfig& cfg)
{
    std::vector<Eigen::Triplet<double>> triplets;
    ResidualAssembly out;
    out.rho = evaluate(xi, system, x0, nets, cfg, &triplets);
    out.J.resize(out.rho.size(), xi.flat_size());
    out.J.setFromTriplets(triplets.begin(), triplets.end());
    out.J.makeCompressed();
    return out;
}

Eigen::SparseMatrix<double> jacobian(const SystemProfile& xi, const PowerSystem& system, const VectorXd& x0,
                                     const NetworkSet& nets, const StepConfig& cfg)
{
    return assemble(xi, system, x0, nets, cfg).J;
}

double objective(const VectorXd& rho, double dt, int s) { return dt / static_cast<double>(s) * rho.squaredNorm(); }

UpdateResult gauss_newton_update(const Eigen::SparseMatrix<double>& J, const VectorXd& rho, double damping,
                                 double max_damping)
{
    if (J.rows() != rho.size()) throw ValidationError("gauss-newton: J and rho sizes differ");
    const Eigen::SparseMatrix<double> JtJ = (J.transpose() * J).pruned(0.0);
    const VectorXd rhs = -(J.transpose() * rho);
    Eigen::SparseMatrix<double> I(J.cols(), J.cols());
    I.setIdentity();
    double lambda = damping;
    for (;;) {
        Eigen::SparseMatrix<double> A = JtJ + lambda * I;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        bool ok = ldlt.info() == Eigen::Success;
        if (ok) {
            const VectorXd d = ldlt.vectorD();
            const double dmax = d.cwiseAbs().maxCoeff();
            ok = d.minCoeff() > 1e-14 * std::max(dmax, 1e-300);
        }
        if (ok) {
            UpdateResult out{ldlt.solve(rhs), lambda};
            if (out.delta.allFinite()) return out;
        }
        const double next = lambda == 0.0 ? 1e-10 : lambda * 10.0;
        if (next > max_damping * (1.0 + 1e-12)) {
            std::ostringstream os;
            os << "gauss-newton: normal equations singular up to damping " << lambda;
            throw NumericalError(os.str());
        }
        lambda = next;
    }
}

SystemProfile init_profile(const Eigen::VectorXcd& v, int r, double t0)
{
    SystemProfile out;
    out.t0 = t0;
    for (Eigen::Index i = 0; i < v.size(); ++i) out.buses.push_back(VoltageProfile::constant(v(i), r, t0));
    return out;
}

SystemProfile init_profile(const SystemProfile& previous, double t0)
{
    SystemProfile out;
    out.t0 = t0;
    for (const auto& p : previous.buses) out.buses.push_back(shift_origin(p, t0));
    return out;
}

SystemProfile init_profile(const PowerSystem& system, const VectorXd& x, const Eigen::VectorXcd& v, int r,
                           double t0)
{
    const int n = system.bus_count();
    if (v.size() != n || x.size() != system.state_size()) {
        throw ValidationError("init_profile: state or voltage dimension does not match the system");
    }
    // (Y - di^C/dv) dv/dt = di^C/dx f, in (Re, Im) pairs per bus.
    std::vector<Eigen::Triplet<double>> t;
    VectorXd rhs = VectorXd::Zero(2 * n);
    const auto& Y = system.Y.entries();
    for (int col = 0; col < Y.outerSize(); ++col) {
        for (AdmittanceMatrix::Sparse::InnerIterator it(Y, col); it; ++it) {
            const Eigen::Matrix2d b = complex_as_real(it.value());
            for (int a = 0; a < 2; ++a) {
                for (int c = 0; c < 2; ++c) t.emplace_back(2 * it.row() + a, 2 * it.col() + c, b(a, c));
            }
        }
    }
    for (const auto& load : system.loads) {
        const Eigen::Matrix2d b = complex_as_real(load.Y_load);
        for (int a = 0; a < 2; ++a) {
            for (int c = 0; c < 2; ++c) t.emplace_back(2 * load.bus + a, 2 * load.bus + c, b(a, c));
        }
    }
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        const MachineComponent& m = system.machines[k];
        const VectorXd xk = x.segment(system.state_offset(k), m.machine.state_dim());
        const ComponentPartials P = machine_partials(m.machine, xk, v(m.bus), m.u);
        for (int a = 0; a < 2; ++a) {
            for (int c = 0; c < 2; ++c) t.emplace_back(2 * m.bus + a, 2 * m.bus + c, -P.dh_dv(a, c));
        }
        rhs.segment<2>(2 * m.bus) += P.dh_dx * machine_f(m.machine, xk, v(m.bus), m.u);
    }
    Eigen::SparseMatrix<double> A(2 * n, 2 * n);
    A.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() != Eigen::Success) throw NumericalError("init_profile: singular network derivative system");
    const VectorXd dv = lu.solve(rhs);

    SystemProfile out = init_profile(v, r, t0);
    if (r == 0) return out;
    for (int i = 0; i < n; ++i) {
        const Phasor rot = Phasor(dv(2 * i), dv(2 * i + 1)) * std::polar(1.0, -std::arg(v(i)));
        out.buses[i].V(1) = rot.real();
        out.buses[i].theta(1) = rot.imag() / std::abs(v(i));
    }
    return out;
}

StepResult step(const PowerSystem& system, const VectorXd& x0, const Eigen::VectorXcd& v0, double t0,
                const StepConfig& cfg, const NetworkSet& nets, const SystemProfile* initial)
{
    cfg.validate();
    StepResult out;
    SystemProfile xi = initial                                ? *initial
                       : cfg.start == ProfileStart::tangent ? init_profile(system, x0, v0, cfg.r, t0)
                                                            : init_profile(v0, cfg.r, t0);
    const int n = system.bus_count();
    double lambda = cfg.damping;
    VectorXd flat = pack(xi);
    for (int k = 0; k < cfg.k_max; ++k) {
        const ResidualAssembly a = assemble(xi, system, x0, nets, cfg);
        if (k == 0) out.objective_history.push_back(objective(a.rho, cfg.dt, cfg.s));
        const UpdateResult upd = gauss_newton_update(a.J, a.rho, lambda, cfg.max_damping);
        lambda = upd.damping;
        out.damping_used = std::max(out.damping_used, upd.damping);
        flat += upd.delta;
        xi = unpack(flat, n, cfg.r, t0);
        const double change = upd.delta.lpNorm<Eigen::Infinity>();
        out.delta_history.push_back(change);
        out.objective_history.push_back(objective(residual(xi, system, x0, nets, cfg), cfg.dt, cfg.s));
        out.iterations = k + 1;
        if (change <= cfg.xi_tol) {
            out.converged = true;
            break;
        }
    }
    out.objective = out.objective_history.back();
    out.xi_final = xi;
    out.evaluator = make_evaluator(system, x0, nets, xi, cfg.dt);
    const TrajectorySample end = out.evaluator(t0 + cfg.dt);
    out.x_end = end.x;
    out.v_end = end.v;
    return out;
}

Trajectory simulate(const PowerSystem& system, const VectorXd& x0, const Eigen::VectorXcd& v0, double t_max,
                    const StepConfig& cfg, const NetworkSet& nets, std::vector<StepResult>* steps)
{
    cfg.validate();
    Trajectory traj;
    traj.samples.push_back({0.0, x0, v0});
    const double ratio = t_max / cfg.dt;
    const long full = static_cast<long>(std::floor(ratio + 1e-9));
    const bool partial = ratio - static_cast<double>(full) > 1e-9;
    const long count = full + (partial ? 1 : 0);
    traj.partial_final_step = partial;

    VectorXd x = x0;
    Eigen::VectorXcd v = v0;
    SystemProfile previous;
    int unconverged = 0;
    for (long k = 0; k < count; ++k) {
        const double t0 = static_cast<double>(k) * cfg.dt;
        StepConfig sc = cfg;
        if (k == full) sc.dt = t_max - t0;
        try {
            SystemProfile start;
            const SystemProfile* init = nullptr;
            if (cfg.start == ProfileStart::previous && k > 0) {
                start = init_profile(previous, t0);
                init = &start;
            }
            StepResult r = step(system, x, v, t0, sc, nets, init);
            if (!r.converged) ++unconverged;
            x = r.x_end;
            v = r.v_end;
            previous = r.xi_final;
            traj.samples.push_back({t0 + sc.dt, x, v});
            traj.dense.push_back(r.evaluator);
            if (steps) steps->push_back(std::move(r));
        } catch (const Error& e) {
            traj.completed = false;
            std::ostringstream os;
            os << "step " << k << " at t = " << t0 << " failed: " << e.what();
            traj.diagnostic = os.str();
            return traj;
        }
    }
    if (unconverged > 0) {
        traj.diagnostic = std::to_string(unconverged) + " of " + std::to_string(count) +
                          " steps stopped at k_max without meeting xi_tol";
    }
    return traj;
}

void write_step_diagnostics(std::ostream& out, const std::vector<StepResult>& steps)
{
    CsvWriter csv(out);
    csv.header({"step", "iteration", "objective", "delta_xi_inf_norm"});
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const StepResult& r = steps[k];
        for (std::size_t it = 0; it < r.objective_history.size(); ++it) {
            csv.field(k).field(it).field(r.objective_history[it]);
            if (it == 0) {
                csv.field(std::string_view("nan"));
            } else {
                csv.field(r.delta_history[it - 1]);
            }
            csv.end_row();
        }
    }
}

}  // namespace pinnsim
