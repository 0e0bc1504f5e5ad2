#include "pinnsim/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/SparseLU>

#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

constexpr int kDenseLimit = 200;

// Residual and Jacobian of the stacked system in (x, Re v_1, Im v_1, ...).
// When `previous` is set the trapezoidal rows are included, otherwise x is
// held fixed and only the current balance is assembled.
struct Assembly {
    Eigen::VectorXd F;
    std::vector<Eigen::Triplet<double>> J;
};

Assembly assemble(const PowerSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXcd& v,
                  const DaeState* previous, double dt)
{
    const int nx = previous ? sys.state_size() : 0;
    const int n = sys.bus_count();
    Assembly a;
    a.F = Eigen::VectorXd::Zero(nx + 2 * n);
    a.J.reserve(static_cast<std::size_t>(16 * (nx + n)) + 4 * sys.Y.entries().nonZeros());
    const auto vcol = [nx](int bus) { return nx + 2 * bus; };

    Eigen::VectorXcd ic = Eigen::VectorXcd::Zero(n);
    int offset = 0;
    for (std::size_t k = 0; k < sys.machines.size(); ++k) {
        const auto& m = sys.machines[k];
        const int p = m.machine.state_dim();
        const auto xs = x.segment(offset, p);
        const Phasor vb = v(m.bus);
        ic(m.bus) += machine_h(m.machine, xs, vb);
        const ComponentPartials d = machine_partials(m.machine, xs, vb, m.u);
        if (previous) {
            const Eigen::VectorXd f1 = machine_f(m.machine, xs, vb, m.u);
            const Eigen::VectorXd f0
                = machine_f(m.machine, previous->x.segment(offset, p), previous->v(m.bus), m.u);
            a.F.segment(offset, p) = xs - previous->x.segment(offset, p) - 0.5 * dt * (f0 + f1);
            for (int r = 0; r < p; ++r) {
                for (int c = 0; c < p; ++c) {
                    a.J.emplace_back(offset + r, offset + c, (r == c ? 1.0 : 0.0) - 0.5 * dt * d.df_dx(r, c));
                }
                for (int c = 0; c < 2; ++c) {
                    a.J.emplace_back(offset + r, vcol(m.bus) + c, -0.5 * dt * d.df_dv(r, c));
                }
            }
            for (int r = 0; r < 2; ++r) {
                for (int c = 0; c < p; ++c) {
                    a.J.emplace_back(vcol(m.bus) + r, offset + c, d.dh_dx(r, c));
                }
            }
        }
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                a.J.emplace_back(vcol(m.bus) + r, vcol(m.bus) + c, d.dh_dv(r, c));
            }
        }
        offset += p;
    }
    for (const auto& load : sys.loads) {
        ic(load.bus) += load_h(v(load.bus), load);
        const Eigen::Matrix2d d = complex_as_real(-load.Y_load);
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                a.J.emplace_back(vcol(load.bus) + r, vcol(load.bus) + c, d(r, c));
            }
        }
    }
    const Eigen::VectorXcd mismatch = ic - network_currents(sys.Y, v);
    for (int i = 0; i < n; ++i) {
        a.F(vcol(i)) = mismatch(i).real();
        a.F(vcol(i) + 1) = mismatch(i).imag();
    }
    const auto& Ys = sys.Y.entries();
    for (int col = 0; col < Ys.outerSize(); ++col) {
        for (AdmittanceMatrix::Sparse::InnerIterator it(Ys, col); it; ++it) {
            const Eigen::Matrix2d d = complex_as_real(-it.value());
            for (int r = 0; r < 2; ++r) {
                for (int c = 0; c < 2; ++c) {
                    a.J.emplace_back(vcol(static_cast<int>(it.row())) + r, vcol(col) + c, d(r, c));
                }
            }
        }
    }
    return a;
}

Eigen::VectorXd solve_assembly(const Assembly& a)
{
    const auto size = a.F.size();
    Eigen::SparseMatrix<double> J(size, size);
    J.setFromTriplets(a.J.begin(), a.J.end());
    Eigen::VectorXd dz;
    if (size <= kDenseLimit) {
        const Eigen::MatrixXd dense(J);
        dz = dense.partialPivLu().solve(-a.F);
    } else {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success) {
            throw NumericalError("trapezoidal Newton: singular Jacobian");
        }
        dz = lu.solve(-a.F);
    }
    if (!dz.allFinite()) {
        throw NumericalError("trapezoidal Newton: non-finite update");
    }
    return dz;
}

}  // namespace

DaeState trapezoidal_step(const DaeState& state, double dt, const PowerSystem& system, const NewtonOptions& opts)
{
    if (!(dt > 0.0)) {
        throw ValidationError("trapezoidal_step: dt must be positive");
    }
    const int nx = system.state_size();
    const int n = system.bus_count();
    Eigen::VectorXd x = state.x;
    Eigen::VectorXcd v = state.v;
    double norm = 0.0;
    for (int iter = 0; iter <= opts.max_iterations; ++iter) {
        const Assembly a = assemble(system, x, v, &state, dt);
        norm = a.F.lpNorm<Eigen::Infinity>();
        if (norm <= opts.tolerance) {
            return {x, v, state.t + dt};
        }
        if (!std::isfinite(norm) || iter == opts.max_iterations) {
            break;
        }
        const Eigen::VectorXd dz = solve_assembly(a);
        x += dz.head(nx);
        for (int i = 0; i < n; ++i) {
            v(i) += Phasor(dz(nx + 2 * i), dz(nx + 2 * i + 1));
        }
    }
    std::ostringstream msg;
    msg << "trapezoidal step at t=" << state.t << " dt=" << dt << " did not converge (residual " << norm << ")";
    throw NumericalError(msg.str());
}

Eigen::VectorXcd consistent_voltages(const PowerSystem& system, const Eigen::Ref<const Eigen::VectorXd>& x,
                                     const Eigen::Ref<const Eigen::VectorXcd>& v_guess, const NewtonOptions& opts)
{
    const Eigen::VectorXd xs = x;
    Eigen::VectorXcd v = v_guess;
    for (int iter = 0; iter <= opts.max_iterations; ++iter) {
        const Assembly a = assemble(system, xs, v, nullptr, 0.0);
        const double norm = a.F.lpNorm<Eigen::Infinity>();
        if (norm <= opts.tolerance) {
            return v;
        }
        if (!std::isfinite(norm)) {
            break;
        }
        const Eigen::VectorXd dz = solve_assembly(a);
        for (int i = 0; i < system.bus_count(); ++i) {
            v(i) += Phasor(dz(2 * i), dz(2 * i + 1));
        }
    }
    throw NumericalError("consistent_voltages: Newton did not converge");
}

Trajectory trapezoidal_simulate(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                                double t_max, double dt, const NewtonOptions& opts)
{
    if (!(dt > 0.0) || !(t_max >= 0.0)) {
        throw ValidationError("trapezoidal_simulate: need dt > 0 and t_max >= 0");
    }
    Trajectory traj;
    DaeState s{x0, v0, 0.0};
    traj.samples.push_back({s.t, s.x, s.v});
    const double ratio = t_max / dt;
    const auto full = static_cast<long>(std::floor(ratio + 1e-9));
    const bool partial = ratio - static_cast<double>(full) > 1e-9;
    traj.partial_final_step = partial;
    const long steps = full + (partial ? 1 : 0);
    for (long k = 0; k < steps; ++k) {
        const double h = (k < full) ? dt : t_max - static_cast<double>(full) * dt;
        try {
            s = trapezoidal_step(s, h, system, opts);
        } catch (const NumericalError& e) {
            traj.completed = false;
            traj.diagnostic = e.what();
            break;
        }
        s.t = (k < full) ? static_cast<double>(k + 1) * dt : t_max;
        traj.samples.push_back({s.t, s.x, s.v});
    }
    return traj;
}

namespace {

std::vector<long> sample_indices(const std::vector<double>& times, double h)
{
    std::vector<long> idx;
    idx.reserve(times.size());
    for (double t : times) {
        const long k = std::lround(t / h);
        if (k < 0 || std::abs(static_cast<double>(k) * h - t) > 1e-9) {
            throw ValidationError("reference_simulate: sample time " + std::to_string(t)
                                  + " is not a multiple of the reference step");
        }
        idx.push_back(k);
    }
    return idx;
}

Trajectory fine_run(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                    const std::vector<double>& times, double h)
{
    const std::vector<long> idx = sample_indices(times, h);
    long last = 0;
    for (long k : idx) {
        last = std::max(last, k);
    }
    std::vector<std::size_t> order(idx.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return idx[a] < idx[b]; });
    std::vector<TrajectorySample> by_step(times.size());
    std::size_t next = 0;
    DaeState s{x0, v0, 0.0};
    for (long k = 0;; ++k) {
        while (next < order.size() && idx[order[next]] == k) {
            by_step[order[next]] = {times[order[next]], s.x, s.v};
            ++next;
        }
        if (k == last) {
            break;
        }
        s = trapezoidal_step(s, h, system);
        s.t = static_cast<double>(k + 1) * h;
    }
    Trajectory traj;
    traj.samples = std::move(by_step);
    return traj;
}

double max_speed_change(const PowerSystem& system, const Trajectory& a, const Trajectory& b)
{
    double worst = 0.0;
    for (std::size_t j = 0; j < a.samples.size(); ++j) {
        for (std::size_t m = 0; m < system.machines.size(); ++m) {
            const int idx = system.speed_index(m);
            worst = std::max(worst, std::abs(a.samples[j].x(idx) - b.samples[j].x(idx)));
        }
    }
    return worst;
}

}  // namespace

Trajectory reference_simulate(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                              double t_max, const std::vector<double>& sample_times, const ReferenceOptions& opts)
{
    for (double t : sample_times) {
        if (t < 0.0 || t > t_max + 1e-12) {
            throw ValidationError("reference_simulate: sample time outside [0, t_max]");
        }
    }
    Trajectory coarse = fine_run(system, x0, v0, sample_times, opts.dt_ref);
    if (opts.verify) {
        const Trajectory fine = fine_run(system, x0, v0, sample_times, opts.dt_ref / 2.0);
        const double change = max_speed_change(system, coarse, fine);
        if (!(change < opts.verify_tolerance)) {
            std::ostringstream msg;
            msg << "reference verification failed: halving the step changed delta_omega by " << change << " pu";
            throw NumericalError(msg.str());
        }
    }
    return coarse;
}

double reference_halving_change(const PowerSystem& system, const Eigen::VectorXd& x0, const Eigen::VectorXcd& v0,
                                const std::vector<double>& sample_times, double dt_ref)
{
    const Trajectory a = fine_run(system, x0, v0, sample_times, dt_ref);
    const Trajectory b = fine_run(system, x0, v0, sample_times, dt_ref / 2.0);
    return max_speed_change(system, a, b);
}

Eigen::VectorXd single_component_solve(const Machine& machine, const ControlInput& u,
                                       const Eigen::Ref<const Eigen::VectorXd>& x0, const VoltageProfile& profile,
                                       double dt_end, double h)
{
    if (dt_end < 0.0 || !(h > 0.0)) {
        throw ValidationError("single_component_solve: need dt_end >= 0 and h > 0");
    }
    Eigen::VectorXd x = x0;
    if (dt_end == 0.0) {
        return x;
    }
    const auto steps = static_cast<long>(std::ceil(dt_end / h - 1e-9));
    const double hs = dt_end / static_cast<double>(steps);
    const double t0 = profile.t0;
    auto rhs = [&](double t, const Eigen::VectorXd& state) {
        return machine_f(machine, state, eval_profile(profile, t), u);
    };
    for (long k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * hs;
        const Eigen::VectorXd k1 = rhs(t, x);
        const Eigen::VectorXd k2 = rhs(t + 0.5 * hs, x + 0.5 * hs * k1);
        const Eigen::VectorXd k3 = rhs(t + 0.5 * hs, x + 0.5 * hs * k2);
        const Eigen::VectorXd k4 = rhs(t + hs, x + hs * k3);
        x += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x;
}

}  // namespace pinnsim
