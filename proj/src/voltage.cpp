#include "pinnsim/voltage.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

double horner(const Eigen::VectorXd& c, double tau)
{
    double acc = 0.0;
    for (Eigen::Index k = c.size() - 1; k >= 0; --k) {
        acc = acc * tau + c(k);
    }
    return acc;
}

double horner_derivative(const Eigen::VectorXd& c, double tau)
{
    double acc = 0.0;
    for (Eigen::Index k = c.size() - 1; k >= 1; --k) {
        acc = acc * tau + static_cast<double>(k) * c(k);
    }
    return acc;
}

}  // namespace

VoltageProfile::VoltageProfile(double t0_, Eigen::VectorXd V_, Eigen::VectorXd theta_)
    : t0(t0_), V(std::move(V_)), theta(std::move(theta_))
{
    if (V.size() == 0 || V.size() != theta.size()) {
        throw ValidationError("voltage profile: magnitude and angle series need the same nonzero length");
    }
}

VoltageProfile VoltageProfile::constant(Phasor v, int order, double t0)
{
    Eigen::VectorXd V = Eigen::VectorXd::Zero(order + 1);
    Eigen::VectorXd th = Eigen::VectorXd::Zero(order + 1);
    V(0) = std::abs(v);
    th(0) = std::arg(v);
    return {t0, std::move(V), std::move(th)};
}

double VoltageProfile::magnitude(double t) const { return horner(V, t - t0); }

double VoltageProfile::angle(double t) const { return horner(theta, t - t0); }

Eigen::VectorXd VoltageProfile::coefficients() const
{
    Eigen::VectorXd out(coeff_count());
    for (Eigen::Index k = 0; k < V.size(); ++k) {
        out(2 * k) = V(k);
        out(2 * k + 1) = theta(k);
    }
    return out;
}

Phasor eval_profile(const VoltageProfile& p, double t)
{
    return std::polar(p.magnitude(t), p.angle(t));
}

Phasor profile_time_derivative(const VoltageProfile& p, double t)
{
    const double tau = t - p.t0;
    const double mag = horner(p.V, tau);
    const double ang = horner(p.theta, tau);
    const Phasor rot = std::polar(1.0, ang);
    return horner_derivative(p.V, tau) * rot + Phasor(0.0, 1.0) * horner_derivative(p.theta, tau) * mag * rot;
}

Eigen::MatrixXd profile_sensitivity(const VoltageProfile& p, double t)
{
    const double tau = t - p.t0;
    const Phasor rot = std::polar(1.0, horner(p.theta, tau));
    const Phasor v = horner(p.V, tau) * rot;
    const Phasor jv = Phasor(0.0, 1.0) * v;
    Eigen::MatrixXd out(2, p.coeff_count());
    double power = 1.0;
    for (int k = 0; k <= p.order(); ++k) {
        const Phasor dV = power * rot;
        const Phasor dth = power * jv;
        out(0, 2 * k) = dV.real();
        out(1, 2 * k) = dV.imag();
        out(0, 2 * k + 1) = dth.real();
        out(1, 2 * k + 1) = dth.imag();
        power *= tau;
    }
    return out;
}

VoltageProfile shift_origin(const VoltageProfile& p, double new_t0)
{
    // Taylor shift: c'_k = sum_{m>=k} binom(m, k) c_m a^{m-k}, a = new_t0 - t0
    const double a = new_t0 - p.t0;
    const int r = p.order();
    auto shift = [&](const Eigen::VectorXd& c) {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(r + 1);
        for (int k = 0; k <= r; ++k) {
            double binom = 1.0;
            double apow = 1.0;
            for (int m = k; m <= r; ++m) {
                out(k) += binom * c(m) * apow;
                binom = binom * static_cast<double>(m + 1) / static_cast<double>(m + 1 - k);
                apow *= a;
            }
        }
        return out;
    };
    return {new_t0, shift(p.V), shift(p.theta)};
}

VoltageProfile with_order(const VoltageProfile& p, int order)
{
    if (order < 0) {
        throw ValidationError("voltage profile order must be nonnegative");
    }
    Eigen::VectorXd V = Eigen::VectorXd::Zero(order + 1);
    Eigen::VectorXd th = Eigen::VectorXd::Zero(order + 1);
    const int keep = std::min(order, p.order()) + 1;
    V.head(keep) = p.V.head(keep);
    th.head(keep) = p.theta.head(keep);
    for (int k = keep; k <= p.order(); ++k) {
        if (p.V(k) != 0.0 || p.theta(k) != 0.0) {
            throw ValidationError("voltage profile: cannot drop nonzero coefficient of order " + std::to_string(k));
        }
    }
    return {p.t0, std::move(V), std::move(th)};
}

Eigen::VectorXcd SystemProfile::evaluate(double t) const
{
    Eigen::VectorXcd out(bus_count());
    for (int i = 0; i < bus_count(); ++i) {
        out(i) = eval_profile(buses[static_cast<std::size_t>(i)], t);
    }
    return out;
}

Eigen::VectorXd pack(const SystemProfile& profiles)
{
    const int per_bus = 2 * (profiles.order() + 1);
    Eigen::VectorXd flat(profiles.flat_size());
    for (int i = 0; i < profiles.bus_count(); ++i) {
        const auto& p = profiles.buses[static_cast<std::size_t>(i)];
        if (p.order() != profiles.order()) {
            throw ValidationError("system profile: buses must share one series order");
        }
        flat.segment(i * per_bus, per_bus) = p.coefficients();
    }
    return flat;
}

SystemProfile unpack(const Eigen::Ref<const Eigen::VectorXd>& flat, int n, int order, double t0)
{
    const int per_bus = 2 * (order + 1);
    if (n < 0 || order < 0 || flat.size() != static_cast<Eigen::Index>(per_bus) * n) {
        throw ValidationError("unpack: flat vector has " + std::to_string(flat.size()) + " entries, expected "
                              + std::to_string(per_bus * n));
    }
    SystemProfile out;
    out.t0 = t0;
    out.buses.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd V(order + 1);
        Eigen::VectorXd th(order + 1);
        for (int k = 0; k <= order; ++k) {
            V(k) = flat(i * per_bus + 2 * k);
            th(k) = flat(i * per_bus + 2 * k + 1);
        }
        out.buses.emplace_back(t0, std::move(V), std::move(th));
    }
    return out;
}

}  // namespace pinnsim
