#include <cmath>
#include <numbers>

#include <doctest.h>

#include "pinnsim/voltage.hpp"
#include "support.hpp"

using namespace pinnsim;
using Eigen::VectorXd;

namespace {

VoltageProfile random_profile(std::mt19937_64& rng, int order)
{
    VectorXd V = testing::random_vector(rng, order + 1, -0.2, 0.2);
    VectorXd th = testing::random_vector(rng, order + 1, -1.0, 1.0);
    V(0) = testing::uniform(rng, 0.9, 1.1);
    return {testing::uniform(rng, -1, 5), V, th};
}

}  // namespace

TEST_CASE("profile evaluation examples")
{
    const VoltageProfile c = VoltageProfile::constant(std::polar(1.02, 0.3), 2, 0.5);
    CHECK(std::abs(eval_profile(c, 0.7) - std::polar(1.02, 0.3)) < 1e-15);
    CHECK(std::abs(profile_time_derivative(c, 0.9)) == 0.0);

    VoltageProfile p(0.0, (VectorXd(2) << 1.0, 0.1).finished(), (VectorXd(2) << 0.0, std::numbers::pi).finished());
    const Phasor v = eval_profile(p, 0.1);
    CHECK(std::abs(v - std::polar(1.01, 0.1 * std::numbers::pi)) < 1e-14);
    CHECK(p.coefficients().isApprox((VectorXd(4) << 1.0, 0.0, 0.1, std::numbers::pi).finished()));
}

TEST_CASE("profile derivatives match central differences")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int order = trial % 5;
        VoltageProfile p = random_profile(rng, order);
        const double t = p.t0 + testing::uniform(rng, 0, 0.3);
        const double h = 1e-6;
        const Phasor dv = (eval_profile(p, t + h) - eval_profile(p, t - h)) / (2 * h);
        CHECK(std::abs(dv - profile_time_derivative(p, t)) < 1e-8);

        const Eigen::MatrixXd S = profile_sensitivity(p, t);
        REQUIRE(S.rows() == 2);
        REQUIRE(S.cols() == 2 * (order + 1));
        for (int k = 0; k <= order; ++k) {
            for (int part = 0; part < 2; ++part) {
                VoltageProfile a = p, b = p;
                (part == 0 ? a.V : a.theta)(k) += h;
                (part == 0 ? b.V : b.theta)(k) -= h;
                const Phasor d = (eval_profile(a, t) - eval_profile(b, t)) / (2 * h);
                CHECK(std::abs(d.real() - S(0, 2 * k + part)) < 1e-8);
                CHECK(std::abs(d.imag() - S(1, 2 * k + part)) < 1e-8);
            }
        }
    }
}

TEST_CASE("shifting the origin preserves the polynomial")
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const VoltageProfile p = random_profile(rng, trial % 4);
        const VoltageProfile q = shift_origin(p, p.t0 + testing::uniform(rng, -0.5, 0.5));
        for (int k = 0; k < 5; ++k) {
            const double t = p.t0 + testing::uniform(rng, -0.5, 0.5);
            CHECK(std::abs(eval_profile(p, t) - eval_profile(q, t)) < 1e-12);
        }
    }
}

TEST_CASE("with_order pads and rejects lossy truncation")
{
    VoltageProfile p(0.0, (VectorXd(2) << 1.0, 0.1).finished(), (VectorXd(2) << 0.2, 0.0).finished());
    const VoltageProfile q = with_order(p, 3);
    CHECK(q.order() == 3);
    CHECK(std::abs(eval_profile(q, 0.2) - eval_profile(p, 0.2)) < 1e-15);
    CHECK(with_order(q, 1).order() == 1);
    CHECK_THROWS(with_order(p, 0));
}

TEST_CASE("pack and unpack")
{
    SystemProfile sp;
    sp.buses.emplace_back(0.0, (VectorXd(2) << 1.0, 0.2).finished(), (VectorXd(2) << 0.0, 3.0).finished());
    CHECK(pack(sp).isApprox((VectorXd(4) << 1.0, 0.0, 0.2, 3.0).finished()));

    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 9;
        const int order = trial % 4;
        const VectorXd flat = testing::random_vector(rng, 2 * (order + 1) * n, -1, 1);
        const SystemProfile u = unpack(flat, n, order, 0.25);
        CHECK(u.bus_count() == n);
        CHECK(u.order() == order);
        CHECK(u.flat_size() == flat.size());
        CHECK(pack(u) == flat);
    }
}
