#include <cmath>
#include <numbers>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "pinnsim/baselines.hpp"
#include "pinnsim/error.hpp"
#include "pinnsim/pinn.hpp"
#include "support.hpp"

using namespace pinnsim;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Straight-line reimplementation of the network: explicit loops, no shared code.
VectorXd reference_forward(const PinnWeights& w, const VectorXd& raw)
{
    VectorXd z = raw;
    if (w.meta.frame == AngleFrame::bus_relative) {
        const int d = w.meta.state_dim - 1;
        const int t0 = 1 + w.meta.state_dim + 1;
        z(d) = std::remainder(raw(d) - raw(t0), 2.0 * std::numbers::pi);
        z(t0) = 0.0;
        z(t0 + 2) = raw(t0 + 2) - w.meta.omega_s * raw(d + 1);
    }
    std::vector<double> layer(z.size());
    for (int i = 0; i < z.size(); ++i) layer[i] = (z(i) - w.input_shift(i)) / w.input_scale(i);
    for (std::size_t k = 0; k < w.W.size(); ++k) {
        std::vector<double> next(w.W[k].rows());
        for (int r = 0; r < w.W[k].rows(); ++r) {
            double acc = w.b[k](r);
            for (int c = 0; c < w.W[k].cols(); ++c) acc += w.W[k](r, c) * layer[c];
            next[r] = k + 1 < w.W.size() ? std::tanh(acc) : acc;
        }
        layer = next;
    }
    VectorXd x(w.meta.state_dim);
    for (int i = 0; i < x.size(); ++i) x(i) = raw(1 + i) + raw(0) * w.output_scale(i) * layer[i];
    if (w.meta.frame == AngleFrame::bus_relative) {
        const int d = w.meta.state_dim - 2;
        x(d) += raw(0) * w.meta.omega_s * raw(1 + d + 1);
    }
    return x;
}

PinnComponent ieee9_component(std::size_t k)
{
    const auto& mc = testing::ieee9().system.machines[k];
    return {mc.id, mc.machine, mc.u};
}

TrainingConfig small_config()
{
    TrainingConfig cfg;
    cfg.n_data = 60;
    cfg.n_collocation = 80;
    cfg.epochs = 30;
    cfg.hidden = {10, 10};
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("forward is exactly x0 at dt = 0")
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto frame = trial % 2 ? AngleFrame::bus_relative : AngleFrame::absolute;
        const PinnWeights w = testing::random_network(rng, trial % 3 == 0 ? 4 : 2, 1 + trial % 3, frame);
        VectorXd z = testing::random_features(rng, w);
        z(0) = 0.0;
        const VectorXd x = forward(w, z);
        for (int i = 0; i < w.meta.state_dim; ++i) CHECK(x(i) == z(1 + i));
    }
}

TEST_CASE("zero head weights give x0 for all dt and zero derivative")
{
    std::mt19937_64 rng(2);
    PinnWeights w = testing::random_network(rng);
    w.W.back().setZero();
    w.b.back().setZero();
    for (int trial = 0; trial < 20; ++trial) {
        const VectorXd z = testing::random_features(rng, w);
        CHECK((forward(w, z) - z.segment(1, 2)).norm() == 0.0);
        CHECK(time_derivative(w, z).norm() == 0.0);
        const MatrixXd J = input_sensitivity(w, z);
        CHECK((J.block(0, 1, 2, 2) - MatrixXd::Identity(2, 2)).norm() == 0.0);
    }
}

TEST_CASE("constant head output c gives derivative output_scale * c")
{
    std::mt19937_64 rng(3);
    PinnWeights w = testing::random_network(rng);
    for (std::size_t k = 0; k + 1 < w.W.size(); ++k) w.W[k].setZero();
    const VectorXd z0 = testing::random_features(rng, w);
    const VectorXd c = time_derivative(w, z0).cwiseQuotient(w.output_scale);
    for (int trial = 0; trial < 10; ++trial) {
        VectorXd z = z0;
        z(0) = testing::uniform(rng, 0.0, 0.3);
        const VectorXd d = time_derivative(w, z);
        for (int i = 0; i < 2; ++i) CHECK(d(i) == doctest::Approx(w.output_scale(i) * c(i)).epsilon(1e-14));
        const VectorXd x = forward(w, z);
        for (int i = 0; i < 2; ++i) {
            CHECK(x(i) == doctest::Approx(z(1 + i) + z(0) * w.output_scale(i) * c(i)).epsilon(1e-14));
        }
    }
}

TEST_CASE("forward matches a straight-line reimplementation")
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto frame = trial % 2 ? AngleFrame::bus_relative : AngleFrame::absolute;
        const PinnWeights w = testing::random_network(rng, trial % 4 == 0 ? 4 : 2, 2, frame, {12, 9, 7});
        const VectorXd z = testing::random_features(rng, w);
        const VectorXd a = forward(w, z);
        const VectorXd b = reference_forward(w, z);
        CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-12 * std::max(1.0, b.lpNorm<Eigen::Infinity>()));
    }
}

TEST_CASE("bus-relative frame is periodic in the rotor angle")
{
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        const PinnWeights w = testing::random_network(rng, trial % 2 ? 4 : 2, 2, AngleFrame::bus_relative);
        const VectorXd z = testing::random_features(rng, w);
        VectorXd shifted = z;
        const int d = w.meta.delta_feature();
        shifted(d) += 2.0 * std::numbers::pi * (trial % 3 + 1);
        const VectorXd a = forward(w, z);
        VectorXd b = forward(w, shifted);
        b(d - 1) -= shifted(d) - z(d);
        CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-9);
        CHECK((time_derivative(w, z) - time_derivative(w, shifted)).lpNorm<Eigen::Infinity>() <= 1e-9);
    }
}

TEST_CASE("time_derivative matches central differences")
{
    std::mt19937_64 rng(5);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const PinnWeights w = testing::random_network(rng, 2, 2, trial % 2 ? AngleFrame::bus_relative : AngleFrame::absolute);
        VectorXd z = testing::random_features(rng, w);
        z(0) = testing::uniform(rng, 0.01, 0.29);
        const double h = 1e-6;
        VectorXd zp = z, zm = z;
        zp(0) += h;
        zm(0) -= h;
        const VectorXd fd = (forward(w, zp) - forward(w, zm)) / (2 * h);
        const VectorXd an = time_derivative(w, z);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::abs(fd(i) - an(i)) <= 1e-6 * std::max(1.0, std::abs(an(i))));
            ++checked;
        }
    }
    CHECK(checked == 200);
}

TEST_CASE("input_sensitivity matches central differences and reduces to identity at dt = 0")
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const auto frame = trial % 2 ? AngleFrame::bus_relative : AngleFrame::absolute;
        const PinnWeights w = testing::random_network(rng, trial % 5 == 0 ? 4 : 2, 2, frame, {8, 6}, trial % 7 == 0);
        VectorXd z = testing::random_features(rng, w);
        z(0) = testing::uniform(rng, 0.01, 0.29);
        const MatrixXd J = input_sensitivity(w, z);
        const double h = 1e-6;
        for (int c = 0; c < w.input_dim(); ++c) {
            VectorXd zp = z, zm = z;
            zp(c) += h;
            zm(c) -= h;
            const VectorXd fd = (forward(w, zp) - forward(w, zm)) / (2 * h);
            for (int i = 0; i < w.output_dim(); ++i) {
                CHECK(std::abs(fd(i) - J(i, c)) <= 1e-6 * std::max(1.0, std::abs(J(i, c))));
            }
        }
        z(0) = 0.0;
        const MatrixXd J0 = input_sensitivity(w, z);
        const int p = w.output_dim();
        CHECK((J0.block(0, 1, p, p) - MatrixXd::Identity(p, p)).norm() == 0.0);
        CHECK(J0.middleCols(w.meta.xi_feature(), 2 * (w.meta.order + 1)).norm() == 0.0);
    }
}

TEST_CASE("evaluation validates dimensions and the trained dt range")
{
    std::mt19937_64 rng(7);
    const PinnWeights w = testing::random_network(rng);
    CHECK_THROWS_AS(forward(w, VectorXd::Zero(5)), ValidationError);
    VectorXd z = testing::random_features(rng, w);
    z(0) = 0.31;
    CHECK_THROWS_AS(forward(w, z), DomainError);
    PinnInput inp{0.1, VectorXd::Zero(2), VectorXd::Zero(4), std::nullopt};
    CHECK_THROWS_AS(forward(w, inp), ValidationError);
    inp.xi = VectorXd::Zero(6);
    inp.xi(0) = 1.0;
    CHECK(forward(w, inp).size() == 2);
}

TEST_CASE("dataset has nine-dimensional inputs, deterministic draws and oracle labels")
{
    TrainingConfig cfg = small_config();
    cfg.n_data = 2500;
    cfg.n_collocation = 5000;
    cfg.ranges.dt = {0.0, 0.02};
    cfg.dt_max = 0.3;
    const PinnComponent comp = ieee9_component(1);
    const Dataset a = generate_dataset(comp, cfg, rk4_oracle(1e-3));
    CHECK(a.inputs.rows() == 9);
    CHECK(a.inputs.cols() == 2500);
    CHECK(a.targets.rows() == 2);
    CHECK(a.collocation.cols() == 5000);
    CHECK(a.meta.input_layout().size() == 9);

    const Dataset b = generate_dataset(comp, cfg, rk4_oracle(1e-3));
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(a.collocation == b.collocation);
}

TEST_CASE("dataset labels: dt = 0 gives x0, and halving the oracle step changes labels by < 1e-8")
{
    TrainingConfig cfg = small_config();
    cfg.n_data = 40;
    cfg.ranges.dt = {0.0, 0.3};
    const PinnComponent comp = ieee9_component(1);
    const Dataset d = generate_dataset(comp, cfg, rk4_oracle());
    for (int j = 0; j < 10; ++j) {
        VectorXd z = d.inputs.col(j);
        VectorXd V(3), th(3);
        for (int k = 0; k < 3; ++k) {
            V(k) = z(3 + 2 * k);
            th(k) = z(4 + 2 * k);
        }
        const VoltageProfile prof(0.0, V, th);
        const VectorXd fine = single_component_solve(comp.machine, comp.u, z.segment(1, 2), prof, z(0), 0.5e-4);
        CHECK((fine - d.targets.col(j)).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK(single_component_solve(comp.machine, comp.u, z.segment(1, 2), prof, 0.0) == z.segment(1, 2));
    }

    // An oracle that always fails on long steps forces redraws.
    cfg.ranges.dt = {0.0, 0.3};
    Oracle picky = [](const Machine& m, const ControlInput& u, const VectorXd& x0, const VoltageProfile& p, double dt) {
        if (dt > 0.15) throw NumericalError("too long");
        return single_component_solve(m, u, x0, p, dt, 1e-3);
    };
    const Dataset r = generate_dataset(comp, cfg, picky);
    CHECK(r.inputs.row(0).maxCoeff() <= 0.15);
    Oracle broken = [](const Machine&, const ControlInput&, const VectorXd&, const VoltageProfile&, double) -> VectorXd {
        throw NumericalError("always");
    };
    cfg.ranges.dt = {0.1, 0.3};
    CHECK_THROWS_AS(generate_dataset(comp, cfg, broken), NumericalError);
}

TEST_CASE("loss definitions")
{
    std::mt19937_64 rng(8);
    PinnWeights w = testing::random_network(rng);
    Dataset d;
    d.component = ieee9_component(0);
    d.meta = w.meta;
    d.inputs = MatrixXd(9, 1);
    d.inputs.col(0) = testing::random_features(rng, w);
    d.targets = forward(w, VectorXd(d.inputs.col(0)));
    d.collocation = MatrixXd(9, 3);
    for (int j = 0; j < 3; ++j) d.collocation.col(j) = testing::random_features(rng, w);

    const LossValue perfect = loss(w, d, 1.0);
    CHECK(perfect.L_x == 0.0);
    CHECK(perfect.L_c > 0.0);
    CHECK(perfect.total == doctest::Approx(perfect.L_c));

    d.targets(0, 0) -= 0.1;
    const LossValue off = loss(w, d, 0.0);
    CHECK(off.L_x == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(off.total == off.L_x);

    // Residual oracle over the collocation points.
    double expected = 0.0;
    for (int j = 0; j < 3; ++j) {
        const VectorXd zj = d.collocation.col(j);
        VectorXd Vj(3), thj(3);
        for (int k = 0; k < 3; ++k) {
            Vj(k) = zj(3 + 2 * k);
            thj(k) = zj(4 + 2 * k);
        }
        const Phasor vj = eval_profile(VoltageProfile(0.0, Vj, thj), zj(0));
        const VectorXd r = time_derivative(w, zj) - machine_f(d.component.machine, forward(w, zj), vj, d.component.u);
        expected += r.squaredNorm() / 3.0;
    }
    CHECK(off.L_c == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss gradient matches central differences")
{
    std::mt19937_64 rng(9);
    TrainingConfig cfg = small_config();
    cfg.n_data = 30;
    cfg.n_collocation = 40;
    for (AngleFrame frame : {AngleFrame::absolute, AngleFrame::bus_relative}) {
        cfg.frame = frame;
        const Dataset d = generate_dataset(ieee9_component(1), cfg, rk4_oracle(1e-3));
        PinnWeights w = testing::random_network(rng, 2, 2, frame, {6, 5});
        w.meta = d.meta;
        LossWeights lw{Eigen::Vector2d(1.3, 0.6), Eigen::Vector2d(0.2, 2.0)};
        VectorXd g;
        loss_gradient(w, d, 0.8, lw, g);
        const VectorXd theta = w.flatten();
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            const double h = 1e-6;
            PinnWeights a = w, b = w;
            VectorXd tp = theta, tm = theta;
            tp(i) += h;
            tm(i) -= h;
            a.unflatten(tp);
            b.unflatten(tm);
            const double fd = (loss(a, d, 0.8, lw).total - loss(b, d, 0.8, lw).total) / (2 * h);
            CHECK(std::abs(fd - g(i)) <= 1e-5 * std::max(1.0, std::abs(g(i))));
        }
    }
}

TEST_CASE("loss reduction does not depend on the thread count")
{
    TrainingConfig cfg = small_config();
    const Dataset d = generate_dataset(ieee9_component(2), cfg, rk4_oracle(1e-3));
    std::mt19937_64 rng(10);
    PinnWeights w = testing::random_network(rng);
    w.meta = d.meta;
    VectorXd g1, g3;
    setenv("PINNSIM_THREADS", "1", 1);
    const LossValue a = loss_gradient(w, d, 0.5, {}, g1);
    setenv("PINNSIM_THREADS", "3", 1);
    const LossValue b = loss_gradient(w, d, 0.5, {}, g3);
    unsetenv("PINNSIM_THREADS");
    CHECK(a.total == b.total);
    CHECK(g1 == g3);
}

TEST_CASE("training reduces the loss, is deterministic and records history")
{
    TrainingConfig cfg = small_config();
    const Dataset d = generate_dataset(ieee9_component(0), cfg, rk4_oracle(1e-3));
    const TrainingResult a = train(d, cfg);
    REQUIRE(a.history.size() >= 2);
    CHECK(a.history.front().epoch == 0);
    CHECK(a.history.back().value.total < a.history.front().value.total);
    const TrainingResult b = train(d, cfg);
    CHECK(a.weights.flatten() == b.weights.flatten());
    CHECK(a.weights.meta.component_id == "gen1");

    const auto path = std::filesystem::temp_directory_path() / "pinnsim_history.csv";
    write_loss_history(a.history, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,total,L_x,L_c");

    cfg.optimizer = "adam+lbfgs";
    cfg.warmup_steps = 20;
    cfg.epochs = 5;
    CHECK(train(d, cfg).weights.meta.optimizer == "adam+lbfgs");
}

TEST_CASE("invalid training configs are rejected")
{
    TrainingConfig cfg = small_config();
    cfg.n_data = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_config();
    cfg.alpha = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_config();
    cfg.dt_max = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("weights round trip and load errors")
{
    std::mt19937_64 rng(11);
    PinnWeights w = testing::random_network(rng, 2, 2, AngleFrame::bus_relative);
    w.meta.component_id = "gen2";
    w.meta.seed = 1234567890123ULL;
    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "pinnsim_weights.json").string();
    save_weights(w, path);
    const PinnWeights r = load_weights(path);
    CHECK(r.flatten() == w.flatten());
    CHECK(r.input_shift == w.input_shift);
    CHECK(r.input_scale == w.input_scale);
    CHECK(r.output_scale == w.output_scale);
    CHECK(r.meta.component_id == "gen2");
    CHECK(r.meta.seed == w.meta.seed);
    CHECK(r.meta.frame == AngleFrame::bus_relative);
    CHECK(r.meta.order == 2);

    CHECK_NOTHROW(load_weights(path, "gen2", 2, 2, false));
    CHECK_THROWS_AS(load_weights(path, "gen2", 2, 1, false), LayoutMismatchError);
    CHECK_THROWS_AS(load_weights(path, "gen3", 2, 2, false), LayoutMismatchError);
    CHECK_THROWS_AS(load_weights((dir / "pinnsim_no_such_file.json").string()), NotFoundError);

    const std::string bad = (dir / "pinnsim_bad_weights.json").string();
    std::ofstream(bad) << "{\"metadata\": {\"component_id\": \"x\"}}";
    CHECK_THROWS_AS(load_weights(bad), ValidationError);
    std::ofstream(bad) << "not json";
    CHECK_THROWS_AS(load_weights(bad), ValidationError);
}
