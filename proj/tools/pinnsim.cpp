#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "pinnsim/baselines.hpp"
#include "pinnsim/case.hpp"
#include "pinnsim/csv.hpp"
#include "pinnsim/error.hpp"
#include "pinnsim/harness.hpp"

using namespace pinnsim;

namespace {

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::string resolve_case(const std::string& path) { return path.empty() ? default_case_path().string() : path; }

int run_train(const std::string& case_path, const std::string& machine, const std::string& config, long seed,
              const std::string& out, int order, double disturbance)
{
    const CaseFile c = load_case(resolve_case(case_path));
    const InitializedSystem init = initialize_case(c);
    const PowerSystem system = apply_disturbance(init.system, 0, disturbance);
    NetworkOptions opts;
    opts.weights_dir = out;
    opts.log = &std::cerr;
    opts.retrain = true;
    if (!config.empty()) {
        nlohmann::json doc = read_json(config);
        if (doc.contains("angle_half_width")) {
            opts.angle_half_width = doc.at("angle_half_width").get<double>();
            doc.erase("angle_half_width");
        }
        opts.training = training_config_from_json(doc, opts.training);
    }
    if (seed >= 0) opts.training.seed = static_cast<std::uint64_t>(seed);
    if (order >= 0) opts.training.order = order;

    bool found = false;
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        const MachineComponent& m = system.machines[k];
        if (machine != "all" && m.id != machine) continue;
        found = true;
        const TrainingConfig tc = machine_training_config(init, k, opts.training.order, opts);
        const PinnComponent comp{m.id, m.machine, m.u};
        const std::filesystem::path path = opts.weights_dir / network_file_name(comp, tc);
        std::cerr << "training " << m.id << " (r = " << tc.order << ", " << tc.epochs << " epochs)\n";
        const Dataset data = generate_dataset(comp, tc, rk4_oracle(tc.oracle_step));
        const TrainingResult res = train(data, tc);
        std::filesystem::create_directories(opts.weights_dir);
        save_weights(res.weights, path.string());
        std::filesystem::path history = path;
        history.replace_extension(".loss.csv");
        write_loss_history(res.history, history.string());
        std::cout << path.string() << '\n';
    }
    if (!found) throw ValidationError("no machine '" + machine + "' in the case");
    return 0;
}

int run_simulate(const std::string& case_path, const std::string& method, double dt, double t_max, int r, int s,
                 const std::string& weights_dir, const std::string& out, double disturbance,
                 const std::string& start, const std::string& diagnostics)
{
    const CaseFile c = load_case(resolve_case(case_path));
    const InitializedSystem init = initialize_case(c);
    const PowerSystem system = apply_disturbance(init.system, 0, disturbance);
    Trajectory traj;
    std::vector<StepResult> steps;
    if (method == "trapezoidal") {
        traj = trapezoidal_simulate(system, init.x0, init.v0, t_max, dt);
    } else if (method == "reference") {
        std::vector<double> times;
        const long n = std::lround(t_max / dt);
        if (std::abs(static_cast<double>(n) * dt - t_max) > 1e-9) {
            throw ValidationError("reference: t_max must be a multiple of dt");
        }
        for (long k = 0; k <= n; ++k) times.push_back(static_cast<double>(k) * dt);
        traj = reference_simulate(system, init.x0, init.v0, t_max, times);
    } else {
        StepConfig cfg = step_config_from_json({{"start", start}}, StepConfig{});
        cfg.dt = dt;
        cfg.r = r;
        cfg.s = s > 0 ? s : r + 1;
        NetworkOptions opts;
        opts.weights_dir = weights_dir;
        opts.log = &std::cerr;
        const NetworkSet nets = obtain_networks(init, system, r, opts);
        traj = simulate(system, init.x0, init.v0, t_max, cfg, nets, &steps);
    }
    if (out.empty() || out == "-") {
        write_trajectory_csv(std::cout, traj, system);
    } else {
        std::ofstream f(out);
        if (!f) throw ValidationError("cannot write " + out);
        write_trajectory_csv(f, traj, system);
    }
    if (!diagnostics.empty()) {
        std::ofstream f(diagnostics);
        if (!f) throw ValidationError("cannot write " + diagnostics);
        write_step_diagnostics(f, steps);
    }
    if (!traj.diagnostic.empty()) std::cerr << traj.diagnostic << '\n';
    if (!traj.completed) throw NumericalError("simulation ended early: " + traj.diagnostic);
    return 0;
}

int run_experiment_cmd(const std::string& kind_name, const std::string& config, const std::string& out)
{
    const ExperimentKind kind = parse_experiment_kind(kind_name);
    ExperimentConfig cfg = config.empty() ? ExperimentConfig::defaults(kind)
                                          : experiment_config_from_json(read_json(config), kind);
    cfg.networks.log = &std::cerr;
    run_experiment(cfg, out);
    std::cerr << to_string(kind) << " results written to " << out << '\n';
    return 0;
}

int run_powerflow(const std::string& case_path)
{
    const CaseFile c = load_case(resolve_case(case_path));
    const PowerFlowSolution pf = power_flow(c);
    std::printf("# %s: converged in %d iterations, mismatch %.3e pu\n", c.name.c_str(), pf.iterations,
                pf.mismatch_norm);
    CsvWriter csv(std::cout);
    csv.header({"bus", "V", "theta_deg", "P_gen", "Q_gen"});
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        csv.field(c.buses[i].id).field(std::abs(pf.V(i))).field(std::arg(pf.V(i)) * 180.0 / std::numbers::pi);
        csv.field(pf.S_gen(i).real()).field(pf.S_gen(i).imag()).end_row();
    }
    return 0;
}

template <typename F>
double time_per_call(F&& f, int repeats)
{
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::micro>(t1 - t0).count() / repeats;
}

int run_bench(int repeats)
{
    const InitializedSystem init = initialize_case(load_case(default_case_path()));
    const PowerSystem system = apply_disturbance(init.system);
    NetworkSet nets;
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        const auto& m = system.machines[k];
        const TrainingConfig tc = default_training_config();
        PinnMetadata meta = make_metadata({m.id, m.machine, m.u}, tc);
        nets.push_back(PinnWeights::initialize(meta, tc.hidden, tc.activation, 1 + k));
    }
    std::mt19937_64 rng(7);
    const PinnMetadata& meta = nets[1].meta;
    const Eigen::VectorXd z = sample_features(meta, {system.machines[1].id, system.machines[1].machine, system.machines[1].u},
                                              default_training_config().ranges, rng);
    volatile double sink = 0.0;
    StepConfig cfg;
    cfg.start = ProfileStart::tangent;
    const SystemProfile xi = init_profile(system, init.x0, init.v0, cfg.r, 0.0);
    const DaeState state{init.x0, init.v0, 0.0};

    std::printf("micro-benchmark (%d repeats, untrained 2x32 tanh networks, 9-bus case)\n", repeats);
    std::printf("  network forward             %10.3f us\n",
                time_per_call([&] { sink = sink + forward(nets[1], z)(0); }, repeats));
    std::printf("  network time derivative     %10.3f us\n",
                time_per_call([&] { sink = sink + time_derivative(nets[1], z)(0); }, repeats));
    std::printf("  network input sensitivity   %10.3f us\n",
                time_per_call([&] { sink = sink + input_sensitivity(nets[1], z)(0, 0); }, repeats));
    std::printf("  residual + jacobian (r=2,s=3) %8.3f us\n",
                time_per_call([&] { sink = sink + assemble(xi, system, init.x0, nets, cfg).rho(0); },
                              std::max(1, repeats / 10)));
    std::printf("  trapezoidal step (dt=0.05)  %10.3f us\n",
                time_per_call([&] { sink = sink + trapezoidal_step(state, 0.05, system).x(0); },
                              std::max(1, repeats / 10)));
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"PINN-based power system dynamic simulator"};
    app.require_subcommand(1);

    std::string case_path;
    auto* train = app.add_subcommand("train", "train component networks");
    std::string machine = "all", train_config, train_out = "pinnsim_weights";
    long seed = -1;
    int train_order = -1;
    double train_disturbance = 0.5;
    train->add_option("--case", case_path, "case file (default: bundled 9-bus)");
    train->add_option("--machine", machine, "machine id or 'all'");
    train->add_option("--config", train_config, "training config JSON");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--out", train_out, "weights directory");
    train->add_option("--r", train_order, "voltage profile order");
    train->add_option("--disturbance", train_disturbance, "factor on machine 1 mechanical power");

    auto* sim = app.add_subcommand("simulate", "simulate the disturbed case");
    std::string method = "pinnsim", weights_dir = "pinnsim_weights", sim_out, start = "tangent", diagnostics;
    double dt = 0.05, t_max = 2.5, sim_disturbance = 0.5;
    int r = 2, s = 0;
    sim->add_option("--case", case_path, "case file (default: bundled 9-bus)");
    sim->add_option("--method", method)->check(CLI::IsMember({"pinnsim", "trapezoidal", "reference"}));
    sim->add_option("--dt", dt, "time step (s)");
    sim->add_option("--t-max", t_max, "horizon (s)");
    sim->add_option("--r", r, "voltage profile order");
    sim->add_option("--s", s, "query points (default r + 1)");
    sim->add_option("--weights-dir", weights_dir, "network cache directory");
    sim->add_option("--out", sim_out, "trajectory CSV (default stdout)");
    sim->add_option("--disturbance", sim_disturbance, "factor on machine 1 mechanical power");
    sim->add_option("--start", start, "initial profile per step")->check(CLI::IsMember({"constant", "previous", "tangent"}));
    sim->add_option("--diagnostics", diagnostics, "per-iteration step diagnostics CSV");

    auto* exp = app.add_subcommand("experiment", "run an experiment");
    std::string kind, exp_config, exp_out = "results";
    exp->add_option("--kind", kind)->required()->check(
        CLI::IsMember({"trajectory", "step-sweep", "pinn-error", "convergence"}));
    exp->add_option("--config", exp_config, "experiment config JSON");
    exp->add_option("--out", exp_out, "output directory");

    auto* pf = app.add_subcommand("powerflow", "solve the load flow");
    pf->add_option("--case", case_path, "case file (default: bundled 9-bus)");

    auto* bench = app.add_subcommand("bench", "micro-benchmark report");
    int repeats = 20000;
    bench->add_option("--repeats", repeats);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (*train) return run_train(case_path, machine, train_config, seed, train_out, train_order, train_disturbance);
        if (*sim) {
            return run_simulate(case_path, method, dt, t_max, r, s, weights_dir, sim_out, sim_disturbance, start,
                                diagnostics);
        }
        if (*exp) return run_experiment_cmd(kind, exp_config, exp_out);
        if (*pf) return run_powerflow(case_path);
        if (*bench) return run_bench(repeats);
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
