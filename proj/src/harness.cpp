#include "pinnsim/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "pinnsim/case.hpp"
#include "pinnsim/csv.hpp"
#include "pinnsim/error.hpp"
#include "pinnsim/parallel.hpp"

namespace pinnsim {

namespace {

using nlohmann::json;

void check_keys(const json& doc, const std::set<std::string>& allowed, const std::string& where)
{
    if (!doc.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& item : doc.items()) {
        if (!allowed.count(item.key())) throw ValidationError(where + ": unknown field '" + item.key() + "'");
    }
}

template <typename T>
void read(const json& doc, const char* key, T& target)
{
    if (doc.contains(key)) target = doc.at(key).get<T>();
}

Interval read_interval(const json& v, const std::string& where)
{
    if (!v.is_array() || v.size() != 2) throw ValidationError(where + ": expected [lo, hi]");
    Interval out{v[0].get<double>(), v[1].get<double>()};
    if (!(out.lo <= out.hi)) throw ValidationError(where + ": lo exceeds hi");
    return out;
}

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd read_vector(const json& v)
{
    const auto values = v.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string dt_tag(double dt)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", dt);
    return buf;
}

std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

double median(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Reference samples keyed by time in units of half the fine step.
class ReferenceTable {
  public:
    ReferenceTable(const PowerSystem& system, const InitializedSystem& init, std::vector<double> times,
                   const ReferenceOptions& opts)
        : unit_(opts.dt_ref / 2.0)
    {
        std::set<long long> keys;
        for (double t : times) keys.insert(key(t));
        std::vector<double> snapped;
        for (long long k : keys) snapped.push_back(static_cast<double>(k) * unit_);
        const Trajectory traj = reference_simulate(system, init.x0, init.v0, snapped.back(), snapped, opts);
        if (!traj.completed || traj.samples.size() != snapped.size()) {
            throw NumericalError("reference simulation failed: " + traj.diagnostic);
        }
        for (const auto& s : traj.samples) samples_.emplace(key(s.t), s);
    }

    const TrajectorySample& at(double t) const
    {
        const auto it = samples_.find(key(t));
        if (it == samples_.end()) throw ValidationError("no reference sample at t = " + format_double(t));
        return it->second;
    }

    [[nodiscard]] const std::map<long long, TrajectorySample>& samples() const { return samples_; }

  private:
    [[nodiscard]] long long key(double t) const { return std::llround(t / unit_); }

    double unit_;
    std::map<long long, TrajectorySample> samples_;
};

std::vector<double> boundary_times(double t_max, double dt)
{
    std::vector<double> out{0.0};
    const long full = static_cast<long>(std::floor(t_max / dt + 1e-9));
    for (long k = 1; k <= full; ++k) out.push_back(static_cast<double>(k) * dt);
    if (t_max - static_cast<double>(full) * dt > 1e-9 * dt) out.push_back(t_max);
    return out;
}

struct MethodSpec {
    std::string method;
    int r = 0;
    int s = 0;
};

std::vector<MethodSpec> method_grid(const ExperimentConfig& cfg)
{
    std::vector<MethodSpec> out{{"trapezoidal", 0, 0}};
    for (int r : cfg.r) {
        for (int off : cfg.s_offsets) out.push_back({"pinnsim", r, r + off});
    }
    return out;
}

std::map<int, NetworkSet> networks_by_order(const Scenario& sc, const std::vector<int>& orders,
                                            const NetworkOptions& opts)
{
    std::map<int, NetworkSet> out;
    for (int r : orders) {
        if (!out.count(r)) out.emplace(r, obtain_networks(sc.init, sc.disturbed, r, opts));
    }
    return out;
}

std::string method_label(const MethodSpec& m)
{
    return m.r == 0 ? m.method : m.method + "_r" + std::to_string(m.r) + "_s" + std::to_string(m.s);
}

}  // namespace

TrainingConfig default_training_config()
{
    TrainingConfig c;
    c.alpha = 0.1;
    c.frame = AngleFrame::bus_relative;
    auto& r = c.ranges;
    r.theta1_tracks_speed = true;
    r.delta_omega = {-0.045, 0.005};
    r.V0 = {0.98, 1.08};
    r.V1 = {-0.06, 0.06};
    r.theta1 = {-0.25, 0.25};
    r.V2 = {-0.25, 0.25};
    r.theta2 = {-2.0, 0.5};
    return c;
}

TrainingConfig training_config_from_json(const json& doc, TrainingConfig c)
{
    check_keys(doc,
               {"n_data", "n_collocation", "alpha", "epochs", "optimizer", "warmup_steps", "warmup_learning_rate",
                "lbfgs_history", "seed", "ranges", "dt_max", "order", "hidden", "activation", "include_control",
                "frame", "data_weights", "residual_weights", "oracle_step", "max_resample"},
               "training");
    read(doc, "n_data", c.n_data);
    read(doc, "n_collocation", c.n_collocation);
    read(doc, "alpha", c.alpha);
    read(doc, "epochs", c.epochs);
    read(doc, "optimizer", c.optimizer);
    read(doc, "warmup_steps", c.warmup_steps);
    read(doc, "warmup_learning_rate", c.warmup_learning_rate);
    read(doc, "lbfgs_history", c.lbfgs_history);
    read(doc, "seed", c.seed);
    read(doc, "dt_max", c.dt_max);
    read(doc, "order", c.order);
    read(doc, "hidden", c.hidden);
    read(doc, "include_control", c.include_control);
    read(doc, "oracle_step", c.oracle_step);
    read(doc, "max_resample", c.max_resample);
    if (doc.contains("activation")) {
        const auto a = doc.at("activation").get<std::string>();
        if (a == "tanh") c.activation = Activation::tanh;
        else if (a == "sigmoid") c.activation = Activation::sigmoid;
        else throw ValidationError("training.activation: unknown activation '" + a + "'");
    }
    if (doc.contains("frame")) {
        const auto f = doc.at("frame").get<std::string>();
        if (f == "absolute") c.frame = AngleFrame::absolute;
        else if (f == "bus_relative") c.frame = AngleFrame::bus_relative;
        else throw ValidationError("training.frame: unknown angle frame '" + f + "'");
    }
    if (doc.contains("data_weights")) c.data_weights = read_vector(doc.at("data_weights"));
    if (doc.contains("residual_weights")) c.residual_weights = read_vector(doc.at("residual_weights"));
    if (doc.contains("ranges")) {
        const json& r = doc.at("ranges");
        auto& g = c.ranges;
        const std::map<std::string, Interval*> fields{
            {"dt", &g.dt},     {"theta0", &g.theta0}, {"delta_minus_theta0", &g.delta_minus_theta0},
            {"delta_omega", &g.delta_omega}, {"V0", &g.V0}, {"V1", &g.V1}, {"V2", &g.V2}, {"theta1", &g.theta1},
            {"theta2", &g.theta2}, {"E_q_p", &g.E_q_p}, {"E_d_p", &g.E_d_p}, {"P_m", &g.P_m}, {"E_fd", &g.E_fd}};
        for (const auto& item : r.items()) {
            if (item.key() == "theta1_tracks_speed") {
                g.theta1_tracks_speed = item.value().get<bool>();
                continue;
            }
            const auto it = fields.find(item.key());
            if (it == fields.end()) throw ValidationError("training.ranges: unknown field '" + item.key() + "'");
            *it->second = read_interval(item.value(), "training.ranges." + item.key());
        }
    }
    c.validate();
    return c;
}

json training_config_to_json(const TrainingConfig& c)
{
    const auto& g = c.ranges;
    json ranges{{"dt", interval_json(g.dt)},
                {"theta0", interval_json(g.theta0)},
                {"delta_minus_theta0", interval_json(g.delta_minus_theta0)},
                {"delta_omega", interval_json(g.delta_omega)},
                {"V0", interval_json(g.V0)},
                {"V1", interval_json(g.V1)},
                {"V2", interval_json(g.V2)},
                {"theta1", interval_json(g.theta1)},
                {"theta2", interval_json(g.theta2)},
                {"theta1_tracks_speed", g.theta1_tracks_speed},
                {"E_q_p", interval_json(g.E_q_p)},
                {"E_d_p", interval_json(g.E_d_p)},
                {"P_m", interval_json(g.P_m)},
                {"E_fd", interval_json(g.E_fd)}};
    return json{{"n_data", c.n_data},
                {"n_collocation", c.n_collocation},
                {"alpha", c.alpha},
                {"epochs", c.epochs},
                {"optimizer", c.optimizer},
                {"warmup_steps", c.warmup_steps},
                {"warmup_learning_rate", c.warmup_learning_rate},
                {"lbfgs_history", c.lbfgs_history},
                {"seed", c.seed},
                {"ranges", ranges},
                {"dt_max", c.dt_max},
                {"order", c.order},
                {"hidden", c.hidden},
                {"activation", c.activation == Activation::tanh ? "tanh" : "sigmoid"},
                {"include_control", c.include_control},
                {"frame", c.frame == AngleFrame::absolute ? "absolute" : "bus_relative"},
                {"data_weights", vector_json(c.data_weights)},
                {"residual_weights", vector_json(c.residual_weights)},
                {"oracle_step", c.oracle_step},
                {"max_resample", c.max_resample}};
}

StepConfig step_config_from_json(const json& doc, StepConfig c)
{
    check_keys(doc, {"dt", "s", "r", "xi_tol", "k_max", "damping", "max_damping", "start"}, "step");
    read(doc, "dt", c.dt);
    read(doc, "s", c.s);
    read(doc, "r", c.r);
    read(doc, "xi_tol", c.xi_tol);
    read(doc, "k_max", c.k_max);
    read(doc, "damping", c.damping);
    read(doc, "max_damping", c.max_damping);
    if (doc.contains("start")) {
        const auto s = doc.at("start").get<std::string>();
        if (s == "constant") c.start = ProfileStart::constant;
        else if (s == "previous") c.start = ProfileStart::previous;
        else if (s == "tangent") c.start = ProfileStart::tangent;
        else throw ValidationError("step.start: unknown start mode '" + s + "'");
    }
    return c;
}

TrainingConfig machine_training_config(const InitializedSystem& init, std::size_t machine, int order,
                                       const NetworkOptions& opts)
{
    if (machine >= init.system.machines.size()) {
        throw ValidationError("no machine with index " + std::to_string(machine));
    }
    const MachineComponent& m = init.system.machines[machine];
    TrainingConfig c = opts.training;
    c.order = order;
    c.seed = opts.training.seed + machine;
    const double delta = init.x0(init.system.state_offset(machine) + m.machine.delta_index());
    const double center = std::remainder(delta - std::arg(init.v0(m.bus)), 2.0 * std::numbers::pi);
    c.ranges.delta_minus_theta0 = {center - opts.angle_half_width, center + opts.angle_half_width};
    c.validate();
    return c;
}

std::string network_file_name(const PinnComponent& component, const TrainingConfig& cfg)
{
    const MachineParams& p = component.machine.params;
    const json key{{"id", component.id},
                   {"model", component.machine.model == MachineModel::classical ? "classical" : "two_axis"},
                   {"params", {p.H, p.D, p.X_d, p.X_d_p, p.X_q, p.X_q_p, p.T_do_p, p.T_qo_p, p.R_s, p.omega_s}},
                   {"internal", {component.machine.E_q0_p, component.machine.E_d0_p}},
                   {"control", {component.u.P_m, component.u.E_fd}},
                   {"training", training_config_to_json(cfg)}};
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016" PRIx64, fnv1a(key.dump()));
    return component.id + "_r" + std::to_string(cfg.order) + "_" + hex + ".json";
}

NetworkSet obtain_networks(const InitializedSystem& init, const PowerSystem& system, int order,
                           const NetworkOptions& opts)
{
    if (system.machines.size() != init.system.machines.size()) {
        throw ValidationError("obtain_networks: system and initialization differ in machine count");
    }
    NetworkSet out;
    for (std::size_t k = 0; k < system.machines.size(); ++k) {
        const MachineComponent& m = system.machines[k];
        const PinnComponent comp{m.id, m.machine, m.u};
        const TrainingConfig tc = machine_training_config(init, k, order, opts);
        const std::filesystem::path path = opts.weights_dir / network_file_name(comp, tc);
        if (!opts.retrain && std::filesystem::exists(path)) {
            if (opts.log) *opts.log << "using cached network " << path.string() << '\n';
            out.push_back(load_weights(path.string(), m.id, m.machine.state_dim(), order, tc.include_control));
            continue;
        }
        if (opts.log) {
            *opts.log << "training network for " << m.id << " (r = " << order << ", " << tc.epochs
                      << " epochs) -> " << path.string() << std::endl;
        }
        const Dataset data = generate_dataset(comp, tc, rk4_oracle(tc.oracle_step));
        const TrainingResult res = train(data, tc);
        std::filesystem::create_directories(opts.weights_dir);
        save_weights(res.weights, path.string());
        std::filesystem::path history = path;
        history.replace_extension(".loss.csv");
        write_loss_history(res.history, history.string());
        if (opts.log) *opts.log << "  final loss " << format_double(res.history.back().value.total) << '\n';
        out.push_back(res.weights);
    }
    return out;
}

ExperimentKind parse_experiment_kind(const std::string& name)
{
    if (name == "trajectory") return ExperimentKind::trajectory;
    if (name == "step-sweep") return ExperimentKind::step_sweep;
    if (name == "pinn-error") return ExperimentKind::pinn_error;
    if (name == "convergence") return ExperimentKind::convergence;
    throw ValidationError("unknown experiment kind '" + name + "'");
}

std::string to_string(ExperimentKind kind)
{
    switch (kind) {
    case ExperimentKind::trajectory: return "trajectory";
    case ExperimentKind::step_sweep: return "step-sweep";
    case ExperimentKind::pinn_error: return "pinn-error";
    case ExperimentKind::convergence: return "convergence";
    }
    return "unknown";
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind)
{
    ExperimentConfig c;
    c.kind = kind;
    c.case_path = default_case_path();
    c.step.start = ProfileStart::tangent;
    switch (kind) {
    case ExperimentKind::trajectory:
        c.dt = {0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
        break;
    case ExperimentKind::step_sweep:
        c.dt = {0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
        c.r = {1, 2};
        c.s_offsets = {1, 6};
        break;
    case ExperimentKind::pinn_error:
        break;
    case ExperimentKind::convergence:
        c.step.k_max = 30;
        c.step.xi_tol = 1e-10;
        for (int r : {1, 2}) {
            for (double dt : {0.1, 0.25}) {
                for (int off : {1, 6}) c.runs.push_back({dt, r, r + off});
            }
        }
        break;
    }
    return c;
}

void ExperimentConfig::validate() const
{
    if ((kind == ExperimentKind::trajectory || kind == ExperimentKind::step_sweep) && dt.empty()) {
        throw ValidationError("experiment: dt grid is empty");
    }
    for (double d : dt) {
        if (!(d > 0.0)) throw ValidationError("experiment: dt values must be positive");
    }
    if (r.empty() || s_offsets.empty()) throw ValidationError("experiment: r and s grids must be non-empty");
    for (int v : r) {
        if (v < 0) throw ValidationError("experiment: r must be nonnegative");
    }
    for (int v : s_offsets) {
        if (v < 1) throw ValidationError("experiment: s offsets must be at least 1");
    }
    if (kind == ExperimentKind::convergence && runs.empty()) throw ValidationError("experiment: no convergence runs");
    if (!(t_max > 0.0) || !(horizon > 0.0)) throw ValidationError("experiment: t_max and horizon must be positive");
    if (instances <= 0 || !(instance_spacing > 0.0)) throw ValidationError("experiment: invalid instance grid");
    if (test_points <= 0 || !(bucket_width > 0.0)) throw ValidationError("experiment: invalid test set");
    if (observed_machine < 0) throw ValidationError("experiment: observed_machine must be nonnegative");
    if (!(disturbance >= 0.0)) throw ValidationError("experiment: disturbance factor must be nonnegative");
}

ExperimentConfig experiment_config_from_json(const json& doc, ExperimentKind kind)
{
    try {
        check_keys(doc,
                   {"kind", "case", "seed", "observed_machine", "disturbance", "dt", "t_max", "r", "s_offsets",
                    "step", "training", "weights_dir", "angle_half_width", "retrain", "reference", "instances",
                    "instance_spacing", "horizon", "test_points", "bucket_width", "runs", "convergence_t0"},
                   "experiment");
        if (doc.contains("kind") && parse_experiment_kind(doc.at("kind").get<std::string>()) != kind) {
            throw ValidationError("experiment: config is for kind '" + doc.at("kind").get<std::string>() + "'");
        }
        ExperimentConfig c = ExperimentConfig::defaults(kind);
        if (doc.contains("case")) c.case_path = doc.at("case").get<std::string>();
        read(doc, "seed", c.seed);
        read(doc, "observed_machine", c.observed_machine);
        read(doc, "disturbance", c.disturbance);
        read(doc, "dt", c.dt);
        read(doc, "t_max", c.t_max);
        read(doc, "r", c.r);
        read(doc, "s_offsets", c.s_offsets);
        if (doc.contains("step")) c.step = step_config_from_json(doc.at("step"), c.step);
        if (doc.contains("training")) {
            c.networks.training = training_config_from_json(doc.at("training"), c.networks.training);
        }
        if (doc.contains("weights_dir")) c.networks.weights_dir = doc.at("weights_dir").get<std::string>();
        read(doc, "angle_half_width", c.networks.angle_half_width);
        read(doc, "retrain", c.networks.retrain);
        if (doc.contains("reference")) {
            const json& r = doc.at("reference");
            check_keys(r, {"dt_ref", "verify_tolerance", "verify"}, "reference");
            read(r, "dt_ref", c.reference.dt_ref);
            read(r, "verify_tolerance", c.reference.verify_tolerance);
            read(r, "verify", c.reference.verify);
        }
        read(doc, "instances", c.instances);
        read(doc, "instance_spacing", c.instance_spacing);
        read(doc, "horizon", c.horizon);
        read(doc, "test_points", c.test_points);
        read(doc, "bucket_width", c.bucket_width);
        read(doc, "convergence_t0", c.convergence_t0);
        if (doc.contains("runs")) {
            c.runs.clear();
            for (const auto& run : doc.at("runs")) {
                check_keys(run, {"dt", "r", "s"}, "runs[]");
                ConvergenceRun cr;
                read(run, "dt", cr.dt);
                read(run, "r", cr.r);
                cr.s = cr.r + 1;
                read(run, "s", cr.s);
                c.runs.push_back(cr);
            }
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("experiment config: ") + e.what());
    }
}

Scenario load_scenario(const ExperimentConfig& cfg)
{
    Scenario sc;
    sc.init = initialize_case(load_case(cfg.case_path));
    if (static_cast<std::size_t>(cfg.observed_machine) >= sc.init.system.machines.size()) {
        throw ValidationError("experiment: observed_machine exceeds the machine count");
    }
    sc.disturbed = apply_disturbance(sc.init.system, 0, cfg.disturbance);
    return sc;
}

TrajectoryResult run_trajectory_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    const Scenario sc = load_scenario(cfg);
    const PowerSystem& sys = sc.disturbed;
    const int obs = sys.speed_index(cfg.observed_machine);

    std::vector<double> times;
    for (double dt : cfg.dt) {
        for (double t : boundary_times(cfg.t_max, dt)) times.push_back(t);
    }
    for (double t : boundary_times(cfg.t_max, cfg.reference.dt_ref * 50.0)) times.push_back(t);
    const ReferenceTable ref(sys, sc.init, times, cfg.reference);

    const std::vector<MethodSpec> methods = method_grid(cfg);
    std::vector<int> orders;
    for (const auto& m : methods) {
        if (m.method == "pinnsim") orders.push_back(m.r);
    }
    const auto nets = networks_by_order(sc, orders, cfg.networks);

    struct Cell {
        double dt;
        MethodSpec method;
        TrajectoryRow row;
        std::string csv;
    };
    std::vector<Cell> cells;
    for (double dt : cfg.dt) {
        for (const auto& m : methods) cells.push_back({dt, m, {}, {}});
    }
    parallel_for(static_cast<int>(cells.size()), [&](int i) {
        Cell& c = cells[i];
        Trajectory traj;
        int unconverged = 0;
        if (c.method.method == "trapezoidal") {
            traj = trapezoidal_simulate(sys, sc.init.x0, sc.init.v0, cfg.t_max, c.dt);
        } else {
            StepConfig sc_cfg = cfg.step;
            sc_cfg.dt = c.dt;
            sc_cfg.r = c.method.r;
            sc_cfg.s = c.method.s;
            std::vector<StepResult> steps;
            traj = simulate(sys, sc.init.x0, sc.init.v0, cfg.t_max, sc_cfg, nets.at(c.method.r), &steps);
            for (const auto& s : steps) unconverged += s.converged ? 0 : 1;
        }
        c.row.dt = c.dt;
        c.row.method = c.method.method;
        c.row.r = c.method.r;
        c.row.s = c.method.s;
        c.row.steps = static_cast<int>(traj.samples.size()) - 1;
        c.row.completed = traj.completed;
        c.row.unconverged_steps = unconverged;
        double worst = 0.0;
        for (const auto& s : traj.samples) {
            worst = std::max(worst, std::abs(speed_to_hz(s.x(obs) - ref.at(s.t).x(obs))));
        }
        c.row.max_error_hz = traj.completed ? worst : std::numeric_limits<double>::infinity();
        std::ostringstream os;
        write_trajectory_csv(os, traj, sys);
        c.csv = os.str();
    });

    std::filesystem::create_directories(out);
    TrajectoryResult result;
    {
        auto f = open_output(out / "trajectory_summary.csv");
        CsvWriter csv(f);
        csv.header({"dt", "method", "r", "s", "steps", "completed", "unconverged_steps", "max_error_hz"});
        for (const auto& c : cells) {
            const auto& r = c.row;
            csv.field(r.dt).field(r.method).field(r.r).field(r.s).field(r.steps).field(r.completed ? 1 : 0);
            csv.field(r.unconverged_steps).field(r.max_error_hz).end_row();
            result.rows.push_back(r);
            open_output(out / ("trajectory_" + method_label(c.method) + "_dt" + dt_tag(c.dt) + ".csv")) << c.csv;
        }
    }
    Trajectory reference;
    for (const auto& [k, s] : ref.samples()) {
        if (s.t <= cfg.t_max * (1.0 + 1e-12)) reference.samples.push_back(s);
    }
    open_output(out / "trajectory_reference.csv") << [&] {
        std::ostringstream os;
        write_trajectory_csv(os, reference, sys);
        return os.str();
    }();
    auto f = open_output(out / "reference_summary.csv");
    CsvWriter csv(f);
    csv.header({"machine", "peak_to_peak_hz"});
    for (std::size_t m = 0; m < sys.machines.size(); ++m) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : reference.samples) {
            lo = std::min(lo, s.x(sys.speed_index(m)));
            hi = std::max(hi, s.x(sys.speed_index(m)));
        }
        result.reference_peak_to_peak_hz.push_back(speed_to_hz(hi - lo));
        csv.field(sys.machines[m].id).field(result.reference_peak_to_peak_hz.back()).end_row();
    }
    return result;
}

std::vector<SweepRow> run_step_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    const Scenario sc = load_scenario(cfg);
    const PowerSystem& sys = sc.disturbed;
    const int obs = sys.speed_index(cfg.observed_machine);

    std::vector<double> starts;
    for (int k = 0; k < cfg.instances; ++k) starts.push_back(static_cast<double>(k) * cfg.instance_spacing);
    if (starts.back() > cfg.horizon * (1.0 + 1e-12)) {
        throw ValidationError("step sweep: instances extend beyond the reference horizon");
    }
    std::vector<double> times = starts;
    for (double t : starts) {
        for (double dt : cfg.dt) times.push_back(t + dt);
    }
    const ReferenceTable ref(sys, sc.init, times, cfg.reference);

    const std::vector<MethodSpec> methods = method_grid(cfg);
    const auto nets = networks_by_order(sc, cfg.r, cfg.networks);

    struct Cell {
        double dt;
        MethodSpec method;
        std::vector<double> errors;
        int failures = 0;
    };
    std::vector<Cell> cells;
    for (double dt : cfg.dt) {
        for (const auto& m : methods) cells.push_back({dt, m, {}, 0});
    }
    const int per_cell = cfg.instances;
    std::vector<double> errors(cells.size() * per_cell, std::numeric_limits<double>::quiet_NaN());
    parallel_for(static_cast<int>(errors.size()), [&](int job) {
        const Cell& c = cells[job / per_cell];
        const double t0 = starts[job % per_cell];
        const TrajectorySample& start = ref.at(t0);
        const double target = ref.at(t0 + c.dt).x(obs);
        try {
            Eigen::VectorXd x_end;
            if (c.method.method == "trapezoidal") {
                x_end = trapezoidal_step({start.x, start.v, t0}, c.dt, sys).x;
            } else {
                StepConfig s = cfg.step;
                s.dt = c.dt;
                s.r = c.method.r;
                s.s = c.method.s;
                x_end = step(sys, start.x, start.v, t0, s, nets.at(c.method.r)).x_end;
            }
            errors[job] = std::abs(speed_to_hz(x_end(obs) - target));
        } catch (const Error&) {
        }
    });

    std::filesystem::create_directories(out);
    auto f = open_output(out / "step_sweep.csv");
    CsvWriter csv(f);
    csv.header({"dt", "method", "r", "s", "instances", "failures", "max_error_hz", "median_error_hz"});
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        SweepRow row;
        row.dt = cells[i].dt;
        row.method = cells[i].method.method;
        row.r = cells[i].method.r;
        row.s = cells[i].method.s;
        row.instances = per_cell;
        std::vector<double> ok;
        for (int k = 0; k < per_cell; ++k) {
            const double e = errors[i * per_cell + k];
            if (std::isnan(e)) ++row.failures;
            else ok.push_back(e);
        }
        row.max_error_hz = ok.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::max_element(ok.begin(), ok.end());
        row.median_error_hz = median(ok);
        csv.field(row.dt).field(row.method).field(row.r).field(row.s).field(row.instances).field(row.failures);
        csv.field(row.max_error_hz).field(row.median_error_hz).end_row();
        rows.push_back(row);
    }
    return rows;
}

std::vector<PinnErrorRow> run_pinn_error(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    const Scenario sc = load_scenario(cfg);
    const PowerSystem& sys = sc.disturbed;
    const auto nets = networks_by_order(sc, cfg.r, cfg.networks);

    struct Job {
        int r;
        std::size_t machine;
        std::vector<PinnErrorRow> rows;
    };
    std::vector<Job> jobs;
    for (int r : cfg.r) {
        for (std::size_t k = 0; k < sys.machines.size(); ++k) jobs.push_back({r, k, {}});
    }
    parallel_for(static_cast<int>(jobs.size()), [&](int i) {
        Job& job = jobs[i];
        const MachineComponent& m = sys.machines[job.machine];
        const PinnWeights& w = nets.at(job.r)[job.machine];
        TrainingConfig tc = machine_training_config(sc.init, job.machine, job.r, cfg.networks);
        tc.seed = cfg.seed * 1000003ULL + 7919ULL * (job.machine + 1) + static_cast<std::uint64_t>(job.r);
        tc.n_data = cfg.test_points;
        tc.n_collocation = 1;
        const Dataset test = generate_dataset({m.id, m.machine, m.u}, tc, rk4_oracle(tc.oracle_step));
        const int speed = m.machine.speed_index();
        const int buckets = static_cast<int>(std::ceil(tc.dt_max / cfg.bucket_width - 1e-9));
        std::vector<std::vector<double>> err(buckets);
        for (Eigen::Index j = 0; j < test.inputs.cols(); ++j) {
            const Eigen::VectorXd z = test.inputs.col(j);
            const double e = std::abs(speed_to_hz(forward(w, z)(speed) - test.targets(speed, j)));
            const int b = std::min(buckets - 1, static_cast<int>(z(0) / cfg.bucket_width));
            err[b].push_back(e);
        }
        for (int b = 0; b < buckets; ++b) {
            PinnErrorRow row;
            row.machine = m.id;
            row.r = job.r;
            row.dt_lo = b * cfg.bucket_width;
            row.dt_hi = std::min(tc.dt_max, (b + 1) * cfg.bucket_width);
            row.count = static_cast<int>(err[b].size());
            row.median_error_hz = median(err[b]);
            row.max_error_hz = err[b].empty() ? std::numeric_limits<double>::quiet_NaN()
                                              : *std::max_element(err[b].begin(), err[b].end());
            job.rows.push_back(row);
        }
    });

    std::filesystem::create_directories(out);
    auto f = open_output(out / "pinn_error.csv");
    CsvWriter csv(f);
    csv.header({"machine", "r", "dt_lo", "dt_hi", "count", "median_error_hz", "max_error_hz"});
    std::vector<PinnErrorRow> rows;
    for (const auto& job : jobs) {
        for (const auto& row : job.rows) {
            csv.field(row.machine).field(row.r).field(row.dt_lo).field(row.dt_hi).field(row.count);
            csv.field(row.median_error_hz).field(row.max_error_hz).end_row();
            rows.push_back(row);
        }
    }
    return rows;
}

std::vector<ConvergenceTrace> run_convergence(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    const Scenario sc = load_scenario(cfg);
    const PowerSystem& sys = sc.disturbed;
    const ReferenceTable ref(sys, sc.init, {0.0, cfg.convergence_t0}, cfg.reference);
    const TrajectorySample& start = ref.at(cfg.convergence_t0);
    std::vector<int> orders;
    for (const auto& run : cfg.runs) orders.push_back(run.r);
    const auto nets = networks_by_order(sc, orders, cfg.networks);

    std::vector<ConvergenceTrace> traces(cfg.runs.size());
    parallel_for(static_cast<int>(traces.size()), [&](int i) {
        ConvergenceTrace& tr = traces[i];
        tr.run = cfg.runs[i];
        StepConfig s = cfg.step;
        s.dt = tr.run.dt;
        s.r = tr.run.r;
        s.s = tr.run.s;
        const StepResult res = step(sys, start.x, start.v, start.t, s, nets.at(tr.run.r));
        tr.objective = res.objective_history;
        tr.delta = res.delta_history;
        tr.converged = res.converged;
    });

    std::filesystem::create_directories(out);
    auto f = open_output(out / "convergence.csv");
    CsvWriter csv(f);
    csv.header({"dt", "r", "s", "iteration", "objective", "delta_xi_inf_norm"});
    for (const auto& tr : traces) {
        for (std::size_t k = 0; k < tr.objective.size(); ++k) {
            csv.field(tr.run.dt).field(tr.run.r).field(tr.run.s).field(k).field(tr.objective[k]);
            if (k == 0) csv.field(std::string_view("nan"));
            else csv.field(tr.delta[k - 1]);
            csv.end_row();
        }
    }
    return traces;
}

int plateau_iteration(const std::vector<double>& objective, double relative_band)
{
    if (objective.empty()) return 0;
    const double final_value = objective.back();
    int k = static_cast<int>(objective.size()) - 1;
    while (k > 0 && std::abs(objective[k - 1] - final_value) <= relative_band * std::abs(final_value)) --k;
    return k;
}

void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    switch (cfg.kind) {
    case ExperimentKind::trajectory: run_trajectory_experiment(cfg, out); break;
    case ExperimentKind::step_sweep: run_step_sweep(cfg, out); break;
    case ExperimentKind::pinn_error: run_pinn_error(cfg, out); break;
    case ExperimentKind::convergence: run_convergence(cfg, out); break;
    }
}

}  // namespace pinnsim
