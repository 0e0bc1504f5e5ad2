#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pinnsim/baselines.hpp"
#include "pinnsim/pinn.hpp"
#include "pinnsim/powerflow.hpp"
#include "pinnsim/stepper.hpp"

namespace pinnsim {

/// Training defaults used by the experiments: tanh 2x32 network, L-BFGS,
/// bus-relative angle frame, sampling ranges around the 9-bus operating
/// envelope. The rotor-angle range is filled in per machine.
TrainingConfig default_training_config();

/// Applies the fields present in `doc` on top of `base`.
TrainingConfig training_config_from_json(const nlohmann::json& doc, TrainingConfig base);
nlohmann::json training_config_to_json(const TrainingConfig& cfg);

StepConfig step_config_from_json(const nlohmann::json& doc, StepConfig base);

struct NetworkOptions {
    std::filesystem::path weights_dir = "pinnsim_weights";
    TrainingConfig training = default_training_config();
    /// Half-width of the sampled delta - theta0 interval around the machine's equilibrium value.
    double angle_half_width = 0.05;
    bool retrain = false;
    /// Progress messages (training start, cache hits); may be null.
    std::ostream* log = nullptr;
};

/// Training configuration of machine k of `system` for profile order r.
TrainingConfig machine_training_config(const InitializedSystem& init, std::size_t machine, int order,
                                       const NetworkOptions& opts);

/// File name <id>_r<order>_<16 hex digits>.json, the digits hashing the
/// component and its training configuration.
std::string network_file_name(const PinnComponent& component, const TrainingConfig& cfg);

/// Trains (or loads from the cache directory) one network per machine of
/// `system`, whose machines may differ from `init` in their control inputs.
NetworkSet obtain_networks(const InitializedSystem& init, const PowerSystem& system, int order,
                           const NetworkOptions& opts);

enum class ExperimentKind { trajectory, step_sweep, pinn_error, convergence };

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct ConvergenceRun {
    double dt = 0.1;
    int r = 2;
    int s = 3;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::trajectory;
    std::filesystem::path case_path;
    std::uint64_t seed = 1;
    /// Machine whose speed deviation is the error metric (0-based).
    int observed_machine = 1;
    double disturbance = 0.5;

    std::vector<double> dt;
    double t_max = 2.5;
    std::vector<int> r{2};
    /// s = r + offset for every offset.
    std::vector<int> s_offsets{1};
    StepConfig step;
    NetworkOptions networks;
    ReferenceOptions reference;

    int instances = 200;
    double instance_spacing = 0.05;
    double horizon = 10.0;

    int test_points = 4000;
    double bucket_width = 0.05;

    std::vector<ConvergenceRun> runs;
    double convergence_t0 = 1.0;

    /// Defaults of the given experiment.
    static ExperimentConfig defaults(ExperimentKind kind);
    /// Throws ValidationError on empty grids or invalid values.
    void validate() const;
};

/// Reads an experiment config; `kind` in the document, if present, must
/// agree with the requested kind.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc, ExperimentKind kind);

/// Disturbed scenario of a case file.
struct Scenario {
    InitializedSystem init;
    PowerSystem disturbed;
};
Scenario load_scenario(const ExperimentConfig& cfg);

struct TrajectoryRow {
    double dt = 0.0;
    std::string method;
    int r = 0;  // 0 for the trapezoidal rule
    int s = 0;
    int steps = 0;
    bool completed = true;
    int unconverged_steps = 0;
    double max_error_hz = 0.0;
};

struct TrajectoryResult {
    std::vector<TrajectoryRow> rows;
    /// Peak-to-peak speed deviation of each machine in the reference (Hz).
    std::vector<double> reference_peak_to_peak_hz;
};

/// Writes trajectory_summary.csv, reference_summary.csv and one trajectory
/// file per (method, dt) into `out`.
TrajectoryResult run_trajectory_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct SweepRow {
    double dt = 0.0;
    std::string method;
    int r = 0;
    int s = 0;
    int instances = 0;
    int failures = 0;
    double max_error_hz = 0.0;
    double median_error_hz = 0.0;
};

/// Writes step_sweep.csv.
std::vector<SweepRow> run_step_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct PinnErrorRow {
    std::string machine;
    int r = 0;
    double dt_lo = 0.0;
    double dt_hi = 0.0;
    int count = 0;
    double median_error_hz = 0.0;
    double max_error_hz = 0.0;
};

/// Writes pinn_error.csv.
std::vector<PinnErrorRow> run_pinn_error(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct ConvergenceTrace {
    ConvergenceRun run;
    std::vector<double> objective;  // index 0: initial profile
    std::vector<double> delta;      // delta[k - 1] produced iterate k
    bool converged = false;
};

/// Writes convergence.csv.
std::vector<ConvergenceTrace> run_convergence(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// First iteration from which the objective stays within a relative band of its final value.
int plateau_iteration(const std::vector<double>& objective, double relative_band = 1e-3);

/// Runs the experiment of cfg.kind.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace pinnsim
