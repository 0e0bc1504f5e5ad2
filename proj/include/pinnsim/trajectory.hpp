#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pinnsim/system.hpp"

namespace pinnsim {

/// Machine states and bus voltages at one instant.
struct TrajectorySample {
    double t = 0.0;
    Eigen::VectorXd x;
    Eigen::VectorXcd v;
};

/// Time series of simulation results at step boundaries, with optional
/// dense evaluators covering each step interval.
struct Trajectory {
    using DenseEvaluator = std::function<TrajectorySample(double)>;

    std::vector<TrajectorySample> samples;
    std::vector<DenseEvaluator> dense;  // dense[k] covers [samples[k].t, samples[k+1].t]
    bool completed = true;
    bool partial_final_step = false;
    std::string diagnostic;

    /// Evaluates between boundaries via the dense evaluators; boundary
    /// samples are returned exactly.
    [[nodiscard]] TrajectorySample at(double t) const;
};

/// Writes the common trajectory CSV: t, per machine (state columns), per bus
/// (V, theta). Values use 17 significant digits.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const PowerSystem& system);

/// Converts a per-unit speed deviation into Hz.
inline double speed_to_hz(double delta_omega_pu) { return delta_omega_pu * kNominalFrequencyHz; }

}  // namespace pinnsim
