#pragma once

#include <vector>

#include <Eigen/Dense>

#include "pinnsim/case.hpp"
#include "pinnsim/system.hpp"

namespace pinnsim {

struct PowerFlowOptions {
    double tolerance = 1e-10;
    int max_iterations = 20;
};

struct PowerFlowSolution {
    Eigen::VectorXcd V;                   // bus voltages
    Eigen::VectorXcd S_gen;               // generation per bus (injection plus local load)
    std::vector<Phasor> machine_currents; // current injected by each case machine
    double mismatch_norm = 0.0;           // infinity norm of scheduled-power mismatch
    int iterations = 0;
    std::vector<double> history;          // mismatch norm per iteration
};

/// Newton-Raphson load flow in polar coordinates from a flat start.
/// Throws NumericalError (carrying the mismatch history) on divergence.
PowerFlowSolution power_flow(const CaseFile& c, const PowerFlowOptions& opts = {});

/// Scheduled-quantity mismatch of a voltage vector, evaluated with the
/// rectangular sum form: P at PV/PQ buses, Q at PQ buses, |V| at PV and
/// slack buses, angle at the slack. Returns the infinity norm.
double power_mismatch(const CaseFile& c, const AdmittanceMatrix& Y, const Eigen::Ref<const Eigen::VectorXcd>& V);

/// A power system at its operating point, ready to simulate.
struct InitializedSystem {
    PowerSystem system;
    Eigen::VectorXd x0;
    Eigen::VectorXcd v0;
};

/// Internal machine voltages, rotor angles and control inputs such that all
/// state derivatives vanish at the load-flow solution; loads become constant
/// admittances. Throws NumericalError if the derivative norm exceeds 1e-8.
InitializedSystem init_equilibrium(const CaseFile& c, const PowerFlowSolution& pf);

/// Scales the mechanical power of one machine (default: machine 0 to 50 %).
PowerSystem apply_disturbance(const PowerSystem& system, std::size_t machine = 0, double factor = 0.5);

/// Loads a case, solves the load flow and initializes at equilibrium.
InitializedSystem initialize_case(const CaseFile& c);

}  // namespace pinnsim
