#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pinnsim/models.hpp"

namespace pinnsim {

enum class BusType { slack, pv, pq };

struct CaseBus {
    int id = 0;
    BusType type = BusType::pq;
    double V = 1.0;      // voltage set point (slack, PV) or flat-start guess
    double theta = 0.0;  // slack angle (rad)
    double P_gen = 0.0;  // scheduled generation (PV)
};

struct CaseBranch {
    int from = 0;
    int to = 0;
    double R = 0.0;
    double X = 0.0;
    double B = 0.0;  // total line charging
};

struct CaseShunt {
    int bus = 0;
    double G = 0.0;
    double B = 0.0;
};

struct CaseMachine {
    std::string id;
    int bus = 0;
    MachineModel model = MachineModel::classical;
    MachineParams params;
    ControlInput setpoint;  // tabulated set points; simulations use the equilibrium values
};

struct CaseLoad {
    int bus = 0;
    double P = 0.0;
    double Q = 0.0;
};

/// Power-system case description in per-unit.
struct CaseFile {
    std::string name;
    std::string source;
    double base_mva = 100.0;
    double frequency_hz = kNominalFrequencyHz;
    std::vector<CaseBus> buses;
    std::vector<CaseBranch> branches;
    std::vector<CaseShunt> shunts;
    std::vector<CaseMachine> machines;
    std::vector<CaseLoad> loads;

    /// Position of a bus id in `buses`; throws ValidationError for unknown ids.
    [[nodiscard]] int bus_index(int id) const;

    /// Checks: unique bus ids, exactly one slack bus, references to existing
    /// buses, connected network, machine parameter invariants.
    void validate() const;
};

CaseFile case_from_json(const nlohmann::json& doc);
nlohmann::json case_to_json(const CaseFile& c);

CaseFile load_case(const std::filesystem::path& path);
void save_case(const CaseFile& c, const std::filesystem::path& path);

/// Network admittance matrix (branches, line charging and shunts; loads excluded).
AdmittanceMatrix build_admittance(const CaseFile& c);

/// Path of the bundled IEEE 9-bus case, resolved at configure time.
std::filesystem::path default_case_path();

}  // namespace pinnsim
