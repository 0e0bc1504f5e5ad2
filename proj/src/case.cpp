#include "pinnsim/case.hpp"

#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "pinnsim/error.hpp"

#ifndef PINNSIM_DATA_DIR
#define PINNSIM_DATA_DIR "data"
#endif

namespace pinnsim {

namespace {

using nlohmann::json;

template <typename T>
T required(const json& obj, const char* key, const std::string& where)
{
    if (!obj.is_object() || !obj.contains(key)) {
        throw ValidationError(where + ": missing field '" + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(where + "." + key + ": " + e.what());
    }
}

template <typename T>
T optional(const json& obj, const char* key, T fallback, const std::string& where)
{
    if (!obj.contains(key)) {
        return fallback;
    }
    return required<T>(obj, key, where);
}

const json& required_array(const json& doc, const char* key)
{
    if (!doc.contains(key) || !doc.at(key).is_array()) {
        throw ValidationError(std::string("case: field '") + key + "' must be an array");
    }
    return doc.at(key);
}

BusType parse_bus_type(const std::string& s, const std::string& where)
{
    if (s == "slack") {
        return BusType::slack;
    }
    if (s == "pv" || s == "PV") {
        return BusType::pv;
    }
    if (s == "pq" || s == "PQ") {
        return BusType::pq;
    }
    throw ValidationError(where + ".type: unknown bus type '" + s + "'");
}

const char* bus_type_name(BusType t)
{
    switch (t) {
    case BusType::slack:
        return "slack";
    case BusType::pv:
        return "pv";
    case BusType::pq:
        return "pq";
    }
    return "pq";
}

}  // namespace

int CaseFile::bus_index(int id) const
{
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == id) {
            return static_cast<int>(i);
        }
    }
    throw ValidationError("case: unknown bus id " + std::to_string(id));
}

void CaseFile::validate() const
{
    if (buses.empty()) {
        throw ValidationError("case: no buses");
    }
    std::set<int> ids;
    int slack_count = 0;
    for (const auto& b : buses) {
        if (!ids.insert(b.id).second) {
            throw ValidationError("case: duplicate bus id " + std::to_string(b.id));
        }
        slack_count += b.type == BusType::slack ? 1 : 0;
    }
    if (slack_count != 1) {
        throw ValidationError("case: expected exactly one slack bus, found " + std::to_string(slack_count));
    }
    const auto n = buses.size();
    std::vector<std::vector<int>> adj(n);
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        const std::string where = "branches[" + std::to_string(k) + "]";
        const int a = bus_index(br.from);
        const int b = bus_index(br.to);
        if (a == b) {
            throw ValidationError(where + ": branch connects bus " + std::to_string(br.from) + " to itself");
        }
        if (br.R == 0.0 && br.X == 0.0) {
            throw ValidationError(where + ": zero series impedance");
        }
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    std::vector<bool> seen(n, false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    while (!frontier.empty()) {
        const int i = frontier.front();
        frontier.pop();
        for (int j : adj[static_cast<std::size_t>(i)]) {
            if (!seen[static_cast<std::size_t>(j)]) {
                seen[static_cast<std::size_t>(j)] = true;
                frontier.push(j);
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) {
            throw ValidationError("case: network is not connected (bus " + std::to_string(buses[i].id)
                                  + " unreachable)");
        }
    }
    std::set<int> machine_buses;
    for (std::size_t k = 0; k < machines.size(); ++k) {
        const auto& m = machines[k];
        const std::string where = "machines[" + std::to_string(k) + "]";
        try {
            (void)bus_index(m.bus);
            Machine mm{m.params, m.model, 1.0, 0.0};
            mm.validate();
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!machine_buses.insert(m.bus).second) {
            throw ValidationError(where + ": more than one machine at bus " + std::to_string(m.bus));
        }
    }
    for (const auto& b : buses) {
        if (b.type != BusType::pq && machine_buses.count(b.id) == 0) {
            throw ValidationError("case: generator bus " + std::to_string(b.id) + " has no machine");
        }
    }
    for (std::size_t k = 0; k < loads.size(); ++k) {
        try {
            (void)bus_index(loads[k].bus);
        } catch (const ValidationError& e) {
            throw ValidationError("loads[" + std::to_string(k) + "]: " + e.what());
        }
    }
    for (std::size_t k = 0; k < shunts.size(); ++k) {
        try {
            (void)bus_index(shunts[k].bus);
        } catch (const ValidationError& e) {
            throw ValidationError("shunts[" + std::to_string(k) + "]: " + e.what());
        }
    }
}

CaseFile case_from_json(const json& doc)
{
    if (!doc.is_object()) {
        throw ValidationError("case: top level must be an object");
    }
    CaseFile c;
    c.name = optional<std::string>(doc, "name", "", "case");
    c.source = optional<std::string>(doc, "source", "", "case");
    c.base_mva = optional<double>(doc, "base_mva", 100.0, "case");
    c.frequency_hz = optional<double>(doc, "frequency_hz", kNominalFrequencyHz, "case");
    const double omega_s = 2.0 * std::numbers::pi * c.frequency_hz;

    const auto& buses = required_array(doc, "buses");
    for (std::size_t k = 0; k < buses.size(); ++k) {
        const std::string where = "buses[" + std::to_string(k) + "]";
        const auto& b = buses[k];
        CaseBus bus;
        bus.id = required<int>(b, "id", where);
        bus.type = parse_bus_type(required<std::string>(b, "type", where), where);
        bus.V = optional<double>(b, "V", 1.0, where);
        bus.theta = optional<double>(b, "theta", 0.0, where);
        bus.P_gen = optional<double>(b, "P_gen", 0.0, where);
        c.buses.push_back(bus);
    }
    const auto& branches = required_array(doc, "branches");
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const std::string where = "branches[" + std::to_string(k) + "]";
        const auto& b = branches[k];
        c.branches.push_back({required<int>(b, "from", where), required<int>(b, "to", where),
                              required<double>(b, "R", where), required<double>(b, "X", where),
                              optional<double>(b, "B", 0.0, where)});
    }
    if (doc.contains("shunts")) {
        const auto& shunts = required_array(doc, "shunts");
        for (std::size_t k = 0; k < shunts.size(); ++k) {
            const std::string where = "shunts[" + std::to_string(k) + "]";
            const auto& s = shunts[k];
            c.shunts.push_back({required<int>(s, "bus", where), optional<double>(s, "G", 0.0, where),
                                optional<double>(s, "B", 0.0, where)});
        }
    }
    const auto& machines = required_array(doc, "machines");
    for (std::size_t k = 0; k < machines.size(); ++k) {
        const std::string where = "machines[" + std::to_string(k) + "]";
        const auto& m = machines[k];
        CaseMachine cm;
        cm.bus = required<int>(m, "bus", where);
        cm.id = optional<std::string>(m, "id", "gen" + std::to_string(k + 1), where);
        const auto model = optional<std::string>(m, "model", "classical", where);
        if (model == "classical") {
            cm.model = MachineModel::classical;
        } else if (model == "two_axis") {
            cm.model = MachineModel::two_axis;
        } else {
            throw ValidationError(where + ".model: unknown machine model '" + model + "'");
        }
        auto& p = cm.params;
        p.H = required<double>(m, "H", where);
        p.D = required<double>(m, "D", where);
        p.X_d = required<double>(m, "X_d", where);
        p.X_d_p = required<double>(m, "X_d_p", where);
        p.R_s = optional<double>(m, "R_s", 0.0, where);
        p.omega_s = omega_s;
        if (cm.model == MachineModel::classical) {
            // classical reduction: X'_q = X_q = X'_d
            p.X_q = p.X_d_p;
            p.X_q_p = p.X_d_p;
            p.T_do_p = optional<double>(m, "T_do_p", 1.0, where);
            p.T_qo_p = optional<double>(m, "T_qo_p", 1.0, where);
        } else {
            p.X_q = required<double>(m, "X_q", where);
            p.X_q_p = required<double>(m, "X_q_p", where);
            p.T_do_p = required<double>(m, "T_do_p", where);
            p.T_qo_p = required<double>(m, "T_qo_p", where);
        }
        cm.setpoint.P_m = optional<double>(m, "P_m", 0.0, where);
        cm.setpoint.E_fd = optional<double>(m, "E_fd", 0.0, where);
        c.machines.push_back(cm);
    }
    if (doc.contains("loads")) {
        const auto& loads = required_array(doc, "loads");
        for (std::size_t k = 0; k < loads.size(); ++k) {
            const std::string where = "loads[" + std::to_string(k) + "]";
            const auto& l = loads[k];
            c.loads.push_back(
                {required<int>(l, "bus", where), required<double>(l, "P", where), optional<double>(l, "Q", 0.0, where)});
        }
    }
    c.validate();
    return c;
}

json case_to_json(const CaseFile& c)
{
    json doc;
    doc["name"] = c.name;
    doc["source"] = c.source;
    doc["base_mva"] = c.base_mva;
    doc["frequency_hz"] = c.frequency_hz;
    doc["buses"] = json::array();
    for (const auto& b : c.buses) {
        doc["buses"].push_back(
            {{"id", b.id}, {"type", bus_type_name(b.type)}, {"V", b.V}, {"theta", b.theta}, {"P_gen", b.P_gen}});
    }
    doc["branches"] = json::array();
    for (const auto& b : c.branches) {
        doc["branches"].push_back({{"from", b.from}, {"to", b.to}, {"R", b.R}, {"X", b.X}, {"B", b.B}});
    }
    doc["shunts"] = json::array();
    for (const auto& s : c.shunts) {
        doc["shunts"].push_back({{"bus", s.bus}, {"G", s.G}, {"B", s.B}});
    }
    doc["machines"] = json::array();
    for (const auto& m : c.machines) {
        const auto& p = m.params;
        json jm = {{"id", m.id},
                   {"bus", m.bus},
                   {"model", m.model == MachineModel::classical ? "classical" : "two_axis"},
                   {"H", p.H},
                   {"D", p.D},
                   {"X_d", p.X_d},
                   {"X_d_p", p.X_d_p},
                   {"X_q", p.X_q},
                   {"X_q_p", p.X_q_p},
                   {"T_do_p", p.T_do_p},
                   {"T_qo_p", p.T_qo_p},
                   {"R_s", p.R_s},
                   {"P_m", m.setpoint.P_m},
                   {"E_fd", m.setpoint.E_fd}};
        doc["machines"].push_back(jm);
    }
    doc["loads"] = json::array();
    for (const auto& l : c.loads) {
        doc["loads"].push_back({{"bus", l.bus}, {"P", l.P}, {"Q", l.Q}});
    }
    return doc;
}

CaseFile load_case(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("case file not found: " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    try {
        return case_from_json(doc);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void save_case(const CaseFile& c, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot write case file: " + path.string());
    }
    out << case_to_json(c).dump(2) << '\n';
}

AdmittanceMatrix build_admittance(const CaseFile& c)
{
    const int n = static_cast<int>(c.buses.size());
    std::vector<Eigen::Triplet<Phasor>> trip;
    for (const auto& br : c.branches) {
        const int a = c.bus_index(br.from);
        const int b = c.bus_index(br.to);
        const Phasor y = 1.0 / Phasor(br.R, br.X);
        const Phasor half_charging(0.0, br.B / 2.0);
        trip.emplace_back(a, a, y + half_charging);
        trip.emplace_back(b, b, y + half_charging);
        trip.emplace_back(a, b, -y);
        trip.emplace_back(b, a, -y);
    }
    for (const auto& s : c.shunts) {
        const int a = c.bus_index(s.bus);
        trip.emplace_back(a, a, Phasor(s.G, s.B));
    }
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, i, Phasor(0.0, 0.0));
    }
    return AdmittanceMatrix::from_triplets(n, trip);
}

std::filesystem::path default_case_path() { return std::filesystem::path(PINNSIM_DATA_DIR) / "ieee9.json"; }

}  // namespace pinnsim
