#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pinnsim/models.hpp"

namespace pinnsim {

struct MachineComponent {
    std::string id;
    int bus = 0;
    Machine machine;
    ControlInput u;
};

/// An initialized power system: network, dynamic machines and static loads.
/// Machine states are concatenated in machine order into one vector.
struct PowerSystem {
    AdmittanceMatrix Y;
    std::vector<MachineComponent> machines;
    std::vector<StaticLoad> loads;

    [[nodiscard]] int bus_count() const { return Y.size(); }
    [[nodiscard]] int state_size() const;
    [[nodiscard]] int state_offset(std::size_t machine) const;

    /// Indices into the concatenated state of machine k's delta_omega.
    [[nodiscard]] int speed_index(std::size_t machine) const;

    /// Sum of component injections per bus.
    [[nodiscard]] Eigen::VectorXcd component_currents(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                      const Eigen::Ref<const Eigen::VectorXcd>& v) const;

    /// i^C - i^N per bus.
    [[nodiscard]] Eigen::VectorXcd current_mismatch(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                    const Eigen::Ref<const Eigen::VectorXcd>& v) const;

    /// Concatenated state derivatives.
    [[nodiscard]] Eigen::VectorXd derivatives(const Eigen::Ref<const Eigen::VectorXd>& x,
                                              const Eigen::Ref<const Eigen::VectorXcd>& v) const;

    void validate() const;
};

}  // namespace pinnsim
