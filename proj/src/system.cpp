#include "pinnsim/system.hpp"

#include <string>

#include "pinnsim/error.hpp"

namespace pinnsim {

int PowerSystem::state_size() const
{
    int total = 0;
    for (const auto& m : machines) {
        total += m.machine.state_dim();
    }
    return total;
}

int PowerSystem::state_offset(std::size_t machine) const
{
    int offset = 0;
    for (std::size_t k = 0; k < machine; ++k) {
        offset += machines[k].machine.state_dim();
    }
    return offset;
}

int PowerSystem::speed_index(std::size_t machine) const
{
    return state_offset(machine) + machines[machine].machine.speed_index();
}

Eigen::VectorXcd PowerSystem::component_currents(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                 const Eigen::Ref<const Eigen::VectorXcd>& v) const
{
    Eigen::VectorXcd ic = Eigen::VectorXcd::Zero(bus_count());
    int offset = 0;
    for (const auto& m : machines) {
        const int p = m.machine.state_dim();
        ic(m.bus) += machine_h(m.machine, x.segment(offset, p), v(m.bus));
        offset += p;
    }
    for (const auto& load : loads) {
        ic(load.bus) += load_h(v(load.bus), load);
    }
    return ic;
}

Eigen::VectorXcd PowerSystem::current_mismatch(const Eigen::Ref<const Eigen::VectorXd>& x,
                                               const Eigen::Ref<const Eigen::VectorXcd>& v) const
{
    return component_currents(x, v) - network_currents(Y, v);
}

Eigen::VectorXd PowerSystem::derivatives(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const Eigen::Ref<const Eigen::VectorXcd>& v) const
{
    Eigen::VectorXd dx(x.size());
    int offset = 0;
    for (const auto& m : machines) {
        const int p = m.machine.state_dim();
        dx.segment(offset, p) = machine_f(m.machine, x.segment(offset, p), v(m.bus), m.u);
        offset += p;
    }
    return dx;
}

void PowerSystem::validate() const
{
    const int n = bus_count();
    for (const auto& m : machines) {
        if (m.bus < 0 || m.bus >= n) {
            throw ValidationError("machine '" + m.id + "' refers to bus index " + std::to_string(m.bus)
                                  + " outside the network");
        }
        m.machine.validate();
    }
    for (const auto& l : loads) {
        if (l.bus < 0 || l.bus >= n) {
            throw ValidationError("load refers to bus index " + std::to_string(l.bus) + " outside the network");
        }
    }
}

}  // namespace pinnsim
