#include "pinnsim/trajectory.hpp"

#include <algorithm>
#include <complex>
#include <ostream>

#include "pinnsim/csv.hpp"
#include "pinnsim/error.hpp"

namespace pinnsim {

TrajectorySample Trajectory::at(double t) const
{
    if (samples.empty()) {
        throw ValidationError("trajectory is empty");
    }
    if (t <= samples.front().t) {
        return samples.front();
    }
    if (t >= samples.back().t) {
        return samples.back();
    }
    const auto it = std::upper_bound(samples.begin(), samples.end(), t,
                                     [](double value, const TrajectorySample& s) { return value < s.t; });
    const auto k = static_cast<std::size_t>(std::distance(samples.begin(), it)) - 1;
    if (samples[k].t == t) {
        return samples[k];
    }
    if (k < dense.size() && dense[k]) {
        return dense[k](t);
    }
    // no dense output: linear interpolation between boundaries
    const auto& a = samples[k];
    const auto& b = samples[k + 1];
    const double w = (t - a.t) / (b.t - a.t);
    return {t, (1.0 - w) * a.x + w * b.x, (1.0 - w) * a.v + w * b.v};
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const PowerSystem& system)
{
    CsvWriter csv(out);
    std::vector<std::string> header{"t"};
    for (const auto& m : system.machines) {
        if (m.machine.model == MachineModel::two_axis) {
            header.push_back(m.id + "_E_q_p");
            header.push_back(m.id + "_E_d_p");
        }
        header.push_back(m.id + "_delta");
        header.push_back(m.id + "_delta_omega");
    }
    for (int i = 0; i < system.bus_count(); ++i) {
        header.push_back("V" + std::to_string(i + 1));
        header.push_back("theta" + std::to_string(i + 1));
    }
    csv.header(header);
    for (const auto& s : traj.samples) {
        csv.field(s.t);
        for (Eigen::Index k = 0; k < s.x.size(); ++k) {
            csv.field(s.x(k));
        }
        for (Eigen::Index i = 0; i < s.v.size(); ++i) {
            csv.field(std::abs(s.v(i)));
            csv.field(std::arg(s.v(i)));
        }
        csv.end_row();
    }
}

}  // namespace pinnsim
