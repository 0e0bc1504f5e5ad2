#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "pinnsim/case.hpp"
#include "pinnsim/pinn.hpp"
#include "pinnsim/powerflow.hpp"

namespace testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi)
{
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(rng, lo, hi);
    return v;
}

/// Untrained network with randomized weights and nontrivial normalization.
inline pinnsim::PinnWeights random_network(std::mt19937_64& rng, int state_dim = 2, int order = 2,
                                           pinnsim::AngleFrame frame = pinnsim::AngleFrame::absolute,
                                           std::vector<int> hidden = {8, 6}, bool include_control = false)
{
    pinnsim::PinnMetadata meta;
    meta.component_id = "test";
    meta.model = state_dim == 2 ? pinnsim::MachineModel::classical : pinnsim::MachineModel::two_axis;
    meta.state_dim = state_dim;
    meta.order = order;
    meta.dt_max = 0.3;
    meta.frame = frame;
    meta.include_control = include_control;
    auto w = pinnsim::PinnWeights::initialize(meta, hidden, pinnsim::Activation::tanh, rng());
    for (auto& W : w.W) W *= 1.5;
    for (auto& b : w.b) b = random_vector(rng, b.size(), -0.5, 0.5);
    w.input_shift = random_vector(rng, w.input_dim(), -0.3, 0.3);
    w.input_shift(0) = 0.0;
    w.input_scale = random_vector(rng, w.input_dim(), 0.3, 2.0);
    w.output_scale = random_vector(rng, state_dim, 0.2, 3.0);
    return w;
}

/// Random feature vector in a plausible operating range.
inline Eigen::VectorXd random_features(std::mt19937_64& rng, const pinnsim::PinnWeights& w)
{
    Eigen::VectorXd z = random_vector(rng, w.input_dim(), -1.0, 1.0);
    z(0) = uniform(rng, 0.0, w.meta.dt_max);
    z(w.meta.xi_feature()) = uniform(rng, 0.9, 1.1);
    return z;
}

inline const pinnsim::InitializedSystem& ieee9()
{
    static const pinnsim::InitializedSystem sys = pinnsim::initialize_case(pinnsim::load_case(pinnsim::default_case_path()));
    return sys;
}

}  // namespace testing
