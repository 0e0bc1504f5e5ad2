#pragma once

#include <functional>

#include <Eigen/Dense>

namespace pinnsim {

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Called after each iteration with (iteration, f). Return false to stop.
using IterationCallback = std::function<bool(int iteration, double value)>;

struct LbfgsOptions {
    int history = 20;
    int max_iterations = 2000;
    double gradient_tolerance = 1e-12;
    /// Line search: sufficient decrease and curvature constants of the strong Wolfe conditions.
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search = 25;
};

struct OptimizerResult {
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing + zoom
/// with cubic interpolation). Minimizes in place.
OptimizerResult minimize_lbfgs(const Objective& f, Eigen::VectorXd& x, const LbfgsOptions& opts = {},
                               const IterationCallback& on_iteration = {});

struct AdamOptions {
    int steps = 500;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

OptimizerResult minimize_adam(const Objective& f, Eigen::VectorXd& x, const AdamOptions& opts = {},
                              const IterationCallback& on_iteration = {});

}  // namespace pinnsim
