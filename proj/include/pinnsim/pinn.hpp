#pragma once

#include <cstdint>
#include <random>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pinnsim/models.hpp"
#include "pinnsim/voltage.hpp"

namespace pinnsim {

enum class Activation { tanh, sigmoid };

/// How rotor and bus angles are presented to the network.
///   absolute:     features are used as given.
///   bus_relative: the machine is rotated so the bus angle theta0 is zero
///                 (delta0 -> delta0 - theta0, theta0 -> 0), and theta1 is
///                 replaced by theta1 - omega_s * delta_omega0, the bus angle
///                 rate seen from the rotor. The dynamics are invariant under
///                 the rotation, and since the prediction is x0 + dt * (...),
///                 no inverse map is needed on output. The rotor angle
///                 prediction carries an extra dt * omega_s * delta_omega0,
///                 so the network learns only the departure from that drift.
enum class AngleFrame { absolute, bus_relative };

/// Dynamic component a network stands in for.
struct PinnComponent {
    std::string id;
    Machine machine;
    ControlInput u;
};

struct PinnMetadata {
    std::string component_id;
    MachineModel model = MachineModel::classical;
    int state_dim = 2;
    int order = 2;
    double dt_max = 0.3;
    bool include_control = false;
    /// Control input the network was trained at when u is not a feature.
    ControlInput control;
    AngleFrame frame = AngleFrame::absolute;
    double omega_s = kSynchronousSpeed;
    std::uint64_t seed = 0;
    std::string optimizer = "lbfgs";
    int epochs = 0;

    [[nodiscard]] int input_dim() const { return 1 + state_dim + 2 * (order + 1) + (include_control ? 2 : 0); }
    [[nodiscard]] int delta_feature() const { return 1 + state_dim - 2; }
    [[nodiscard]] int xi_feature() const { return 1 + state_dim; }
    [[nodiscard]] int control_feature() const { return 1 + state_dim + 2 * (order + 1); }
    /// Feature names in order, e.g. dt, delta, delta_omega, V0, theta0, ...
    [[nodiscard]] std::vector<std::string> input_layout() const;
};

/// Feed-forward network x_hat = x0 + dt * output_scale .* (W_K z_K + b_K),
/// z_0 the standardized features, z_k = sigma(W_{k-1} z_{k-1} + b_{k-1}).
struct PinnWeights {
    PinnMetadata meta;
    std::vector<int> layer_dims;  // d_in, h_1, ..., h_K, d_out
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> b;
    Activation activation = Activation::tanh;
    Eigen::VectorXd input_shift;
    Eigen::VectorXd input_scale;
    Eigen::VectorXd output_scale;

    [[nodiscard]] int input_dim() const { return layer_dims.front(); }
    [[nodiscard]] int output_dim() const { return layer_dims.back(); }
    [[nodiscard]] int parameter_count() const;

    /// Throws ValidationError on incompatible dimensions or non-finite entries.
    void validate() const;

    /// Seeded uniform(+-1/sqrt(fan_in)) initialization with unit normalization.
    static PinnWeights initialize(const PinnMetadata& meta, const std::vector<int>& hidden, Activation act,
                                  std::uint64_t seed);

    /// Parameters flattened layer by layer (W column-major, then b).
    [[nodiscard]] Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::Ref<const Eigen::VectorXd>& theta);
};

struct PinnInput {
    double dt = 0.0;
    Eigen::VectorXd x0;
    Eigen::VectorXd xi;  // (V0, theta0, V1, theta1, ...) of the component's bus
    std::optional<ControlInput> u;
};

/// Raw feature vector; throws ValidationError on a dimension mismatch.
Eigen::VectorXd assemble_features(const PinnWeights& w, const PinnInput& inp);

Eigen::VectorXd forward(const PinnWeights& w, const PinnInput& inp);
Eigen::VectorXd forward(const PinnWeights& w, const Eigen::Ref<const Eigen::VectorXd>& features);

/// Exact d x_hat / d dt.
Eigen::VectorXd time_derivative(const PinnWeights& w, const PinnInput& inp);
Eigen::VectorXd time_derivative(const PinnWeights& w, const Eigen::Ref<const Eigen::VectorXd>& features);

/// Exact p x d_in Jacobian of x_hat with respect to the raw features.
Eigen::MatrixXd input_sensitivity(const PinnWeights& w, const PinnInput& inp);
Eigen::MatrixXd input_sensitivity(const PinnWeights& w, const Eigen::Ref<const Eigen::VectorXd>& features);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    [[nodiscard]] double width() const { return hi - lo; }
    [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SamplingRanges {
    Interval dt{0.0, 0.3};
    Interval theta0{-3.141592653589793, 3.141592653589793};
    Interval delta_minus_theta0{-1.5707963267948966, 1.5707963267948966};
    Interval delta_omega{-0.01, 0.01};
    Interval V0{0.85, 1.15};
    Interval V1{-0.25, 0.25};
    Interval V2{-0.5, 0.5};
    Interval theta1{-2.0, 2.0};
    Interval theta2{-4.0, 4.0};
    /// When set, theta1 is drawn as omega_s * delta_omega0 + U(theta1): the
    /// bus angle then moves with the sampled rotor speed.
    bool theta1_tracks_speed = false;
    Interval E_q_p{0.8, 1.2};
    Interval E_d_p{-0.5, 0.5};
    Interval P_m{0.0, 2.0};
    Interval E_fd{1.0, 2.0};
};

struct TrainingConfig {
    int n_data = 2500;
    int n_collocation = 5000;
    double alpha = 1.0;
    int epochs = 2000;
    /// "lbfgs" or "adam+lbfgs" (first-order warm-up before L-BFGS).
    std::string optimizer = "lbfgs";
    int warmup_steps = 500;
    double warmup_learning_rate = 1e-3;
    int lbfgs_history = 20;
    std::uint64_t seed = 1;
    SamplingRanges ranges;
    double dt_max = 0.3;
    int order = 2;
    std::vector<int> hidden{32, 32};
    Activation activation = Activation::tanh;
    bool include_control = false;
    AngleFrame frame = AngleFrame::absolute;
    /// Per-state loss weights; empty selects 1 / (output_scale * dt_max) for
    /// the data term and 1 / output_scale for the residual term.
    Eigen::VectorXd data_weights;
    Eigen::VectorXd residual_weights;
    double oracle_step = 1e-4;
    int max_resample = 20;

    /// Throws ValidationError when an invariant is violated.
    void validate() const;
};

/// Labeled points (features, x(t0 + dt)) and unlabeled collocation features.
/// Collocation residuals are evaluated at t0 + dt with t0 = 0.
struct Dataset {
    PinnComponent component;
    PinnMetadata meta;
    Eigen::MatrixXd inputs;       // d_in x n_data
    Eigen::MatrixXd targets;      // p x n_data
    Eigen::MatrixXd collocation;  // d_in x n_collocation
};

/// Labels one sample: integrate the component from x0 under the profile for dt.
using Oracle = std::function<Eigen::VectorXd(const Machine&, const ControlInput&, const Eigen::VectorXd& x0,
                                             const VoltageProfile& profile, double dt)>;

/// Fourth-order Runge-Kutta single-component oracle at the given step.
Oracle rk4_oracle(double h = 1e-4);

PinnMetadata make_metadata(const PinnComponent& component, const TrainingConfig& cfg);

/// Draws one raw feature vector from the configured ranges.
Eigen::VectorXd sample_features(const PinnMetadata& meta, const PinnComponent& component,
                                const SamplingRanges& ranges, std::mt19937_64& rng);

/// Deterministic under cfg.seed. Samples whose oracle throws or returns a
/// non-finite state are redrawn (at most cfg.max_resample times each).
Dataset generate_dataset(const PinnComponent& component, const TrainingConfig& cfg, const Oracle& oracle);

struct LossValue {
    double total = 0.0;
    double L_x = 0.0;
    double L_c = 0.0;
};

struct LossWeights {
    Eigen::VectorXd data;      // empty: unit
    Eigen::VectorXd residual;  // empty: unit
};

/// L_x = mean ||diag(w_x)(x_hat - x)||^2 over labeled points,
/// L_c = mean ||diag(w_c)(dx_hat/dt - f(x_hat, v_hat(dt), u))||^2 over collocation points,
/// total = L_x + alpha * L_c.
LossValue loss(const PinnWeights& w, const Dataset& data, double alpha, const LossWeights& weights = {});

/// Loss and its gradient with respect to flatten() parameters.
LossValue loss_gradient(const PinnWeights& w, const Dataset& data, double alpha, const LossWeights& weights,
                        Eigen::VectorXd& grad);

struct TrainingRecord {
    int epoch = 0;
    LossValue value;
};

struct TrainingResult {
    PinnWeights weights;
    std::vector<TrainingRecord> history;  // epoch 0 is the initial loss
    LossWeights loss_weights;
};

/// Normalization from data, seeded initialization, optional warm-up, then
/// one L-BFGS iteration per epoch. Throws NumericalError on a non-finite loss.
TrainingResult train(const Dataset& data, const TrainingConfig& cfg);

void write_loss_history(const std::vector<TrainingRecord>& history, const std::string& path);

void save_weights(const PinnWeights& w, const std::string& path);

/// Throws NotFoundError when the file is missing and ValidationError when malformed.
PinnWeights load_weights(const std::string& path);

/// As load_weights, then LayoutMismatchError unless the network's component
/// id, state dimension, profile order and control mode match.
PinnWeights load_weights(const std::string& path, const std::string& component_id, int state_dim, int order,
                         bool include_control);

}  // namespace pinnsim
