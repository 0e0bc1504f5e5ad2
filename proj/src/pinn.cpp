#include "pinnsim/pinn.hpp"

#include <cmath>
#include <numbers>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pinnsim/baselines.hpp"
#include "pinnsim/csv.hpp"
#include "pinnsim/error.hpp"
#include "pinnsim/optimizer.hpp"
#include "pinnsim/parallel.hpp"

namespace pinnsim {

namespace {

using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Batches are split into this many slices regardless of the thread count so
// reductions always add the same partial sums in the same order.
constexpr int kSlices = 8;

double uniform(std::mt19937_64& rng, const Interval& iv)
{
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return iv.lo + u * (iv.hi - iv.lo);
}

struct ActivationValues {
    MatrixXd s;   // sigma(a)
    MatrixXd d1;  // sigma'(a)
    MatrixXd d2;  // sigma''(a)
};

void apply_activation(Activation act, const MatrixXd& a, ActivationValues& out, bool second)
{
    if (act == Activation::tanh) {
        out.s = a.array().tanh().matrix();
        out.d1 = (1.0 - out.s.array().square()).matrix();
        if (second) out.d2 = (-2.0 * out.s.array() * out.d1.array()).matrix();
    } else {
        out.s = (1.0 / (1.0 + (-a.array()).exp())).matrix();
        out.d1 = (out.s.array() * (1.0 - out.s.array())).matrix();
        if (second) out.d2 = (out.d1.array() * (1.0 - 2.0 * out.s.array())).matrix();
    }
}

int theta0_feature(const PinnMetadata& m) { return m.xi_feature() + 1; }

// Maps raw features to the network's inputs (in place, per column). In the
// bus-relative frame the machine is rotated so theta0 = 0 and the bus angle
// rate is measured against the initial rotor speed. The rotor angle
// relative to the bus is reduced to (-pi, pi].
void canonicalize(const PinnMetadata& m, Eigen::Ref<MatrixXd> z)
{
    if (m.frame != AngleFrame::bus_relative) return;
    const int d = m.delta_feature();
    const int t = theta0_feature(m);
    for (Eigen::Index i = 0; i < z.cols(); ++i) z(d, i) = std::remainder(z(d, i) - z(t, i), 2.0 * std::numbers::pi);
    z.row(t).setZero();
    if (m.order >= 1) z.row(t + 2) -= m.omega_s * z.row(d + 1);
}

// In the bus-relative frame the rotor angle output advances at the initial
// speed deviation; the network only learns the departure from that drift.
int angle_output(const PinnMetadata& m) { return m.state_dim - 2; }

double angle_drift(const PinnMetadata& m, double delta_omega0)
{
    return m.frame == AngleFrame::bus_relative ? m.omega_s * delta_omega0 : 0.0;
}

void check_features(const PinnWeights& w, const Eigen::Ref<const VectorXd>& z)
{
    if (z.size() != w.input_dim()) {
        throw ValidationError("pinn: expected " + std::to_string(w.input_dim()) + " input features, got " +
                              std::to_string(z.size()));
    }
    const double dt = z(0);
    if (!(dt >= 0.0) || dt > w.meta.dt_max * (1.0 + 1e-9)) {
        std::ostringstream os;
        os << "pinn: dt = " << dt << " outside the trained range [0, " << w.meta.dt_max << "]";
        throw DomainError(os.str());
    }
}

// Single-point pass: network output n (before the dt and output scaling),
// its derivative along the dt feature, and optionally dn/dz (canonical raw features).
struct PointPass {
    VectorXd n;
    VectorXd n_dot;
    MatrixXd dn_dz;
};

PointPass point_pass(const PinnWeights& w, const VectorXd& zc, bool want_jacobian)
{
    const int K = static_cast<int>(w.W.size()) - 1;
    VectorXd z = (zc - w.input_shift).cwiseQuotient(w.input_scale);
    VectorXd zdot = VectorXd::Zero(z.size());
    zdot(0) = 1.0 / w.input_scale(0);
    std::vector<VectorXd> d1(K);
    ActivationValues av;
    for (int k = 0; k < K; ++k) {
        const VectorXd a = w.W[k] * z + w.b[k];
        const VectorXd adot = w.W[k] * zdot;
        apply_activation(w.activation, a, av, false);
        z = av.s;
        zdot = av.d1.cwiseProduct(adot);
        d1[k] = av.d1;
    }
    PointPass out;
    out.n = w.W[K] * z + w.b[K];
    out.n_dot = w.W[K] * zdot;
    if (want_jacobian) {
        MatrixXd m = w.W[K];
        for (int k = K - 1; k >= 0; --k) {
            m = (m * d1[k].asDiagonal()) * w.W[k];
        }
        out.dn_dz = m * w.input_scale.cwiseInverse().asDiagonal();
    }
    return out;
}

VectorXd canonical_features(const PinnWeights& w, const Eigen::Ref<const VectorXd>& features)
{
    check_features(w, features);
    VectorXd zc = features;
    canonicalize(w.meta, zc);
    return zc;
}

// ---- batched loss ----------------------------------------------------------

struct SliceResult {
    double sum_x = 0.0;
    double sum_c = 0.0;
    VectorXd grad;
};

struct LossContext {
    const PinnWeights& w;
    const Dataset& data;
    double alpha;
    VectorXd wx2;  // squared data weights
    VectorXd wc2;  // squared residual weights
    bool gradient;
};

struct Forward {
    std::vector<MatrixXd> Z;      // Z[0] normalized inputs, Z[k] hidden outputs
    std::vector<MatrixXd> Zdot;   // tangents along dt (hidden layers only; Zdot[0] unused)
    std::vector<MatrixXd> Adot;   // pre-activation tangents
    std::vector<MatrixXd> D1, D2;
    MatrixXd N, Ndot;
    VectorXd adot0;  // W_0 * e_dt / scale_dt
};

void run_forward(const PinnWeights& w, const MatrixXd& zc, bool tangent, bool second, Forward& f)
{
    const int K = static_cast<int>(w.W.size()) - 1;
    const Eigen::Index m = zc.cols();
    f.Z.assign(K + 1, {});
    f.Zdot.assign(K + 1, {});
    f.Adot.assign(K + 1, {});
    f.D1.assign(K, {});
    f.D2.assign(K, {});
    f.Z[0] = (zc.colwise() - w.input_shift).array().colwise() / w.input_scale.array();
    ActivationValues av;
    for (int k = 0; k < K; ++k) {
        MatrixXd a = w.W[k] * f.Z[k];
        a.colwise() += w.b[k];
        apply_activation(w.activation, a, av, tangent && second);
        f.Z[k + 1] = std::move(av.s);
        f.D1[k] = std::move(av.d1);
        if (tangent) {
            if (k == 0) {
                f.adot0 = w.W[0].col(0) / w.input_scale(0);
                f.Adot[1] = f.adot0.replicate(1, m);
            } else {
                f.Adot[k + 1] = w.W[k] * f.Zdot[k];
            }
            f.Zdot[k + 1] = f.D1[k].cwiseProduct(f.Adot[k + 1]);
            if (second) f.D2[k] = std::move(av.d2);
        }
    }
    f.N = w.W[K] * f.Z[K];
    f.N.colwise() += w.b[K];
    if (tangent) f.Ndot = w.W[K] * f.Zdot[K];
}

// Accumulates parameter gradients given dL/dN and (optionally) dL/dNdot.
void run_backward(const PinnWeights& w, const Forward& f, const MatrixXd& gN, const MatrixXd* gNdot,
                  VectorXd& grad)
{
    const int K = static_cast<int>(w.W.size()) - 1;
    std::vector<Eigen::Index> offset(K + 2, 0);
    for (int k = 0; k <= K; ++k) offset[k + 1] = offset[k] + w.W[k].size() + w.b[k].size();
    auto gW = [&](int k) {
        return Eigen::Map<MatrixXd>(grad.data() + offset[k], w.W[k].rows(), w.W[k].cols());
    };
    auto gb = [&](int k) { return grad.segment(offset[k] + w.W[k].size(), w.b[k].size()); };

    gW(K).noalias() += gN * f.Z[K].transpose();
    gb(K) += gN.rowwise().sum();
    MatrixXd gZ = w.W[K].transpose() * gN;
    MatrixXd gZdot;
    if (gNdot) {
        gW(K).noalias() += *gNdot * f.Zdot[K].transpose();
        gZdot = w.W[K].transpose() * *gNdot;
    }
    for (int k = K - 1; k >= 0; --k) {
        MatrixXd gA = f.D1[k].cwiseProduct(gZ);
        MatrixXd gAdot;
        if (gNdot) {
            gA.array() += f.D2[k].array() * f.Adot[k + 1].array() * gZdot.array();
            gAdot = f.D1[k].cwiseProduct(gZdot);
        }
        gW(k).noalias() += gA * f.Z[k].transpose();
        gb(k) += gA.rowwise().sum();
        if (gNdot) {
            if (k == 0) {
                gW(0).col(0) += gAdot.rowwise().sum() / w.input_scale(0);
            } else {
                gW(k).noalias() += gAdot * f.Zdot[k].transpose();
            }
        }
        if (k > 0) {
            gZ = w.W[k].transpose() * gA;
            if (gNdot) gZdot = w.W[k].transpose() * gAdot;
        }
    }
}

std::pair<Eigen::Index, Eigen::Index> slice_range(Eigen::Index n, int s)
{
    const Eigen::Index begin = n * s / kSlices;
    const Eigen::Index end = n * (s + 1) / kSlices;
    return {begin, end - begin};
}

void data_slice(const LossContext& c, int s, SliceResult& out)
{
    const auto [begin, len] = slice_range(c.data.inputs.cols(), s);
    if (len == 0) return;
    MatrixXd zc = c.data.inputs.middleCols(begin, len);
    canonicalize(c.w.meta, zc);
    Forward f;
    run_forward(c.w, zc, false, false, f);
    const int p = c.w.output_dim();
    const auto dt = zc.row(0).array();
    const auto x0 = c.data.inputs.middleCols(begin, len).middleRows(1, p);
    MatrixXd scaled = f.N.array().colwise() * c.w.output_scale.array();
    const int a = angle_output(c.w.meta);
    const int wf = c.w.meta.delta_feature() + 1;
    for (Eigen::Index j = 0; j < len; ++j) scaled(a, j) += angle_drift(c.w.meta, c.data.inputs(wf, begin + j));
    scaled.array().rowwise() *= dt;
    MatrixXd err = x0 + scaled - c.data.targets.middleCols(begin, len);
    out.sum_x = (err.array().square().colwise() * c.wx2.array()).sum();
    if (!c.gradient) return;
    const double inv_n = 1.0 / static_cast<double>(c.data.inputs.cols());
    MatrixXd gN = (err.array().colwise() * (2.0 * inv_n * c.wx2.array() * c.w.output_scale.array())).matrix();
    gN.array().rowwise() *= dt;
    run_backward(c.w, f, gN, nullptr, out.grad);
}

void collocation_slice(const LossContext& c, int s, SliceResult& out)
{
    const auto [begin, len] = slice_range(c.data.collocation.cols(), s);
    if (len == 0) return;
    const PinnMetadata& meta = c.w.meta;
    const auto zr = c.data.collocation.middleCols(begin, len);
    MatrixXd zc = zr;
    canonicalize(meta, zc);
    Forward f;
    run_forward(c.w, zc, true, c.gradient, f);
    const int p = c.w.output_dim();
    const int nc = meta.order + 1;
    const VectorXd& S = c.w.output_scale;
    MatrixXd resid(p, len);
    std::vector<MatrixXd> jac;
    if (c.gradient) jac.resize(len);
    const Machine& machine = c.data.component.machine;
    for (Eigen::Index j = 0; j < len; ++j) {
        const double dt = zr(0, j);
        const double drift = angle_drift(meta, zr(meta.delta_feature() + 1, j));
        VectorXd x = zr.col(j).segment(1, p) + dt * S.cwiseProduct(f.N.col(j));
        VectorXd xdot = S.cwiseProduct(f.N.col(j) + dt * f.Ndot.col(j));
        x(angle_output(meta)) += dt * drift;
        xdot(angle_output(meta)) += drift;
        VectorXd V(nc), th(nc);
        for (int k = 0; k < nc; ++k) {
            V(k) = zr(meta.xi_feature() + 2 * k, j);
            th(k) = zr(meta.xi_feature() + 2 * k + 1, j);
        }
        const Phasor v = eval_profile(VoltageProfile(0.0, V, th), dt);
        ControlInput u = c.data.component.u;
        if (meta.include_control) {
            u.P_m = zr(meta.control_feature(), j);
            u.E_fd = zr(meta.control_feature() + 1, j);
        }
        if (c.gradient) {
            ComponentPartials part = machine_partials(machine, x, v, u);
            resid.col(j) = xdot - machine_f(machine, x, v, u);
            jac[j] = std::move(part.df_dx);
        } else {
            resid.col(j) = xdot - machine_f(machine, x, v, u);
        }
    }
    out.sum_c = (resid.array().square().colwise() * c.wc2.array()).sum();
    if (!c.gradient) return;
    const double inv_n = 1.0 / static_cast<double>(c.data.collocation.cols());
    const MatrixXd gR = (resid.array().colwise() * (2.0 * c.alpha * inv_n * c.wc2.array())).matrix();
    MatrixXd gN(p, len), gNdot(p, len);
    for (Eigen::Index j = 0; j < len; ++j) {
        const double dt = zr(0, j);
        const VectorXd gx = -(jac[j].transpose() * gR.col(j));
        gN.col(j) = S.cwiseProduct(gR.col(j) + dt * gx);
        gNdot.col(j) = dt * S.cwiseProduct(gR.col(j));
    }
    run_backward(c.w, f, gN, &gNdot, out.grad);
}

LossValue evaluate_loss(const PinnWeights& w, const Dataset& data, double alpha, const LossWeights& weights,
                        VectorXd* grad)
{
    if (data.inputs.rows() != w.input_dim() || data.collocation.rows() != w.input_dim() ||
        data.targets.rows() != w.output_dim() || data.targets.cols() != data.inputs.cols()) {
        throw ValidationError("pinn loss: dataset dimensions do not match the network");
    }
    const int p = w.output_dim();
    LossContext ctx{w, data, alpha, VectorXd::Ones(p), VectorXd::Ones(p), grad != nullptr};
    if (weights.data.size() == p) ctx.wx2 = weights.data.array().square();
    if (weights.residual.size() == p) ctx.wc2 = weights.residual.array().square();

    const int np = w.parameter_count();
    std::vector<SliceResult> parts(2 * kSlices);
    for (auto& r : parts) {
        if (grad) r.grad = VectorXd::Zero(np);
    }
    const bool need_colloc = alpha != 0.0 || grad == nullptr;
    parallel_for(2 * kSlices, [&](int i) {
        if (i < kSlices) {
            data_slice(ctx, i, parts[i]);
        } else if (need_colloc && data.collocation.cols() > 0) {
            collocation_slice(ctx, i - kSlices, parts[i]);
        }
    });
    LossValue out;
    double sx = 0.0, sc = 0.0;
    if (grad) grad->setZero(np);
    for (const auto& r : parts) {
        sx += r.sum_x;
        sc += r.sum_c;
        if (grad) *grad += r.grad;
    }
    out.L_x = data.inputs.cols() > 0 ? sx / static_cast<double>(data.inputs.cols()) : 0.0;
    out.L_c = data.collocation.cols() > 0 ? sc / static_cast<double>(data.collocation.cols()) : 0.0;
    out.total = out.L_x + alpha * out.L_c;
    return out;
}

// ---- persistence helpers ---------------------------------------------------

const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "sigmoid"; }

Activation parse_activation(const std::string& s)
{
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ValidationError("weights: unknown activation '" + s + "'");
}

const char* frame_name(AngleFrame f) { return f == AngleFrame::absolute ? "absolute" : "bus_relative"; }

AngleFrame parse_frame(const std::string& s)
{
    if (s == "absolute") return AngleFrame::absolute;
    if (s == "bus_relative") return AngleFrame::bus_relative;
    throw ValidationError("weights: unknown angle frame '" + s + "'");
}

json vector_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

VectorXd vector_from(const json& j, const std::string& where)
{
    if (!j.is_array()) throw ValidationError("weights: " + where + " must be an array");
    VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ValidationError("weights: " + where + " must hold numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

}  // namespace

// ---- metadata and weights --------------------------------------------------

std::vector<std::string> PinnMetadata::input_layout() const
{
    std::vector<std::string> names{"dt"};
    if (state_dim == 4) {
        names.insert(names.end(), {"E_q_p", "E_d_p"});
    }
    names.insert(names.end(), {"delta", "delta_omega"});
    for (int k = 0; k <= order; ++k) {
        names.push_back("V" + std::to_string(k));
        names.push_back("theta" + std::to_string(k));
    }
    if (include_control) names.insert(names.end(), {"P_m", "E_fd"});
    return names;
}

int PinnWeights::parameter_count() const
{
    int n = 0;
    for (std::size_t k = 0; k < W.size(); ++k) n += static_cast<int>(W[k].size() + b[k].size());
    return n;
}

void PinnWeights::validate() const
{
    if (layer_dims.size() < 2 || W.size() != layer_dims.size() - 1 || b.size() != W.size()) {
        throw ValidationError("pinn weights: layer count inconsistent with layer_dims");
    }
    for (std::size_t k = 0; k < W.size(); ++k) {
        if (W[k].rows() != layer_dims[k + 1] || W[k].cols() != layer_dims[k] || b[k].size() != layer_dims[k + 1]) {
            throw ValidationError("pinn weights: layer " + std::to_string(k) + " has incompatible dimensions");
        }
        if (!W[k].allFinite() || !b[k].allFinite()) {
            throw ValidationError("pinn weights: layer " + std::to_string(k) + " has non-finite entries");
        }
    }
    if (input_shift.size() != input_dim() || input_scale.size() != input_dim() || output_scale.size() != output_dim()) {
        throw ValidationError("pinn weights: normalization sizes do not match the layer dimensions");
    }
    if (!input_shift.allFinite() || !input_scale.allFinite() || !output_scale.allFinite() ||
        (input_scale.array() == 0.0).any()) {
        throw ValidationError("pinn weights: normalization constants must be finite with nonzero input scales");
    }
    if (output_dim() != meta.state_dim || input_dim() != meta.input_dim()) {
        throw ValidationError("pinn weights: layer dimensions disagree with metadata");
    }
}

PinnWeights PinnWeights::initialize(const PinnMetadata& meta, const std::vector<int>& hidden, Activation act,
                                    std::uint64_t seed)
{
    PinnWeights w;
    w.meta = meta;
    w.activation = act;
    w.layer_dims.push_back(meta.input_dim());
    w.layer_dims.insert(w.layer_dims.end(), hidden.begin(), hidden.end());
    w.layer_dims.push_back(meta.state_dim);
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k + 1 < w.layer_dims.size(); ++k) {
        const int in = w.layer_dims[k];
        const int out = w.layer_dims[k + 1];
        const double r = 1.0 / std::sqrt(static_cast<double>(in));
        MatrixXd Wk(out, in);
        VectorXd bk(out);
        for (Eigen::Index j = 0; j < Wk.size(); ++j) Wk.data()[j] = uniform(rng, {-r, r});
        for (Eigen::Index j = 0; j < bk.size(); ++j) bk(j) = uniform(rng, {-r, r});
        w.W.push_back(std::move(Wk));
        w.b.push_back(std::move(bk));
    }
    w.input_shift = VectorXd::Zero(meta.input_dim());
    w.input_scale = VectorXd::Ones(meta.input_dim());
    w.output_scale = VectorXd::Ones(meta.state_dim);
    return w;
}

VectorXd PinnWeights::flatten() const
{
    VectorXd theta(parameter_count());
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < W.size(); ++k) {
        theta.segment(pos, W[k].size()) = W[k].reshaped();
        pos += W[k].size();
        theta.segment(pos, b[k].size()) = b[k];
        pos += b[k].size();
    }
    return theta;
}

void PinnWeights::unflatten(const Eigen::Ref<const VectorXd>& theta)
{
    if (theta.size() != parameter_count()) throw ValidationError("pinn weights: parameter vector has wrong length");
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < W.size(); ++k) {
        W[k].reshaped() = theta.segment(pos, W[k].size());
        pos += W[k].size();
        b[k] = theta.segment(pos, b[k].size());
        pos += b[k].size();
    }
}

// ---- evaluation ------------------------------------------------------------

VectorXd assemble_features(const PinnWeights& w, const PinnInput& inp)
{
    const PinnMetadata& m = w.meta;
    if (inp.x0.size() != m.state_dim) {
        throw ValidationError("pinn input: x0 has " + std::to_string(inp.x0.size()) + " entries, expected " +
                              std::to_string(m.state_dim));
    }
    if (inp.xi.size() != 2 * (m.order + 1)) {
        throw ValidationError("pinn input: xi has " + std::to_string(inp.xi.size()) + " entries, expected " +
                              std::to_string(2 * (m.order + 1)));
    }
    if (m.include_control && !inp.u) throw ValidationError("pinn input: network expects a control input");
    VectorXd z(m.input_dim());
    z(0) = inp.dt;
    z.segment(1, m.state_dim) = inp.x0;
    z.segment(m.xi_feature(), inp.xi.size()) = inp.xi;
    if (m.include_control) {
        z(m.control_feature()) = inp.u->P_m;
        z(m.control_feature() + 1) = inp.u->E_fd;
    }
    return z;
}

VectorXd forward(const PinnWeights& w, const Eigen::Ref<const VectorXd>& features)
{
    const VectorXd zc = canonical_features(w, features);
    const double dt = features(0);
    const int p = w.output_dim();
    if (dt == 0.0) return features.segment(1, p);
    const PointPass pass = point_pass(w, zc, false);
    VectorXd x = features.segment(1, p) + dt * w.output_scale.cwiseProduct(pass.n);
    x(angle_output(w.meta)) += dt * angle_drift(w.meta, features(w.meta.delta_feature() + 1));
    return x;
}

VectorXd forward(const PinnWeights& w, const PinnInput& inp) { return forward(w, assemble_features(w, inp)); }

VectorXd time_derivative(const PinnWeights& w, const Eigen::Ref<const VectorXd>& features)
{
    const VectorXd zc = canonical_features(w, features);
    const PointPass pass = point_pass(w, zc, false);
    VectorXd xdot = w.output_scale.cwiseProduct(pass.n + features(0) * pass.n_dot);
    xdot(angle_output(w.meta)) += angle_drift(w.meta, features(w.meta.delta_feature() + 1));
    return xdot;
}

VectorXd time_derivative(const PinnWeights& w, const PinnInput& inp)
{
    return time_derivative(w, assemble_features(w, inp));
}

Eigen::MatrixXd input_sensitivity(const PinnWeights& w, const Eigen::Ref<const VectorXd>& features)
{
    const VectorXd zc = canonical_features(w, features);
    const PointPass pass = point_pass(w, zc, true);
    const double dt = features(0);
    const int p = w.output_dim();
    MatrixXd J = dt * (w.output_scale.asDiagonal() * pass.dn_dz);
    if (w.meta.frame == AngleFrame::bus_relative) {
        const int d = w.meta.delta_feature();
        const int t = theta0_feature(w.meta);
        J.col(t) = -J.col(d);
        if (w.meta.order >= 1) J.col(d + 1) -= w.meta.omega_s * J.col(t + 2);
    }
    J.col(0) += w.output_scale.cwiseProduct(pass.n);
    if (w.meta.frame == AngleFrame::bus_relative) {
        const int a = angle_output(w.meta);
        const int wf = w.meta.delta_feature() + 1;
        J(a, 0) += angle_drift(w.meta, features(wf));
        J(a, wf) += dt * w.meta.omega_s;
    }
    J.block(0, 1, p, p) += MatrixXd::Identity(p, p);
    return J;
}

Eigen::MatrixXd input_sensitivity(const PinnWeights& w, const PinnInput& inp)
{
    return input_sensitivity(w, assemble_features(w, inp));
}

// ---- data ------------------------------------------------------------------

void TrainingConfig::validate() const
{
    if (n_data <= 0 || n_collocation <= 0) throw ValidationError("training: n_data and n_collocation must be positive");
    if (!(alpha >= 0.0)) throw ValidationError("training: alpha must be nonnegative");
    if (!(dt_max > 0.0)) throw ValidationError("training: dt_max must be positive");
    if (epochs < 0) throw ValidationError("training: epochs must be nonnegative");
    if (order < 0) throw ValidationError("training: profile order must be nonnegative");
    if (hidden.empty()) throw ValidationError("training: at least one hidden layer is required");
    for (int h : hidden) {
        if (h <= 0) throw ValidationError("training: hidden layer widths must be positive");
    }
    if (optimizer != "lbfgs" && optimizer != "adam+lbfgs") {
        throw ValidationError("training: unknown optimizer '" + optimizer + "'");
    }
    if (ranges.dt.lo < 0.0 || ranges.dt.hi > dt_max || ranges.dt.lo > ranges.dt.hi) {
        throw ValidationError("training: dt sampling range must lie within [0, dt_max]");
    }
}

PinnMetadata make_metadata(const PinnComponent& component, const TrainingConfig& cfg)
{
    PinnMetadata m;
    m.component_id = component.id;
    m.model = component.machine.model;
    m.state_dim = component.machine.state_dim();
    m.order = cfg.order;
    m.dt_max = cfg.dt_max;
    m.include_control = cfg.include_control;
    m.control = component.u;
    m.frame = cfg.frame;
    m.omega_s = component.machine.params.omega_s;
    m.seed = cfg.seed;
    m.optimizer = cfg.optimizer;
    m.epochs = cfg.epochs;
    return m;
}

VectorXd sample_features(const PinnMetadata& meta, const PinnComponent& component, const SamplingRanges& r,
                         std::mt19937_64& rng)
{
    VectorXd z(meta.input_dim());
    const int p = meta.state_dim;
    z(0) = std::min(uniform(rng, r.dt), meta.dt_max);
    const double theta0 = meta.frame == AngleFrame::bus_relative ? 0.0 : uniform(rng, r.theta0);
    if (p == 4) {
        z(1) = uniform(rng, r.E_q_p);
        z(2) = uniform(rng, r.E_d_p);
    }
    z(p - 1) = theta0 + uniform(rng, r.delta_minus_theta0);
    z(p) = uniform(rng, r.delta_omega);
    const int xi = meta.xi_feature();
    const double omega_s = component.machine.params.omega_s;
    for (int k = 0; k <= meta.order; ++k) {
        double V = 0.0, th = 0.0;
        if (k == 0) {
            V = uniform(rng, r.V0);
            th = theta0;
        } else if (k == 1) {
            V = uniform(rng, r.V1);
            th = uniform(rng, r.theta1) + (r.theta1_tracks_speed ? omega_s * z(p) : 0.0);
        } else {
            const double shrink = 1.0 / static_cast<double>(k - 1);
            V = shrink * uniform(rng, r.V2);
            th = shrink * uniform(rng, r.theta2);
        }
        z(xi + 2 * k) = V;
        z(xi + 2 * k + 1) = th;
    }
    if (meta.include_control) {
        z(meta.control_feature()) = uniform(rng, r.P_m);
        z(meta.control_feature() + 1) = uniform(rng, r.E_fd);
    }
    (void)component;
    return z;
}

Oracle rk4_oracle(double h)
{
    return [h](const Machine& m, const ControlInput& u, const VectorXd& x0, const VoltageProfile& profile, double dt) {
        return single_component_solve(m, u, x0, profile, dt, h);
    };
}

Dataset generate_dataset(const PinnComponent& component, const TrainingConfig& cfg, const Oracle& oracle)
{
    cfg.validate();
    component.machine.validate();
    Dataset data;
    data.component = component;
    data.meta = make_metadata(component, cfg);
    const PinnMetadata& meta = data.meta;
    const int d = meta.input_dim();
    const int p = meta.state_dim;
    std::mt19937_64 rng(cfg.seed);
    data.inputs.resize(d, cfg.n_data);
    for (int i = 0; i < cfg.n_data; ++i) data.inputs.col(i) = sample_features(meta, component, cfg.ranges, rng);
    data.collocation.resize(d, cfg.n_collocation);
    for (int i = 0; i < cfg.n_collocation; ++i) {
        data.collocation.col(i) = sample_features(meta, component, cfg.ranges, rng);
    }

    auto label = [&](const VectorXd& z, VectorXd& out) -> bool {
        const VectorXd x0 = z.segment(1, p);
        if (z(0) == 0.0) {
            out = x0;
            return true;
        }
        VectorXd V(meta.order + 1), th(meta.order + 1);
        for (int k = 0; k <= meta.order; ++k) {
            V(k) = z(meta.xi_feature() + 2 * k);
            th(k) = z(meta.xi_feature() + 2 * k + 1);
        }
        ControlInput u = component.u;
        if (meta.include_control) {
            u.P_m = z(meta.control_feature());
            u.E_fd = z(meta.control_feature() + 1);
        }
        try {
            out = oracle(component.machine, u, x0, VoltageProfile(0.0, V, th), z(0));
        } catch (const Error&) {
            return false;
        }
        return out.size() == p && out.allFinite();
    };

    data.targets.resize(p, cfg.n_data);
    std::vector<char> ok(cfg.n_data, 0);
    parallel_for(kSlices, [&](int s) {
        const auto [begin, len] = slice_range(cfg.n_data, s);
        VectorXd out;
        for (Eigen::Index i = begin; i < begin + len; ++i) {
            ok[i] = label(data.inputs.col(i), out) ? 1 : 0;
            if (ok[i]) data.targets.col(i) = out;
        }
    });
    // Replacements come from a separate stream, in index order, so they do
    // not depend on scheduling.
    std::mt19937_64 retry_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < cfg.n_data; ++i) {
        int attempts = 0;
        VectorXd out;
        while (!ok[i]) {
            if (++attempts > cfg.max_resample) {
                throw NumericalError("dataset: oracle failed on sample " + std::to_string(i) + " after " +
                                     std::to_string(cfg.max_resample) + " redraws");
            }
            data.inputs.col(i) = sample_features(meta, component, cfg.ranges, retry_rng);
            ok[i] = label(data.inputs.col(i), out) ? 1 : 0;
            if (ok[i]) data.targets.col(i) = out;
        }
    }
    return data;
}

// ---- loss and training -----------------------------------------------------

LossValue loss(const PinnWeights& w, const Dataset& data, double alpha, const LossWeights& weights)
{
    return evaluate_loss(w, data, alpha, weights, nullptr);
}

LossValue loss_gradient(const PinnWeights& w, const Dataset& data, double alpha, const LossWeights& weights,
                        VectorXd& grad)
{
    return evaluate_loss(w, data, alpha, weights, &grad);
}

TrainingResult train(const Dataset& data, const TrainingConfig& cfg)
{
    cfg.validate();
    const PinnMetadata& meta = data.meta;
    const int p = meta.state_dim;
    const int d = meta.input_dim();
    if (data.inputs.cols() == 0) throw ValidationError("training: dataset has no labeled points");

    TrainingResult result;
    PinnWeights w = PinnWeights::initialize(meta, cfg.hidden, cfg.activation, cfg.seed);
    w.meta.optimizer = cfg.optimizer;
    w.meta.epochs = cfg.epochs;

    MatrixXd all(d, data.inputs.cols() + data.collocation.cols());
    all << data.inputs, data.collocation;
    canonicalize(meta, all);
    w.input_shift = all.rowwise().mean();
    const VectorXd var = (all.colwise() - w.input_shift).array().square().rowwise().mean();
    for (int i = 0; i < d; ++i) {
        const double sd = std::sqrt(var(i));
        w.input_scale(i) = sd > 1e-12 ? sd : 1.0;
    }
    // dt is standardized by scale only so that dt = 0 stays a fixed network input.
    w.input_shift(0) = 0.0;

    const double dt_floor = 1e-3 * cfg.dt_max;
    VectorXd lo = VectorXd::Constant(p, std::numeric_limits<double>::infinity());
    VectorXd hi = -lo;
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
        const double dt = data.inputs(0, j);
        if (dt < dt_floor) continue;
        VectorXd q = (data.targets.col(j) - data.inputs.col(j).segment(1, p)) / dt;
        q(angle_output(meta)) -= angle_drift(meta, data.inputs(meta.delta_feature() + 1, j));
        lo = lo.cwiseMin(q);
        hi = hi.cwiseMax(q);
    }
    for (int i = 0; i < p; ++i) {
        const double half = 0.5 * (hi(i) - lo(i));
        w.output_scale(i) = std::isfinite(half) && half > 1e-12 ? half : 1.0;
    }

    LossWeights lw;
    lw.data = cfg.data_weights.size() == p ? cfg.data_weights
                                           : VectorXd(w.output_scale.cwiseInverse() / cfg.dt_max);
    lw.residual = cfg.residual_weights.size() == p ? cfg.residual_weights : VectorXd(w.output_scale.cwiseInverse());
    result.loss_weights = lw;

    LossValue last;
    int epoch = 0;
    Objective objective = [&](const VectorXd& theta, VectorXd& grad) {
        w.unflatten(theta);
        last = loss_gradient(w, data, cfg.alpha, lw, grad);
        if (!std::isfinite(last.total) || !grad.allFinite()) {
            std::ostringstream os;
            os << "training diverged at epoch " << epoch << ": loss " << last.total << " (L_x " << last.L_x
               << ", L_c " << last.L_c << ")";
            throw NumericalError(os.str());
        }
        return last.total;
    };

    VectorXd theta = w.flatten();
    {
        VectorXd g(theta.size());
        objective(theta, g);
        result.history.push_back({0, last});
    }
    if (cfg.optimizer == "adam+lbfgs" && cfg.warmup_steps > 0) {
        AdamOptions ao;
        ao.steps = cfg.warmup_steps;
        ao.learning_rate = cfg.warmup_learning_rate;
        minimize_adam(objective, theta, ao);
    }
    LbfgsOptions lo_opts;
    lo_opts.history = cfg.lbfgs_history;
    lo_opts.max_iterations = cfg.epochs;
    lo_opts.gradient_tolerance = 0.0;
    minimize_lbfgs(objective, theta, lo_opts, [&](int it, double) {
        epoch = it;
        result.history.push_back({it, last});
        return true;
    });
    w.unflatten(theta);
    w.validate();
    result.weights = std::move(w);
    return result;
}

void write_loss_history(const std::vector<TrainingRecord>& history, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write loss history to '" + path + "'");
    CsvWriter csv(out);
    csv.header({"epoch", "total", "L_x", "L_c"});
    for (const auto& r : history) {
        csv.field(r.epoch).field(r.value.total).field(r.value.L_x).field(r.value.L_c).end_row();
    }
}

// ---- persistence -----------------------------------------------------------

void save_weights(const PinnWeights& w, const std::string& path)
{
    w.validate();
    json doc;
    const PinnMetadata& m = w.meta;
    doc["metadata"] = {
        {"component_id", m.component_id},
        {"model", m.model == MachineModel::classical ? "classical" : "two_axis"},
        {"state_dim", m.state_dim},
        {"r", m.order},
        {"dt_max", m.dt_max},
        {"input_layout", m.input_layout()},
        {"include_control", m.include_control},
        {"control", {{"P_m", m.control.P_m}, {"E_fd", m.control.E_fd}}},
        {"angle_frame", frame_name(m.frame)},
        {"omega_s", m.omega_s},
        {"seed", m.seed},
        {"optimizer", m.optimizer},
        {"epochs", m.epochs},
    };
    doc["norms"] = {{"input_shift", vector_json(w.input_shift)},
                    {"input_scale", vector_json(w.input_scale)},
                    {"output_scale", vector_json(w.output_scale)}};
    json layers = json::array();
    for (std::size_t k = 0; k < w.W.size(); ++k) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < w.W[k].rows(); ++i) rows.push_back(vector_json(w.W[k].row(i).transpose()));
        layers.push_back({{"W", rows}, {"b", vector_json(w.b[k])}});
    }
    doc["layers"] = layers;
    doc["activation"] = activation_name(w.activation);
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write weights to '" + path + "'");
    out << doc.dump(1) << '\n';
}

PinnWeights load_weights(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw NotFoundError("weights file not found: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": malformed JSON: " + e.what());
    }
    PinnWeights w;
    try {
        const json& m = doc.at("metadata");
        w.meta.component_id = m.at("component_id").get<std::string>();
        w.meta.model = m.value("model", std::string("classical")) == "two_axis" ? MachineModel::two_axis
                                                                                 : MachineModel::classical;
        w.meta.state_dim = m.at("state_dim").get<int>();
        w.meta.order = m.at("r").get<int>();
        w.meta.dt_max = m.at("dt_max").get<double>();
        w.meta.include_control = m.value("include_control", false);
        if (m.contains("control")) {
            w.meta.control.P_m = m.at("control").at("P_m").get<double>();
            w.meta.control.E_fd = m.at("control").at("E_fd").get<double>();
        }
        w.meta.frame = parse_frame(m.value("angle_frame", std::string("absolute")));
        w.meta.omega_s = m.value("omega_s", kSynchronousSpeed);
        w.meta.seed = m.value("seed", std::uint64_t{0});
        w.meta.optimizer = m.value("optimizer", std::string("lbfgs"));
        w.meta.epochs = m.value("epochs", 0);
        if (m.contains("input_layout") && m.at("input_layout").get<std::vector<std::string>>() != w.meta.input_layout()) {
            throw ValidationError(path + ": input_layout disagrees with state_dim/r/include_control");
        }
        const json& norms = doc.at("norms");
        w.input_shift = vector_from(norms.at("input_shift"), "norms.input_shift");
        w.input_scale = vector_from(norms.at("input_scale"), "norms.input_scale");
        w.output_scale = vector_from(norms.at("output_scale"), "norms.output_scale");
        w.activation = parse_activation(doc.at("activation").get<std::string>());
        const json& layers = doc.at("layers");
        if (!layers.is_array() || layers.empty()) throw ValidationError(path + ": layers must be a nonempty array");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const std::string where = "layers[" + std::to_string(k) + "]";
            const json& rows = layers[k].at("W");
            if (!rows.is_array() || rows.empty()) throw ValidationError(path + ": " + where + ".W must be nonempty");
            const VectorXd first = vector_from(rows[0], where + ".W[0]");
            MatrixXd Wk(rows.size(), first.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const VectorXd row = vector_from(rows[i], where + ".W[" + std::to_string(i) + "]");
                if (row.size() != first.size()) throw ValidationError(path + ": " + where + ".W is ragged");
                Wk.row(static_cast<Eigen::Index>(i)) = row.transpose();
            }
            if (k == 0) w.layer_dims.push_back(static_cast<int>(Wk.cols()));
            w.layer_dims.push_back(static_cast<int>(Wk.rows()));
            w.W.push_back(std::move(Wk));
            w.b.push_back(vector_from(layers[k].at("b"), where + ".b"));
        }
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    try {
        w.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return w;
}

PinnWeights load_weights(const std::string& path, const std::string& component_id, int state_dim, int order,
                         bool include_control)
{
    PinnWeights w = load_weights(path);
    std::ostringstream why;
    if (w.meta.component_id != component_id) {
        why << "component '" << w.meta.component_id << "' vs requested '" << component_id << "'";
    } else if (w.meta.state_dim != state_dim) {
        why << "state dimension " << w.meta.state_dim << " vs requested " << state_dim;
    } else if (w.meta.order != order) {
        why << "profile order r=" << w.meta.order << " vs requested r=" << order;
    } else if (w.meta.include_control != include_control) {
        why << "control input " << (w.meta.include_control ? "included" : "excluded") << " vs requested "
            << (include_control ? "included" : "excluded");
    } else {
        return w;
    }
    throw LayoutMismatchError(path + ": layout mismatch: " + why.str());
}

}  // namespace pinnsim
