#include "pinnsim/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "pinnsim/error.hpp"

namespace pinnsim {

namespace {

struct Probe {
    double alpha;
    double f;
    double dphi;
};

// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), clamped into the bracket.
double cubic_minimizer(const Probe& a, const Probe& b)
{
    const double d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    const double disc = d1 * d1 - a.dphi * b.dphi;
    const double lo = std::min(a.alpha, b.alpha);
    const double hi = std::max(a.alpha, b.alpha);
    if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
        const double t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
        if (std::isfinite(t)) {
            const double margin = 0.1 * (hi - lo);
            return std::clamp(t, lo + margin, hi - margin);
        }
    }
    return 0.5 * (lo + hi);
}

class LineSearch {
  public:
    LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double f0, double d0,
               const LbfgsOptions& opts)
        : f_(f), x_(x), dir_(dir), f0_(f0), d0_(d0), opts_(opts) {}

    // Returns true on success; x_out/g_out/f_out hold the accepted point.
    bool run(double alpha1, Eigen::VectorXd& x_out, Eigen::VectorXd& g_out, double& f_out, int& evals)
    {
        Probe prev{0.0, f0_, d0_};
        double alpha = alpha1;
        for (int i = 0; i < opts_.max_line_search; ++i) {
            Probe cur = probe(alpha, x_out, g_out, evals);
            if (!std::isfinite(cur.f) || cur.f > f0_ + opts_.c1 * alpha * d0_ || (i > 0 && cur.f >= prev.f)) {
                return zoom(prev, cur, x_out, g_out, f_out, evals);
            }
            if (std::abs(cur.dphi) <= -opts_.c2 * d0_) {
                f_out = cur.f;
                return true;
            }
            if (cur.dphi >= 0.0) return zoom(cur, prev, x_out, g_out, f_out, evals);
            prev = cur;
            alpha *= 2.0;
        }
        return false;
    }

  private:
    Probe probe(double alpha, Eigen::VectorXd& x_out, Eigen::VectorXd& g_out, int& evals)
    {
        x_out = x_ + alpha * dir_;
        const double fv = f_(x_out, g_out);
        ++evals;
        const double dphi = std::isfinite(fv) ? g_out.dot(dir_) : 0.0;
        return {alpha, std::isfinite(fv) ? fv : std::numeric_limits<double>::infinity(), dphi};
    }

    bool zoom(Probe lo, Probe hi, Eigen::VectorXd& x_out, Eigen::VectorXd& g_out, double& f_out, int& evals)
    {
        for (int i = 0; i < opts_.max_line_search; ++i) {
            double alpha = std::isfinite(hi.f) ? cubic_minimizer(lo, hi) : 0.5 * (lo.alpha + hi.alpha);
            Probe cur = probe(alpha, x_out, g_out, evals);
            if (!std::isfinite(cur.f) || cur.f > f0_ + opts_.c1 * alpha * d0_ || cur.f >= lo.f) {
                hi = cur;
            } else {
                if (std::abs(cur.dphi) <= -opts_.c2 * d0_) {
                    f_out = cur.f;
                    return true;
                }
                if (cur.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
                lo = cur;
            }
            if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
        }
        // Accept the best sufficient-decrease point even without the curvature condition.
        if (lo.alpha > 0.0 && lo.f < f0_) {
            x_out = x_ + lo.alpha * dir_;
            f_out = f_(x_out, g_out);
            ++evals;
            return std::isfinite(f_out);
        }
        return false;
    }

    const Objective& f_;
    const Eigen::VectorXd& x_;
    const Eigen::VectorXd& dir_;
    double f0_;
    double d0_;
    const LbfgsOptions& opts_;
};

}  // namespace

OptimizerResult minimize_lbfgs(const Objective& f, Eigen::VectorXd& x, const LbfgsOptions& opts,
                               const IterationCallback& on_iteration)
{
    OptimizerResult result;
    Eigen::VectorXd g(x.size());
    double fx = f(x, g);
    result.evaluations = 1;
    if (!std::isfinite(fx) || !g.allFinite()) throw NumericalError("objective is not finite at the starting point");

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    Eigen::VectorXd x_new(x.size()), g_new(x.size());

    for (int it = 1; it <= opts.max_iterations; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
            result.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd q = g;
        const int m = static_cast<int>(s_hist.size());
        std::vector<double> a(m);
        for (int i = m - 1; i >= 0; --i) {
            a[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= a[i] * y_hist[i];
        }
        if (m > 0) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (int i = 0; i < m; ++i) {
            const double b = rho_hist[i] * y_hist[i].dot(q);
            q += (a[i] - b) * s_hist[i];
        }
        Eigen::VectorXd dir = -q;
        double d0 = g.dot(dir);
        if (!(d0 < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g;
            d0 = -g.squaredNorm();
        }
        const double alpha1 = s_hist.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;

        LineSearch ls(f, x, dir, fx, d0, opts);
        double f_new = fx;
        if (!ls.run(alpha1, x_new, g_new, f_new, result.evaluations)) {
            if (s_hist.empty()) break;
            // Retry once along steepest descent with a fresh memory.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        }
        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = x_new;
        g = g_new;
        fx = f_new;
        result.iterations = it;
        if (on_iteration && !on_iteration(it, fx)) break;
    }
    result.value = fx;
    return result;
}

OptimizerResult minimize_adam(const Objective& f, Eigen::VectorXd& x, const AdamOptions& opts,
                              const IterationCallback& on_iteration)
{
    OptimizerResult result;
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
    double fx = 0.0;
    for (int t = 1; t <= opts.steps; ++t) {
        fx = f(x, g);
        ++result.evaluations;
        if (!std::isfinite(fx) || !g.allFinite()) throw NumericalError("objective became non-finite during Adam");
        m = opts.beta1 * m + (1.0 - opts.beta1) * g;
        v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(opts.beta1, t);
        const double c2 = 1.0 - std::pow(opts.beta2, t);
        x.array() -= opts.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opts.epsilon);
        result.iterations = t;
        if (on_iteration && !on_iteration(t, fx)) break;
    }
    result.value = f(x, g);
    ++result.evaluations;
    return result;
}

}  // namespace pinnsim
