#pragma once

#include "heatkern/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace heatkern {

// ---------------------------------------------------------------------------
// Dense ODE trajectory: accepted Dormand-Prince steps with cubic Hermite
// interpolation in between. Time axis is stored ascending regardless of the
// integration direction.
// ---------------------------------------------------------------------------

class FlowPath {
public:
    struct Node {
        double t;
        Vec y;
        Vec f;
    };

    FlowPath() = default;
    explicit FlowPath(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

    double t_min() const { return nodes_.front().t; }
    double t_max() const { return nodes_.back().t; }

    Vec eval(double t) const {
        if (nodes_.size() == 1) return nodes_.front().y;
        if (t <= t_min()) return nodes_.front().y;
        if (t >= t_max()) return nodes_.back().y;
        std::size_t lo = 0, hi = nodes_.size() - 1;
        while (hi - lo > 1) {
            std::size_t mid = (lo + hi) / 2;
            (nodes_[mid].t <= t ? lo : hi) = mid;
        }
        const Node& a = nodes_[lo];
        const Node& b = nodes_[hi];
        double h = b.t - a.t;
        if (h <= 0.0) return a.y;
        double u = (t - a.t) / h;
        double h00 = (1.0 + 2.0 * u) * sqr(1.0 - u);
        double h10 = u * sqr(1.0 - u);
        double h01 = u * u * (3.0 - 2.0 * u);
        double h11 = u * u * (u - 1.0);
        return h00 * a.y + (h10 * h) * a.f + h01 * b.y + (h11 * h) * b.f;
    }

    const std::vector<Node>& nodes() const { return nodes_; }

private:
    std::vector<Node> nodes_;
};

namespace detail {

// Dormand-Prince 5(4) with PI-free basic step control.
template <class Rhs>
FlowPath dp45(const Rhs& rhs, double t0, double t1, Vec y0, double rtol, double atol,
              double first_step) {
    static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static const double a21 = 1.0 / 5;
    static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
    static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static const double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                        e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                        e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    const double dir = (t1 >= t0) ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    std::vector<FlowPath::Node> nodes;
    double t = t0;
    Vec y = y0;
    Vec f = rhs(t, y);
    nodes.push_back({t, y, f});
    if (span == 0.0) return FlowPath(std::move(nodes));

    double h = std::min(first_step, span);
    const double h_min = std::max(1e-14 * span, 1e-300);
    int rejected_in_row = 0;
    while (dir * (t1 - t) > 0.0) {
        h = std::min(h, std::abs(t1 - t));
        double hd = dir * h;
        Vec k1 = f;
        Vec k2 = rhs(t + c2 * hd, Vec(y + hd * (a21 * k1)));
        Vec k3 = rhs(t + c3 * hd, Vec(y + hd * (a31 * k1 + a32 * k2)));
        Vec k4 = rhs(t + c4 * hd, Vec(y + hd * (a41 * k1 + a42 * k2 + a43 * k3)));
        Vec k5 = rhs(t + c5 * hd, Vec(y + hd * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
        Vec k6 = rhs(t + hd, Vec(y + hd * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
        Vec y_new = y + hd * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        Vec k7 = rhs(t + hd, y_new);
        Vec err_v = hd * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double err = 0.0;
        for (int i = 0; i < y.size(); ++i) {
            double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
            err = std::max(err, std::abs(err_v[i]) / sc);
        }
        if (err <= 1.0) {
            t += hd;
            y = y_new;
            f = k7;
            nodes.push_back({t, y, f});
            rejected_in_row = 0;
            h *= std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 1.0, 5.0);
        } else {
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
            if (++rejected_in_row > 60 || h < h_min)
                throw numerical_error("flow integrator: step size underflow at t=" +
                                      std::to_string(t));
        }
    }
    if (dir < 0.0) std::reverse(nodes.begin(), nodes.end());
    return FlowPath(std::move(nodes));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Flow maps of the mollified drift.
//
//   theta^{(eps)}_{s,t}(x): fixed regularization ODE dy = b_eps(r,y) dr
//   theta_{s,t}(x):         self-scaled ODE dy = b_{|r-s|^{1/alpha}}(r,y) dr
//
// Backward times integrate the same ODE with the same |r-s|^{1/alpha} scale.
// Trajectories are cached by (anchor, span, x, mode) with 1e-12 rounding.
// ---------------------------------------------------------------------------

class FlowMap {
public:
    FlowMap(const Scenario& sc, std::shared_ptr<const CoefficientField> field)
        : sc_(sc), field_(std::move(field)) {}

    const Scenario& scenario() const { return sc_; }
    const CoefficientField& field() const { return *field_; }

    // trajectory of the self-scaled flow anchored at (anchor, x), covering
    // [min(anchor,t), max(anchor,t)]
    std::shared_ptr<const FlowPath> path(double anchor, const Vec& x, double t) const {
        if (field_->drift_is_zero()) {
            return std::make_shared<const FlowPath>(
                std::vector<FlowPath::Node>{{anchor, x, zero_vec(sc_.d)}});
        }
        CacheKey k{};
        k[0] = 1;
        k[1] = quantize(anchor);
        k[2] = quantize(t);
        for (int i = 0; i < x.size(); ++i) k[3 + i] = quantize(x[i]);
        return cache_.get(k, [&] { return solve_path(anchor, x, t, -1.0); });
    }

    std::shared_ptr<const FlowPath> path_regularized(double eps, double anchor, const Vec& x,
                                                     double t) const {
        if (field_->drift_is_zero()) {
            return std::make_shared<const FlowPath>(
                std::vector<FlowPath::Node>{{anchor, x, zero_vec(sc_.d)}});
        }
        CacheKey k{};
        k[0] = 2;
        k[1] = quantize(anchor);
        k[2] = quantize(t);
        k[3 + kMaxDim] = quantize(eps);
        for (int i = 0; i < x.size(); ++i) k[3 + i] = quantize(x[i]);
        return cache_.get(k, [&] { return solve_path(anchor, x, t, eps); });
    }

    // theta_{s,t}(x); t < s integrates backward
    Vec solve(double s, double t, const Vec& x) const {
        if (t == s) return x;
        return path(s, x, t)->eval(t);
    }

    // theta^{(eps)}_{s,t}(x)
    Vec solve_regularized(double eps, double s, double t, const Vec& x) const {
        if (eps <= 0.0) throw config_error("regularized flow: eps must be positive");
        if (t == s) return x;
        return path_regularized(eps, s, x, t)->eval(t);
    }

    // grad theta_{s,t}(x) by central differences, and det(grad theta^{-1}_{s,t})(x)
    // evaluated literally at the pulled-back point
    std::pair<Mat, double> jacobian(double s, double t, const Vec& x) const {
        Mat jac = fd_jacobian(s, t, x);
        Vec pullback = solve(t, s, x);
        double det_fwd = fd_jacobian(s, t, pullback).determinant();
        if (det_fwd == 0.0) throw numerical_error("flow jacobian: vanishing determinant");
        return {jac, 1.0 / det_fwd};
    }

    // |theta_{s,t}(x) - theta_{r,t}(theta_{s,r}(x))|
    double approximate_flow_defect(double s, double r, double t, const Vec& x) const {
        Vec direct = solve(s, t, x);
        Vec chained = solve(r, t, solve(s, r, x));
        return (direct - chained).norm();
    }

    // ((t-s)^{1/a} + |theta_{s,t}(x) - y|) / ((t-s)^{1/a} + |x - theta_{t,s}(y)|)
    double comparability_ratio(double s, double t, const Vec& x, const Vec& y) const {
        if (!(s < t)) throw config_error("comparability_ratio: requires s < t");
        double scale = std::pow(t - s, 1.0 / sc_.alpha);
        double num = scale + (solve(s, t, x) - y).norm();
        double den = scale + (x - solve(t, s, y)).norm();
        return num / den;
    }

    void clear_cache() const { cache_.clear(); }

private:
    Scenario sc_;
    std::shared_ptr<const CoefficientField> field_;
    mutable KeyedCache<std::shared_ptr<const FlowPath>> cache_;

    // eps < 0 selects the self-scaled mollification |r - anchor|^{1/alpha}
    std::shared_ptr<const FlowPath> solve_path(double anchor, const Vec& x, double t,
                                               double eps) const {
        const double inv_alpha = 1.0 / sc_.alpha;
        auto rhs = [&](double r, const Vec& y) -> Vec {
            double e = (eps < 0.0) ? std::pow(std::abs(r - anchor), inv_alpha) : eps;
            return field_->drift_mollified(r, y, e);
        };
        double span = std::abs(t - anchor);
        double first = std::min(1e-6, span * 1e-3);
        return std::make_shared<const FlowPath>(
            detail::dp45(rhs, anchor, t, x, 1e-9, 1e-12, first));
    }

    Mat fd_jacobian(double s, double t, const Vec& x) const {
        const int d = sc_.d;
        Mat jac(d, d);
        for (int j = 0; j < d; ++j) {
            double h = 1e-5 * (1.0 + std::abs(x[j]));
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            Vec col = (solve(s, t, xp) - solve(s, t, xm)) / (2.0 * h);
            for (int i = 0; i < d; ++i) jac(i, j) = col[i];
        }
        return jac;
    }
};

}  // namespace heatkern
