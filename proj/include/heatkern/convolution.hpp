#pragma once

#include "heatkern/profiles.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace heatkern {

// f(s,x,r,z): kernels on D_T fed to the space-time convolution
using SpaceTimeKernel =
    std::function<double(double, const Vec&, double, const Vec&)>;

struct ConvolveOptions {
    int time_nodes = 24;
    double endpoint_exp_lo = -0.5;  // integrand ~ (r-s)^{exp} near s
    double endpoint_exp_hi = -0.5;  // and (t-r)^{exp} near t
    int core_points = 96;           // per center, per axis
    double extent_scales = 12.0;    // core half-width in local scales
    double far_extent = 60.0;       // wings, in units of the global scale
};

// z-lattice resolving two moving centers: union of graded lattices
inline std::vector<double> two_center_axis(double c1, double scale1, double c2, double scale2,
                                           const ConvolveOptions& opt) {
    auto l1 = graded_lattice(c1, opt.extent_scales * scale1,
                             opt.far_extent * std::max(scale1, scale2) + std::abs(c1 - c2),
                             opt.core_points);
    auto l2 = graded_lattice(c2, opt.extent_scales * scale2,
                             opt.far_extent * std::max(scale1, scale2) + std::abs(c1 - c2),
                             opt.core_points);
    l1.insert(l1.end(), l2.begin(), l2.end());
    std::sort(l1.begin(), l1.end());
    l1.erase(std::unique(l1.begin(), l1.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-13; }),
             l1.end());
    return l1;
}

// (f o g)_r(s,x,t,y) = int f(s,x,r,z) g(r,z,t,y) dz over a two-center lattice
inline double space_convolve(const FlowMap& flow, const SpaceTimeKernel& f,
                             const SpaceTimeKernel& g, double s, const Vec& x, double r,
                             double t, const Vec& y, const ConvolveOptions& opt = {}) {
    const Scenario& sc = flow.scenario();
    const double inv_a = 1.0 / sc.alpha;
    Vec c1 = flow.solve(s, r, x);
    Vec c2 = flow.solve(t, r, y);
    double s1 = std::pow(std::max(r - s, 1e-12), inv_a);
    double s2 = std::pow(std::max(t - r, 1e-12), inv_a);
    if (sc.d == 1) {
        auto xs = two_center_axis(c1[0], s1, c2[0], s2, opt);
        auto w = trapezoid_weights(xs);
        double total = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            Vec z = make_vec({xs[i]});
            total += w[i] * f(s, x, r, z) * g(r, z, t, y);
        }
        return total;
    }
    if (sc.d == 2) {
        ConvolveOptions o2 = opt;
        o2.core_points = std::min(opt.core_points, 28);
        auto ax0 = two_center_axis(c1[0], s1, c2[0], s2, o2);
        auto ax1 = two_center_axis(c1[1], s1, c2[1], s2, o2);
        auto w0 = trapezoid_weights(ax0), w1 = trapezoid_weights(ax1);
        double total = 0.0;
        for (std::size_t i = 0; i < ax0.size(); ++i)
            for (std::size_t j = 0; j < ax1.size(); ++j) {
                Vec z = make_vec({ax0[i], ax1[j]});
                total += w0[i] * w1[j] * f(s, x, r, z) * g(r, z, t, y);
            }
        return total;
    }
    throw config_error("space_convolve: d > 2 not supported");
}

// (f (x) g)(s,x,t,y) = int_s^t (f o g)_r dr with endpoint-graded time nodes
inline double spacetime_convolve(const FlowMap& flow, const SpaceTimeKernel& f,
                                 const SpaceTimeKernel& g, double s, const Vec& x, double t,
                                 const Vec& y, const ConvolveOptions& opt = {}) {
    if (!(s < t)) throw config_error("spacetime_convolve: requires s < t");
    Quadrature rule =
        graded_rule(opt.time_nodes, s, t, opt.endpoint_exp_lo, opt.endpoint_exp_hi);
    double total = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        double v = space_convolve(flow, f, g, s, x, rule.nodes[i], t, y, opt);
        if (!std::isfinite(v))
            throw numerical_error("spacetime_convolve: non-finite interior value");
        total += rule.weights[i] * v;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Numerical verification of the two convolution inequalities for the phi
// profiles: the pointwise-in-r product bound and the Beta-function bound of
// the full space-time convolution.
// ---------------------------------------------------------------------------

struct ConvolutionCheckReport {
    double worst_pointwise = 0.0;  // LHS/RHS for the o-product bound
    double worst_tensor = 0.0;     // LHS/RHS for the (x)-product bound
    int draws = 0;
    int hypothesis_warnings = 0;  // draws violating beta <= alpha/4 etc.

    json to_json() const {
        return json{{"worst_pointwise", worst_pointwise},
                    {"worst_tensor", worst_tensor},
                    {"draws", draws},
                    {"hypothesis_warnings", hypothesis_warnings}};
    }
};

struct ConvolutionDraw {
    double beta1, gamma1, beta2, gamma2;
    double s, t, r;
    Vec x, y;
};

inline double beta_function(double a, double b) {
    return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

inline ConvolutionCheckReport convolution_inequality_check(
    const FlowMap& flow, const std::vector<ConvolutionDraw>& draws,
    const ConvolveOptions& opt = {}) {
    const Scenario& sc = flow.scenario();
    const double a = sc.alpha;
    ConvolutionCheckReport rep;
    rep.draws = static_cast<int>(draws.size());
    for (const auto& dr : draws) {
        if (dr.beta1 < 0.0 || dr.beta1 > a / 4.0 || dr.beta2 < 0.0 || dr.beta2 > a / 4.0 ||
            dr.gamma1 <= -dr.beta1 || dr.gamma2 <= -dr.beta2) {
            ++rep.hypothesis_warnings;
            continue;
        }
        ProfileSpec p1{a, dr.beta1, dr.gamma1}, p2{a, dr.beta2, dr.gamma2};
        ProfileSpec p1z{a, dr.beta1, 0.0}, p2z{a, dr.beta2, 0.0};
        auto f1 = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(flow, p1z, ss, xx, tt, yy);
        };
        auto f2 = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(flow, p2z, ss, xx, tt, yy);
        };
        // pointwise-in-r bound
        double lhs_r = space_convolve(flow, f1, f2, dr.s, dr.x, dr.r, dr.t, dr.y, opt);
        double rhs_r = (std::pow(dr.r - dr.s, (dr.beta1 - a) / a) +
                        std::pow(dr.t - dr.r, (dr.beta2 - a) / a)) *
                       phi_profile(flow, {a, std::min(dr.beta1, dr.beta2), 0.0}, dr.s, dr.x,
                                   dr.t, dr.y);
        rep.worst_pointwise = std::max(rep.worst_pointwise, lhs_r / rhs_r);

        // full space-time bound with the Beta factor
        auto g1 = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(flow, p1, ss, xx, tt, yy);
        };
        auto g2 = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(flow, p2, ss, xx, tt, yy);
        };
        ConvolveOptions o = opt;
        o.endpoint_exp_lo = (dr.beta1 + dr.gamma1 - a) / a;
        o.endpoint_exp_hi = (dr.beta2 + dr.gamma2 - a) / a;
        double lhs = spacetime_convolve(flow, g1, g2, dr.s, dr.x, dr.t, dr.y, o);
        double rhs = beta_function((dr.beta1 + dr.gamma1) / a, (dr.beta2 + dr.gamma2) / a) *
                     phi_profile(flow,
                                 {a, std::min(dr.beta1, dr.beta2),
                                  dr.beta1 + dr.beta2 + dr.gamma1 + dr.gamma2},
                                 dr.s, dr.x, dr.t, dr.y);
        rep.worst_tensor = std::max(rep.worst_tensor, lhs / rhs);
    }
    return rep;
}

// uniform random draws satisfying the inequality hypotheses
inline std::vector<ConvolutionDraw> sample_convolution_draws(const Scenario& sc, int count,
                                                             std::uint64_t seed) {
    Rng rng = rng_stream(seed, 3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<ConvolutionDraw> out;
    for (int k = 0; k < count; ++k) {
        ConvolutionDraw d;
        d.beta1 = unif(rng) * sc.alpha / 4.0;
        d.beta2 = unif(rng) * sc.alpha / 4.0;
        d.gamma1 = -d.beta1 + 0.05 + unif(rng);
        d.gamma2 = -d.beta2 + 0.05 + unif(rng);
        d.s = 0.2 * unif(rng);
        d.t = d.s + 0.1 + unif(rng) * std::min(1.0, sc.T - d.s - 0.1);
        // include endpoint-degenerate r draws
        double u = unif(rng);
        if (u < 0.2)
            d.r = d.s + 1e-3 * (d.t - d.s);
        else if (u < 0.4)
            d.r = d.t - 1e-3 * (d.t - d.s);
        else
            d.r = d.s + (0.05 + 0.9 * unif(rng)) * (d.t - d.s);
        double sc_len = std::pow(d.t - d.s, 1.0 / sc.alpha);
        d.x = make_vec({4.0 * (unif(rng) - 0.5)});
        d.y = make_vec({d.x[0] + sc_len * 8.0 * (unif(rng) - 0.5)});
        out.push_back(d);
    }
    return out;
}

}  // namespace heatkern
