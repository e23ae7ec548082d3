#pragma once

#include "heatkern/quadrature.hpp"

#include <cmath>
#include <functional>

namespace heatkern {

// ---------------------------------------------------------------------------
// Polar quadrature for second-difference singular integrals
//
//   I = int_{R^d} g(delta2_f(x;z)) w(z/|z|) |z|^{-d-alpha} dz,
//   delta2_f(x;z) = f(x+z) + f(x-z) - 2 f(x),
//
// with g = identity or absolute value. Radially: a Taylor zone [0, r_in)
// replaces delta2 by the Hessian quadratic form (the integrand is
// O(r^{2-alpha-1}) there), geometric Gauss-Legendre panels cover
// [r_in, r_out], and the -2 f(x) part of the tail beyond r_out is added in
// closed form. d = 1 or 2; the weight must be even in z.
// ---------------------------------------------------------------------------

struct SingularQuadConfig {
    double r_inner_frac = 0.05;
    double r_outer_frac = 200.0;
    double panel_ratio = 1.7;
    int panel_nodes = 8;
    int angular_nodes = 16;  // half-circle directions for d = 2
};

struct DeltaTwoIntegrand {
    // f(x + z) for z = r * dir, precomposed by the caller at base point x
    std::function<double(const Vec&)> f_shift;
    double f_center = 0.0;  // f(x)
    // u^T Hess f(x) u for a unit direction u
    std::function<double(const Vec&)> hess_form;
    // even 0-homogeneous weight w(u); empty means w == 1
    std::function<double(const Vec&)> weight;
    // kept for callers that know the far-field envelope of f; refines the tail
    double tail_envelope = 0.0;
};

class SingularIntegrator {
public:
    SingularIntegrator(int d, double alpha, SingularQuadConfig cfg = {})
        : d_(d), alpha_(alpha), cfg_(cfg) {
        if (d != 1 && d != 2)
            throw config_error("singular integrator: only d = 1, 2 supported");
    }

    // scale sets r_in, r_out; absolute selects the |delta2| variant
    double integrate(const DeltaTwoIntegrand& g, double scale, bool absolute) const {
        const double r_in = cfg_.r_inner_frac * scale;
        const double r_out = cfg_.r_outer_frac * scale;
        double total = 0.0;
        if (d_ == 1) {
            Vec e(1);
            e[0] = 1.0;
            total = 2.0 * ray_integral(g, e, r_in, r_out, absolute);
        } else {
            // uniform midpoint angles over the half circle (weight and delta2
            // are even), surface measure pi / n per direction
            const int n = cfg_.angular_nodes;
            for (int j = 0; j < n; ++j) {
                double th = kPi * (j + 0.5) / n;
                Vec e(2);
                e[0] = std::cos(th);
                e[1] = std::sin(th);
                total += 2.0 * (kPi / n) * ray_integral(g, e, r_in, r_out, absolute);
            }
        }
        return total;
    }

private:
    int d_;
    double alpha_;
    SingularQuadConfig cfg_;

    // int_0^inf q(delta2 along direction e at radius r) r^{-1-alpha} dr,
    // r^{d-1} surface factor already folded into the angular measure
    double ray_integral(const DeltaTwoIntegrand& g, const Vec& e, double r_in, double r_out,
                        bool absolute) const {
        double w = g.weight ? g.weight(e) : 1.0;
        if (w == 0.0) return 0.0;
        double total = 0.0;
        // Taylor zone: delta2 ~ r^2 (e^T H e)
        double q = g.hess_form(e);
        if (absolute) q = std::abs(q);
        total += q * std::pow(r_in, 2.0 - alpha_) / (2.0 - alpha_);
        // resolved panels
        auto integrand = [&](double r) {
            Vec z = r * e;
            double d2 = g.f_shift(z) + g.f_shift(Vec(-z)) - 2.0 * g.f_center;
            if (absolute) d2 = std::abs(d2);
            return d2 * std::pow(r, -1.0 - alpha_);
        };
        for (auto [a, b] : geometric_panels(r_in, r_out, cfg_.panel_ratio))
            total += gauss_legendre(cfg_.panel_nodes, a, b).apply(integrand);
        // tail: delta2 tends to a constant (-2 f(x) for decaying f, 0 for
        // affine f); extrapolate from its measured value at r_out, plus the
        // decaying f(x +- z) part via the optional envelope
        Vec z_out = r_out * e;
        double d2_out = g.f_shift(z_out) + g.f_shift(Vec(-z_out)) - 2.0 * g.f_center;
        if (absolute) d2_out = std::abs(d2_out);
        total += d2_out * std::pow(r_out, -alpha_) / alpha_;
        total += 2.0 * g.tail_envelope * std::pow(r_out, -d_ - 2.0 * alpha_) / (d_ + 2.0 * alpha_);
        return w * total;
    }
};

}  // namespace heatkern
