#include "heatkern/convolution.hpp"
#include "heatkern/stable_law.hpp"

#include <catch2/catch.hpp>

#include <cmath>

using namespace heatkern;

namespace {

FlowMap make_flow(const Scenario& sc) {
    return FlowMap(sc, std::make_shared<const CoefficientField>(sc));
}

}  // namespace

TEST_CASE("graded time rule reproduces the Beta identity through the module options") {
    // int_s^t (r-s)^{p-1}(t-r)^{q-1} dr = B(p,q)(t-s)^{p+q-1}; p=q=1/2, t-s=1 -> pi
    Quadrature rule = graded_rule(24, 2.0, 3.0, -0.5, -0.5);
    double val = rule.apply(
        [](double r) { return std::pow(r - 2.0, -0.5) * std::pow(3.0 - r, -0.5); });
    CHECK(val == Approx(kPi).epsilon(1e-12));
    CHECK(beta_function(0.5, 0.5) == Approx(kPi).epsilon(1e-12));
    CHECK(beta_function(2.0, 3.0) == Approx(1.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("spacetime_convolve basics") {
    Scenario sc = Scenario::exact(1.0);
    auto fm = make_flow(sc);
    ProfileSpec p{sc.alpha, 0.0, sc.alpha};
    auto phi = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
        return phi_profile(fm, p, ss, xx, tt, yy);
    };
    SECTION("zero g gives zero") {
        auto zero = [](double, const Vec&, double, const Vec&) { return 0.0; };
        CHECK(spacetime_convolve(fm, phi, zero, 0.0, make_vec({0.3}), 1.0, make_vec({-0.5})) ==
              0.0);
    }
    SECTION("non-finite interior values are reported") {
        auto bad = [](double, const Vec&, double, const Vec&) {
            return std::numeric_limits<double>::quiet_NaN();
        };
        CHECK_THROWS_AS(
            spacetime_convolve(fm, phi, bad, 0.0, make_vec({0.0}), 1.0, make_vec({0.0})),
            numerical_error);
    }
    SECTION("phi (x) phi obeys the Beta-factor bound with an O(1) constant") {
        // exact-case oracle: b = 0 so phi(s,x,t,y) = rho(t-s, x-y); the bound
        // is C B(1,1) phi_{0, 2 alpha}(s,x,t,y)
        double s = 0.0, t = 0.8;
        Vec x = make_vec({0.2}), y = make_vec({1.0});
        double lhs = spacetime_convolve(fm, phi, phi, s, x, t, y);
        double rhs = beta_function(1.0, 1.0) *
                     phi_profile(fm, {sc.alpha, 0.0, 2.0 * sc.alpha}, s, x, t, y);
        CHECK(lhs / rhs > 0.1);
        CHECK(lhs / rhs < 10.0);
    }
}

TEST_CASE("Chapman-Kolmogorov of the exact stable density via spacetime machinery") {
    // int p(s,x,r,z) p(r,z,t,y) dz = p(s,x,t,y) for the exact stable kernel;
    // checks the two-center lattice resolves both density peaks
    Scenario sc = Scenario::exact(1.0);
    auto fm = make_flow(sc);
    auto tab = stable_table(1, 1.0);
    auto dens = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
        return tab->value(tt - ss, (yy - xx).norm());
    };
    double s = 0.0, r = 0.35, t = 1.0;
    Vec x = make_vec({0.0});
    for (double y0 : {0.0, 1.5, 6.0}) {
        Vec y = make_vec({y0});
        double conv = space_convolve(fm, dens, dens, s, x, r, t, y);
        double direct = dens(s, x, t, y);
        CHECK(conv == Approx(direct).epsilon(2e-3));
    }
}

TEST_CASE("convolution inequalities over random hypothesis-satisfying draws") {
    Scenario sc = Scenario::catalog(1.0);
    auto fm = make_flow(sc);
    ConvolveOptions opt;
    opt.time_nodes = 16;
    opt.core_points = 64;

    SECTION("exact-case baseline and catalog worst ratios are comparable") {
        Scenario se = Scenario::exact(1.0);
        auto fe = make_flow(se);
        auto draws_e = sample_convolution_draws(se, 40, 2024);
        auto base = convolution_inequality_check(fe, draws_e, opt);
        CHECK(base.worst_pointwise > 0.0);
        CHECK(std::isfinite(base.worst_pointwise));
        CHECK(std::isfinite(base.worst_tensor));

        auto draws_c = sample_convolution_draws(sc, 40, 2025);
        auto rep = convolution_inequality_check(fm, draws_c, opt);
        CHECK(std::isfinite(rep.worst_pointwise));
        CHECK(std::isfinite(rep.worst_tensor));
        CHECK(rep.worst_tensor <= 10.0 * base.worst_tensor);
        CHECK(rep.hypothesis_warnings == 0);
    }
    SECTION("hypothesis violations are flagged, not silently accepted") {
        ConvolutionDraw bad;
        bad.beta1 = sc.alpha;  // > alpha/4
        bad.beta2 = 0.0;
        bad.gamma1 = bad.gamma2 = 0.5;
        bad.s = 0.0;
        bad.t = 0.5;
        bad.r = 0.25;
        bad.x = make_vec({0.0});
        bad.y = make_vec({0.0});
        auto rep = convolution_inequality_check(fm, {bad}, opt);
        CHECK(rep.hypothesis_warnings == 1);
    }
    SECTION("time-reversal symmetry of the tensor product in the driftless case") {
        Scenario se = Scenario::exact(1.2);
        auto fe = make_flow(se);
        ProfileSpec pa{se.alpha, 0.1, 0.4}, pb{se.alpha, 0.2, 0.9};
        auto fpa = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(fe, pa, ss, xx, tt, yy);
        };
        auto fpb = [&](double ss, const Vec& xx, double tt, const Vec& yy) {
            return phi_profile(fe, pb, ss, xx, tt, yy);
        };
        Vec o = make_vec({0.0});
        ConvolveOptions oo = opt;
        oo.endpoint_exp_lo = (pa.beta + pa.gamma - se.alpha) / se.alpha;
        oo.endpoint_exp_hi = (pb.beta + pb.gamma - se.alpha) / se.alpha;
        double ab = spacetime_convolve(fe, fpa, fpb, 0.0, o, 0.7, o, oo);
        std::swap(oo.endpoint_exp_lo, oo.endpoint_exp_hi);
        double ba = spacetime_convolve(fe, fpb, fpa, 0.0, o, 0.7, o, oo);
        CHECK(ab == Approx(ba).epsilon(1e-6));
    }
}
