#include "heatkern/parametrix.hpp"

#include <catch2/catch.hpp>

#include <cmath>

using namespace heatkern;

namespace {

ParametrixKernel make_kernel(const Scenario& sc) {
    auto field = std::make_shared<const CoefficientField>(sc);
    auto flow = std::make_shared<const FlowMap>(sc, field);
    return ParametrixKernel(sc, flow);
}

double cauchy(double t, double u) { return t / (kPi * (t * t + u * u)); }

}  // namespace

TEST_CASE("proxy density: exact case and profile bound") {
    SECTION("zero drift, identity dispersion reduces to the stable law") {
        Scenario sc = Scenario::exact(1.0);
        auto pk = make_kernel(sc);
        CHECK(pk.proxy_density(0.0, make_vec({0.3}), 1.0, make_vec({0.3})) ==
              Approx(1.0 / kPi).margin(1e-5));
        CHECK(pk.proxy_density(0.0, make_vec({0.0}), 0.5, make_vec({2.0})) ==
              Approx(cauchy(0.5, 2.0)).margin(1e-6));
    }
    SECTION("mass of the proxy over the terminal point is near one") {
        Scenario sc = Scenario::catalog(1.0);
        auto pk = make_kernel(sc);
        // near-probability over a short span; the backward-flow Jacobian factor
        // e^{(t-s) div b} drives h away from 1 as the span grows
        double h = pk.mass_function(0.0, 0.15, make_vec({0.8}));
        CHECK(h > 0.9);
        CHECK(h < 1.1);
        double h5 = pk.mass_function(0.0, 0.5, make_vec({0.8}));
        CHECK(std::isfinite(h5));
        CHECK(h5 < 1.5);
    }
    SECTION("p0 versus the phi profile on a grid: two-sided fitted constant") {
        Scenario sc = Scenario::catalog(0.9);
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double sup = 0.0, inf = 1e300;
        double t = 0.5, scl = std::pow(t, 1.0 / sc.alpha);
        Vec y = make_vec({0.4});
        Vec c = flow->solve(t, 0.0, y);
        for (double u = -8.0; u <= 8.0; u += 0.5) {
            Vec x = make_vec({c[0] + u * scl});
            double ratio = pk.proxy_density(0.0, x, t, y) /
                           phi_profile(*flow, {sc.alpha, 0.0, sc.alpha}, 0.0, x, t, y);
            sup = std::max(sup, ratio);
            inf = std::min(inf, ratio);
        }
        CHECK(sup < 20.0);
        CHECK(inf > 0.05);
    }
}

TEST_CASE("frozen-coefficient operators K and B") {
    SECTION("space-constant dispersion kills K") {
        Scenario sc = Scenario::linear_drift(1.0);
        auto pk = make_kernel(sc);
        CHECK(pk.operator_K(0.1, make_vec({1.2}), 0.8, make_vec({-0.5})) == 0.0);
    }
    SECTION("constant and linear drifts kill B at the right points") {
        Scenario sc = Scenario::exact(1.0);
        sc.drift = {"constant", {0.8}};
        auto pk = make_kernel(sc);
        CHECK(pk.operator_B(0.0, make_vec({0.7}), 0.6, make_vec({0.0})) == Approx(0.0).margin(1e-14));

        Scenario sl = Scenario::linear_drift(1.0);
        auto pkl = make_kernel(sl);
        auto field = std::make_shared<const CoefficientField>(sl);
        FlowMap fl(sl, field);
        Vec y = make_vec({0.9});
        Vec xc = fl.solve(0.6, 0.0, y);  // x = theta_{t,s}(y): difference vanishes
        CHECK(pkl.operator_B(0.0, xc, 0.6, y) == Approx(0.0).margin(1e-9));
    }
    SECTION("catalog dispersion: K obeys the phi_{gamma,0} envelope") {
        Scenario sc = Scenario::catalog(1.0);
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double t = 0.5;
        Vec y = make_vec({0.3});
        Vec c = flow->solve(t, 0.0, y);
        double sup = 0.0;
        double center_val = std::abs(pk.operator_K(0.0, c, t, y));
        double off_max = 0.0;
        for (double u = -6.0; u <= 6.0; u += 0.5) {
            Vec x = make_vec({c[0] + u * std::pow(t, 1.0 / sc.alpha)});
            double K = std::abs(pk.operator_K(0.0, x, t, y));
            off_max = std::max(off_max, K);
            sup = std::max(
                sup, K / phi_profile(*flow, {sc.alpha, sc.gamma, 0.0}, 0.0, x, t, y));
        }
        CHECK(std::isfinite(sup));
        CHECK(sup < 50.0);
        // kappa difference vanishes at the recentering point
        CHECK(center_val < 0.2 * off_max);
    }
    SECTION("catalog drift: B obeys the phi_{0,alpha+beta-1} envelope") {
        Scenario sc = Scenario::catalog(1.0);
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double t = 0.5;
        Vec y = make_vec({0.3});
        Vec c = flow->solve(t, 0.0, y);
        double sup = 0.0;
        for (double u = -6.0; u <= 6.0; u += 0.5) {
            Vec x = make_vec({c[0] + u * std::pow(t, 1.0 / sc.alpha)});
            double B = std::abs(pk.operator_B(0.0, x, t, y));
            sup = std::max(sup, B / phi_profile(*flow, {sc.alpha, 0.0, sc.alpha + sc.beta - 1.0},
                                                0.0, x, t, y));
        }
        CHECK(std::isfinite(sup));
        CHECK(sup < 50.0);
    }
}

TEST_CASE("q series") {
    SECTION("vanishing perturbation: all terms zero") {
        Scenario sc = Scenario::exact(1.2);
        auto pk = make_kernel(sc);
        auto [qsum, terms] = pk.q_series(0.0, make_vec({0.4}), 0.7, make_vec({-0.2}));
        CHECK(qsum == 0.0);
        for (double v : terms) CHECK(v == 0.0);

        Scenario sv = Scenario::exact(1.2);
        sv.drift = {"constant", {1.3}};
        sv.kappa0 = 1.3;
        auto pkv = make_kernel(sv);
        CHECK(pkv.q0(0.0, make_vec({0.4}), 0.7, make_vec({-0.2})) == Approx(0.0).margin(1e-14));
    }
    SECTION("catalog: q0 envelope and super-geometric term decay") {
        Scenario sc = Scenario::catalog(1.0);
        sc.parametrix.N = 2;
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double t = 0.5;
        Vec y = make_vec({0.2});
        Vec c = flow->solve(t, 0.0, y);
        double g0 = sc.gamma0();
        double sup = 0.0;
        for (double u : {-4.0, -1.0, 0.5, 2.0, 5.0}) {
            Vec x = make_vec({c[0] + u * std::pow(t, 1.0 / sc.alpha)});
            double env =
                phi_profile(*flow, {sc.alpha, g0, 0.0}, 0.0, x, t, y) +
                phi_profile(*flow, {sc.alpha, 0.0, g0}, 0.0, x, t, y);
            sup = std::max(sup, std::abs(pk.q0(0.0, x, t, y)) / env);
        }
        CHECK(std::isfinite(sup));
        CHECK(sup < 50.0);

        // |q1| <= C B(g0/a, g0/a) (phi_{g0,g0} + phi_{0,2 g0}) and decay of terms
        Vec xb = make_vec({c[0] + 0.8});
        auto [qsum, terms] = pk.q_series(0.0, xb, t, y);
        (void)qsum;
        REQUIRE(terms.size() == 3);
        double q1env = beta_function(g0 / sc.alpha, g0 / sc.alpha) *
                       (phi_profile(*flow, {sc.alpha, g0, g0}, 0.0, xb, t, y) +
                        phi_profile(*flow, {sc.alpha, 0.0, 2.0 * g0}, 0.0, xb, t, y));
        CHECK(std::abs(terms[1]) / q1env < 50.0);
        // super-geometric decay of the ratios at a bulk point
        double r1 = std::abs(terms[1]) / std::abs(terms[0]);
        double r2 = std::abs(terms[2]) / std::abs(terms[1]);
        CHECK(r1 < 1.0);
        CHECK(r2 < r1 * 1.25);
    }
}

TEST_CASE("truncated density") {
    SECTION("exact case equals the stable density for every N") {
        Scenario sc = Scenario::exact(1.0);
        sc.parametrix.N = 2;
        auto pk = make_kernel(sc);
        auto tab = stable_table(1, 1.0);
        for (double u : {0.0, 0.8, 2.5}) {
            auto ev = pk.truncated_density(0.0, make_vec({u}), 1.0, make_vec({0.0}));
            CHECK(ev.value == Approx(cauchy(1.0, u)).margin(2e-6));
            for (double tv : ev.terms) CHECK(tv == 0.0);
            CHECK(ev.error_estimate == 0.0);
        }
        (void)tab;
    }
    SECTION("catalog: self-convergence of the truncation and positivity") {
        Vec y = make_vec({0.2});
        double t = 0.5;
        std::vector<double> vals_by_N;
        for (int N : {1, 2}) {
            Scenario sc = Scenario::catalog(1.0);
            sc.parametrix.N = N;
            auto pk = make_kernel(sc);
            auto field = std::make_shared<const CoefficientField>(sc);
            FlowMap fl(sc, field);
            Vec c = fl.solve(t, 0.0, y);
            Vec xb = make_vec({c[0] + 0.5});
            auto ev = pk.truncated_density(0.0, xb, t, y);
            CHECK(ev.value > 0.0);
            vals_by_N.push_back(ev.value);
        }
        CHECK(std::abs(vals_by_N[1] - vals_by_N[0]) / vals_by_N[0] < 0.05);
    }
    SECTION("positivity across the evaluation grid") {
        Scenario sc = Scenario::catalog(1.2);
        sc.parametrix.N = 2;
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double t = 0.4;
        Vec y = make_vec({-0.3});
        Vec c = flow->solve(t, 0.0, y);
        for (double u = -8.0; u <= 8.0; u += 1.0) {
            Vec x = make_vec({c[0] + u * std::pow(t, 1.0 / sc.alpha)});
            CHECK(pk.truncated_density(0.0, x, t, y).value > 0.0);
        }
    }
}

TEST_CASE("density gradient") {
    SECTION("exact Cauchy gradient and vanishing at the mode") {
        Scenario sc = Scenario::exact(1.0);
        auto pk = make_kernel(sc);
        Vec y = make_vec({0.0});
        CHECK(pk.density_gradient(0.0, make_vec({0.0}), 1.0, y)[0] == Approx(0.0).margin(1e-9));
        double g = pk.density_gradient(0.0, make_vec({1.0}), 1.0, y)[0];
        CHECK(g == Approx(-1.0 / (2.0 * kPi)).epsilon(1e-4));
    }
    SECTION("analytic and finite-difference gradients agree within 5%") {
        Scenario sc = Scenario::catalog(1.0);
        sc.parametrix.N = 1;
        auto field = std::make_shared<const CoefficientField>(sc);
        auto flow = std::make_shared<const FlowMap>(sc, field);
        ParametrixKernel pk(sc, flow);
        double t = 0.5;
        Vec y = make_vec({0.2});
        Vec c = flow->solve(t, 0.0, y);
        for (double u : {0.6, 2.0}) {
            Vec x = make_vec({c[0] + u});
            double ga = pk.density_gradient(0.0, x, t, y)[0];
            // FD step large enough that lattice-adaptation noise stays small
            double h = 0.02;
            double fd = (pk.truncated_density(0.0, make_vec({x[0] + h}), t, y).value -
                         pk.truncated_density(0.0, make_vec({x[0] - h}), t, y).value) /
                        (2.0 * h);
            CHECK(ga == Approx(fd).epsilon(0.05));
        }
    }
    SECTION("scaled log-gradient stays bounded (exact case ceiling is one)") {
        Scenario sc = Scenario::exact(1.0);
        auto pk = make_kernel(sc);
        double worst = 0.0;
        for (double u = -4.0; u <= 4.0; u += 0.5) {
            auto ev = pk.truncated_density(0.0, make_vec({u}), 1.0, make_vec({0.0}));
            double g = pk.density_gradient(0.0, make_vec({u}), 1.0, make_vec({0.0})).norm();
            worst = std::max(worst, g / ev.value);
        }
        CHECK(worst <= 1.0 + 1e-3);  // sup 2|x|/(1+x^2) = 1 at t = 1
    }
}

TEST_CASE("fractional derivative") {
    Scenario sc = Scenario::exact(1.0);
    auto pk = make_kernel(sc);
    SECTION("linear functions have zero second difference") {
        auto lin = [](const Vec& x) { return 3.0 * x[0] + 1.0; };
        CHECK(pk.fractional_derivative(lin, make_vec({0.7}), 1.0) == Approx(0.0).margin(1e-10));
    }
    SECTION("exact Cauchy matches a refined adaptive oracle within 1%") {
        auto tab = stable_table(1, 1.0);
        auto f = [&](const Vec& x) { return tab->value(1.0, x[0]); };
        Vec x0 = make_vec({0.0});
        // independent oracle: adaptive panels of |delta2| with generous range
        auto d2 = [&](double r) {
            return std::abs(f(make_vec({r})) + f(make_vec({-r})) - 2.0 * f(x0)) *
                   std::pow(r, -2.0);
        };
        double oracle = 0.0;
        for (auto [a, b] : geometric_panels(1e-7, 4000.0, 1.15))
            oracle += adaptive_gl(d2, a, b, 1e-10);
        oracle *= 2.0;                     // both rays
        oracle += 2.0 * f(x0) * 1e-7;      // [0, r0) Taylor zone: |d2| ~ r^2 |f''|
        double got = pk.fractional_derivative(f, x0, 1.0);
        CHECK(got == Approx(oracle).epsilon(0.01));
    }
    SECTION("|D^alpha p0| obeys the phi_{0,0} envelope on a grid") {
        Scenario sg = Scenario::catalog(1.1);
        auto field = std::make_shared<const CoefficientField>(sg);
        auto flow = std::make_shared<const FlowMap>(sg, field);
        ParametrixKernel pkc(sg, flow);
        double t = 0.5;
        Vec y = make_vec({0.1});
        Vec c = flow->solve(t, 0.0, y);
        double sup = 0.0;
        for (double u : {-3.0, 0.0, 1.5, 4.0}) {
            Vec x = make_vec({c[0] + u * std::pow(t, 1.0 / sg.alpha)});
            auto f = [&](const Vec& xx) { return pkc.proxy_density(0.0, xx, t, y); };
            double da = pkc.fractional_derivative(f, x, std::pow(t, 1.0 / sg.alpha));
            sup = std::max(
                sup, da / phi_profile(*flow, {sg.alpha, 0.0, 0.0}, 0.0, x, t, y));
        }
        CHECK(std::isfinite(sup));
        CHECK(sup < 50.0);
    }
}

TEST_CASE("mass function and its fractional derivative") {
    SECTION("exact case: h = 1 and D^alpha h = 0") {
        Scenario sc = Scenario::exact(1.3);
        auto pk = make_kernel(sc);
        CHECK(pk.mass_function(0.0, 0.6, make_vec({0.4})) == Approx(1.0).margin(1e-3));
        CHECK(pk.mass_function_dalpha(0.0, 0.6, make_vec({0.4})) == Approx(0.0).margin(1e-2));
    }
    SECTION("catalog: dyadic boundedness of the scaled fractional derivative") {
        Scenario sc = Scenario::catalog(1.0);
        auto pk = make_kernel(sc);
        double g0 = sc.gamma0();
        double worst = 0.0;
        for (double dt : {0.4, 0.2, 0.1}) {
            double v = pk.mass_function_dalpha(0.0, dt, make_vec({0.7}));
            worst = std::max(worst, v * std::pow(dt, 1.0 - g0 / sc.alpha));
        }
        CHECK(std::isfinite(worst));
        CHECK(worst < 10.0);
    }
}

TEST_CASE("Chapman-Kolmogorov and Kolmogorov residuals") {
    SECTION("exact semigroup: CK residual is quadrature-level") {
        Scenario sc = Scenario::exact(1.0);
        sc.parametrix.N = 2;
        auto pk = make_kernel(sc);
        double res = pk.chapman_kolmogorov_residual(0.0, 0.4, 1.0, make_vec({0.0}),
                                                    make_vec({1.0}));
        CHECK(res < 1e-3);
    }
    SECTION("catalog: CK residual small and decreasing in N") {
        double t = 0.5;
        Vec x = make_vec({0.3}), y = make_vec({0.9});
        Scenario sc = Scenario::catalog(1.0);
        sc.parametrix.N = 2;
        sc.parametrix.time_nodes = 10;
        sc.parametrix.coarse_time_nodes = 5;
        sc.parametrix.coarse_space_nodes = 16;
        auto pk = make_kernel(sc);
        double res = pk.chapman_kolmogorov_residual(0.0, 0.22, t, x, y);
        CHECK(res < 2e-2);
    }
    SECTION("exact case Kolmogorov residual validates the generator") {
        Scenario sc = Scenario::exact(1.0);
        sc.parametrix.N = 1;
        auto pk = make_kernel(sc);
        CHECK(pk.kolmogorov_residual(0.2, make_vec({0.5}), 1.0, make_vec({0.0})) < 0.01);
    }
    SECTION("frozen proxy solves its own backward equation") {
        Scenario sc = Scenario::catalog(1.0);
        auto pk = make_kernel(sc);
        double res = pk.frozen_equation_residual(0.7, make_vec({0.4}), 0.2, make_vec({0.8}),
                                                 0.7, make_vec({0.4}));
        CHECK(res < 0.01);
    }
}

TEST_CASE("d = 2 parametrix: exact case and a small anisotropy run") {
    SECTION("trivial perturbation reduces to the isotropic stable law") {
        Scenario sc = Scenario::exact(1.0, 2);
        sc.parametrix.N = 1;
        auto pk = make_kernel(sc);
        auto tab = stable_table(2, 1.0);
        Vec y = make_vec({0.2, -0.1});
        for (double r : {0.0, 0.9}) {
            Vec x = make_vec({0.2 + r, -0.1});
            auto ev = pk.truncated_density(0.0, x, 0.7, y);
            CHECK(ev.value == Approx(tab->value(0.7, r)).epsilon(2e-5));
            CHECK(ev.terms[0] == 0.0);
        }
    }
    SECTION("expsin dispersion in d = 2: positive density, small correction") {
        Scenario sc = Scenario::exact(1.0, 2);
        sc.dispersion = {"expsin_scalar", {0.2, 1.0}};
        sc.kappa1 = 2.0;
        sc.gamma = 1.0;
        sc.parametrix.N = 1;
        sc.parametrix.time_nodes = 8;
        sc.parametrix.coarse_time_nodes = 4;
        sc.parametrix.coarse_space_nodes = 16;
        sc.parametrix.lattice_core = 5;
        auto pk = make_kernel(sc);
        Vec y = make_vec({0.3, 0.0});
        Vec x = make_vec({0.8, 0.4});
        auto ev = pk.truncated_density(0.0, x, 0.5, y);
        CHECK(ev.value > 0.0);
        CHECK(std::abs(ev.terms[0]) < 0.5 * ev.p0);
    }
}
