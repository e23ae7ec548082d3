#include "heatkern/verify.hpp"

#include <catch2/catch.hpp>

#include <cmath>

using namespace heatkern;

namespace {

struct Setup {
    std::shared_ptr<const CoefficientField> field;
    std::shared_ptr<const FlowMap> flow;
    std::unique_ptr<ParametrixKernel> pk;
};

Setup make_setup(const Scenario& sc) {
    Setup s;
    s.field = std::make_shared<const CoefficientField>(sc);
    s.flow = std::make_shared<const FlowMap>(sc, s.field);
    s.pk = std::make_unique<ParametrixKernel>(sc, s.flow);
    return s;
}

double cauchy(double t, double u) { return t / (kPi * (t * t + u * u)); }

}  // namespace

TEST_CASE("two-sided verification: exact case against the 1-d scan oracle") {
    Scenario sc = Scenario::exact(1.0);
    auto st = make_setup(sc);
    VerifyGrid grid;
    grid.spans = {1.0};
    grid.offsets = {-8.0, -5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0, 8.0};
    auto rep = verify_two_sided(*st.pk, *st.flow, grid);
    // oracle: ratio(u) = cauchy(1,u) (1+u)^2; the scan over the same offsets
    double sup = 0.0, inf = 1e300;
    for (double u : grid.offsets) {
        double r = cauchy(1.0, u) * sqr(1.0 + std::abs(u));
        sup = std::max(sup, r);
        inf = std::min(inf, r);
    }
    double oracle = std::max(sup, 1.0 / inf);
    CHECK(rep.fitted == Approx(oracle).epsilon(1e-3));
    CHECK(rep.pass);
    // full-line scan: the fitted constant tends to pi (sup 2/pi at u=1, inf 1/pi)
    CHECK(oracle == Approx(kPi).epsilon(1e-6));
}

TEST_CASE("gradient verification: exact case has C3 = 1") {
    Scenario sc = Scenario::exact(1.0);
    auto st = make_setup(sc);
    VerifyGrid grid;
    grid.spans = {1.0};
    grid.offsets = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    auto rep = verify_gradient(*st.pk, *st.flow, grid);
    // |d log p| = 2|x|/(1+x^2) maximized at |x| = 1 with value 1
    CHECK(rep.fitted == Approx(1.0).epsilon(1e-3));
    CHECK(rep.pass);
}

TEST_CASE("fractional verification: exact case scaling exponent") {
    Scenario sc = Scenario::exact(1.0);
    auto st = make_setup(sc);
    // diagonal scaling of D^alpha p across dyadic spans: the scaling property
    // p_t(x) = t^{-d/a} p_1(t^{-1/a} x) forces the exponent -(d+alpha)/alpha
    std::vector<double> spans{0.4, 0.2, 0.1}, vals;
    for (double t : spans)
        vals.push_back(st.pk->fractional_derivative_pN(0.0, make_vec({0.0}), t, make_vec({0.0})));
    double slope = std::log(vals[2] / vals[0]) / std::log(spans[2] / spans[0]);
    CHECK(slope == Approx(-(sc.d + sc.alpha) / sc.alpha).margin(0.1));

    VerifyGrid grid;
    grid.spans = {0.5};
    grid.offsets = {-4.0, -1.0, 0.0, 1.0, 4.0};
    auto rep = verify_fractional(*st.pk, *st.flow, grid);
    CHECK(rep.pass);
    CHECK(std::isfinite(rep.fitted));
}

TEST_CASE("unbounded drift: flow recentering is necessary") {
    Scenario sc = Scenario::linear_drift(1.0);
    auto st = make_setup(sc);
    VerifyGrid grid;
    grid.spans = {0.5};
    grid.y_list = {0.0, 5.0 * std::exp(0.5)};  // second one puts x near 5
    grid.offsets = {-2.0, -1.0, 0.0, 1.0, 2.0};
    auto rep = verify_two_sided(*st.pk, *st.flow, grid);
    CHECK(rep.pass);
    CHECK(rep.fitted <= sc.ceilings.c1);
    // the naive x-centered constant blows up against the flow-centered one
    CHECK(rep.fitted_naive > 3.0 * rep.fitted);
}

TEST_CASE("class stability: same Theta-class coefficients give comparable constants") {
    Scenario a = Scenario::catalog(1.0);
    Scenario b = Scenario::catalog(1.0);
    b.drift.params = {1.0, 0.8, 1.0, 0.2};  // different amplitude/phase, same class
    VerifyGrid grid;
    grid.spans = {0.5};
    grid.offsets = {-4.0, -1.0, 0.0, 1.0, 4.0};
    auto sa = make_setup(a);
    auto sb = make_setup(b);
    auto ra = verify_two_sided(*sa.pk, *sa.flow, grid);
    auto rb = verify_two_sided(*sb.pk, *sb.flow, grid);
    CHECK(ra.fitted / rb.fitted < 2.0);
    CHECK(rb.fitted / ra.fitted < 2.0);
}

TEST_CASE("weak delta initial condition via test functions") {
    Scenario sc = Scenario::exact(1.2);
    auto st = make_setup(sc);
    auto defects =
        delta_initial_condition_defects(*st.pk, *st.flow, 1.0, make_vec({0.3}), {0.2, 0.05});
    CHECK(defects.back() < defects.front() + 1e-6);
    CHECK(defects.back() < 0.05);
}

TEST_CASE("all three reports pass together on a catalog scenario") {
    Scenario sc = Scenario::catalog(1.0);
    auto st = make_setup(sc);
    VerifyGrid grid;
    grid.spans = {0.5};
    grid.y_list = {0.3};
    grid.offsets = {-5.0, -2.0, -0.5, 0.0, 0.5, 2.0, 5.0};
    auto r1 = verify_two_sided(*st.pk, *st.flow, grid);
    auto r2 = verify_fractional(*st.pk, *st.flow, grid);
    auto r3 = verify_gradient(*st.pk, *st.flow, grid);
    CHECK(r1.pass);
    CHECK(r2.pass);
    CHECK(r3.pass);
}
