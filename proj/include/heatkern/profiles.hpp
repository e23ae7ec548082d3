#pragma once

#include "heatkern/flow.hpp"

#include <cmath>

namespace heatkern {

// Profile exponents (eta, beta, gamma). With the scenario's alpha and d,
//   rho^{(eta)}_{beta,gamma}(t,x) =
//       (1 ^ (t^{1/a}+|x|))^beta t^{gamma/a} / (t^{1/a}+|x|)^{d+eta},
// the common envelope of the frozen density and its derivatives.
struct ProfileSpec {
    double eta;
    double beta = 0.0;
    double gamma = 0.0;
};

// base profile rho^{(eta)}(t,x) = t^{-d/a} (1 + t^{-1/a}|x|)^{-d-eta}
inline double base_profile(double alpha, int d, double eta, double t, double r) {
    double sc = std::pow(t, 1.0 / alpha);
    return std::pow(t, -static_cast<double>(d) / alpha) *
           std::pow(1.0 + r / sc, -(d + eta));
}

inline double rho_profile(double alpha, int d, const ProfileSpec& p, double t, double r) {
    if (!(t > 0.0)) throw config_error("rho_profile: t must be positive");
    double s = std::pow(t, 1.0 / alpha) + r;
    return std::pow(std::min(1.0, s), p.beta) * std::pow(t, p.gamma / alpha) /
           std::pow(s, d + p.eta);
}

// phi^{(eta)}_{beta,gamma}(s,x,t,y) = rho^{(eta)}_{beta,gamma}(t-s, x - theta_{t,s}(y))
inline double phi_profile(const FlowMap& flow, const ProfileSpec& p, double s, const Vec& x,
                          double t, const Vec& y) {
    if (!(s < t)) throw config_error("phi_profile: requires s < t");
    const Scenario& sc = flow.scenario();
    double r = (x - flow.solve(t, s, y)).norm();
    return rho_profile(sc.alpha, sc.d, p, t - s, r);
}

// forward-centered variant rho(t-s, theta_{s,t}(x) - y), comparable to phi
inline double phi_profile_forward(const FlowMap& flow, const ProfileSpec& p, double s,
                                  const Vec& x, double t, const Vec& y) {
    if (!(s < t)) throw config_error("phi_profile: requires s < t");
    const Scenario& sc = flow.scenario();
    double r = (flow.solve(s, t, x) - y).norm();
    return rho_profile(sc.alpha, sc.d, p, t - s, r);
}

}  // namespace heatkern
