#pragma once

#include "heatkern/common.hpp"
#include "heatkern/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace heatkern {

// Normalization used throughout: E exp(i xi . L_t) = exp(-t |xi|^alpha).
// The Levy measure is then C(d,alpha) |z|^{-d-alpha} dz with the classical
// fractional-Laplacian constant below, and L_t = W_{2 S_t} for an alpha/2
// subordinator S with E exp(-lambda S_t) = exp(-t lambda^{alpha/2}); the
// factor 2 makes (|xi|^2 / 2 * 2)^{alpha/2} = |xi|^alpha come out exactly.
inline double levy_constant(int d, double alpha) {
    // C_{d,a} = 4^{a/2} Gamma((d+a)/2) / (pi^{d/2} |Gamma(-a/2)|),
    // |Gamma(-a/2)| = Gamma(1-a/2)/(a/2) for a in (0,2).
    double rho = 0.5 * alpha;
    return std::pow(4.0, rho) * std::tgamma(0.5 * (d + alpha)) * rho /
           (std::pow(kPi, 0.5 * d) * std::tgamma(1.0 - rho));
}

// ---------------------------------------------------------------------------
// One-sided stable subordinator, E exp(-lambda S_t) = exp(-t lambda^rho).
// ---------------------------------------------------------------------------

struct SubordinatorLaw {
    double rho;  // in (0,1)

    explicit SubordinatorLaw(double rho_) : rho(rho_) {
        if (!(rho > 0.0 && rho < 1.0)) throw config_error("subordinator: rho must be in (0,1)");
    }

    // log of Zolotarev's auxiliary function
    // A(phi) = sin(rho phi)^{rho/(1-rho)} sin((1-rho)phi) / sin(phi)^{1/(1-rho)}.
    double log_A(double phi) const {
        return rho / (1.0 - rho) * std::log(std::sin(rho * phi)) +
               std::log(std::sin((1.0 - rho) * phi)) -
               std::log(std::sin(phi)) / (1.0 - rho);
    }

    // Kanter's representation: S_1 = (A(pi U) / E)^{(1-rho)/rho}.
    double sample(double dt, Rng& rng) const {
        std::uniform_real_distribution<double> unif(1e-16, 1.0 - 1e-16);
        double u = unif(rng);
        double e = -std::log(unif(rng));
        double s1 = std::exp((1.0 - rho) / rho * (log_A(kPi * u) - std::log(e)));
        return std::pow(dt, 1.0 / rho) * s1;
    }

    // Density of S_1 by the Zolotarev single-integral representation,
    //  f(v) = rho/(1-rho) / pi * v^{-1/(1-rho)} int_0^pi A(phi) exp(-A(phi) c) dphi,
    // c = v^{-rho/(1-rho)}; integrand evaluated in log form to survive the
    // blow-up of A at phi -> pi.
    double density_t1(double v) const {
        if (v <= 0.0) return 0.0;
        const double c = std::pow(v, -rho / (1.0 - rho));
        const double log_c = std::log(c);
        auto integrand = [&](double phi) {
            if (phi <= 0.0 || phi >= kPi) return 0.0;
            double la = log_A(phi);
            double e = la - std::exp(la + log_c);  // A - A*c in log-safe form
            return (e < -700.0 || !std::isfinite(e)) ? 0.0 : std::exp(e);
        };
        double I = adaptive_gl(integrand, 0.0, kPi, 1e-11, 1e-300);
        return rho / (1.0 - rho) / kPi * std::pow(v, -1.0 / (1.0 - rho)) * I;
    }

    double density(double t, double v) const {
        double sc = std::pow(t, -1.0 / rho);
        return sc * density_t1(sc * v);
    }

    // Convergent large-v series: f(v) = 1/pi sum (-1)^{k+1} G(k rho + 1)/k!
    // sin(k pi rho) v^{-k rho - 1}; leading term rho/Gamma(1-rho) v^{-rho-1}.
    double density_t1_tail_series(double v, int max_terms = 64) const {
        double sum = 0.0, prev = 1e300;
        for (int k = 1; k <= max_terms; ++k) {
            double s = std::sin(k * kPi * rho);
            if (std::abs(s) < 1e-14) continue;  // vanishing term (k rho integer)
            double lt = std::lgamma(k * rho + 1.0) - std::lgamma(k + 1.0) -
                        (k * rho + 1.0) * std::log(v);
            double term = std::exp(lt) * s / kPi;
            if (k % 2 == 0) term = -term;
            if (std::abs(term) > prev) break;  // asymptotic guard (not hit for rho<1/2)
            sum += term;
            prev = std::abs(term);
            if (std::abs(term) < 1e-17 * std::abs(sum) + 1e-300) break;
        }
        return sum;
    }
};

// ---------------------------------------------------------------------------
// Rotationally invariant alpha-stable law, char. function exp(-t |xi|^alpha).
// ---------------------------------------------------------------------------

struct StableLaw {
    int d;
    double alpha;

    StableLaw(int d_, double alpha_) : d(d_), alpha(alpha_) {
        if (d < 1 || d > kMaxDim) throw config_error("stable law: unsupported dimension");
        if (!(alpha > 0.0 && alpha < 2.0)) throw config_error("stable law: alpha must be in (0,2)");
    }

    double levy_const() const { return levy_constant(d, alpha); }

    // increment over dt via Brownian subordination L = W_{2S}
    Vec sample_increment(double dt, Rng& rng) const {
        SubordinatorLaw sub(0.5 * alpha);
        double s = sub.sample(dt, rng);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vec z(d);
        for (int i = 0; i < d; ++i) z[i] = gauss(rng);
        return std::sqrt(2.0 * s) * z;
    }
};

// ---------------------------------------------------------------------------
// Tabulated radial density of the standard isotropic stable law at t=1.
//
// Built from the subordination identity f(u) = E[(4 pi S)^{-d/2} e^{-u^2/(4S)}]
// (no oscillatory integrals), with the convergent power tail
//   f(u) = pi^{-d/2-1} sum_k (-1)^{k+1} G(k r +1) sin(k pi r)/k! 4^{k r}
//          G(d/2 + k r) u^{-d-2 k r},   r = alpha/2,
// whose k=1 coefficient is exactly levy_constant(d,alpha).
// Time scaling: density at time t and point x is t^{-d/a} f(t^{-1/a}|x|).
// ---------------------------------------------------------------------------

class StableDensityTable {
public:
    StableDensityTable(int d, double alpha) : d_(d), alpha_(alpha), rho_(0.5 * alpha) {
        build();
    }

    int dim() const { return d_; }
    double alpha() const { return alpha_; }

    // radial profile and its first two radial derivatives at u = |x| >= 0
    double f(double u) const {
        u = std::abs(u);
        if (u >= u_max_) return tail(u, 0);
        return hermite(f_, fp_, u);
    }
    double fp(double u) const {
        double a = std::abs(u);
        double v = (a >= u_max_) ? tail(a, 1) : hermite(fp_, fpp_, a);
        return u < 0 ? -v : v;
    }
    double fpp(double u) const {
        u = std::abs(u);
        if (u >= u_max_) return tail(u, 2);
        return cubic4(fpp_, u);
    }

    // density of L_{t} at x (isotropic), and radial derivatives in |x|
    double value(double t, double u) const {
        double sc = std::pow(t, -1.0 / alpha_);
        return std::pow(sc, d_) * f(sc * u);
    }

    const SubordinatorLaw& subordinator() const { return sub_; }

private:
    int d_;
    double alpha_, rho_;
    SubordinatorLaw sub_{0.5};
    double u_max_ = 0.0, du_ = 0.0;
    std::vector<double> f_, fp_, fpp_;

    static constexpr int kPoints = 8192;

    void build() {
        sub_ = SubordinatorLaw(rho_);
        // subordinator table on a log grid in v, tail by series
        const double A0 = (1.0 - rho_) * std::pow(rho_, rho_ / (1.0 - rho_));
        const double v_lo = std::pow(A0 / 45.0, (1.0 - rho_) / rho_);
        const double v_series = std::pow(20.0, 1.0 / rho_);
        const int n_sub = 2048;
        std::vector<double> logv(n_sub), logs(n_sub);
        const double l0 = std::log(v_lo), l1 = std::log(v_series * 4.0);
        for (int i = 0; i < n_sub; ++i) {
            logv[i] = l0 + (l1 - l0) * i / (n_sub - 1.0);
            double s = sub_.density_t1(std::exp(logv[i]));
            logs[i] = std::log(std::max(s, 1e-300));
        }
        auto sub_density = [&](double v) -> double {
            if (v <= 0.0) return 0.0;
            if (v >= v_series) return sub_.density_t1_tail_series(v);
            double lv = std::log(v);
            if (lv <= l0) return sub_.density_t1(v);
            double p = (lv - l0) / (l1 - l0) * (n_sub - 1.0);
            int i = std::clamp<int>(static_cast<int>(p) - 1, 0, n_sub - 4);
            double t = p - i;
            double c0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
            double c1 = t * (t - 2.0) * (t - 3.0) / 2.0;
            double c2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
            double c3 = t * (t - 1.0) * (t - 2.0) / 6.0;
            return std::exp(c0 * logs[i] + c1 * logs[i + 1] + c2 * logs[i + 2] +
                            c3 * logs[i + 3]);
        };

        // u grid; beyond u_max_ the power tail takes over
        u_max_ = 60.0;
        du_ = u_max_ / (kPoints - 1.0);
        f_.resize(kPoints);
        fp_.resize(kPoints);
        fpp_.resize(kPoints);

        // Shared log-v panel rule. The left end is the essential cutoff of the
        // subordinator; the right end is chosen so the truncated mass
        // ~ (4 pi v)^{-d/2} v^{-rho}/Gamma(1-rho) is below 1e-10 of the
        // smallest tabulated density value, f(u_max) ~ C u_max^{-d-alpha}.
        double f_floor = levy_constant(d_, alpha_) * std::pow(u_max_, -(d_ + alpha_));
        double log_vhi = (std::log(1e10) - std::log(f_floor)) / (0.5 * d_ + rho_);
        const double v_hi = std::exp(std::max(std::log(1e6), log_vhi));
        std::vector<double> vn, vw;
        {
            double lo = std::log(v_lo), hi = std::log(v_hi);
            int panels = static_cast<int>(std::ceil((hi - lo) / std::log(10.0))) * 3;
            for (int p = 0; p < panels; ++p) {
                double a = lo + (hi - lo) * p / panels, b = lo + (hi - lo) * (p + 1) / panels;
                Quadrature g = gauss_legendre(12, a, b);
                for (std::size_t i = 0; i < g.nodes.size(); ++i) {
                    double v = std::exp(g.nodes[i]);
                    vn.push_back(v);
                    vw.push_back(g.weights[i] * v * sub_density(v));
                }
            }
        }

        for (int j = 0; j < kPoints; ++j) {
            double u = j * du_;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < vn.size(); ++i) {
                double v = vn[i];
                double g = std::pow(4.0 * kPi * v, -0.5 * d_) * std::exp(-u * u / (4.0 * v));
                double wg = vw[i] * g;
                s0 += wg;
                s1 += wg * (-u / (2.0 * v));
                s2 += wg * (u * u / (4.0 * v * v) - 1.0 / (2.0 * v));
            }
            f_[j] = s0;
            fp_[j] = s1;
            fpp_[j] = s2;
        }
    }

    double tail(double u, int deriv) const {
        double sum = 0.0, prev = 1e300;
        for (int k = 1; k <= 64; ++k) {
            double kr = k * rho_;
            double s = std::sin(k * kPi * rho_);
            if (std::abs(s) < 1e-14) continue;
            double lt = std::lgamma(kr + 1.0) - std::lgamma(k + 1.0) + kr * std::log(4.0) +
                        std::lgamma(0.5 * d_ + kr);
            double p = -(d_ + 2.0 * kr);
            double term = std::exp(lt + p * std::log(u)) * s / std::pow(kPi, 0.5 * d_ + 1.0);
            if (deriv >= 1) term *= p / u;
            if (deriv >= 2) term *= (p - 1.0) / u;
            if (k % 2 == 0) term = -term;
            if (std::abs(term) > prev) break;
            sum += term;
            prev = std::abs(term);
            if (std::abs(term) < 1e-16 * std::abs(sum) + 1e-300) break;
        }
        return sum;
    }

    // cubic Hermite from a value table and its derivative table
    double hermite(const std::vector<double>& val, const std::vector<double>& der,
                   double u) const {
        double p = u / du_;
        int i = std::min<int>(static_cast<int>(p), kPoints - 2);
        double t = p - i;
        double h00 = (1.0 + 2.0 * t) * sqr(1.0 - t);
        double h10 = t * sqr(1.0 - t);
        double h01 = t * t * (3.0 - 2.0 * t);
        double h11 = t * t * (t - 1.0);
        return h00 * val[i] + h10 * du_ * der[i] + h01 * val[i + 1] + h11 * du_ * der[i + 1];
    }

    // 4-point Lagrange interpolation (for the second derivative table)
    double cubic4(const std::vector<double>& val, double u) const {
        double p = u / du_;
        int i = std::clamp<int>(static_cast<int>(p) - 1, 0, kPoints - 4);
        double t = p - i;
        double c0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        double c1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        double c2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        double c3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        return c0 * val[i] + c1 * val[i + 1] + c2 * val[i + 2] + c3 * val[i + 3];
    }
};

// Global per-(d,alpha) registry; tables are immutable once built.
inline std::shared_ptr<const StableDensityTable> stable_table(int d, double alpha) {
    static KeyedCache<std::shared_ptr<const StableDensityTable>> cache;
    CacheKey key{};
    key[0] = d;
    key[1] = quantize(alpha, 1e12);
    return cache.get(key, [d, alpha] { return std::make_shared<const StableDensityTable>(d, alpha); });
}

// ---------------------------------------------------------------------------
// Direct characteristic-function inversion in d=1 (oracle-grade, slow path):
//   p_A(x) = 1/pi int_0^inf cos(x xi) exp(-A xi^alpha) dxi.
// Panels follow the cosine half-periods; the alpha<1 cusp at xi=0 is handled
// by geometrically graded head panels.
// ---------------------------------------------------------------------------

inline double stable_density_1d_charfn(double alpha, double A, double x) {
    if (A <= 0.0) throw config_error("charfn inversion: scale must be positive");
    x = std::abs(x);
    const double xi_max = std::pow(45.0 / A, 1.0 / alpha);
    auto g = [&](double xi) { return std::cos(x * xi) * std::exp(-A * std::pow(xi, alpha)); };
    double total = 0.0;
    double head = std::min(1.0 / std::pow(A, 1.0 / alpha), xi_max);
    // graded head panels resolve the xi^alpha cusp at 0
    for (auto [a, b] : geometric_panels(1e-14 * head, head, 3.0))
        total += gauss_legendre(12, a, b).apply(g);
    total += 1e-14 * head;  // [0, eps) where the integrand is 1 to machine precision
    if (xi_max > head) {
        // panel boundaries: union of decay levels A xi^alpha = k and cosine
        // half-periods, so each panel sees O(1) variation
        std::vector<double> cuts{head};
        for (int k = 1; k <= 45; ++k) {
            double xi = std::pow(k / A, 1.0 / alpha);
            if (xi > head && xi < xi_max) cuts.push_back(xi);
        }
        if (x > 1e-12) {
            for (double xi = head + kPi / x; xi < xi_max; xi += kPi / x) cuts.push_back(xi);
        }
        cuts.push_back(xi_max);
        std::sort(cuts.begin(), cuts.end());
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
            if (cuts[i + 1] > cuts[i] + 1e-300)
                total += gauss_legendre(12, cuts[i], cuts[i + 1]).apply(g);
    }
    return total / kPi;
}

}  // namespace heatkern
