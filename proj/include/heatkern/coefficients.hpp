#pragma once

#include "heatkern/quadrature.hpp"
#include "heatkern/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace heatkern {

// ---------------------------------------------------------------------------
// Mollifier: the fixed smooth bump rho(x) = c_d exp(-1/(1-|x|^2)) on |x|<1.
// Carries a unit-ball quadrature (tensor Gauss-Legendre for d<=2, fixed-seed
// Monte Carlo for d>=3, self-normalized so constants mollify exactly) and the
// tabulated plane-wave multiplier m(u) = int rho(y) cos(u y_1) dy, which makes
// mollification of trigonometric catalog coefficients exact.
// ---------------------------------------------------------------------------

class Mollifier {
public:
    explicit Mollifier(int d) : d_(d) { build(); }

    int dim() const { return d_; }

    double rho(const Vec& x) const {
        double r2 = x.squaredNorm();
        if (r2 >= 1.0) return 0.0;
        return c_norm_ * std::exp(-1.0 / (1.0 - r2));
    }

    // quadrature nodes/weights over the unit ball, weights summing to one
    const std::vector<Vec>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }

    // weight-sum defect of the raw (un-normalized) ball rule
    double mass_defect() const { return mass_defect_; }

    // ||grad rho||_{L^1}, the constant in the mollified-drift gradient bound
    double grad_l1() const { return grad_l1_; }

    // multiplier: int rho(y) cos(u e.y) dy for any unit e (radial symmetry)
    double multiplier(double u) const {
        u = std::abs(u);
        if (u >= m_umax_) return 0.0;
        double p = u / m_du_;
        int i = std::clamp<int>(static_cast<int>(p) - 1, 0, static_cast<int>(m_.size()) - 4);
        double t = p - i;
        double c0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        double c1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        double c2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        double c3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        return c0 * m_[i] + c1 * m_[i + 1] + c2 * m_[i + 2] + c3 * m_[i + 3];
    }

    static std::shared_ptr<const Mollifier> instance(int d) {
        static KeyedCache<std::shared_ptr<const Mollifier>> cache;
        CacheKey k{};
        k[0] = d;
        return cache.get(k, [d] { return std::make_shared<const Mollifier>(d); });
    }

private:
    int d_;
    double c_norm_ = 1.0, grad_l1_ = 0.0, mass_defect_ = 0.0;
    std::vector<Vec> nodes_;
    std::vector<double> weights_;
    std::vector<double> m_;
    double m_du_ = 0.1, m_umax_ = 800.0;

    void build() {
        auto bump = [](double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; };
        // normalization and gradient L1 norm from radial integrals
        auto radial_mass = [&](double r) {
            double surf = (d_ == 1) ? 2.0
                                    : 2.0 * std::pow(kPi, 0.5 * d_) / std::tgamma(0.5 * d_) *
                                          std::pow(r, d_ - 1.0);
            return surf * bump(r * r);
        };
        double mass = adaptive_gl([&](double r) { return radial_mass(r); }, 0.0, 1.0, 1e-13);
        c_norm_ = 1.0 / mass;
        grad_l1_ = c_norm_ * adaptive_gl(
                                 [&](double r) {
                                     double r2 = r * r;
                                     return radial_mass(r) * 2.0 * r / sqr(1.0 - r2);
                                 },
                                 0.0, 1.0, 1e-12);

        // ball quadrature
        if (d_ <= 2) {
            const int n = 64;
            auto ax = gauss_legendre(n, -1.0, 1.0);
            if (d_ == 1) {
                for (int i = 0; i < n; ++i) {
                    Vec y(1);
                    y[0] = ax.nodes[i];
                    double w = ax.weights[i] * rho(y);
                    if (w > 0.0) {
                        nodes_.push_back(y);
                        weights_.push_back(w);
                    }
                }
            } else {
                // radial Gauss-Legendre x uniform angles (trapezoid is spectrally
                // accurate for the periodic direction)
                auto rad = gauss_legendre(n, 0.0, 1.0);
                const int n_ang = 48;
                for (int i = 0; i < n; ++i) {
                    double r = rad.nodes[i];
                    Vec probe(2);
                    probe[0] = r;
                    probe[1] = 0.0;
                    double wr = rad.weights[i] * r * rho(probe) * (2.0 * kPi / n_ang);
                    if (wr <= 0.0) continue;
                    for (int j = 0; j < n_ang; ++j) {
                        double th = 2.0 * kPi * (j + 0.5) / n_ang;
                        Vec y(2);
                        y[0] = r * std::cos(th);
                        y[1] = r * std::sin(th);
                        nodes_.push_back(y);
                        weights_.push_back(wr);
                    }
                }
            }
        } else {
            // fixed-seed Monte Carlo over the ball, importance weights by rho
            Rng rng = rng_stream(0x6d6f6c6cULL, d_);
            std::uniform_real_distribution<double> unif(-1.0, 1.0);
            const int n = 100000;
            while (static_cast<int>(nodes_.size()) < n) {
                Vec y(d_);
                for (int k = 0; k < d_; ++k) y[k] = unif(rng);
                if (y.squaredNorm() < 1.0) {
                    nodes_.push_back(y);
                    weights_.push_back(rho(y));
                }
            }
        }
        double wsum = 0.0;
        for (double w : weights_) wsum += w;
        mass_defect_ = std::abs(wsum - 1.0);
        for (double& w : weights_) w /= wsum;  // constants mollify exactly

        // multiplier table
        int n_tab = static_cast<int>(m_umax_ / m_du_) + 4;
        m_.resize(n_tab);
        for (int i = 0; i < n_tab; ++i) {
            double u = i * m_du_;
            if (d_ == 1) {
                m_[i] = adaptive_gl(
                    [&](double y) {
                        Vec v(1);
                        v[0] = y;
                        return rho(v) * std::cos(u * y);
                    },
                    -1.0, 1.0, 1e-13);
            } else if (d_ == 2) {
                m_[i] = adaptive_gl(
                    [&](double r) {
                        Vec v(2);
                        v[0] = r;
                        v[1] = 0.0;
                        return 2.0 * kPi * r * rho(v) * std::cyl_bessel_j(0.0, u * r);
                    },
                    0.0, 1.0, 1e-13);
            } else {
                double s = 0.0;
                for (std::size_t k = 0; k < nodes_.size(); ++k)
                    s += weights_[k] * std::cos(u * nodes_[k][0]);
                m_[i] = s;
            }
            if (u > 40.0 && std::abs(m_[i]) < 1e-15) {
                m_umax_ = u;
                m_.resize(i + 1);
                // pad for the 4-point interpolation stencil
                m_.insert(m_.end(), 3, 0.0);
                break;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Coefficient catalog
//
// drift ids:
//   zero            b = 0
//   constant        b_i = params[i]  (last param broadcast)
//   linear          b = c x,                    params {c}
//   linear_trig     b_i = c x_i + A sin(w x_i + phi), params {c, A, w, phi}
//   holder_trig     b_i = c x_i + A |sin(w x_i)|^beta, params {c, A, w}
//   rotation        b = w (-x_2, x_1), d = 2 only, params {w}
// dispersion ids:
//   identity        a = I
//   scalar          a = c I,                    params {c}
//   diag            a = diag(params)
//   expsin_scalar   a = exp(q sin(w sum_i x_i)) I, params {q, w}
// ---------------------------------------------------------------------------

class CoefficientField {
public:
    CoefficientField(const Scenario& sc)
        : d_(sc.d),
          beta_(sc.beta),
          drift_(sc.drift),
          disp_(sc.dispersion),
          moll_(Mollifier::instance(sc.d)) {
        validate_specs();
    }

    int dim() const { return d_; }
    const Mollifier& mollifier() const { return *moll_; }

    // ---- drift -----------------------------------------------------------
    Vec drift(double t, const Vec& x) const {
        (void)t;
        Vec b = zero_vec(d_);
        const auto& p = drift_.params;
        if (drift_.id == "zero") {
        } else if (drift_.id == "constant") {
            for (int i = 0; i < d_; ++i)
                b[i] = p[std::min<std::size_t>(i, p.size() - 1)];
        } else if (drift_.id == "linear") {
            b = p[0] * x;
        } else if (drift_.id == "linear_trig") {
            for (int i = 0; i < d_; ++i) b[i] = p[0] * x[i] + p[1] * std::sin(p[2] * x[i] + p[3]);
        } else if (drift_.id == "holder_trig") {
            for (int i = 0; i < d_; ++i)
                b[i] = p[0] * x[i] + p[1] * std::pow(std::abs(std::sin(p[2] * x[i])), beta_);
        } else if (drift_.id == "rotation") {
            b[0] = -p[0] * x[1];
            b[1] = p[0] * x[0];
        }
        return b;
    }

    // b_eps = b(t,.) * rho_eps; exact multiplier route for the trigonometric
    // catalog, unit-ball quadrature otherwise. eps <= 0 returns b itself.
    Vec drift_mollified(double t, const Vec& x, double eps) const {
        if (eps <= 0.0) return drift(t, x);
        const auto& p = drift_.params;
        if (drift_.id == "zero" || drift_.id == "constant" || drift_.id == "linear" ||
            drift_.id == "rotation")
            return drift(t, x);  // affine maps convolve with a symmetric density to themselves
        if (drift_.id == "linear_trig") {
            double m = moll_->multiplier(p[2] * eps);
            Vec b = zero_vec(d_);
            for (int i = 0; i < d_; ++i)
                b[i] = p[0] * x[i] + p[1] * m * std::sin(p[2] * x[i] + p[3]);
            return b;
        }
        return drift_mollified_quadrature(t, x, eps);
    }

    // generic convolution b_eps(t,x) = sum_k w_k b(t, x - eps y_k)
    Vec drift_mollified_quadrature(double t, const Vec& x, double eps) const {
        Vec b = zero_vec(d_);
        const auto& ys = moll_->nodes();
        const auto& ws = moll_->weights();
        for (std::size_t k = 0; k < ys.size(); ++k) b += ws[k] * drift(t, x - eps * ys[k]);
        return b;
    }

    bool drift_is_zero() const {
        return drift_.id == "zero" ||
               (drift_.id == "constant" && drift_.params.empty());
    }

    // ---- dispersion --------------------------------------------------------
    bool scalar_dispersion() const {
        return disp_.id == "identity" || disp_.id == "scalar" || disp_.id == "expsin_scalar";
    }

    bool dispersion_is_constant() const {
        return disp_.id == "identity" || disp_.id == "scalar" || disp_.id == "diag";
    }

    double dispersion_scalar(double t, const Vec& x) const {
        (void)t;
        if (disp_.id == "identity") return 1.0;
        if (disp_.id == "scalar") return disp_.params[0];
        if (disp_.id == "expsin_scalar") {
            double s = 0.0;
            for (int i = 0; i < d_; ++i) s += x[i];
            return std::exp(disp_.params[0] * std::sin(disp_.params[1] * s));
        }
        throw config_error("dispersion " + disp_.id + " is not scalar");
    }

    Mat dispersion(double t, const Vec& x) const {
        if (scalar_dispersion())
            return dispersion_scalar(t, x) * Mat::Identity(d_, d_);
        if (disp_.id == "diag") {
            Mat a = Mat::Zero(d_, d_);
            for (int i = 0; i < d_; ++i)
                a(i, i) = disp_.params[std::min<std::size_t>(i, disp_.params.size() - 1)];
            return a;
        }
        throw config_error("unknown dispersion id " + disp_.id);
    }

    Mat dispersion_mollified(double t, const Vec& x, double eps) const {
        if (eps <= 0.0) return dispersion(t, x);
        if (disp_.id == "identity" || disp_.id == "scalar" || disp_.id == "diag")
            return dispersion(t, x);
        Mat a = Mat::Zero(d_, d_);
        const auto& ys = moll_->nodes();
        const auto& ws = moll_->weights();
        for (std::size_t k = 0; k < ys.size(); ++k)
            a += ws[k] * dispersion(t, x - eps * ys[k]);
        return a;
    }

    // kappa(s,x,z) = det(a^{-1}) (|z| / |a^{-1} z|)^{d+alpha}
    double kappa(double s, const Vec& x, const Vec& z, double alpha) const {
        if (scalar_dispersion()) return std::pow(dispersion_scalar(s, x), alpha);
        Mat a = dispersion(s, x);
        double det = a.determinant();
        if (std::abs(det) < 1e-14)
            throw numerical_error("kappa: dispersion matrix is singular (ellipticity failure)");
        Mat ainv = a.inverse();
        double nz = z.norm();
        if (nz == 0.0) throw config_error("kappa: z must be nonzero");
        return std::pow(nz / (ainv * z).norm(), d_ + alpha) / std::abs(det);
    }

private:
    int d_;
    double beta_;
    CoefficientSpec drift_, disp_;
    std::shared_ptr<const Mollifier> moll_;

    void validate_specs() const {
        auto need = [&](const CoefficientSpec& s, std::size_t n, const char* what) {
            if (s.params.size() < n)
                throw config_error(std::string(what) + "." + s.id + ": expected >= " +
                                   std::to_string(n) + " params");
        };
        if (drift_.id == "linear") need(drift_, 1, "drift");
        else if (drift_.id == "linear_trig") need(drift_, 4, "drift");
        else if (drift_.id == "holder_trig") need(drift_, 3, "drift");
        else if (drift_.id == "constant") need(drift_, 1, "drift");
        else if (drift_.id == "rotation") {
            need(drift_, 1, "drift");
            if (d_ != 2) throw config_error("drift.rotation: requires d = 2");
        } else if (drift_.id != "zero") throw config_error("unknown drift id " + drift_.id);
        if (disp_.id == "scalar") need(disp_, 1, "dispersion");
        else if (disp_.id == "diag") need(disp_, 1, "dispersion");
        else if (disp_.id == "expsin_scalar") need(disp_, 2, "dispersion");
        else if (disp_.id != "identity") throw config_error("unknown dispersion id " + disp_.id);
    }
};

// ---------------------------------------------------------------------------
// Statistical hypothesis validation on sampled triples (t,x,y).
// ---------------------------------------------------------------------------

struct ValidationReport {
    double drift_origin = 0.0;   // |b(t,0)| / kappa0
    double drift_holder = 0.0;   // |b(t,x)-b(t,y)| / (kappa0 (|x-y|^beta v |x-y|))
    double ellip_upper = 0.0;    // lambda_max(aa*) / kappa1
    double ellip_lower = 0.0;    // 1 / (kappa1 lambda_min(aa*))
    double disp_holder = 0.0;    // |a(t,x)-a(t,y)| / (kappa1 |x-y|^gamma)
    double kappa_bar_fitted = 1.0;  // fitted bound constant for the kappa kernel
    int samples = 0;
    bool pass = false;

    json to_json() const {
        return json{{"drift_origin", drift_origin}, {"drift_holder", drift_holder},
                    {"ellip_upper", ellip_upper},   {"ellip_lower", ellip_lower},
                    {"disp_holder", disp_holder},   {"kappa_bar_fitted", kappa_bar_fitted},
                    {"samples", samples},           {"pass", pass}};
    }
};

inline ValidationReport validate_hypotheses(const CoefficientField& field, const Scenario& sc,
                                            int sample_count, std::uint64_t seed = 7177) {
    if (sample_count < 100) throw config_error("validate_hypotheses: sample_count must be >= 100");
    Rng rng = rng_stream(seed, 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ValidationReport rep;
    rep.samples = sample_count;
    const int d = sc.d;
    auto rand_dir = [&] {
        Vec v(d);
        double n = 0.0;
        do {
            for (int i = 0; i < d; ++i) v[i] = gauss(rng);
            n = v.norm();
        } while (n < 1e-12);
        return Vec(v / n);
    };
    for (int k = 0; k < sample_count; ++k) {
        double t = sc.T * unif(rng);
        double rx = std::exp(std::log(1e-3) + unif(rng) * std::log(3e4));
        double dl = std::exp(std::log(1e-3) + unif(rng) * std::log(1e4));
        Vec x = rx * rand_dir();
        Vec y = x + dl * rand_dir();

        rep.drift_origin =
            std::max(rep.drift_origin, field.drift(t, zero_vec(d)).norm() / sc.kappa0);
        double dxy = (x - y).norm();
        double env = sc.kappa0 * std::max(std::pow(dxy, sc.beta), dxy);
        rep.drift_holder =
            std::max(rep.drift_holder, (field.drift(t, x) - field.drift(t, y)).norm() / env);

        Mat ax = field.dispersion(t, x);
        if (std::abs(ax.determinant()) < 1e-14)
            throw numerical_error("validate_hypotheses: dispersion singular at a sampled point");
        Eigen::SelfAdjointEigenSolver<Mat> es(Mat(ax * ax.transpose()));
        double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
        rep.ellip_upper = std::max(rep.ellip_upper, lmax / sc.kappa1);
        rep.ellip_lower = std::max(rep.ellip_lower, 1.0 / (sc.kappa1 * lmin));
        Mat ay = field.dispersion(t, y);
        rep.disp_holder = std::max(
            rep.disp_holder, (ax - ay).operatorNorm() / (sc.kappa1 * std::pow(dxy, sc.gamma)));

        Vec z = rand_dir();
        double kx = field.kappa(t, x, z, sc.alpha), ky = field.kappa(t, y, z, sc.alpha);
        rep.kappa_bar_fitted = std::max({rep.kappa_bar_fitted, kx, 1.0 / kx,
                                         std::abs(kx - ky) / std::pow(dxy, sc.gamma)});
    }
    double tol = 1.0 + 1e-9;
    rep.pass = rep.drift_origin <= tol && rep.drift_holder <= tol && rep.ellip_upper <= tol &&
               rep.ellip_lower <= tol && rep.disp_holder <= tol;
    return rep;
}

}  // namespace heatkern
