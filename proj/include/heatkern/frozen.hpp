#pragma once

#include "heatkern/flow.hpp"
#include "heatkern/profiles.hpp"
#include "heatkern/singular.hpp"
#include "heatkern/stable_law.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace heatkern {

// ---------------------------------------------------------------------------
// Coefficients frozen along a flow trajectory anchored at (tau, xi):
//   a^{(tau,xi)}(r) = a(r, theta_{tau,r}(xi)).
// Carries the trajectory over a window and the cumulative scalar integral
//   int |a|^alpha dr needed by the charfn route. The frozen drift integral
// int_s^t b_{|r-tau|^{1/a}}(r, theta_{tau,r}(xi)) dr telescopes to flow
// differences theta_{tau,t}(xi) - theta_{tau,s}(xi), so no extra quadrature.
// ---------------------------------------------------------------------------

class AnchoredPath {
public:
    AnchoredPath(const FlowMap& flow, double tau, Vec xi, double w0, double w1)
        : flow_(&flow),
          field_(&flow.field()),
          alpha_(flow.scenario().alpha),
          tau_(tau),
          xi_(std::move(xi)),
          w0_(w0),
          w1_(w1) {
        double lo = std::min({tau_, w0_, w1_}), hi = std::max({tau_, w0_, w1_});
        traj_ = flow.path(tau_, xi_, lo);       // covers [lo, tau]
        if (hi > tau_) traj_hi_ = flow.path(tau_, xi_, hi);  // covers [tau, hi]
        if (field_->scalar_dispersion()) {
            if (field_->dispersion_is_constant())
                const_a_ = std::pow(field_->dispersion_scalar(tau_, xi_), alpha_);
            else
                build_cumulative();
        }
    }

    double tau() const { return tau_; }
    const Vec& anchor() const { return xi_; }
    bool scalar() const { return field_->scalar_dispersion(); }

    Vec theta(double r) const {
        if (traj_hi_ && !(r >= traj_->t_min() && r <= traj_->t_max())) return traj_hi_->eval(r);
        return traj_->eval(r);
    }

    double a_scalar(double r) const { return field_->dispersion_scalar(r, theta(r)); }
    Mat a_matrix(double r) const { return field_->dispersion(r, theta(r)); }

    // int_{r1}^{r2} a(r)^alpha dr (scalar dispersion)
    double A(double r1, double r2) const {
        if (const_a_ >= 0.0) return const_a_ * (r2 - r1);
        if (!scalar()) throw numerical_error("AnchoredPath::A needs scalar dispersion");
        return cum_eval(r2) - cum_eval(r1);
    }

private:
    const FlowMap* flow_;
    const CoefficientField* field_;
    double alpha_, tau_;
    Vec xi_;
    double w0_, w1_;
    std::shared_ptr<const FlowPath> traj_, traj_hi_;
    std::vector<double> cum_;
    double g0_ = 0.0, gh_ = 0.0, const_a_ = -1.0;

    void build_cumulative() {
        const int n = 32;
        g0_ = std::min(w0_, w1_);
        double g1 = std::max(w0_, w1_);
        if (g1 <= g0_) g1 = g0_ + 1e-12;
        gh_ = (g1 - g0_) / n;
        cum_.assign(n + 1, 0.0);
        for (int i = 0; i < n; ++i) {
            double inc = gauss_legendre(3, g0_ + i * gh_, g0_ + (i + 1) * gh_)
                             .apply([&](double r) { return std::pow(a_scalar(r), alpha_); });
            cum_[i + 1] = cum_[i] + inc;
        }
    }

    double cum_eval(double r) const {
        double p = (r - g0_) / gh_;
        int n = static_cast<int>(cum_.size()) - 1;
        p = std::clamp(p, 0.0, static_cast<double>(n));
        int i = std::clamp<int>(static_cast<int>(p) - 1, 0, n - 3);
        double t = p - i;
        double c0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        double c1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        double c2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        double c3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        return c0 * cum_[i] + c1 * cum_[i + 1] + c2 * cum_[i + 2] + c3 * cum_[i + 3];
    }
};

// lightweight scalar-dispersion frozen density: the law of int_s^t a(r) dL_r
// reduced to a standard stable density at scale A = int |a|^alpha
struct Frozen1D {
    double A = 1.0;
    const StableDensityTable* tab = nullptr;

    double scale() const { return std::pow(A, 1.0 / tab->alpha()); }

    double value(double u) const {
        double sc = scale();
        double s = 1.0;
        for (int i = 0; i < tab->dim(); ++i) s /= sc;
        return s * tab->f(u / sc);
    }
    // radial derivatives in u
    double d1(double u) const {
        double sc = scale();
        double s = 1.0;
        for (int i = 0; i < tab->dim() + 1; ++i) s /= sc;
        return s * tab->fp(u / sc);
    }
    double d2(double u) const {
        double sc = scale();
        double s = 1.0;
        for (int i = 0; i < tab->dim() + 2; ++i) s /= sc;
        return s * tab->fpp(u / sc);
    }
};

// time-dependent dispersion path on [s,t] fed to the density backends
struct MatrixPath {
    int d = 1;
    bool is_scalar = true;
    std::function<double(double)> scalar;
    std::function<Mat(double)> matrix;

    static MatrixPath constant_scalar(int d, double c) {
        return {d, true, [c](double) { return c; }, {}};
    }
    static MatrixPath scalar_fn(int d, std::function<double(double)> f) {
        return {d, true, std::move(f), {}};
    }
    static MatrixPath matrix_fn(int d, std::function<Mat(double)> f) {
        return {d, false, {}, std::move(f)};
    }
    Mat aat(double r) const {
        if (is_scalar) throw numerical_error("MatrixPath: scalar path has no matrix");
        Mat a = matrix(r);
        return a * a.transpose();
    }
};

// ---------------------------------------------------------------------------
// Density of X = int_s^t a(r) dL_r.
//
// Backends:
//   charfn          exact reduction to the tabulated stable profile for scalar
//                   paths (any d); angular Fourier quadrature for matrix paths
//                   in d = 2; rejects d > 2.
//   mc-subordination Gaussian mixture over sampled subordinator paths, any d.
// ---------------------------------------------------------------------------

class FrozenDensity {
public:
    enum class Backend { kCharfn, kMcSubordination };

    static FrozenDensity charfn(int d, double alpha, const MatrixPath& path, double s, double t) {
        FrozenDensity fd(d, alpha, s, t);
        if (path.is_scalar) {
            fd.scalar_ = true;
            fd.core_.tab = stable_table(d, alpha).get();
            fd.tab_ref_ = stable_table(d, alpha);
            fd.core_.A = adaptive_gl([&](double r) { return std::pow(path.scalar(r), alpha); },
                                     s, t, 1e-11);
        } else {
            if (d != 2) throw config_error("charfn backend supports matrix paths only in d=2");
            fd.scalar_ = false;
            fd.build_angular(path);
        }
        return fd;
    }

    static FrozenDensity mc_subordination(int d, double alpha, const MatrixPath& path, double s,
                                          double t, int n_sub = 200, int n_paths = 20000,
                                          std::uint64_t seed = 424242) {
        FrozenDensity fd(d, alpha, s, t);
        fd.scalar_ = false;
        fd.mc_ = true;
        SubordinatorLaw sub(0.5 * alpha);
        double h = (t - s) / n_sub;
        std::vector<Mat> aat(n_sub);
        std::vector<double> a2(n_sub);
        for (int k = 0; k < n_sub; ++k) {
            double r = s + (k + 0.5) * h;
            if (path.is_scalar)
                a2[k] = sqr(path.scalar(r));
            else
                aat[k] = path.aat(r);
        }
        fd.mix_.reserve(n_paths);
        for (int j = 0; j < n_paths; ++j) {
            Rng rng = rng_stream(seed, j);
            if (path.is_scalar) {
                double v = 0.0;
                for (int k = 0; k < n_sub; ++k) v += a2[k] * 2.0 * sub.sample(h, rng);
                Mat c = v * Mat::Identity(d, d);
                fd.push_component(c);
            } else {
                Mat c = Mat::Zero(d, d);
                for (int k = 0; k < n_sub; ++k) c += aat[k] * (2.0 * sub.sample(h, rng));
                fd.push_component(c);
            }
        }
        return fd;
    }

    int dim() const { return d_; }
    double alpha() const { return alpha_; }
    // total charfn scale int |a|^alpha (scalar route)
    double total_A() const { return core_.A; }

    double value(const Vec& x) const {
        if (mc_) {
            double s = 0.0;
            for (const auto& c : mix_) s += c.density(x);
            return s / mix_.size();
        }
        if (scalar_) return core_.value(x.norm());
        return angular_moment(x, 0, nullptr, nullptr);
    }

    Vec grad(const Vec& x) const {
        if (mc_) {
            Vec g = zero_vec(d_);
            for (const auto& c : mix_) g += c.grad(x);
            return g / static_cast<double>(mix_.size());
        }
        if (scalar_) {
            double u = x.norm();
            if (u < 1e-300) return zero_vec(d_);
            return core_.d1(u) * (x / u);
        }
        Vec g(d_);
        angular_moment(x, 1, &g, nullptr);
        return g;
    }

    Mat hess(const Vec& x) const {
        if (mc_) throw config_error("mc backend: use finite differences for the Hessian");
        if (scalar_) {
            double u = x.norm();
            Mat id = Mat::Identity(d_, d_);
            if (u < 1e-10 * core_.scale()) return core_.d2(0.0) * id;
            Vec e = x / u;
            return core_.d2(u) * (e * e.transpose()) +
                   core_.d1(u) / u * (id - e * e.transpose());
        }
        Mat h(d_, d_);
        angular_moment(x, 2, nullptr, &h);
        return h;
    }

    // Hessian quadratic form along a unit direction (hot path for d=1)
    double hess_form(const Vec& x, const Vec& dir) const {
        if (scalar_ && d_ == 1) return core_.d2(std::abs(x[0]));
        return (dir.transpose() * hess(x) * dir)(0, 0);
    }

    // natural spatial scale of the law
    double space_scale() const {
        if (scalar_) return core_.scale();
        return std::pow(t_ - s_, 1.0 / alpha_);
    }

    const Frozen1D& scalar_core() const { return core_; }

private:
    explicit FrozenDensity(int d, double alpha, double s, double t)
        : d_(d), alpha_(alpha), s_(s), t_(t) {
        if (!(s < t)) throw config_error("frozen density: requires s < t");
    }

    struct GaussComponent {
        Mat cinv;
        double norm;
        int d;
        double density(const Vec& x) const {
            double q = (x.transpose() * cinv * x)(0, 0);
            return norm * std::exp(-0.5 * q);
        }
        Vec grad(const Vec& x) const { return -density(x) * (cinv * x); }
    };

    void push_component(const Mat& c) {
        Eigen::LLT<Mat> llt(c);
        if (llt.info() != Eigen::Success)
            throw numerical_error("mc backend: covariance not positive definite");
        double det = 1.0;
        for (int i = 0; i < d_; ++i) det *= llt.matrixL()(i, i);
        GaussComponent g;
        g.cinv = llt.solve(Mat::Identity(d_, d_));
        g.norm = std::pow(2.0 * kPi, -0.5 * d_) / det;
        g.d = d_;
        mix_.push_back(std::move(g));
    }

    // angular-radial Fourier inversion (d=2 matrix paths): order 0 -> value,
    // 1 -> gradient, 2 -> Hessian
    void build_angular(const MatrixPath& path) {
        const int n = 48;
        ang_b_.resize(n);
        ang_u_.resize(n);
        for (int j = 0; j < n; ++j) {
            double th = kPi * (j + 0.5) / n;
            Vec u(2);
            u[0] = std::cos(th);
            u[1] = std::sin(th);
            ang_u_[j] = u;
            ang_b_[j] = adaptive_gl(
                [&](double r) {
                    Vec au = path.matrix(r).transpose() * u;
                    return std::pow(au.norm(), alpha_);
                },
                s_, t_, 1e-10);
        }
    }

    double angular_moment(const Vec& x, int order, Vec* g, Mat* h) const {
        const int n = static_cast<int>(ang_b_.size());
        double val = 0.0;
        if (g) *g = zero_vec(2);
        if (h) *h = Mat::Zero(2, 2);
        for (int j = 0; j < n; ++j) {
            double B = ang_b_[j];
            double c = ang_u_[j].dot(x);
            double m = radial_moment(B, c, order);
            double w = kPi / n / (2.0 * sqr(kPi));
            if (order == 0) val += w * m;
            if (order == 1) *g -= (w * m) * ang_u_[j];
            if (order == 2) *h -= (w * m) * (ang_u_[j] * ang_u_[j].transpose());
        }
        return val;
    }

    // int_0^inf trig(r c) e^{-B r^alpha} r^{1+order} dr; trig = cos for even
    // order, sin for order 1
    double radial_moment(double B, double c, int order) const {
        double r_max = std::pow(42.0 / B, 1.0 / alpha_);
        c = (order == 1) ? c : std::abs(c);
        auto f = [&](double r) {
            double t = (order == 1) ? std::sin(c * r) : std::cos(c * r);
            return t * std::exp(-B * std::pow(r, alpha_)) * std::pow(r, 1.0 + order);
        };
        std::vector<double> cuts{0.0};
        for (int k = 1; k <= 42; ++k) {
            double xi = std::pow(k / B, 1.0 / alpha_);
            if (xi < r_max) cuts.push_back(xi);
        }
        double ac = std::abs(c);
        if (ac > 1e-12)
            for (double xi = kPi / ac; xi < r_max; xi += kPi / ac) cuts.push_back(xi);
        cuts.push_back(r_max);
        std::sort(cuts.begin(), cuts.end());
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
            if (cuts[i + 1] > cuts[i])
                total += gauss_legendre(10, cuts[i], cuts[i + 1]).apply(f);
        return total;
    }

    int d_;
    double alpha_, s_, t_;
    bool scalar_ = false, mc_ = false;
    Frozen1D core_{};
    std::shared_ptr<const StableDensityTable> tab_ref_;
    std::vector<double> ang_b_;
    std::vector<Vec> ang_u_;
    std::vector<GaussComponent> mix_;
};

// ---------------------------------------------------------------------------
// Coefficient-perturbation diagnostics (gradients and fractional derivatives
// of frozen densities under a dispersion change).
// ---------------------------------------------------------------------------

struct PerturbationReport {
    double a_dist = 0.0;        // sup_r |a - a_bar|
    double grad_ratio = 0.0;    // sup |grad p^a - grad p^abar| / (dist rho^{(a+1)}_{0,a})
    double dalpha_ratio = 0.0;  // sup |D^a(p^a - p^abar)| / (dist rho^{(a)}_{0,0})
    double dalpha_abs_ratio = 0.0;  // sup |D^a p^a| / rho^{(a)}_{0,0}
};

inline PerturbationReport coefficient_perturbation_check(int d, double alpha,
                                                         const MatrixPath& pa,
                                                         const MatrixPath& pb, double s, double t,
                                                         const std::vector<Vec>& grid) {
    if (d != 1) throw config_error("perturbation check implemented for d = 1");
    FrozenDensity fa = FrozenDensity::charfn(d, alpha, pa, s, t);
    FrozenDensity fb = FrozenDensity::charfn(d, alpha, pb, s, t);
    PerturbationReport rep;
    for (int k = 0; k <= 32; ++k) {
        double r = s + (t - s) * k / 32.0;
        rep.a_dist = std::max(rep.a_dist, std::abs(pa.scalar(r) - pb.scalar(r)));
    }
    SingularIntegrator si(d, alpha);
    const double tau = t - s;
    for (const Vec& x : grid) {
        double rho1 = rho_profile(alpha, d, {alpha + 1.0, 0.0, alpha}, tau, x.norm());
        double rho0 = rho_profile(alpha, d, {alpha, 0.0, 0.0}, tau, x.norm());
        double gdiff = (fa.grad(x) - fb.grad(x)).norm();
        if (rep.a_dist > 0.0)
            rep.grad_ratio = std::max(rep.grad_ratio, gdiff / (rep.a_dist * rho1));

        DeltaTwoIntegrand di;
        di.f_center = fa.value(x) - fb.value(x);
        di.f_shift = [&](const Vec& z) { return fa.value(Vec(x + z)) - fb.value(Vec(x + z)); };
        di.hess_form = [&](const Vec& e) {
            return fa.hess_form(x, e) - fb.hess_form(x, e);
        };
        double dd = si.integrate(di, fa.space_scale(), false);
        if (rep.a_dist > 0.0)
            rep.dalpha_ratio = std::max(rep.dalpha_ratio, std::abs(dd) / (rep.a_dist * rho0));

        DeltaTwoIntegrand da;
        da.f_center = fa.value(x);
        da.f_shift = [&](const Vec& z) { return fa.value(Vec(x + z)); };
        da.hess_form = [&](const Vec& e) { return fa.hess_form(x, e); };
        double dabs = si.integrate(da, fa.space_scale(), true);
        rep.dalpha_abs_ratio = std::max(rep.dalpha_abs_ratio, dabs / rho0);
    }
    return rep;
}

}  // namespace heatkern
