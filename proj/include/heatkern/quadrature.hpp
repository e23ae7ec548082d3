#pragma once

#include "heatkern/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

namespace heatkern {

struct Quadrature {
    std::vector<double> nodes;    // on the target interval
    std::vector<double> weights;

    template <class F>
    double apply(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
        return s;
    }
};

namespace detail {

// Gauss-Legendre on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre_ref(int n, std::vector<double>& x, std::vector<double>& w) {
    x.resize(n);
    w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
}

}  // namespace detail

// Gauss-Legendre rule on [a,b], nodes cached per order.
inline Quadrature gauss_legendre(int n, double a, double b) {
    static KeyedCache<std::pair<std::vector<double>, std::vector<double>>> cache;
    CacheKey key{};
    key[0] = n;
    const auto& ref = cache.get(key, [n] {
        std::pair<std::vector<double>, std::vector<double>> r;
        detail::gauss_legendre_ref(n, r.first, r.second);
        return r;
    });
    Quadrature q;
    q.nodes.resize(n);
    q.weights.resize(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        q.nodes[i] = mid + half * ref.first[i];
        q.weights[i] = half * ref.second[i];
    }
    return q;
}

// Gauss-Jacobi rule for weight (b-r)^pb * (r-a)^pa on [a,b], via Golub-Welsch
// on the Jacobi recurrence. Exponents pa,pb > -1.
inline Quadrature gauss_jacobi(int n, double a, double b, double pa, double pb) {
    if (pa <= -1.0 || pb <= -1.0) throw config_error("gauss_jacobi: exponents must be > -1");
    static KeyedCache<std::pair<std::vector<double>, std::vector<double>>> cache;
    CacheKey key{};
    key[0] = n;
    key[1] = quantize(pa, 1e9);
    key[2] = quantize(pb, 1e9);
    const auto& ref = cache.get(key, [n, pa, pb] {
        // weight (1-x)^A (1+x)^B on [-1,1]; here A <-> pb (upper end), B <-> pa.
        const double A = pb, B = pa;
        Eigen::VectorXd diag(n), sub(std::max(n - 1, 0));
        diag[0] = (B - A) / (A + B + 2.0);
        for (int k = 1; k < n; ++k)
            diag[k] = (B * B - A * A) / ((2.0 * k + A + B) * (2.0 * k + A + B + 2.0));
        if (n > 1) {
            // k=1 with the (1+A+B) factor canceled (0/0 otherwise when A+B=-1)
            sub[0] = std::sqrt(4.0 * (1.0 + A) * (1.0 + B) /
                               (sqr(2.0 + A + B) * (3.0 + A + B)));
        }
        for (int k = 2; k < n; ++k) {
            double num = 4.0 * k * (k + A) * (k + B) * (k + A + B);
            double den = sqr(2.0 * k + A + B) * (2.0 * k + A + B + 1.0) * (2.0 * k + A + B - 1.0);
            sub[k - 1] = std::sqrt(num / den);
        }
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
        for (int k = 0; k < n; ++k) J(k, k) = diag[k];
        for (int k = 0; k + 1 < n; ++k) J(k, k + 1) = J(k + 1, k) = sub[k];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
        // mu0 = int_{-1}^{1} (1-x)^A (1+x)^B dx = 2^{A+B+1} Beta(A+1, B+1)
        double mu0 = std::exp((A + B + 1.0) * std::log(2.0) + std::lgamma(A + 1.0) +
                              std::lgamma(B + 1.0) - std::lgamma(A + B + 2.0));
        std::pair<std::vector<double>, std::vector<double>> r;
        r.first.resize(n);
        r.second.resize(n);
        for (int k = 0; k < n; ++k) {
            r.first[k] = es.eigenvalues()[k];
            r.second[k] = mu0 * sqr(es.eigenvectors()(0, k));
        }
        return r;
    });
    Quadrature q;
    q.nodes.resize(n);
    q.weights.resize(n);
    const double half = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        q.nodes[i] = a + half * (ref.first[i] + 1.0);
        // scale: dx -> half, (1-x)^pb -> ((b-r)/half)^pb, (1+x)^pa -> ((r-a)/half)^pa
        q.weights[i] = ref.second[i] * std::pow(half, pa + pb + 1.0);
    }
    return q;
}

// Graded rule for integrands behaving like (r-a)^pa near a and (b-r)^pb near b:
// returns nodes with effective weights so that sum w_i f(r_i) ~ int_a^b f.
// The singular envelope is divided back out of the Jacobi weights.
inline Quadrature graded_rule(int n, double a, double b, double pa, double pb) {
    Quadrature jac = gauss_jacobi(n, a, b, pa, pb);
    Quadrature q;
    q.nodes = jac.nodes;
    q.weights.resize(jac.nodes.size());
    for (std::size_t i = 0; i < jac.nodes.size(); ++i) {
        double r = jac.nodes[i];
        q.weights[i] = jac.weights[i] / (std::pow(r - a, pa) * std::pow(b - r, pb));
    }
    return q;
}

// Adaptive panel Gauss-Legendre: bisects panels until the 15- vs 7-point
// difference meets the tolerance. For smooth oracle-grade integrals.
template <class F>
double adaptive_gl(F&& f, double a, double b, double rel_tol = 1e-10,
                   double abs_tol = 1e-14, int max_depth = 28) {
    struct Panel {
        double a, b;
        int depth;
    };
    std::vector<Panel> stack{{a, b, 0}};
    double total = 0.0;
    while (!stack.empty()) {
        Panel p = stack.back();
        stack.pop_back();
        double coarse = gauss_legendre(7, p.a, p.b).apply(f);
        double fine = gauss_legendre(15, p.a, p.b).apply(f);
        double err = std::abs(fine - coarse);
        if (err <= abs_tol + rel_tol * std::abs(fine) || p.depth >= max_depth) {
            total += fine;
        } else {
            double m = 0.5 * (p.a + p.b);
            stack.push_back({p.a, m, p.depth + 1});
            stack.push_back({m, p.b, p.depth + 1});
        }
    }
    return total;
}

// Trapezoid weights over a sorted nonuniform lattice.
inline std::vector<double> trapezoid_weights(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> w(n, 0.0);
    if (n < 2) return w;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

// 1-d lattice with a uniform core [c - core, c + core] and geometric wings
// out to c +- far. Used wherever heavy-tailed densities are integrated.
inline std::vector<double> graded_lattice(double center, double core, double far_extent,
                                          int core_points, double ratio = 1.3) {
    std::vector<double> xs;
    double h = 2.0 * core / core_points;
    for (int i = 0; i <= core_points; ++i) xs.push_back(center - core + i * h);
    double pos = core, step = h;
    while (pos < far_extent) {
        step *= ratio;
        pos = std::min(pos + step, far_extent);
        xs.push_back(center + pos);
        xs.push_back(center - pos);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-14; }),
             xs.end());
    return xs;
}

// Geometric panels [r0, r1] with given ratio, refined toward r0.
inline std::vector<std::pair<double, double>> geometric_panels(double r0, double r1,
                                                               double ratio = 2.0) {
    std::vector<std::pair<double, double>> panels;
    double lo = r0;
    double len = r0 * (ratio - 1.0);
    while (lo < r1) {
        double hi = std::min(r1, lo + len);
        panels.emplace_back(lo, hi);
        lo = hi;
        len *= ratio;
    }
    return panels;
}

}  // namespace heatkern
