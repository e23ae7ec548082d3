#pragma once

#include "heatkern/flow.hpp"
#include "heatkern/stable_law.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace heatkern {

// ---------------------------------------------------------------------------
// Euler scheme for dX = b dt + a(t, X_-) dL^alpha, with per-step stable
// increments via Brownian subordination. Work is split into fixed-size
// chunks with one RNG stream each, so results are thread-count independent.
// ---------------------------------------------------------------------------

struct JumpRecord {
    double time;
    Vec pre_state;
    Vec jump;  // a(t, X_-) dL above the recording threshold
};

struct PathEnsemble {
    double s = 0.0, t = 1.0;
    Vec x0;
    std::size_t n_paths = 0;
    int steps = 0;
    std::uint64_t seed = 0;
    std::vector<Vec> terminal;
    std::vector<std::vector<JumpRecord>> jumps;  // filled when record_jumps
    std::size_t overflow_count = 0;

    // robust per-axis scale: IQR / 1.349 from the terminal cloud
    double robust_scale(int axis) const {
        std::vector<double> v(terminal.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = terminal[i][axis];
        std::size_t q1 = v.size() / 4, q3 = (3 * v.size()) / 4;
        std::nth_element(v.begin(), v.begin() + q1, v.end());
        double a = v[q1];
        std::nth_element(v.begin(), v.begin() + q3, v.end());
        double b = v[q3];
        return (b - a) / 1.349;
    }
};

struct SimulateOptions {
    bool record_jumps = false;
    double overflow_norm = 1e8;
    int threads = 1;
};

inline PathEnsemble simulate_paths(const CoefficientField& field, const Scenario& sc, double s,
                                   const Vec& x0, double t, int steps, std::size_t n_paths,
                                   std::uint64_t seed, const SimulateOptions& opt = {}) {
    if (steps < 50) throw config_error("simulate_paths: steps must be >= 50");
    if (n_paths < 1000) throw config_error("simulate_paths: n_paths must be >= 1000");
    PathEnsemble ens;
    ens.s = s;
    ens.t = t;
    ens.x0 = x0;
    ens.n_paths = n_paths;
    ens.steps = steps;
    ens.seed = seed;
    ens.terminal.assign(n_paths, x0);
    if (opt.record_jumps) ens.jumps.resize(n_paths);
    std::vector<std::size_t> overflow_per_chunk((n_paths + kMcChunk - 1) / kMcChunk, 0);
    std::vector<char> dead(n_paths, 0);

    const double h = (t - s) / steps;
    const double jump_threshold = std::pow(h, 1.0 / sc.alpha) / 10.0;
    const SubordinatorLaw sub(0.5 * sc.alpha);
    const int d = sc.d;

    parallel_chunks(n_paths, opt.threads, [&](std::size_t chunk, std::size_t beg,
                                              std::size_t end) {
        Rng rng = rng_stream(seed, chunk);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t i = beg; i < end; ++i) {
            Vec x = x0;
            bool alive = true;
            for (int k = 0; k < steps && alive; ++k) {
                double tk = s + k * h;
                double sj = sub.sample(h, rng);
                Vec dl(d);
                for (int c = 0; c < d; ++c) dl[c] = gauss(rng);
                dl *= std::sqrt(2.0 * sj);
                Vec drift = field.drift(tk, x);
                Vec jump;
                if (field.scalar_dispersion())
                    jump = field.dispersion_scalar(tk, x) * dl;
                else
                    jump = field.dispersion(tk, x) * dl;
                if (opt.record_jumps && dl.norm() > jump_threshold)
                    ens.jumps[i].push_back({tk + h, x, jump});
                x += drift * h + jump;
                if (!(x.norm() < opt.overflow_norm)) {
                    alive = false;
                    ++overflow_per_chunk[chunk];
                }
            }
            ens.terminal[i] = x;
            dead[i] = alive ? 0 : 1;
        }
    });
    // drop overflowed paths, keep the count
    std::size_t w = 0;
    for (std::size_t i = 0; i < n_paths; ++i) {
        if (dead[i]) continue;
        if (w != i) {
            ens.terminal[w] = ens.terminal[i];
            if (opt.record_jumps) ens.jumps[w] = std::move(ens.jumps[i]);
        }
        ++w;
    }
    ens.terminal.resize(w);
    if (opt.record_jumps) ens.jumps.resize(w);
    for (auto c : overflow_per_chunk) ens.overflow_count += c;
    return ens;
}

// ---------------------------------------------------------------------------
// Kernel density estimate (d = 1) with bootstrap standard errors.
// Bandwidth: 1.06 (IQR/1.349) n^{-1/5} per axis, clipped to the lattice
// spacing; sample variance is useless under alpha-stable tails.
// ---------------------------------------------------------------------------

struct DensityEstimate {
    std::vector<double> lattice;
    std::vector<double> value;
    std::vector<double> stderr_;
    double bandwidth = 0.0;

    double lattice_mass() const {
        double m = 0.0;
        auto w = trapezoid_weights(lattice);
        for (std::size_t i = 0; i < lattice.size(); ++i) m += w[i] * value[i];
        return m;
    }
};

inline DensityEstimate kde_density(const PathEnsemble& ens, const std::vector<double>& lattice,
                                   int bootstrap = 50, std::uint64_t seed = 1234) {
    if (ens.terminal.empty()) throw config_error("kde_density: empty ensemble");
    if (ens.x0.size() != 1) throw config_error("kde_density: implemented for d = 1");
    const std::size_t n = ens.terminal.size();
    double spacing = 1e300;
    for (std::size_t i = 0; i + 1 < lattice.size(); ++i)
        spacing = std::min(spacing, lattice[i + 1] - lattice[i]);
    double bw = 1.06 * ens.robust_scale(0) * std::pow(static_cast<double>(n), -0.2);
    bw = std::max(bw, spacing);

    // bin first, then convolve bins with the Gaussian kernel
    double lo = lattice.front() - 6.0 * bw, hi = lattice.back() + 6.0 * bw;
    const int nbins = 4096;
    double bh = (hi - lo) / nbins;
    std::vector<double> count(nbins, 0.0);
    std::size_t inside = 0;
    for (const Vec& xv : ens.terminal) {
        double x = xv[0];
        if (x < lo || x >= hi) continue;  // far-tail points carry no lattice mass
        ++inside;
        count[static_cast<int>((x - lo) / bh)] += 1.0;
    }
    (void)inside;

    auto convolve = [&](const std::vector<double>& cnt, std::vector<double>& out) {
        out.assign(lattice.size(), 0.0);
        int reach = static_cast<int>(std::ceil(6.0 * bw / bh));
        for (std::size_t j = 0; j < lattice.size(); ++j) {
            double xj = lattice[j];
            int b0 = std::max(0, static_cast<int>((xj - lo) / bh) - reach);
            int b1 = std::min(nbins - 1, static_cast<int>((xj - lo) / bh) + reach);
            double acc = 0.0;
            for (int b = b0; b <= b1; ++b) {
                if (cnt[b] == 0.0) continue;
                double u = (xj - (lo + (b + 0.5) * bh)) / bw;
                acc += cnt[b] * std::exp(-0.5 * u * u);
            }
            out[j] = acc / (n * bw * std::sqrt(2.0 * kPi));
        }
    };

    DensityEstimate est;
    est.lattice = lattice;
    est.bandwidth = bw;
    convolve(count, est.value);

    // path-level bootstrap == multinomial resampling of the bin counts
    std::vector<double> mean(lattice.size(), 0.0), m2(lattice.size(), 0.0);
    Rng rng = rng_stream(seed, 17);
    std::vector<double> rep(nbins), val;
    for (int b = 0; b < bootstrap; ++b) {
        double remaining_p = 1.0;
        std::size_t remaining_n = n;
        for (int k = 0; k < nbins; ++k) {
            double p = count[k] / static_cast<double>(n);
            double cond = (remaining_p > 1e-15) ? std::min(1.0, p / remaining_p) : 0.0;
            std::binomial_distribution<std::size_t> bin(remaining_n, cond);
            std::size_t c = (remaining_n > 0) ? bin(rng) : 0;
            rep[k] = static_cast<double>(c);
            remaining_n -= c;
            remaining_p -= p;
        }
        convolve(rep, val);
        for (std::size_t j = 0; j < val.size(); ++j) {
            mean[j] += val[j];
            m2[j] += val[j] * val[j];
        }
    }
    est.stderr_.resize(lattice.size());
    for (std::size_t j = 0; j < lattice.size(); ++j) {
        double mu = mean[j] / bootstrap;
        est.stderr_[j] = std::sqrt(std::max(0.0, m2[j] / bootstrap - mu * mu));
    }
    return est;
}

// ---------------------------------------------------------------------------
// Levy system check: expected sums over recorded jumps against the
// time-discretized intensity integral, with a paired z-score.
// ---------------------------------------------------------------------------

struct LevySystemReport {
    double lhs = 0.0;       // E sum_jumps f
    double rhs = 0.0;       // E int int f kappa C |z|^{-d-a}
    double se_diff = 0.0;   // paired standard error
    double z_score = 0.0;
    std::size_t paths = 0;

    json to_json() const {
        return json{{"lhs", lhs}, {"rhs", rhs}, {"se_diff", se_diff},
                    {"z_score", z_score}, {"paths", paths}};
    }
};

// f = indicator of jump size above `threshold`, optionally weighted by a
// bounded state function g(x) (g = 1 when absent)
inline LevySystemReport levy_system_check(const CoefficientField& field, const Scenario& sc,
                                          double s, const Vec& x0, double t, int steps,
                                          std::size_t n_paths, std::uint64_t seed,
                                          double threshold,
                                          const std::function<double(const Vec&)>& g = {}) {
    if (!field.scalar_dispersion())
        throw config_error("levy_system_check: scalar dispersion only");
    const double h = (t - s) / steps;
    const SubordinatorLaw sub(0.5 * sc.alpha);
    const double C = levy_constant(sc.d, sc.alpha);
    const double surface = (sc.d == 1) ? 2.0 : 2.0 * kPi;
    const int d = sc.d;
    std::size_t n_chunks = (n_paths + kMcChunk - 1) / kMcChunk;
    std::vector<double> sum_d(n_chunks, 0.0), sum_d2(n_chunks, 0.0), sum_l(n_chunks, 0.0),
        sum_r(n_chunks, 0.0);

    parallel_chunks(n_paths, 1, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
        Rng rng = rng_stream(seed, chunk);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t i = beg; i < end; ++i) {
            Vec x = x0;
            double lhs = 0.0, rhs = 0.0;
            for (int k = 0; k < steps; ++k) {
                double tk = s + k * h;
                // intensity of |a z| > threshold under C |z|^{-d-a} dz: for the
                // scalar catalog, kappa == a^alpha and the integral is explicit
                double asc = field.dispersion_scalar(tk, x);
                double gv = g ? g(x) : 1.0;
                rhs += h * gv * C * std::pow(asc, sc.alpha) * surface *
                       std::pow(threshold, -sc.alpha) / sc.alpha;
                double sj = sub.sample(h, rng);
                Vec dl(d);
                for (int c = 0; c < d; ++c) dl[c] = gauss(rng);
                dl *= std::sqrt(2.0 * sj);
                Vec jump = asc * dl;
                if (jump.norm() > threshold) lhs += gv;
                x += field.drift(tk, x) * h + jump;
            }
            sum_l[chunk] += lhs;
            sum_r[chunk] += rhs;
            sum_d[chunk] += lhs - rhs;
            sum_d2[chunk] += sqr(lhs - rhs);
        }
    });
    LevySystemReport rep;
    rep.paths = n_paths;
    double sl = 0, sr = 0, sd = 0, sd2 = 0;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        sl += sum_l[c];
        sr += sum_r[c];
        sd += sum_d[c];
        sd2 += sum_d2[c];
    }
    rep.lhs = sl / n_paths;
    rep.rhs = sr / n_paths;
    double var = sd2 / n_paths - sqr(sd / n_paths);
    rep.se_diff = std::sqrt(std::max(var, 1e-300) / n_paths);
    rep.z_score = (rep.lhs - rep.rhs) / rep.se_diff;
    return rep;
}

// ---------------------------------------------------------------------------
// Tube exit probability: P(tau^eta_{s,x} < s + eps eta^alpha), tau the first
// time |X - theta_{s,.}(x)| > eta, monitored per step (the discrete
// monitoring undershoots the continuous exit time; step-halving bounds it).
// ---------------------------------------------------------------------------

struct TubeEstimate {
    double probability = 0.0;
    double std_error = 0.0;
    double probability_half_step = 0.0;  // same experiment at doubled steps
};

inline TubeEstimate tube_exit_probability(const FlowMap& flow, const Scenario& sc, double s,
                                          const Vec& x0, double eta, double eps_frac,
                                          std::size_t n_paths, int steps, std::uint64_t seed,
                                          int threads = 1) {
    if (!(eta > 0.0 && eta <= std::pow(sc.T, 1.0 / sc.alpha)))
        throw config_error("tube: eta must be in (0, T^{1/alpha}]");
    if (!(eps_frac > 0.0 && eps_frac < 1.0)) throw config_error("tube: eps in (0,1)");
    const CoefficientField& field = flow.field();
    const double horizon = eps_frac * std::pow(eta, sc.alpha);
    const SubordinatorLaw sub(0.5 * sc.alpha);
    const int d = sc.d;

    auto run = [&](int nsteps) {
        double h = horizon / nsteps;
        auto ref = flow.path(s, x0, s + horizon);
        std::vector<Vec> theta(nsteps + 1);
        for (int k = 0; k <= nsteps; ++k) theta[k] = ref->eval(s + k * h);
        std::size_t n_chunks = (n_paths + kMcChunk - 1) / kMcChunk;
        std::vector<std::size_t> exits(n_chunks, 0);
        parallel_chunks(n_paths, threads, [&](std::size_t chunk, std::size_t beg,
                                              std::size_t end) {
            Rng rng = rng_stream(seed ^ (nsteps * 0x9e37ULL), chunk);
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (std::size_t i = beg; i < end; ++i) {
                Vec x = x0;
                for (int k = 0; k < nsteps; ++k) {
                    double tk = s + k * h;
                    double sj = sub.sample(h, rng);
                    Vec dl(d);
                    for (int c = 0; c < d; ++c) dl[c] = gauss(rng);
                    dl *= std::sqrt(2.0 * sj);
                    Vec jump = field.scalar_dispersion()
                                   ? Vec(field.dispersion_scalar(tk, x) * dl)
                                   : Vec(field.dispersion(tk, x) * dl);
                    x += field.drift(tk, x) * h + jump;
                    if ((x - theta[k + 1]).norm() > eta) {
                        ++exits[chunk];
                        break;
                    }
                }
            }
        });
        std::size_t total = 0;
        for (auto e : exits) total += e;
        return static_cast<double>(total) / n_paths;
    };
    TubeEstimate est;
    est.probability = run(steps);
    est.probability_half_step = run(2 * steps);
    est.std_error = std::sqrt(std::max(est.probability * (1.0 - est.probability), 1e-12) /
                              n_paths);
    return est;
}

// locate by bisection the largest eps with exit probability <= target
struct TubeEpsilonReport {
    double eps = 0.0;
    double probability = 0.0;
    double std_error = 0.0;
    bool found = false;
};

inline TubeEpsilonReport find_tube_epsilon(const FlowMap& flow, const Scenario& sc, double s,
                                           const Vec& x0, double eta, std::size_t n_paths,
                                           int steps, std::uint64_t seed, double target = 0.5,
                                           int threads = 1) {
    TubeEpsilonReport rep;
    double lo = 0.0, hi = 0.999;
    auto phat = [&](double e) {
        return tube_exit_probability(flow, sc, s, x0, eta, e, n_paths, steps, seed, threads)
            .probability;
    };
    double p_hi = phat(hi);
    if (p_hi <= target) {
        rep.eps = hi;
        rep.probability = p_hi;
        rep.found = true;
    } else {
        for (int it = 0; it < 8; ++it) {
            double mid = 0.5 * (lo + hi);
            double p = phat(mid);
            (p <= target ? lo : hi) = mid;
        }
        rep.eps = lo;
        rep.probability = (lo > 0.0) ? phat(lo) : 1.0;
        rep.found = lo > 0.0 && rep.probability <= target + 1e-9;
    }
    rep.std_error =
        std::sqrt(std::max(rep.probability * (1.0 - rep.probability), 1e-12) / n_paths);
    return rep;
}

// ---------------------------------------------------------------------------
// Chaining lower bound: off-diagonal entry probability into the diagonal tube
// around the backward flow, its power-law fit in the distance, and the
// implied constant c0.
// ---------------------------------------------------------------------------

struct ChainingReport {
    std::vector<double> distances;       // |x - theta_{t,s}(y)|
    std::vector<double> probability;     // MC estimates
    std::vector<double> std_error;
    std::vector<double> c0;              // P dist^{d+a} / (t-s)^{1+d/a}
    double exponent_fit = 0.0;           // slope of -log P vs log dist
    bool zero_hits = false;

    json to_json() const {
        return json{{"distances", distances}, {"probability", probability},
                    {"std_error", std_error}, {"c0", c0},
                    {"exponent_fit", exponent_fit}, {"zero_hits", zero_hits}};
    }
};

inline ChainingReport chaining_lower_bound(const FlowMap& flow, const Scenario& sc, double s,
                                           double t, const Vec& y, double K, double eps_frac,
                                           const std::vector<double>& dist_multipliers,
                                           std::size_t n_paths, int steps, std::uint64_t seed,
                                           int threads = 1) {
    const CoefficientField& field = flow.field();
    const double scale = std::pow(t - s, 1.0 / sc.alpha);
    const double u = s + eps_frac * (t - s);
    const double radius = K * scale;
    Vec back = flow.solve(t, s, y);
    Vec target = flow.solve(t, u, y);
    const SubordinatorLaw sub(0.5 * sc.alpha);
    const int d = sc.d;
    ChainingReport rep;
    for (double m : dist_multipliers) {
        double dist = m * K * scale;
        Vec x0 = back;
        x0[0] += dist;  // off-diagonal along the first axis
        double h = (u - s) / steps;
        std::size_t n_chunks = (n_paths + kMcChunk - 1) / kMcChunk;
        std::vector<std::size_t> hits(n_chunks, 0);
        parallel_chunks(n_paths, threads, [&](std::size_t chunk, std::size_t beg,
                                              std::size_t end) {
            Rng rng = rng_stream(seed ^ quantize(m, 1e6), chunk);
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (std::size_t i = beg; i < end; ++i) {
                Vec x = x0;
                for (int k = 0; k < steps; ++k) {
                    double tk = s + k * h;
                    double sj = sub.sample(h, rng);
                    Vec dl(d);
                    for (int c = 0; c < d; ++c) dl[c] = gauss(rng);
                    dl *= std::sqrt(2.0 * sj);
                    Vec jump = field.scalar_dispersion()
                                   ? Vec(field.dispersion_scalar(tk, x) * dl)
                                   : Vec(field.dispersion(tk, x) * dl);
                    x += field.drift(tk, x) * h + jump;
                }
                if ((x - target).norm() <= radius) ++hits[chunk];
            }
        });
        std::size_t total = 0;
        for (auto hc : hits) total += hc;
        double p = static_cast<double>(total) / n_paths;
        rep.distances.push_back(dist);
        rep.probability.push_back(p);
        if (total == 0) {
            rep.zero_hits = true;
            // 95% upper confidence bound in lieu of the estimate
            rep.std_error.push_back(3.0 / n_paths);
            rep.c0.push_back(0.0);
            continue;
        }
        rep.std_error.push_back(std::sqrt(p * (1.0 - p) / n_paths));
        rep.c0.push_back(p * std::pow(dist, d + sc.alpha) /
                         std::pow(t - s, 1.0 + d / sc.alpha));
    }
    // least-squares slope of log P against log dist
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < rep.distances.size(); ++i) {
        if (rep.probability[i] <= 0.0) continue;
        double lx = std::log(rep.distances[i]), ly = std::log(rep.probability[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n >= 2) rep.exponent_fit = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
    return rep;
}

// ---------------------------------------------------------------------------
// Weak convergence of the mollified-coefficient SDE: L1 lattice distance
// between terminal KDEs with (b_eps, a_eps) and (b, a), plus the Monte-Carlo
// noise floor from two independent unmollified runs.
// ---------------------------------------------------------------------------

struct MollifiedConvergenceReport {
    std::vector<double> eps;
    std::vector<double> l1_distance;
    double noise_floor = 0.0;

    json to_json() const {
        return json{{"eps", eps}, {"l1_distance", l1_distance}, {"noise_floor", noise_floor}};
    }
};

inline MollifiedConvergenceReport mollified_convergence_check(
    const CoefficientField& field, const Scenario& sc, const std::vector<double>& eps_list,
    double s, const Vec& x0, double t, std::size_t n_paths, int steps, std::uint64_t seed,
    const std::vector<double>& lattice, int threads = 1) {
    const SubordinatorLaw sub(0.5 * sc.alpha);
    const int d = sc.d;
    auto run = [&](double eps, std::uint64_t sd) {
        PathEnsemble ens;
        ens.x0 = x0;
        ens.terminal.assign(n_paths, x0);
        double h = (t - s) / steps;
        parallel_chunks(n_paths, threads, [&](std::size_t chunk, std::size_t beg,
                                              std::size_t end) {
            Rng rng = rng_stream(sd, chunk);
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (std::size_t i = beg; i < end; ++i) {
                Vec x = x0;
                for (int k = 0; k < steps; ++k) {
                    double tk = s + k * h;
                    double sj = sub.sample(h, rng);
                    Vec dl(d);
                    for (int c = 0; c < d; ++c) dl[c] = gauss(rng);
                    dl *= std::sqrt(2.0 * sj);
                    Vec b = (eps > 0.0) ? field.drift_mollified(tk, x, eps)
                                        : field.drift(tk, x);
                    Mat a = (eps > 0.0) ? field.dispersion_mollified(tk, x, eps)
                                        : field.dispersion(tk, x);
                    x += b * h + a * dl;
                }
                ens.terminal[i] = x;
            }
        });
        return kde_density(ens, lattice, 8, sd + 5);
    };
    auto l1 = [&](const DensityEstimate& a, const DensityEstimate& b) {
        auto w = trapezoid_weights(a.lattice);
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            acc += w[i] * std::abs(a.value[i] - b.value[i]);
        return acc;
    };
    MollifiedConvergenceReport rep;
    auto base = run(0.0, seed);
    auto base2 = run(0.0, seed + 77);
    rep.noise_floor = l1(base, base2);
    for (double e : eps_list) {
        rep.eps.push_back(e);
        rep.l1_distance.push_back(l1(run(e, seed), base));
    }
    return rep;
}

}  // namespace heatkern
