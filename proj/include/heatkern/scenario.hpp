#pragma once

#include "heatkern/common.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace heatkern {

using json = nlohmann::json;

struct CoefficientSpec {
    std::string id;
    std::vector<double> params;
};

struct McConfig {
    std::size_t paths = 100000;
    int steps = 400;
    std::uint64_t seed = 1;
};

struct ParametrixConfig {
    int N = 2;                     // series truncation depth
    double gamma1_frac = 0.5;      // gamma1 = frac * gamma0, frac in (0,1)
    double r_inner_frac = 0.05;    // singular-integral split, units of (t-s)^{1/alpha}
    double r_outer_frac = 50.0;
    int time_nodes = 20;           // Gauss-Jacobi nodes for tensor-convolutions
    int coarse_time_nodes = 8;     // Volterra grid for terms n >= 1
    int coarse_space_nodes = 32;
    double lattice_extent = 12.0;  // units of the local scale
    int lattice_core = 10;         // core nodes per side per center
};

struct VerifyCeilings {
    double c1 = 50.0;
    double c2 = 200.0;
    double c3 = 20.0;
};

// Full problem description: indices, bound constants, horizon and the
// coefficient selection. Theta = (kappa0,kappa1,d,alpha,beta,gamma) is the
// only source of bound constants downstream.
struct Scenario {
    int d = 1;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double kappa0 = 1.0;
    double kappa1 = 1.0;
    double T = 1.0;
    CoefficientSpec drift{"zero", {}};
    CoefficientSpec dispersion{"identity", {}};
    McConfig mc;
    ParametrixConfig parametrix;
    VerifyCeilings ceilings;

    double gamma0() const { return std::min(alpha + beta - 1.0, gamma); }

    void validate() const {
        auto fail = [](const std::string& path, const std::string& msg) {
            throw config_error(path + ": " + msg);
        };
        if (d < 1 || d > kMaxDim) fail("d", "must be in [1," + std::to_string(kMaxDim) + "]");
        if (!(alpha > 0.0 && alpha < 2.0)) fail("alpha", "must be in (0,2)");
        double lo = std::max(0.0, 1.0 - alpha);
        if (!(beta > lo && beta <= 1.0)) fail("beta", "must be in ((1-alpha)^+,1]");
        if (!(gamma > lo && gamma <= 1.0)) fail("gamma", "must be in ((1-alpha)^+,1]");
        if (!(alpha + beta > 1.0)) fail("beta", "needs alpha+beta>1");
        if (!(alpha + gamma > 1.0)) fail("gamma", "needs alpha+gamma>1");
        if (kappa0 < 1.0) fail("kappa0", "must be >= 1");
        if (kappa1 < 1.0) fail("kappa1", "must be >= 1");
        if (!(T > 0.0)) fail("T", "must be positive");
        if (!(parametrix.N >= 1)) fail("parametrix.N", "must be >= 1");
        if (!(parametrix.gamma1_frac > 0.0 && parametrix.gamma1_frac < 1.0))
            fail("parametrix.gamma1_frac", "must be in (0,1)");
        if (mc.steps < 1) fail("mc.steps", "must be positive");
    }

    // --- built-in presets used across tests and the CLI -------------------
    static Scenario exact(double alpha_, int d_ = 1) {
        Scenario s;
        s.d = d_;
        s.alpha = alpha_;
        s.beta = 1.0;
        s.gamma = 1.0;
        s.drift = {"zero", {}};
        s.dispersion = {"identity", {}};
        s.validate();
        return s;
    }

    // unbounded drift b(x) = x, identity dispersion
    static Scenario linear_drift(double alpha_, int d_ = 1) {
        Scenario s = exact(alpha_, d_);
        s.drift = {"linear", {1.0}};
        s.kappa0 = 1.0;
        s.validate();
        return s;
    }

    // generic catalog scenario: b(x) = x + cos(x), a(x) = exp(sin(x)/4)
    static Scenario catalog(double alpha_, int d_ = 1) {
        Scenario s;
        s.d = d_;
        s.alpha = alpha_;
        s.beta = 0.8;
        s.gamma = 1.0;
        s.kappa0 = 2.0;
        s.kappa1 = 2.5;
        s.drift = {"linear_trig", {1.0, 1.0, 1.0, 0.5 * kPi}};  // x + cos x
        s.dispersion = {"expsin_scalar", {0.25, 1.0}};
        s.validate();
        return s;
    }

    // genuinely beta-Holder drift b(x) = x + 0.8 |sin(x)|^beta
    static Scenario holder(double alpha_, double beta_, int d_ = 1) {
        Scenario s;
        s.d = d_;
        s.alpha = alpha_;
        s.beta = beta_;
        s.gamma = 1.0;
        s.kappa0 = 3.0;
        s.kappa1 = 1.0;
        s.drift = {"holder_trig", {1.0, 0.8, 1.0}};
        s.dispersion = {"identity", {}};
        s.validate();
        return s;
    }
};

inline void from_json_path(const json& j, const std::string& path, double& out) {
    if (!j.contains(path)) return;
    if (!j.at(path).is_number()) throw config_error(path + ": expected number");
    out = j.at(path).get<double>();
}

inline Scenario parse_scenario(const json& j) {
    Scenario s;
    try {
        from_json_path(j, "alpha", s.alpha);
        from_json_path(j, "beta", s.beta);
        from_json_path(j, "gamma", s.gamma);
        from_json_path(j, "kappa0", s.kappa0);
        from_json_path(j, "kappa1", s.kappa1);
        from_json_path(j, "T", s.T);
        if (j.contains("d")) s.d = j.at("d").get<int>();
        auto coeff = [&](const char* key, CoefficientSpec& spec) {
            if (!j.contains(key)) return;
            const json& c = j.at(key);
            if (!c.contains("id") || !c.at("id").is_string())
                throw config_error(std::string(key) + ".id: expected string");
            spec.id = c.at("id").get<std::string>();
            spec.params.clear();
            if (c.contains("params")) {
                for (const auto& p : c.at("params")) {
                    if (!p.is_number())
                        throw config_error(std::string(key) + ".params: expected numbers");
                    spec.params.push_back(p.get<double>());
                }
            }
        };
        coeff("drift", s.drift);
        coeff("dispersion", s.dispersion);
        if (j.contains("mc")) {
            const json& m = j.at("mc");
            if (m.contains("paths")) s.mc.paths = m.at("paths").get<std::size_t>();
            if (m.contains("steps")) s.mc.steps = m.at("steps").get<int>();
            if (m.contains("seed")) s.mc.seed = m.at("seed").get<std::uint64_t>();
        }
        if (j.contains("parametrix")) {
            const json& p = j.at("parametrix");
            if (p.contains("N")) s.parametrix.N = p.at("N").get<int>();
            if (p.contains("gamma1_frac"))
                s.parametrix.gamma1_frac = p.at("gamma1_frac").get<double>();
            if (p.contains("time_nodes")) s.parametrix.time_nodes = p.at("time_nodes").get<int>();
        }
        if (j.contains("verify") && j.at("verify").contains("ceilings")) {
            const json& c = j.at("verify").at("ceilings");
            if (c.contains("c1")) s.ceilings.c1 = c.at("c1").get<double>();
            if (c.contains("c2")) s.ceilings.c2 = c.at("c2").get<double>();
            if (c.contains("c3")) s.ceilings.c3 = c.at("c3").get<double>();
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("scenario: ") + e.what());
    }
    s.validate();
    return s;
}

inline json scenario_to_json(const Scenario& s) {
    json j;
    j["d"] = s.d;
    j["alpha"] = s.alpha;
    j["beta"] = s.beta;
    j["gamma"] = s.gamma;
    j["kappa0"] = s.kappa0;
    j["kappa1"] = s.kappa1;
    j["T"] = s.T;
    j["drift"] = {{"id", s.drift.id}, {"params", s.drift.params}};
    j["dispersion"] = {{"id", s.dispersion.id}, {"params", s.dispersion.params}};
    j["mc"] = {{"paths", s.mc.paths}, {"steps", s.mc.steps}, {"seed", s.mc.seed}};
    j["parametrix"] = {{"N", s.parametrix.N}, {"gamma1_frac", s.parametrix.gamma1_frac}};
    j["verify"] = {{"ceilings", {{"c1", s.ceilings.c1}, {"c2", s.ceilings.c2}, {"c3", s.ceilings.c3}}}};
    return j;
}

}  // namespace heatkern
