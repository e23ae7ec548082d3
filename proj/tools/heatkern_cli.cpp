// Command-line front end: scenario configuration, experiment orchestration,
// and report emission. Subcommands: validate, flow, density, mc, verify,
// report. Exit codes: 0 ok, 2 configuration/schema error, 3 numerical error.

#include "heatkern/io.hpp"
#include "heatkern/mc.hpp"
#include "heatkern/parametrix.hpp"
#include "heatkern/verify.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

namespace fs = std::filesystem;
using namespace heatkern;

namespace {

struct RunContext {
    Scenario scenario;
    json config;
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out = "out";

    std::shared_ptr<const CoefficientField> field;
    std::shared_ptr<const FlowMap> flow;

    void finalize() {
        scenario.mc.seed = seed;
        field = std::make_shared<const CoefficientField>(scenario);
        flow = std::make_shared<const FlowMap>(scenario, field);
        fs::create_directories(fs::path(out));
        write_json_file(fs::path(out) / "manifest.json", manifest_json(config, seed, threads));
    }
};

Scenario scenario_from_options(const std::string& config_path, const std::string& preset,
                               double alpha, json& config_out) {
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw config_error("config: cannot open " + config_path);
        json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded()) throw config_error("config: invalid JSON in " + config_path);
        config_out = j;
        return parse_scenario(j);
    }
    Scenario sc;
    if (preset == "exact")
        sc = Scenario::exact(alpha);
    else if (preset == "catalog")
        sc = Scenario::catalog(alpha);
    else if (preset == "linear")
        sc = Scenario::linear_drift(alpha);
    else if (preset == "holder")
        sc = Scenario::holder(alpha, 0.6);
    else
        throw config_error("preset: unknown preset " + preset);
    config_out = scenario_to_json(sc);
    return sc;
}

json run_validate(RunContext& ctx, int samples) {
    auto rep = validate_hypotheses(*ctx.field, ctx.scenario, samples, ctx.seed);
    const Mollifier& m = ctx.field->mollifier();
    json j{{"hypotheses", rep.to_json()},
           {"mollifier",
            {{"mass_defect", m.mass_defect()}, {"grad_l1", m.grad_l1()},
             {"nodes", m.nodes().size()}}}};
    return j;
}

json run_flow(RunContext& ctx, bool write_csv) {
    const Scenario& sc = ctx.scenario;
    const FlowMap& flow = *ctx.flow;
    json j;
    std::unique_ptr<CsvWriter> csv;
    if (write_csv)
        csv = std::make_unique<CsvWriter>(fs::path(ctx.out) / "flow.csv",
                                          std::vector<std::string>{
                                              "metric_id", "span", "value"});
    // metric ids: 0 inverse defect, 1 round trip, 2 approx-flow defect,
    // 3 |det-1|, 4 comparability ratio
    double worst_inverse = 0.0;
    std::vector<double> spans, defects, detdevs;
    Vec x = make_vec({1.0});
    for (int k = 2; k <= 6; ++k) {
        double span = std::pow(2.0, -k);
        double eps = std::pow(span, 1.0 / sc.alpha);
        Vec fwd = flow.solve_regularized(eps, 0.0, span, x);
        double inv = (flow.solve_regularized(eps, span, 0.0, fwd) - x).norm();
        worst_inverse = std::max(worst_inverse, inv);
        double rt = (x - flow.solve(span, 0.0, flow.solve(0.0, span, x))).norm();
        double fd = flow.approximate_flow_defect(0.0, 0.5 * span, span, x);
        auto [jac, det_inv] = flow.jacobian(0.0, span, x);
        (void)jac;
        double dd = std::abs(det_inv - 1.0);
        double cr = flow.comparability_ratio(0.0, span, x, make_vec({0.3}));
        spans.push_back(span);
        defects.push_back(std::max(fd, 1e-300));
        detdevs.push_back(std::max(dd, 1e-300));
        if (csv) {
            csv->row({0, span, inv});
            csv->row({1, span, rt});
            csv->row({2, span, fd});
            csv->row({3, span, dd});
            csv->row({4, span, cr});
        }
    }
    auto slope = [](const std::vector<double>& xs, const std::vector<double>& ys) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int n = static_cast<int>(xs.size());
        for (int i = 0; i < n; ++i) {
            sx += std::log(xs[i]);
            sy += std::log(ys[i]);
            sxx += sqr(std::log(xs[i]));
            sxy += std::log(xs[i]) * std::log(ys[i]);
        }
        return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    };
    j["worst_inverse_defect"] = worst_inverse;
    j["defect_slope"] = slope(spans, defects);
    j["det_dev_slope"] = slope(spans, detdevs);
    j["defect_slope_target"] = 1.0 / sc.alpha;
    j["det_dev_slope_target"] = (sc.alpha + sc.beta - 1.0) / sc.alpha;
    return j;
}

json run_density(RunContext& ctx, double s, double t, double y0, double lo, double hi, int n,
                 bool write_csv) {
    ParametrixKernel pk(ctx.scenario, ctx.flow);
    Vec y = make_vec({y0});
    std::unique_ptr<CsvWriter> csv;
    if (write_csv)
        csv = std::make_unique<CsvWriter>(
            fs::path(ctx.out) / "density.csv",
            std::vector<std::string>{"s", "x", "t", "y", "p0", "pN", "phi", "ratio"});
    const Scenario& sc = ctx.scenario;
    ProfileSpec prof{sc.alpha, 0.0, sc.alpha};
    double sup = 0.0, inf = 1e300;
    for (int i = 0; i < n; ++i) {
        double xv = lo + (hi - lo) * i / std::max(n - 1, 1);
        Vec x = make_vec({xv});
        auto ev = pk.truncated_density(s, x, t, y);
        double phi = phi_profile(*ctx.flow, prof, s, x, t, y);
        double ratio = ev.value / phi;
        sup = std::max(sup, ratio);
        inf = std::min(inf, ratio);
        if (csv) csv->row({s, xv, t, y0, ev.p0, ev.value, phi, ratio});
    }
    return json{{"points", n}, {"ratio_sup", sup}, {"ratio_inf", inf}};
}

json run_mc(RunContext& ctx, std::size_t paths, int steps) {
    const Scenario& sc = ctx.scenario;
    json j;
    // terminal KDE against the truncated parametrix density
    double s = 0.0, t = 0.5;
    Vec x0 = make_vec({0.5});
    auto ens = simulate_paths(*ctx.field, sc, s, x0, t, steps, paths, ctx.seed,
                              {false, 1e8, ctx.threads});
    double scale = std::pow(t - s, 1.0 / sc.alpha);
    Vec center = ctx.flow->solve(s, t, x0);
    auto lattice = graded_lattice(center[0], 6.0 * scale, 40.0 * scale, 60, 1.5);
    auto kde = kde_density(ens, lattice);
    ParametrixKernel pk(sc, ctx.flow);
    CsvWriter csv(fs::path(ctx.out) / "mc.csv",
                  std::vector<std::string>{"y", "kde", "kde_se", "pN", "rel_err"});
    double worst = 0.0;
    for (std::size_t i = 0; i < lattice.size(); ++i) {
        Vec y = make_vec({lattice[i]});
        double p = pk.truncated_density(s, x0, t, y).value;
        double rel = (p > 1e-3) ? std::abs(kde.value[i] - p) / p : 0.0;
        worst = std::max(worst, rel);
        csv.row({lattice[i], kde.value[i], kde.stderr_[i], p, rel});
    }
    j["kde_vs_pN_worst_rel"] = worst;
    j["kde_mass"] = kde.lattice_mass();
    j["overflow_paths"] = ens.overflow_count;

    auto levy = levy_system_check(*ctx.field, sc, 0.0, make_vec({0.0}), 0.5,
                                  std::max(100, steps / 4), std::min<std::size_t>(paths, 50000),
                                  ctx.seed + 1, 1.0);
    j["levy_system"] = levy.to_json();
    auto tube = find_tube_epsilon(*ctx.flow, sc, 0.0, make_vec({1.0}),
                                  0.5 * std::pow(sc.T, 1.0 / sc.alpha), 3000, 80, ctx.seed + 2,
                                  0.5, ctx.threads);
    j["tube"] = json{{"eps", tube.eps}, {"probability", tube.probability},
                     {"found", tube.found}};
    auto chain = chaining_lower_bound(*ctx.flow, sc, 0.0, 0.8, make_vec({0.3}), 3.0, 0.3,
                                      {1.0, 2.0, 4.0}, std::min<std::size_t>(paths, 50000), 100,
                                      ctx.seed + 3, ctx.threads);
    j["chaining"] = chain.to_json();
    return j;
}

json run_verify(RunContext& ctx, const VerifyGrid& grid, bool write_csv) {
    ParametrixKernel pk(ctx.scenario, ctx.flow);
    json j;
    BoundReport reps[3] = {verify_two_sided(pk, *ctx.flow, grid),
                           verify_fractional(pk, *ctx.flow, grid),
                           verify_gradient(pk, *ctx.flow, grid)};
    j["two_sided"] = reps[0].to_json();
    j["fractional"] = reps[1].to_json();
    j["gradient"] = reps[2].to_json();
    if (write_csv) {
        CsvWriter csv(fs::path(ctx.out) / "verify.csv",
                      std::vector<std::string>{"estimate_id", "span", "y", "offset", "ratio"});
        for (int k = 0; k < 3; ++k)
            for (const json& row : reps[k].rows) {
                if (!row.contains("ratio")) continue;
                csv.row({static_cast<double>(k + 1), row["span"].get<double>(),
                         row["y"].get<double>(), row["offset"].get<double>(),
                         row["ratio"].get<double>()});
            }
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heat kernels of alpha-stable SDEs via the mollified-flow parametrix"};
    app.require_subcommand(1);

    std::string config_path, preset = "catalog";
    double alpha = 1.0;
    RunContext ctx;
    app.add_option("--config", config_path, "scenario JSON file");
    app.add_option("--preset", preset, "built-in scenario: exact|catalog|linear|holder");
    app.add_option("--alpha", alpha, "stability index for presets");
    app.add_option("--seed", ctx.seed, "master seed");
    app.add_option("--threads", ctx.threads, "worker threads");
    app.add_option("--out", ctx.out, "output directory");

    auto* c_validate = app.add_subcommand("validate", "check coefficient hypotheses");
    int samples = 500;
    c_validate->add_option("--samples", samples, "sampled (t,x,y) triples");

    auto* c_flow = app.add_subcommand("flow", "flow-map diagnostics");

    auto* c_density = app.add_subcommand("density", "frozen/parametrix density lattice");
    double ds = 0.0, dt = 0.5, dy = 0.0, dlo = -3.0, dhi = 3.0;
    int dn = 41;
    c_density->add_option("--s", ds);
    c_density->add_option("--t", dt);
    c_density->add_option("--y", dy);
    c_density->add_option("--lo", dlo);
    c_density->add_option("--hi", dhi);
    c_density->add_option("--n", dn);

    auto* c_mc = app.add_subcommand("mc", "Monte-Carlo experiments");
    std::size_t paths = 100000;
    int steps = 400;
    c_mc->add_option("--paths", paths);
    c_mc->add_option("--steps", steps);

    auto* c_verify = app.add_subcommand("verify", "two-sided/fractional/gradient bound reports");
    std::vector<double> spans{0.5};
    c_verify->add_option("--spans", spans, "t-s values");

    auto* c_report = app.add_subcommand("report", "aggregate summary report");
    bool quick = false;
    c_report->add_flag("--quick", quick, "small deterministic battery");

    CLI11_PARSE(app, argc, argv);

    try {
        ctx.scenario = scenario_from_options(config_path, preset, alpha, ctx.config);
        ctx.finalize();

        if (c_validate->parsed()) {
            json j = run_validate(ctx, samples);
            write_json_file(fs::path(ctx.out) / "validate.json", j);
            std::cout << (j["hypotheses"]["pass"].get<bool>() ? "PASS" : "FAIL")
                      << " hypothesis validation\n";
        } else if (c_flow->parsed()) {
            json j = run_flow(ctx, true);
            write_json_file(fs::path(ctx.out) / "flow.json", j);
            std::cout << "flow diagnostics written\n";
        } else if (c_density->parsed()) {
            json j = run_density(ctx, ds, dt, dy, dlo, dhi, dn, true);
            write_json_file(fs::path(ctx.out) / "density.json", j);
            std::cout << "density lattice written\n";
        } else if (c_mc->parsed()) {
            json j = run_mc(ctx, paths, steps);
            write_json_file(fs::path(ctx.out) / "mc.json", j);
            std::cout << "mc experiments written\n";
        } else if (c_verify->parsed()) {
            VerifyGrid grid;
            grid.spans = spans;
            json j = run_verify(ctx, grid, true);
            write_json_file(fs::path(ctx.out) / "verify.json", j);
            bool ok = j["two_sided"]["pass"].get<bool>() &&
                      j["fractional"]["pass"].get<bool>() &&
                      j["gradient"]["pass"].get<bool>();
            std::cout << (ok ? "PASS" : "FAIL") << " bound verification\n";
        } else if (c_report->parsed()) {
            json j;
            j["scenario"] = ctx.config;
            j["validate"] = run_validate(ctx, quick ? 200 : 500);
            j["flow"] = run_flow(ctx, false);
            j["density"] = run_density(ctx, 0.0, 0.5, 0.0, -2.0, 2.0, quick ? 9 : 21, false);
            VerifyGrid grid;
            if (quick) grid.offsets = {-2.0, 0.0, 2.0};
            j["verify"] = run_verify(ctx, grid, false);
            write_json_file(fs::path(ctx.out) / "report.json", j);
            std::cout << "report written\n";
        }
    } catch (const config_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
