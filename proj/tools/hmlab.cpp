#include "hmlab/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace hmlab;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::vector<std::uint64_t> seeds;
    int threads = 1;
    bool overwrite = false;
};

void add_common(CLI::App* app, Common& c, bool needs_config)
{
    auto* opt = app->add_option("--config", c.config, "experiment config (YAML)");
    if (needs_config) opt->required();
    app->add_option("--out", c.out, "output directory (overrides the config)");
    app->add_option("--seeds", c.seeds, "SGD seeds, comma separated")->delimiter(',');
    app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    app->add_flag("--overwrite", c.overwrite, "replace existing artifacts");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (!c.out.empty()) cfg.out = c.out;
    if (!c.seeds.empty()) cfg.seeds.sgd = c.seeds;
    validate(cfg);
    return cfg;
}

std::string prepare_dir(const std::string& dir, bool overwrite)
{
    fs::path p(dir);
    if (fs::exists(p / "manifest.json") && !overwrite)
        throw IoError(dir + " already holds results (use --overwrite)");
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    return dir;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

struct Model {
    NetworkState s;
    NonlinearityStats f;
};

Model build_model(const ExperimentConfig& cfg)
{
    return {init_gaussian(cfg.net, cfg.seeds.model, true), nonlinearity_stats(cfg.net.f)};
}

std::string seed_name(std::uint64_t seed) { return "sgd_seed" + std::to_string(seed) + ".csv"; }

nlohmann::json run_sgd_cmd(const ExperimentConfig& cfg, const Model& m, int threads, const std::string& dir,
                           std::vector<RunRecord>* keep = nullptr)
{
    InputSpec spec = realize_input(cfg);
    auto runs = sgd_runs(cfg, m.s, spec, m.f, cfg.sgd.steps, cfg.sgd.stride, threads);
    nlohmann::json files = nlohmann::json::array();
    for (size_t i = 0; i < runs.size(); ++i) {
        write_record_csv(path_in(dir, seed_name(cfg.seeds.sgd[i])), runs[i]);
        files.push_back({{"file", seed_name(cfg.seeds.sgd[i])},
                         {"sample_seed", cfg.seeds.sgd[i]},
                         {"eval_seed", cfg.seeds.eval + i}});
    }
    RunRecord avg = average_runs(runs);
    write_record_csv(path_in(dir, "sgd_avg.csv"), avg);
    if (keep) *keep = std::move(runs);
    return files;
}

int cmd_gen_config(const std::string& profile, const std::string& out, bool overwrite)
{
    std::string text = config_template(profile);
    parse_config(text);
    if (out.empty() || out == "-")
        std::cout << text;
    else
        write_text(out, text, overwrite);
    return 0;
}

int cmd_sgd(const Common& c)
{
    ExperimentConfig cfg = resolve(c);
    std::string dir = prepare_dir(cfg.out, c.overwrite);
    Model m = build_model(cfg);
    nlohmann::json files = run_sgd_cmd(cfg, m, c.threads, dir);
    write_manifest(dir, cfg, {{"command", "sgd"}, {"runs", files}, {"average", "sgd_avg.csv"}});
    std::cout << "wrote " << files.size() << " runs and sgd_avg.csv to " << dir << "\n";
    return 0;
}

int cmd_ode(const Common& c)
{
    ExperimentConfig cfg = resolve(c);
    std::string dir = prepare_dir(cfg.out, c.overwrite);
    Model m = build_model(cfg);
    RunRecord ode = ode_run(cfg, m.s, m.f);
    write_record_csv(path_in(dir, "ode.csv"), ode);
    write_manifest(dir, cfg, {{"command", "ode"}, {"record", "ode.csv"}});
    std::cout << "wrote ode.csv to " << dir << "\n";
    return 0;
}

int cmd_compare_files(const std::string& a, const std::string& b, double tau, const std::string& baseline,
                      const std::string& out)
{
    RunRecord ra = read_record_csv(a), rb = read_record_csv(b);
    Baseline base;
    if (!baseline.empty()) {
        std::ifstream in(baseline);
        if (!in) throw IoError("cannot open " + baseline);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(baseline + ": " + e.what());
        }
        base = baseline_from_json(j);
    }
    ComparisonReport rep;
    rep.tau = tau;
    rep.tau_steps = base.tau;
    for (Quantity q : {Quantity::eps_g, Quantity::Q, Quantity::R, Quantity::v})
        rep.errors[to_string(q)] = dynamic_error(ra, rb, q, tau);
    rep.e_base = base.e_base;
    rep.sigma_base = base.sigma_base;
    rep.converged = rep.errors.at("eps_g") <= rep.threshold();
    rep.paths = {{"a", a}, {"b", b}};
    auto j = to_json(rep);
    if (out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(out, j);
    return 0;
}

int cmd_compare(const Common& c, const std::string& figure, const std::string& cache_dir)
{
    ExperimentConfig cfg = resolve(c);
    std::string dir = prepare_dir(cfg.out, c.overwrite);
    Model m = build_model(cfg);
    RunRecord ode = ode_run(cfg, m.s, m.f);
    write_record_csv(path_in(dir, "ode.csv"), ode);
    std::vector<RunRecord> runs;
    nlohmann::json files = run_sgd_cmd(cfg, m, c.threads, dir, &runs);
    RunRecord avg = average_runs(runs);
    Baseline base = cached_baseline(cfg, m.s, m.f, ode, c.threads, cache_dir.empty() ? dir : cache_dir);
    write_json(path_in(dir, "baseline.json"), to_json(base));
    ComparisonReport rep = build_report(avg, ode, base, cfg.net.N);
    rep.paths = {{"ode", "ode.csv"}, {"sgd_avg", "sgd_avg.csv"}, {"baseline", "baseline.json"}};

    // largest eps_g gap over the shared snapshot grid
    double max_gap = 0.0;
    for (const auto& op : avg.snaps)
        if (op.t <= ode.snaps.back().t) max_gap = std::max(max_gap, std::abs(op.eps_g - interpolate(ode, op.t).eps_g));
    auto j = to_json(rep);
    j["max_eps_g_gap"] = max_gap;
    write_json(path_in(dir, "report.json"), j);
    if (!figure.empty()) {
        std::vector<std::pair<std::string, RunRecord>> recs{{"ode", ode}, {"sgd_avg", avg}};
        emit_plot_data(figure, recs, dir);
    }
    write_manifest(dir, cfg, {{"command", "compare"}, {"runs", files}, {"figure", figure}});
    std::cout << "e_eps_g(tau) = " << rep.errors.at("eps_g") << "  threshold = " << rep.threshold()
              << "  verdict = " << (rep.converged ? "converged" : "diverged") << "\n";
    return 0;
}

struct DiagOpts {
    std::vector<int> Ds;
    long P = 0;
    double lo = 0.0, hi = 0.0;
    double fit_lo = 0.0, fit_hi = 0.25;  // fit_lo 0: full range for the third moment, else 2^-7
    std::uint64_t seed = 2024;
    int m_min = 4;
    std::vector<int> qs{2, 4, 8, 16};
    std::vector<double> alphas{0.1, 0.5, 1.0, 2.0, 5.0};
    int w1_dims = 64;
};

ScalingDesign design_from(const DiagOpts& o)
{
    ScalingDesign d;
    if (!o.Ds.empty()) d.Ds = o.Ds;
    if (o.P > 0) d.P = o.P;
    if (o.lo > 0) d.lo = o.lo;
    if (o.hi > 0) d.hi = o.hi;
    d.seed = o.seed;
    d.m_min = o.m_min;
    return d;
}

int cmd_diag(const std::string& which, const Common& c, const DiagOpts& o)
{
    std::string dir = prepare_dir(c.out.empty() ? "runs/diag_" + which : c.out, c.overwrite);
    ExperimentConfig cfg = resolve(c);
    cfg.out = dir;
    nlohmann::json extra{{"command", "diag " + which}, {"seed", o.seed}};
    if (which == "w1") {
        auto rows = w1_sweep(o.qs, o.alphas, o.w1_dims, o.seed);
        emit_plot_data("fig2", rows, dir);
        for (const auto& r : rows) std::cout << "q=" << r.q << " alpha=" << r.alpha << " W1=" << r.w1 << "\n";
    } else if (which == "corr") {
        Model m = build_model(cfg);
        InputSpec spec = realize_input(cfg);
        long P = o.P > 0 ? o.P : 100000;
        Streams st = make_streams(cfg, spec, cfg.seeds.sgd.front(), cfg.seeds.eval, P);
        auto d = correlation_diagnostics(cfg.net, m.s, *st.train, P, cfg.seeds.reference);
        nlohmann::json j{{"L_nu", d.nu}, {"L_U", d.U}, {"L_Wt", d.Wt}, {"P", P}};
        write_json(path_in(dir, "corr.json"), j);
        std::cout << j.dump(2) << "\n";
    } else {
        ScalingDesign d = design_from(o);
        std::vector<DiagRow> rows;
        std::string tag;
        if (which == "third-moment") {
            rows = third_moment_sweep(d);
            tag = "fig6";
        } else if (which == "ks-scaling") {
            rows = ks_sweep(d);
            tag = "fig7";
        } else {
            rows = residual_sweep(d);
            tag = "fig8";
        }
        double fit_lo = o.fit_lo > 0 ? o.fit_lo : (which == "third-moment" ? d.lo : 1.0 / 128.0);
        auto fits = fit_rows(rows, fit_lo, o.fit_hi);
        emit_plot_data(tag, rows, fits, dir);
        for (const auto& f : fits) std::cout << f.label << ": slope " << f.slope << " (r2 " << f.r2 << ")\n";
        extra["design"] = {{"Ds", d.Ds}, {"P", d.P}, {"lo", d.lo}, {"hi", d.hi}, {"q", d.q}, {"m_min", d.m_min}};
    }
    write_manifest(dir, cfg, extra);
    return 0;
}

int cmd_sweep(const std::string& param, const Common& c, std::vector<double> values)
{
    ExperimentConfig cfg = resolve(c);
    if (values.empty()) {
        if (param == "m")
            values = {1, 2, 4, 8, 16, 32, 64};
        else if (param == "alpha")
            values = {0.01, 0.1, 1.0};
        else
            values = {2, 4, 8, 16};
    }
    std::string dir = prepare_dir(cfg.out, c.overwrite);
    auto rows = run_sweep(cfg, param, values, c.threads, dir);
    write_sweep_csv(path_in(dir, "sweep_" + param + ".csv"), rows);
    std::vector<double> v, e;
    for (const auto& r : rows) {
        v.push_back(r.value);
        e.push_back(r.errors.at("eps_g"));
        std::cout << param << "=" << r.value << "  e_eps_g=" << r.errors.at("eps_g") << "  "
                  << (r.converged ? "converged" : "diverged") << "\n";
    }
    nlohmann::json extra{{"command", "sweep " + param}, {"values", values}};
    if (rows.size() >= 2) {
        double rho = spearman(v, e);
        extra["spearman"] = rho;
        std::cout << "spearman(" << param << ", e_eps_g) = " << rho << "\n";
    }
    write_manifest(dir, cfg, extra);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hmlab: hidden-manifold learning dynamics, SGD vs ODE"};
    app.require_subcommand(1);

    Common common;
    std::string profile = "full", gen_out;
    auto* gen = app.add_subcommand("gen-config", "print or write a commented config template");
    gen->add_option("--profile", profile, "full | desk");
    gen->add_option("--out", gen_out, "file to write (default stdout)");
    gen->add_flag("--overwrite", common.overwrite, "replace an existing file");

    auto* sgd = app.add_subcommand("sgd", "multi-seed SGD runs and their average");
    add_common(sgd, common, true);
    auto* ode = app.add_subcommand("ode", "integrate the order-parameter ODE");
    add_common(ode, common, true);

    std::string fa, fb, baseline, report_out, figure, cache_dir;
    double tau = -1.0;
    auto* cmp = app.add_subcommand("compare", "ODE vs averaged SGD with baseline thresholds");
    add_common(cmp, common, false);
    cmp->add_option("--a", fa, "first record CSV");
    cmp->add_option("--b", fb, "second record CSV");
    cmp->add_option("--tau", tau, "normalized evaluation time for --a/--b");
    cmp->add_option("--baseline", baseline, "baseline JSON for --a/--b");
    cmp->add_option("--report", report_out, "report path for --a/--b (default stdout)");
    cmp->add_option("--figure", figure, "also emit plot data under this tag (fig3, fig4, fig5, figm)");
    cmp->add_option("--cache-dir", cache_dir, "baseline cache directory (default: output directory)");

    DiagOpts dopt;
    auto* diag = app.add_subcommand("diag", "equivalence diagnostics");
    diag->require_subcommand(1);
    std::string diag_which;
    const std::pair<const char*, const char*> diag_kinds[] = {
        {"w1", "mixture marginals vs the normal, over q and alpha"},
        {"ks-scaling", "KS distance of the block sum vs m/D"},
        {"third-moment", "summed block third moments vs m/D"},
        {"residuals", "R1, R2 covariance residuals vs m/D"},
        {"corr", "correlation diagnostics against a Gaussian reference"}};
    for (auto [name, help] : diag_kinds) {
        auto* sub = diag->add_subcommand(name, help);
        add_common(sub, common, false);
        sub->add_option("--D", dopt.Ds, "latent widths")->delimiter(',');
        sub->add_option("--P", dopt.P, "samples per point");
        sub->add_option("--lo", dopt.lo, "smallest m/D");
        sub->add_option("--hi", dopt.hi, "largest m/D");
        sub->add_option("--fit-lo", dopt.fit_lo, "fit window start");
        sub->add_option("--fit-hi", dopt.fit_hi, "fit window end");
        sub->add_option("--seed", dopt.seed, "design seed");
        sub->add_option("--m-min", dopt.m_min, "smallest block size in scaling sweeps");
        sub->add_option("--q", dopt.qs, "mixture sizes (w1)")->delimiter(',');
        sub->add_option("--alpha", dopt.alphas, "mean spreads (w1)")->delimiter(',');
        sub->add_option("--dims", dopt.w1_dims, "dimensions averaged (w1)");
        sub->callback([&diag_which, name] { diag_which = name; });
    }

    std::vector<double> sweep_values;
    std::string sweep_which;
    auto* sweep = app.add_subcommand("sweep", "tau comparisons over an input parameter");
    sweep->require_subcommand(1);
    const std::pair<const char*, const char*> sweep_kinds[] = {
        {"m", "block size of block-mixture inputs"},
        {"alpha", "mean spread of standardized mixtures"},
        {"q", "component count of standardized mixtures"}};
    for (auto [name, help] : sweep_kinds) {
        auto* sub = sweep->add_subcommand(name, help);
        add_common(sub, common, true);
        sub->add_option("--values", sweep_values, "parameter values")->delimiter(',');
        sub->callback([&sweep_which, name] { sweep_which = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen_config(profile, gen_out, common.overwrite);
        if (*sgd) return cmd_sgd(common);
        if (*ode) return cmd_ode(common);
        if (*cmp) {
            if (!fa.empty() || !fb.empty()) {
                if (fa.empty() || fb.empty() || tau < 0)
                    throw ConfigError("--a, --b and --tau are required together");
                return cmd_compare_files(fa, fb, tau, baseline, report_out);
            }
            if (common.config.empty()) throw ConfigError("compare needs --config or --a/--b");
            return cmd_compare(common, figure, cache_dir);
        }
        if (*diag) return cmd_diag(diag_which, common, dopt);
        if (*sweep) return cmd_sweep(sweep_which, common, sweep_values);
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << " (at " << e.at << ")\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
