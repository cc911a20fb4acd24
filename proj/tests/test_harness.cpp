#include "hmlab/harness.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hmlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("hmlab_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string replace_line(std::string text, const std::string& from, const std::string& to)
{
    auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    return text.replace(pos, from.size(), to);
}

RunRecord short_ode()
{
    NetworkConfig net;
    net.N = 128;
    net.D = 64;
    auto s = init_gaussian(net, 3, true);
    OdeConfig oc;
    oc.t_end = 0.1;
    return run_ode(net, s, oc, nonlinearity_stats(net.f));
}

}  // namespace

TEST_CASE("config templates parse and round trip")
{
    auto cfg = parse_config(config_template("full"));
    CHECK(cfg.net.N == 4096);
    CHECK(cfg.net.D == 2048);
    CHECK(cfg.sgd.eta == 0.2);
    CHECK(resolved(cfg.sgd, cfg.net.N).steps == 10L * 4096);
    auto desk = parse_config(config_template("desk"));
    CHECK(desk.net.N == 1024);
    CHECK(desk.net.D == 512);
    CHECK_THROWS_AS(config_template("huge"), ConfigError);

    auto text = dump_config(cfg);
    CHECK(dump_config(parse_config(text)) == text);
}

TEST_CASE("config errors")
{
    auto base = config_template("desk");
    CHECK_THROWS_AS(parse_config(base + "bogus: 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(replace_line(base, "eta: 0.2", "eta: fast")), ConfigError);
    CHECK_THROWS_AS(parse_config(replace_line(base, "kind: gaussian", "kind: cauchy")), ConfigError);
    CHECK_THROWS_AS(parse_config(replace_line(base, "  N: 1024", "  N: 0")), Error);
    CHECK_THROWS_AS(load_config((scratch_dir("missing") / "x.yaml").string()), Error);
}

TEST_CASE("config hash ignores the output directory")
{
    auto a = parse_config(config_template("desk"));
    auto b = a;
    b.out = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.sgd.eta = 0.1;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("realized inputs")
{
    auto cfg = parse_config(config_template("desk"));
    cfg.input.kind = "mixture";
    cfg.input.q = 4;
    auto spec = realize_input(cfg);
    CHECK(input_dim(spec) == cfg.net.D);
    auto again = realize_input(cfg);
    CHECK(std::get<MixtureSpec>(spec).mu == std::get<MixtureSpec>(again).mu);
    cfg.input.kind = "table";
    cfg.input.table = "nonsense";
    CHECK_THROWS_AS(realize_input(cfg), Error);
}

TEST_CASE("empirical streams are standardized over train and eval rows")
{
    auto cfg = parse_config(config_template("desk"));
    cfg.net.D = 16;
    cfg.sgd.P_eval = 3000;
    cfg.standardize = StdMode::empirical;
    cfg.input.kind = "law";
    cfg.input.law = Law::laplace;
    auto spec = realize_input(cfg);
    const long steps = 5000;
    auto st = make_streams(cfg, spec, 1, 2, steps);
    Mat tr = st.train->take(steps);
    Mat ev = st.eval->take(cfg.sgd.P_eval);
    Mat all(steps + cfg.sgd.P_eval, cfg.net.D);
    all << tr, ev;
    Vec mean = all.colwise().mean().transpose();
    Vec var = (all.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK_THROWS(st.train->take(1));
}

TEST_CASE("truncated empirical runs are prefixes of the full run")
{
    auto cfg = parse_config(config_template("desk"));
    cfg.net.N = 128;
    cfg.net.D = 64;
    cfg.sgd.P_eval = 2000;
    cfg.standardize = StdMode::empirical;
    cfg.input.kind = "law";
    cfg.input.law = Law::laplace;
    auto s = init_gaussian(cfg.net, 4, true);
    auto f = nonlinearity_stats(cfg.net.f);
    auto spec = realize_input(cfg);
    auto part = sgd_run(cfg, s, spec, f, 1, 2, 256, 128);
    auto full = sgd_run(cfg, s, spec, f, 1, 2, -1, 128);
    REQUIRE(part.snaps.size() == 3);
    for (size_t i = 0; i < part.snaps.size(); ++i) {
        CHECK(part.snaps[i].eps_g == full.snaps[i].eps_g);
        CHECK(part.snaps[i].Q == full.snaps[i].Q);
    }
}

TEST_CASE("report verdicts")
{
    auto ode = short_ode();
    Baseline base;
    base.tau = 12;
    base.e_base = 0.01;
    base.sigma_base = 0.002;
    auto r = build_report(ode, ode, base, 128);
    CHECK(r.tau == doctest::Approx(12.0 / 128));
    for (auto& [k, e] : r.errors) CHECK(e == 0.0);
    CHECK(r.converged);
    auto j = to_json(r);
    CHECK(j["verdict"] == "converged");
    CHECK(j["threshold"].get<double>() == doctest::Approx(0.012));

    RunRecord off = ode;
    for (auto& op : off.snaps) op.eps_g += 0.0125;
    auto bad = build_report(off, ode, base, 128);
    CHECK(bad.errors.at("eps_g") == doctest::Approx(0.0125));
    CHECK_FALSE(bad.converged);
    CHECK(to_json(bad)["verdict"] == "diverged");
    // the verdict follows from the recorded numbers alone
    auto jb = to_json(bad);
    CHECK((jb["errors"]["eps_g"].get<double>() <= jb["threshold"].get<double>()) == bad.converged);
}

TEST_CASE("baseline json round trip")
{
    Baseline b;
    b.tau = 1000;
    b.e_base = 0.0123456789012345;
    b.sigma_base = 0.004;
    b.errors = {0.01, 0.02, 0.0070370367};
    b.key = "abc";
    auto back = baseline_from_json(nlohmann::json::parse(to_json(b).dump()));
    CHECK(back.tau == b.tau);
    CHECK(back.e_base == b.e_base);
    CHECK(back.sigma_base == b.sigma_base);
    CHECK(back.errors == b.errors);
    CHECK(back.key == b.key);
}

TEST_CASE("plot data emission")
{
    auto dir = scratch_dir("plots");
    auto ode = short_ode();
    CHECK_THROWS_AS(emit_plot_data("fig3", std::vector<std::pair<std::string, RunRecord>>{}, dir.string()),
                    ParameterError);
    CHECK_THROWS_AS(emit_plot_data("fig99", {{"ode", ode}}, dir.string()), ParameterError);
    CHECK_FALSE(fs::exists(dir));

    emit_plot_data("fig3", {{"ode", ode}, {"sgd", ode}}, dir.string());
    for (const char* q : {"a_eps_g", "b_Q", "c_R", "d_v"})
        CHECK(fs::exists(dir / ("fig3_" + std::string(q) + ".csv")));
    auto csv = slurp(dir / "fig3_a_eps_g.csv");
    CHECK(csv.rfind("series,t,entry,value\n", 0) == 0);

    std::vector<DiagRow> rows;
    std::vector<double> x, y;
    for (int m : {4, 8, 16, 32}) {
        rows.push_back({"U", m, 512, 1.0 / std::sqrt(512.0 / m), 0.01});
        x.push_back(m / 512.0);
        y.push_back(rows.back().statistic);
    }
    auto fits = fit_rows(rows, 0.0, 1.0);
    REQUIRE(fits.size() == 2);
    CHECK(fits[0].label == "U/D=512");
    CHECK(fits[1].label == "U/pooled");
    CHECK(fits[1].slope == doctest::Approx(0.5));
    emit_plot_data("fig6", rows, fits, dir.string());
    CHECK(fs::exists(dir / "fig6.csv"));
    CHECK(fs::exists(dir / "fig6_fit.csv"));
    CHECK_THROWS_AS(emit_plot_data("fig6", std::vector<DiagRow>{}, fits, dir.string()), ParameterError);

    emit_plot_data("fig2", std::vector<W1Row>{{2, 0.1, 0.001}}, dir.string());
    CHECK(slurp(dir / "fig2.csv").rfind("q,alpha,w1\n", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("write helpers")
{
    auto dir = scratch_dir("write");
    auto file = (dir / "nested" / "a.txt").string();
    write_text(file, "one");
    CHECK(slurp(file) == "one");
    CHECK_THROWS_AS(write_text(file, "two", false), IoError);
    write_text(file, "two");
    CHECK(slurp(file) == "two");

    auto cfg = parse_config(config_template("desk"));
    write_manifest(dir.string(), cfg, {{"note", 1}});
    auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m["extra"]["note"] == 1);
    CHECK(m["config_hash"] == config_hash(cfg));
    CHECK(fs::exists(dir / "timestamps.json"));
    fs::remove_all(dir);
}

TEST_CASE("parallel_for")
{
    std::vector<std::atomic<int>> hits(37);
    parallel_for(37, 4, [&](int i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    parallel_for(5, 1, [&](int i) { hits[i]++; });
    CHECK(hits[4].load() == 2);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](int i) {
                                     if (i == 6) throw DivergenceError("boom", i);
                                 }),
                    DivergenceError);
}

TEST_CASE("sweep grids")
{
    CHECK(sweep_ms(1024, 1.0 / 1024, 0.25) == std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128, 256});
    CHECK(sweep_ms(1024, 1.0 / 1024, 0.25, 4) == std::vector<int>{4, 8, 16, 32, 64, 128, 256});
    CHECK(sweep_ms(512, 1.0 / 128, 1.0 / 16) == std::vector<int>{4, 8, 16, 32});
}

TEST_CASE("W1 sweep grows with the mean spread")
{
    auto rows = w1_sweep({2, 8}, {0.01, 0.1, 1.0}, 64, 5);
    REQUIRE(rows.size() == 6);
    for (int q : {2, 8}) {
        std::vector<double> w;
        for (auto& r : rows)
            if (r.q == q) w.push_back(r.w1);
        REQUIRE(w.size() == 3);
        CHECK(w[0] <= w[1] + 1e-6);
        CHECK(w[1] <= w[2] + 1e-6);
        CHECK(w[0] < 1e-3);
    }
}
