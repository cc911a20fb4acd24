#include "hmlab/harness.hpp"

#include "hmlab/matrix_io.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace hmlab {

namespace {

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    return splitmix(splitmix(seed ^ splitmix(a)) ^ splitmix(b + 0x1234567ULL));
}

void check_keys(const YAML::Node& node, const std::string& where, std::set<std::string> allowed)
{
    if (!node) return;
    if (!node.IsMap()) throw ConfigError("section '" + where + "' must be a mapping");
    for (auto it : node) {
        auto key = it.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in section '" + where + "'");
    }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out)
{
    if (!node || !node[key]) return;
    try {
        out = node[key].as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

template <class T, class Parse>
void read_tag(const YAML::Node& node, const char* key, T& out, Parse parse)
{
    std::string tag;
    read(node, key, tag);
    if (tag.empty()) return;
    try {
        out = parse(tag);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    ExperimentConfig c;
    if (!root || root.IsNull()) return c;
    if (!root.IsMap()) throw ConfigError("config must be a mapping");
    check_keys(root, "top level",
               {"name", "network", "sgd", "ode", "input", "standardize", "seeds", "comparison", "out"});
    read(root, "name", c.name);
    read(root, "out", c.out);
    read_tag(root, "standardize", c.standardize, parse_std_mode);

    auto n = root["network"];
    check_keys(n, "network", {"N", "D", "K", "M", "g", "gt", "f"});
    read(n, "N", c.net.N);
    read(n, "D", c.net.D);
    read(n, "K", c.net.K);
    read(n, "M", c.net.M);
    read_tag(n, "g", c.net.g, parse_fn);
    read_tag(n, "gt", c.net.gt, parse_fn);
    read_tag(n, "f", c.net.f, parse_fn);

    auto s = root["sgd"];
    check_keys(s, "sgd", {"eta", "steps", "stride", "P_eval"});
    read(s, "eta", c.sgd.eta);
    read(s, "steps", c.sgd.steps);
    read(s, "stride", c.sgd.stride);
    read(s, "P_eval", c.sgd.P_eval);

    auto o = root["ode"];
    check_keys(o, "ode", {"dt", "t_end", "n_bins", "record_every", "grid"});
    read(o, "dt", c.ode.dt);
    read(o, "t_end", c.ode.t_end);
    read(o, "n_bins", c.ode.n_bins);
    read(o, "record_every", c.ode.record_every);
    read_tag(o, "grid", c.ode.grid, parse_grid_mode);

    auto in = root["input"];
    check_keys(in, "input", {"kind", "q", "alpha", "beta", "m", "block", "law", "params", "table"});
    read(in, "kind", c.input.kind);
    read(in, "q", c.input.q);
    read(in, "alpha", c.input.alpha);
    read(in, "beta", c.input.beta);
    read(in, "m", c.input.m);
    read(in, "table", c.input.table);
    read_tag(in, "law", c.input.law, parse_law);
    if (in && in["params"]) {
        if (!in["params"].IsMap()) throw ConfigError("input.params must be a mapping");
        for (auto it : in["params"]) c.input.params[it.first.as<std::string>()] = it.second.as<double>();
    }
    if (in && in["block"]) {
        auto b = in["block"];
        check_keys(b, "input.block",
                   {"mu_lo", "mu_hi", "delta_lo", "delta_hi", "rho_lo", "rho_hi", "tau_lo", "tau_hi", "sd_lo", "sd_hi"});
        auto& p = c.input.block;
        read(b, "mu_lo", p.mu_lo);
        read(b, "mu_hi", p.mu_hi);
        read(b, "delta_lo", p.delta_lo);
        read(b, "delta_hi", p.delta_hi);
        read(b, "rho_lo", p.rho_lo);
        read(b, "rho_hi", p.rho_hi);
        read(b, "tau_lo", p.tau_lo);
        read(b, "tau_hi", p.tau_hi);
        read(b, "sd_lo", p.sd_lo);
        read(b, "sd_hi", p.sd_hi);
    }

    auto sd = root["seeds"];
    check_keys(sd, "seeds", {"model", "input", "eval", "reference", "baseline", "sgd"});
    read(sd, "model", c.seeds.model);
    read(sd, "input", c.seeds.input);
    read(sd, "eval", c.seeds.eval);
    read(sd, "reference", c.seeds.reference);
    read(sd, "baseline", c.seeds.baseline);
    read(sd, "sgd", c.seeds.sgd);

    auto cmp = root["comparison"];
    check_keys(cmp, "comparison", {"tau", "baseline_runs"});
    read(cmp, "tau", c.tau);
    read(cmp, "baseline_runs", c.baseline_runs);

    validate(c);
    return c;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c)
{
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "name" << YAML::Value << c.name;
    e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "N" << YAML::Value << c.net.N << YAML::Key << "D" << YAML::Value << c.net.D;
    e << YAML::Key << "K" << YAML::Value << c.net.K << YAML::Key << "M" << YAML::Value << c.net.M;
    e << YAML::Key << "g" << YAML::Value << to_string(c.net.g);
    e << YAML::Key << "gt" << YAML::Value << to_string(c.net.gt);
    e << YAML::Key << "f" << YAML::Value << to_string(c.net.f);
    e << YAML::EndMap;
    e << YAML::Key << "sgd" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "eta" << YAML::Value << c.sgd.eta;
    e << YAML::Key << "steps" << YAML::Value << c.sgd.steps;
    e << YAML::Key << "stride" << YAML::Value << c.sgd.stride;
    e << YAML::Key << "P_eval" << YAML::Value << c.sgd.P_eval;
    e << YAML::EndMap;
    e << YAML::Key << "ode" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "dt" << YAML::Value << c.ode.dt;
    e << YAML::Key << "t_end" << YAML::Value << c.ode.t_end;
    e << YAML::Key << "n_bins" << YAML::Value << c.ode.n_bins;
    e << YAML::Key << "record_every" << YAML::Value << c.ode.record_every;
    e << YAML::Key << "grid" << YAML::Value << to_string(c.ode.grid);
    e << YAML::EndMap;
    e << YAML::Key << "input" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "kind" << YAML::Value << c.input.kind;
    e << YAML::Key << "q" << YAML::Value << c.input.q;
    e << YAML::Key << "alpha" << YAML::Value << c.input.alpha;
    e << YAML::Key << "beta" << YAML::Value << c.input.beta;
    e << YAML::Key << "m" << YAML::Value << c.input.m;
    const auto& b = c.input.block;
    e << YAML::Key << "block" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "mu_lo" << YAML::Value << b.mu_lo << YAML::Key << "mu_hi" << YAML::Value << b.mu_hi;
    e << YAML::Key << "delta_lo" << YAML::Value << b.delta_lo << YAML::Key << "delta_hi" << YAML::Value << b.delta_hi;
    e << YAML::Key << "rho_lo" << YAML::Value << b.rho_lo << YAML::Key << "rho_hi" << YAML::Value << b.rho_hi;
    e << YAML::Key << "tau_lo" << YAML::Value << b.tau_lo << YAML::Key << "tau_hi" << YAML::Value << b.tau_hi;
    e << YAML::Key << "sd_lo" << YAML::Value << b.sd_lo << YAML::Key << "sd_hi" << YAML::Value << b.sd_hi;
    e << YAML::EndMap;
    e << YAML::Key << "law" << YAML::Value << to_string(c.input.law);
    e << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : c.input.params) e << YAML::Key << k << YAML::Value << v;
    e << YAML::EndMap;
    e << YAML::Key << "table" << YAML::Value << c.input.table;
    e << YAML::EndMap;
    e << YAML::Key << "standardize" << YAML::Value << to_string(c.standardize);
    e << YAML::Key << "seeds" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "model" << YAML::Value << c.seeds.model;
    e << YAML::Key << "input" << YAML::Value << c.seeds.input;
    e << YAML::Key << "eval" << YAML::Value << c.seeds.eval;
    e << YAML::Key << "reference" << YAML::Value << c.seeds.reference;
    e << YAML::Key << "baseline" << YAML::Value << c.seeds.baseline;
    e << YAML::Key << "sgd" << YAML::Value << YAML::Flow << c.seeds.sgd;
    e << YAML::EndMap;
    e << YAML::Key << "comparison" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "tau" << YAML::Value << c.tau;
    e << YAML::Key << "baseline_runs" << YAML::Value << c.baseline_runs;
    e << YAML::EndMap;
    e << YAML::Key << "out" << YAML::Value << c.out;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

std::string config_template(const std::string& profile)
{
    int N, D;
    if (profile == "full") {
        N = 4096;
        D = 2048;
    } else if (profile == "desk") {
        N = 1024;
        D = 512;
    } else {
        throw ConfigError("unknown profile '" + profile + "' (full | desk)");
    }
    std::ostringstream o;
    o << "# hmlab experiment configuration (" << profile << " profile)\n"
      << "name: " << profile << "\n"
      << "\n"
      << "network:\n"
      << "  N: " << N << "          # student input width\n"
      << "  D: " << D << "          # latent width; delta = D / N\n"
      << "  K: 2             # student hidden units\n"
      << "  M: 2             # teacher hidden units\n"
      << "  g: relu          # student activation (relu | hardtanh | identity)\n"
      << "  gt: relu         # teacher activation\n"
      << "  f: tanh          # feature map (tanh | hardtanh | identity)\n"
      << "\n"
      << "sgd:\n"
      << "  eta: 0.2\n"
      << "  steps: -1        # -1 means 10 N\n"
      << "  stride: -1       # snapshot spacing in steps; -1 means N / 20\n"
      << "  P_eval: 10000    # held-out samples per generalization-error estimate\n"
      << "\n"
      << "ode:\n"
      << "  dt: 0.01\n"
      << "  t_end: 10\n"
      << "  n_bins: 64\n"
      << "  record_every: 0.05\n"
      << "  grid: empirical  # empirical | analytic\n"
      << "\n"
      << "input:\n"
      << "  kind: gaussian   # gaussian | mixture | block | law | table\n"
      << "  q: 2             # mixture components\n"
      << "  alpha: 1.0       # mixture means ~ U[-alpha, alpha)\n"
      << "  beta: 10.0       # mixture std-devs ~ U(1e-3, beta)\n"
      << "  m: 1             # maximum block size (kind: block)\n"
      << "  block:           # block-mixture prior\n"
      << "    mu_lo: -2.0\n"
      << "    mu_hi: 2.0\n"
      << "    delta_lo: 0.0\n"
      << "    delta_hi: 1.0\n"
      << "    rho_lo: 0.0\n"
      << "    rho_hi: 0.5\n"
      << "    tau_lo: 0.0\n"
      << "    tau_hi: 0.3\n"
      << "    sd_lo: 0.5\n"
      << "    sd_hi: 2.0\n"
      << "  law: gaussian    # kind: law; uniform | beta | poisson | laplace | pareto | lorentz | gaussian\n"
      << "  params: {}       # law parameters, e.g. {a: 0, b: 10}\n"
      << "  table: uniform   # kind: table; uniform | beta1 | beta2 | poisson | laplace | pareto | lorentz | gaussian_mixture\n"
      << "\n"
      << "standardize: analytic   # none | analytic | empirical\n"
      << "\n"
      << "seeds:\n"
      << "  model: 1         # network initialization, shared by SGD and ODE\n"
      << "  input: 11        # draw of the input-law parameters\n"
      << "  eval: 1000       # evaluation stream of run i uses eval + i\n"
      << "  reference: 77    # Gaussian reference stream for correlation diagnostics\n"
      << "  baseline: 5000   # Gaussian baseline runs\n"
      << "  sgd: [1, 2, 3, 4, 5]\n"
      << "\n"
      << "comparison:\n"
      << "  tau: 1000        # evaluation time in raw SGD steps\n"
      << "  baseline_runs: 20\n"
      << "\n"
      << "out: runs/" << profile << "\n";
    return o.str();
}

std::string config_hash(const ExperimentConfig& cfg)
{
    ExperimentConfig c = cfg;
    c.out.clear();
    std::string text = dump_config(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << h;
    return o.str();
}

void validate(const ExperimentConfig& c)
{
    try {
        validate(c.net);
        validate(resolved(c.sgd, c.net.N));
        validate(c.ode);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    static const std::set<std::string> kinds{"gaussian", "mixture", "block", "law", "table"};
    if (!kinds.count(c.input.kind)) throw ConfigError("unknown input kind '" + c.input.kind + "'");
    if (c.input.q < 1) throw ConfigError("input.q must be >= 1");
    if (c.input.m < 1) throw ConfigError("input.m must be >= 1");
    if (c.input.kind == "mixture" && (!(c.input.alpha >= 0.0) || !(c.input.beta > 1e-3)))
        throw ConfigError("mixture needs alpha >= 0 and beta > 1e-3");
    if (c.seeds.sgd.empty()) throw ConfigError("seeds.sgd must not be empty");
    if (c.tau < 1) throw ConfigError("comparison.tau must be >= 1");
    if (c.baseline_runs < 2) throw ConfigError("comparison.baseline_runs must be >= 2");
}

InputSpec realize_input(const ExperimentConfig& cfg)
{
    const auto& in = cfg.input;
    int D = cfg.net.D;
    if (in.kind == "gaussian") return make_law(Law::gaussian);
    if (in.kind == "mixture") return draw_mixture_spec(D, in.q, in.alpha, in.beta, cfg.seeds.input);
    if (in.kind == "block") return draw_block_spec(D, in.m, in.q, in.block, cfg.seeds.input);
    if (in.kind == "law") {
        if (in.law == Law::gaussian_mixture) throw ConfigError("use kind: table for the Gaussian-mixture law");
        ScalarLawSpec l = make_law(in.law, in.params);
        validate(l);
        return l;
    }
    for (auto& [name, law] : table_laws(D, cfg.seeds.input))
        if (name == in.table) return law;
    throw ConfigError("unknown table law '" + in.table + "'");
}

namespace {

StandardizationRecord pooled_moments(const Mat& a, const Mat& b)
{
    Eigen::Index D = std::max(a.cols(), b.cols());
    double n = static_cast<double>(a.rows() + b.rows());
    if (n < 2) throw ParameterError("empirical standardization needs at least 2 rows");
    StandardizationRecord rec;
    rec.mode = StdMode::empirical;
    rec.mu = Eigen::VectorXd::Zero(D);
    if (a.rows()) rec.mu += a.colwise().sum().transpose();
    if (b.rows()) rec.mu += b.colwise().sum().transpose();
    rec.mu /= n;
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(D);
    if (a.rows()) ss += (a.rowwise() - rec.mu.transpose()).array().square().colwise().sum().matrix().transpose();
    if (b.rows()) ss += (b.rowwise() - rec.mu.transpose()).array().square().colwise().sum().matrix().transpose();
    rec.sigma = (ss / n).cwiseSqrt();
    for (Eigen::Index r = 0; r < D; ++r)
        if (!(rec.sigma(r) > 0.0) || !std::isfinite(rec.sigma(r)))
            throw DegenerateError("column " + std::to_string(r) + " has zero empirical variance");
    return rec;
}

}  // namespace

Streams make_streams(const ExperimentConfig& cfg, const InputSpec& spec, std::uint64_t sample_seed,
                     std::uint64_t eval_seed, long steps)
{
    int D = cfg.net.D;
    Streams s;
    s.train = make_source(spec, D, sample_seed);
    s.eval = make_source(spec, D, eval_seed);
    switch (cfg.standardize) {
    case StdMode::none:
        s.rec.mode = StdMode::none;
        break;
    case StdMode::analytic:
        s.rec = analytic_moments(spec, D);
        s.train = standardized_source(std::move(s.train), s.rec);
        s.eval = standardized_source(std::move(s.eval), s.rec);
        break;
    case StdMode::empirical: {
        Mat tr = s.train->take(steps);
        Mat ev = s.eval->take(cfg.sgd.P_eval);
        s.rec = pooled_moments(tr, ev);
        s.train = matrix_source(apply_standardization(tr, s.rec));
        s.eval = matrix_source(apply_standardization(ev, s.rec));
        break;
    }
    }
    return s;
}

RunRecord sgd_run(const ExperimentConfig& cfg, const NetworkState& s, const InputSpec& spec,
                  const NonlinearityStats& f, std::uint64_t sample_seed, std::uint64_t eval_seed, long steps,
                  long stride)
{
    SgdConfig sc = cfg.sgd;
    sc.steps = steps;
    sc.stride = stride;
    sc.sample_seed = sample_seed;
    sc.eval_seed = eval_seed;
    sc = resolved(sc, cfg.net.N);
    // pooled over the configured run length, so a truncated run is a prefix of the full one
    long pool = std::max(sc.steps, resolved(cfg.sgd, cfg.net.N).steps);
    Streams st = make_streams(cfg, spec, sample_seed, eval_seed, pool);
    EvalSet ev = make_eval_set(cfg.net, s, *st.eval, sc.P_eval);
    RunRecord rec = run_sgd(cfg.net, s, *st.train, ev, sc, f);
    rec.meta["input"] = cfg.input.kind;
    rec.meta["standardize"] = to_string(cfg.standardize);
    return rec;
}

void parallel_for(int n, int threads, const std::function<void(int)>& body)
{
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, n); ++t)
        pool.emplace_back([&] {
            for (int i; (i = next++) < n;) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

std::vector<RunRecord> sgd_runs(const ExperimentConfig& cfg, const NetworkState& s, const InputSpec& spec,
                                const NonlinearityStats& f, long steps, long stride, int threads)
{
    std::vector<RunRecord> out(cfg.seeds.sgd.size());
    parallel_for(static_cast<int>(out.size()), threads, [&](int i) {
        out[i] = sgd_run(cfg, s, spec, f, cfg.seeds.sgd[i], cfg.seeds.eval + i, steps, stride);
    });
    return out;
}

RunRecord ode_run(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f)
{
    OdeConfig oc = cfg.ode;
    oc.eta = cfg.sgd.eta;
    return run_ode(cfg.net, s, oc, f);
}

nlohmann::json to_json(const Baseline& b)
{
    return {{"tau", b.tau}, {"e_base", b.e_base}, {"sigma_base", b.sigma_base}, {"errors", b.errors}, {"key", b.key}};
}

Baseline baseline_from_json(const nlohmann::json& j)
{
    Baseline b;
    try {
        b.tau = j.at("tau").get<long>();
        b.e_base = j.at("e_base").get<double>();
        b.sigma_base = j.at("sigma_base").get<double>();
        b.errors = j.at("errors").get<std::vector<double>>();
        b.key = j.value("key", "");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed baseline: ") + e.what());
    }
    return b;
}

namespace {

ExperimentConfig gaussian_variant(const ExperimentConfig& cfg)
{
    ExperimentConfig g = cfg;
    g.input = InputConfig{};
    g.standardize = StdMode::none;
    g.seeds.sgd = {0};
    g.seeds.input = 0;
    g.name = "baseline";
    return g;
}

}  // namespace

Baseline compute_baseline(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                          const RunRecord& ode, int threads)
{
    ExperimentConfig g = gaussian_variant(cfg);
    InputSpec spec = make_law(Law::gaussian);
    double tau_t = static_cast<double>(cfg.tau) / cfg.net.N;
    double e_ode = interpolate(ode, tau_t).eps_g;
    Baseline b;
    b.tau = cfg.tau;
    b.key = config_hash(g);
    b.errors.resize(cfg.baseline_runs);
    parallel_for(cfg.baseline_runs, threads, [&](int i) {
        RunRecord r = sgd_run(g, s, spec, f, cfg.seeds.baseline + i, cfg.seeds.baseline + 100000 + i, cfg.tau,
                              cfg.tau);
        b.errors[i] = std::abs(r.snaps.back().eps_g - e_ode);
    });
    double n = static_cast<double>(b.errors.size());
    for (double e : b.errors) b.e_base += e / n;
    for (double e : b.errors) b.sigma_base += (e - b.e_base) * (e - b.e_base) / (n - 1);
    b.sigma_base = std::sqrt(b.sigma_base);
    return b;
}

Baseline cached_baseline(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                         const RunRecord& ode, int threads, const std::string& cache_dir)
{
    std::string key = config_hash(gaussian_variant(cfg));
    fs::path path = fs::path(cache_dir) / ("baseline_" + key + ".json");
    if (fs::exists(path)) {
        std::ifstream in(path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ": " + e.what());
        }
        Baseline b = baseline_from_json(j);
        if (b.key == key && b.tau == cfg.tau && static_cast<int>(b.errors.size()) == cfg.baseline_runs) return b;
    }
    Baseline b = compute_baseline(cfg, s, f, ode, threads);
    fs::create_directories(cache_dir);
    write_json(path.string(), to_json(b));
    return b;
}

ComparisonReport build_report(const RunRecord& sgd_avg, const RunRecord& ode, const Baseline& base, int N)
{
    if (N < 1) throw ParameterError("N must be positive");
    ComparisonReport r;
    r.tau_steps = base.tau;
    r.tau = static_cast<double>(base.tau) / N;
    for (Quantity q : {Quantity::eps_g, Quantity::Q, Quantity::R, Quantity::v})
        r.errors[to_string(q)] = dynamic_error(sgd_avg, ode, q, r.tau);
    r.e_base = base.e_base;
    r.sigma_base = base.sigma_base;
    r.converged = r.errors.at("eps_g") <= r.threshold();
    return r;
}

nlohmann::json to_json(const ComparisonReport& r)
{
    return {{"tau_steps", r.tau_steps},
            {"tau", r.tau},
            {"errors", r.errors},
            {"e_base", r.e_base},
            {"sigma_base", r.sigma_base},
            {"threshold", r.threshold()},
            {"verdict", r.converged ? "converged" : "diverged"},
            {"paths", r.paths}};
}

void write_text(const std::string& path, const std::string& text, bool overwrite)
{
    if (!overwrite && fs::exists(path)) throw IoError(path + " exists (use --overwrite)");
    auto parent = fs::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) fs::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_manifest(const std::string& dir, const ExperimentConfig& cfg, const nlohmann::json& extra)
{
    nlohmann::json m;
    m["config_hash"] = config_hash(cfg);
    m["name"] = cfg.name;
    m["seeds"] = {{"model", cfg.seeds.model},       {"input", cfg.seeds.input},
                  {"eval", cfg.seeds.eval},         {"reference", cfg.seeds.reference},
                  {"baseline", cfg.seeds.baseline}, {"sgd", cfg.seeds.sgd}};
    m["P_eval"] = cfg.sgd.P_eval;
    m["tau_steps"] = cfg.tau;
    ExperimentConfig bare = cfg;
    bare.out.clear();
    m["config"] = dump_config(bare);
    if (!extra.is_null()) m["extra"] = extra;
    write_json((fs::path(dir) / "manifest.json").string(), m);

    std::time_t now = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_json((fs::path(dir) / "timestamps.json").string(), {{"written_at", buf}});
}

namespace {

const std::set<std::string> kRecordTags{"fig3", "fig4", "fig5", "figm", "fig_affine"};
const std::set<std::string> kDiagTags{"fig6", "fig7", "fig8"};

std::string panel_csv(const std::vector<std::pair<std::string, RunRecord>>& records, Quantity q)
{
    std::ostringstream o;
    o << "series,t,entry,value\n";
    for (const auto& [name, rec] : records) {
        for (const auto& op : rec.snaps) {
            auto emit = [&](const std::string& entry, double v) {
                o << name << ',' << fmt17(op.t) << ',' << entry << ',' << fmt17(v) << '\n';
            };
            switch (q) {
            case Quantity::eps_g: emit("eps_g", op.eps_g); break;
            case Quantity::Q:
                for (int k = 0; k < op.Q.rows(); ++k)
                    for (int l = 0; l < op.Q.cols(); ++l)
                        emit("Q_" + std::to_string(k) + std::to_string(l), op.Q(k, l));
                break;
            case Quantity::R:
                for (int k = 0; k < op.R.rows(); ++k)
                    for (int m = 0; m < op.R.cols(); ++m)
                        emit("R_" + std::to_string(k) + std::to_string(m), op.R(k, m));
                break;
            case Quantity::v:
                for (int k = 0; k < op.v.size(); ++k) emit("v_" + std::to_string(k), op.v(k));
                break;
            }
        }
    }
    return o.str();
}

}  // namespace

void emit_plot_data(const std::string& tag, const std::vector<std::pair<std::string, RunRecord>>& records,
                    const std::string& dir)
{
    if (!kRecordTags.count(tag)) throw ParameterError("unknown figure tag '" + tag + "' for trajectories");
    if (records.empty()) throw ParameterError("no records to emit");
    for (const auto& [name, rec] : records)
        if (rec.snaps.empty()) throw ParameterError("record '" + name + "' is empty");
    // render everything first so a failure leaves no partial bundle
    std::vector<std::pair<std::string, std::string>> files{
        {tag + "_a_eps_g.csv", panel_csv(records, Quantity::eps_g)},
        {tag + "_b_Q.csv", panel_csv(records, Quantity::Q)},
        {tag + "_c_R.csv", panel_csv(records, Quantity::R)},
        {tag + "_d_v.csv", panel_csv(records, Quantity::v)}};
    for (const auto& [name, text] : files) write_text((fs::path(dir) / name).string(), text);
}

void emit_plot_data(const std::string& tag, const std::vector<DiagRow>& rows, const std::vector<ScalingFit>& fits,
                    const std::string& dir)
{
    if (!kDiagTags.count(tag)) throw ParameterError("unknown figure tag '" + tag + "' for diagnostics");
    if (rows.empty()) throw ParameterError("no diagnostic rows to emit");
    std::map<std::string, const ScalingFit*> by_label;
    for (const auto& f : fits) by_label[f.label] = &f;
    std::ostringstream o;
    o << "series,m,D,m_over_D,statistic,stderr,fit\n";
    for (const auto& r : rows) {
        double x = static_cast<double>(r.m) / r.D;
        o << r.series << ',' << r.m << ',' << r.D << ',' << fmt17(x) << ',' << fmt17(r.statistic) << ','
          << fmt17(r.stderr_) << ',';
        auto it = by_label.find(r.series + "/D=" + std::to_string(r.D));
        if (it != by_label.end()) o << fmt17(std::exp(it->second->intercept) * std::pow(x, it->second->slope));
        o << '\n';
    }
    std::ostringstream fo;
    fo << "label,lo,hi,slope,intercept,r2,points\n";
    for (const auto& f : fits)
        fo << f.label << ',' << fmt17(f.lo) << ',' << fmt17(f.hi) << ',' << fmt17(f.slope) << ','
           << fmt17(f.intercept) << ',' << fmt17(f.r2) << ',' << f.used << '\n';
    write_text((fs::path(dir) / (tag + ".csv")).string(), o.str());
    write_text((fs::path(dir) / (tag + "_fit.csv")).string(), fo.str());
}

void emit_plot_data(const std::string& tag, const std::vector<W1Row>& rows, const std::string& dir)
{
    if (tag != "fig2") throw ParameterError("unknown figure tag '" + tag + "' for W1 data");
    if (rows.empty()) throw ParameterError("no W1 rows to emit");
    std::ostringstream o;
    o << "q,alpha,w1\n";
    for (const auto& r : rows) o << r.q << ',' << fmt17(r.alpha) << ',' << fmt17(r.w1) << '\n';
    write_text((fs::path(dir) / "fig2.csv").string(), o.str());
}

std::vector<int> sweep_ms(int D, double lo, double hi, int m_min)
{
    std::vector<int> ms;
    for (int m = 1; m <= D; m *= 2) {
        if (m < m_min) continue;
        double x = static_cast<double>(m) / D;
        if (x >= lo * (1 - 1e-12) && x <= hi * (1 + 1e-12)) ms.push_back(m);
    }
    return ms;
}

namespace {

struct DesignPoint {
    NetworkConfig net;
    BlockMixtureSpec spec;
    StandardizationRecord rec;
    std::vector<Eigen::MatrixXd> cov;
    Partition part;
};

NetworkState design_state(const ScalingDesign& d, int D, NetworkConfig& net)
{
    net = NetworkConfig{};
    net.N = D;
    net.D = D;
    return init_gaussian(net, mix(d.seed, static_cast<std::uint64_t>(D)), true);
}

DesignPoint design_point(const ScalingDesign& d, int D, int m)
{
    DesignPoint p;
    p.spec = draw_block_spec(D, m, d.q, d.prior, mix(d.seed, D, m));
    p.rec = analytic_moments(InputSpec{p.spec}, D);
    p.cov = standardized_block_covariances(p.spec);
    p.part = partition_of(p.spec);
    return p;
}

std::unique_ptr<RowSource> design_source(const ScalingDesign& d, const DesignPoint& p, int D, int m,
                                         std::uint64_t stream)
{
    return standardized_source(make_source(InputSpec{p.spec}, D, mix(d.seed ^ 0xabcdefULL, D, m * 16 + stream)),
                               p.rec);
}

std::pair<double, double> mean_se(const std::vector<double>& v)
{
    double n = static_cast<double>(v.size()), m = 0.0, s = 0.0;
    for (double x : v) m += x / n;
    for (double x : v) s += (x - m) * (x - m);
    double se = v.size() > 1 ? std::sqrt(s / (n - 1) / n) : 0.0;
    return {m, se};
}

}  // namespace

std::vector<DiagRow> third_moment_sweep(const ScalingDesign& d)
{
    std::vector<DiagRow> rows;
    for (int D : d.Ds) {
        NetworkConfig net;
        NetworkState s = design_state(d, D, net);
        for (int m : sweep_ms(D, d.lo, d.hi, d.m_min)) {
            DesignPoint p = design_point(d, D, m);
            Mat C = design_source(d, p, D, m, 1)->take(d.P);
            std::vector<double> vals;
            for (int i = 0; i < d.n_index; ++i) {
                auto src = matrix_source(C);
                vals.push_back(third_moment_sum(block_statistic(Target::U, net, s, *src, d.P, p.part, i, &p.cov)));
            }
            auto [mean, se] = mean_se(vals);
            rows.push_back({"U", m, D, mean, se});
        }
    }
    return rows;
}

std::vector<DiagRow> ks_sweep(const ScalingDesign& d)
{
    std::vector<DiagRow> rows;
    for (int D : d.Ds) {
        NetworkConfig net;
        NetworkState s = design_state(d, D, net);
        Eigen::MatrixXd A = s.F.leftCols(d.n_index);
        for (int m : sweep_ms(D, d.lo, d.hi, d.m_min)) {
            DesignPoint p = design_point(d, D, m);
            auto src = design_source(d, p, D, m, 2);
            Mat U = project_stream(*src, d.P, A);
            std::vector<double> vals;
            for (int i = 0; i < d.n_index; ++i) {
                double sig = std::sqrt(block_variance(A.col(i), p.part, p.cov));
                Eigen::VectorXd u = U.col(i) / sig;
                vals.push_back(ks_to_normal(std::vector<double>(u.data(), u.data() + u.size())));
            }
            auto [mean, se] = mean_se(vals);
            rows.push_back({"U", m, D, mean, se});
        }
    }
    return rows;
}

std::vector<DiagRow> residual_sweep(const ScalingDesign& d)
{
    std::vector<DiagRow> rows;
    for (int D : d.Ds) {
        NetworkConfig net;
        NetworkState s = design_state(d, D, net);
        auto f = nonlinearity_stats(net.f);
        for (int m : sweep_ms(D, d.lo, d.hi, d.m_min)) {
            DesignPoint p = design_point(d, D, m);
            auto src = design_source(d, p, D, m, 3);
            Residuals r = mean_residuals(net, s, f, *src, d.P, d.n_pairs, mix(d.seed, D, m + 7));
            rows.push_back({"R1", m, D, r.R1, r.se1});
            rows.push_back({"R2", m, D, r.R2, r.se2});
        }
    }
    return rows;
}

std::vector<ScalingFit> fit_rows(const std::vector<DiagRow>& rows, double lo, double hi)
{
    std::vector<std::string> series;
    std::set<int> Ds;
    for (const auto& r : rows) {
        if (std::find(series.begin(), series.end(), r.series) == series.end()) series.push_back(r.series);
        Ds.insert(r.D);
    }
    std::vector<ScalingFit> fits;
    for (const auto& name : series) {
        std::vector<double> ax, ay;
        for (int D : Ds) {
            std::vector<double> x, y;
            for (const auto& r : rows)
                if (r.series == name && r.D == D) {
                    x.push_back(static_cast<double>(r.m) / r.D);
                    y.push_back(r.statistic);
                }
            if (x.empty()) continue;
            ax.insert(ax.end(), x.begin(), x.end());
            ay.insert(ay.end(), y.begin(), y.end());
            ScalingFit f = fit_scaling(x, y, lo, hi);
            f.label = name + "/D=" + std::to_string(D);
            fits.push_back(std::move(f));
        }
        ScalingFit f = fit_scaling(ax, ay, lo, hi);
        f.label = name + "/pooled";
        fits.push_back(std::move(f));
    }
    return fits;
}

std::vector<W1Row> w1_sweep(const std::vector<int>& qs, const std::vector<double>& alphas, int D,
                            std::uint64_t seed)
{
    std::vector<W1Row> rows;
    for (int q : qs) {
        std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(q)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        MixtureSpec s;
        s.q = q;
        s.D = D;
        s.beta = 1.0;
        Eigen::MatrixXd u(D, q);
        s.pi.resize(D, q);
        s.sigma = Eigen::MatrixXd::Ones(D, q);
        for (int r = 0; r < D; ++r) {
            double tot = 0.0;
            for (int k = 0; k < q; ++k) {
                u(r, k) = u01(rng);
                s.pi(r, k) = u01(rng);
                tot += s.pi(r, k);
            }
            s.pi.row(r) /= tot;
        }
        for (double a : alphas) {
            s.alpha = a;
            s.mu = a * (2.0 * u.array() - 1.0);
            rows.push_back({q, a, wasserstein1_to_normal(s, true)});
        }
    }
    return rows;
}

SweepRow tau_comparison(const ExperimentConfig& variant, const NetworkState& s, const NonlinearityStats& f,
                        const RunRecord& ode, const Baseline& base, int threads, const std::string& param,
                        double value)
{
    SweepRow row;
    row.param = param;
    row.value = value;
    InputSpec spec = realize_input(variant);
    try {
        auto runs = sgd_runs(variant, s, spec, f, variant.tau, variant.tau, threads);
        ComparisonReport rep = build_report(average_runs(runs), ode, base, variant.net.N);
        row.errors = rep.errors;
        row.converged = rep.converged;
    } catch (const DivergenceError&) {
        double inf = std::numeric_limits<double>::infinity();
        row.errors = {{"eps_g", inf}, {"Q", inf}, {"R", inf}, {"v", inf}};
        row.converged = false;
    }
    return row;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                const std::vector<double>& values, int threads, const std::string& out_dir)
{
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    NetworkState s = init_gaussian(cfg.net, cfg.seeds.model, true);
    auto f = nonlinearity_stats(cfg.net.f);
    RunRecord ode = ode_run(cfg, s, f);
    Baseline base = cached_baseline(cfg, s, f, ode, threads, out_dir);
    std::vector<SweepRow> rows;
    for (double v : values) {
        ExperimentConfig var = cfg;
        if (param == "m") {
            var.input.kind = "block";
            var.input.m = static_cast<int>(v);
            var.seeds.input = mix(cfg.seeds.input, static_cast<std::uint64_t>(v));
            if (var.standardize == StdMode::none) var.standardize = StdMode::analytic;
        } else if (param == "alpha") {
            var.input.kind = "mixture";
            var.input.alpha = v;
        } else if (param == "q") {
            var.input.kind = "mixture";
            var.input.q = static_cast<int>(v);
        } else {
            throw ConfigError("unknown sweep parameter '" + param + "' (m | alpha | q)");
        }
        validate(var);
        rows.push_back(tau_comparison(var, s, f, ode, base, threads, param, v));
    }
    return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows)
{
    std::ostringstream o;
    o << "param,value,e_eps_g,e_Q,e_R,e_v,verdict\n";
    for (const auto& r : rows) {
        auto get = [&](const char* k) {
            auto it = r.errors.find(k);
            return it == r.errors.end() ? std::string() : fmt17(it->second);
        };
        o << r.param << ',' << fmt17(r.value) << ',' << get("eps_g") << ',' << get("Q") << ',' << get("R") << ','
          << get("v") << ',' << (r.converged ? "converged" : "diverged") << '\n';
    }
    write_text(path, o.str());
}

}  // namespace hmlab
