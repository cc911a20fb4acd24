#pragma once

#include "hmlab/distributions.hpp"
#include "hmlab/equivalence_lab.hpp"
#include "hmlab/network.hpp"
#include "hmlab/ode_engine.hpp"
#include "hmlab/record.hpp"
#include "hmlab/sgd_sim.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace hmlab {

struct InputConfig {
    std::string kind = "gaussian";  // gaussian | mixture | block | law | table
    int q = 2;
    double alpha = 1.0;
    double beta = 10.0;
    int m = 1;
    BlockPrior block;
    Law law = Law::gaussian;
    std::map<std::string, double> params;
    std::string table = "uniform";  // entry name of the standard law table
};

struct Seeds {
    std::uint64_t model = 1;
    std::uint64_t input = 11;
    std::uint64_t eval = 1000;
    std::uint64_t reference = 77;
    std::uint64_t baseline = 5000;
    std::vector<std::uint64_t> sgd{1, 2, 3, 4, 5};
};

struct ExperimentConfig {
    std::string name = "desk";
    NetworkConfig net;
    SgdConfig sgd;
    OdeConfig ode;
    InputConfig input;
    StdMode standardize = StdMode::analytic;
    Seeds seeds;
    long tau = 1000;  // raw SGD steps
    int baseline_runs = 20;
    std::string out = "runs/desk";
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::string& path);
std::string dump_config(const ExperimentConfig& cfg);
// Commented template; profile "full" (N=4096) or "desk" (N=1024).
std::string config_template(const std::string& profile);
std::string config_hash(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

InputSpec realize_input(const ExperimentConfig& cfg);

struct Streams {
    std::unique_ptr<RowSource> train;
    std::unique_ptr<RowSource> eval;
    StandardizationRecord rec;
};

// Empirical standardization pools the training and evaluation rows of the run.
Streams make_streams(const ExperimentConfig& cfg, const InputSpec& spec, std::uint64_t sample_seed,
                     std::uint64_t eval_seed, long steps);

RunRecord sgd_run(const ExperimentConfig& cfg, const NetworkState& s, const InputSpec& spec,
                  const NonlinearityStats& f, std::uint64_t sample_seed, std::uint64_t eval_seed, long steps,
                  long stride);

// Runs for every configured SGD seed; evaluation seed is eval + run index.
std::vector<RunRecord> sgd_runs(const ExperimentConfig& cfg, const NetworkState& s, const InputSpec& spec,
                                const NonlinearityStats& f, long steps, long stride, int threads);

RunRecord ode_run(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f);

struct Baseline {
    long tau = 0;
    double e_base = 0.0;
    double sigma_base = 0.0;
    std::vector<double> errors;
    std::string key;

    double threshold() const { return e_base + sigma_base; }
};

nlohmann::json to_json(const Baseline& b);
Baseline baseline_from_json(const nlohmann::json& j);

Baseline compute_baseline(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                          const RunRecord& ode, int threads);
// Cached under cache_dir by the hash of the Gaussian variant of cfg.
Baseline cached_baseline(const ExperimentConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                         const RunRecord& ode, int threads, const std::string& cache_dir);

struct ComparisonReport {
    long tau_steps = 0;
    double tau = 0.0;  // normalized time
    std::map<std::string, double> errors;  // eps_g, Q, R, v
    double e_base = 0.0;
    double sigma_base = 0.0;
    bool converged = false;
    std::map<std::string, std::string> paths;

    double threshold() const { return e_base + sigma_base; }
};

ComparisonReport build_report(const RunRecord& sgd_avg, const RunRecord& ode, const Baseline& base, int N);
nlohmann::json to_json(const ComparisonReport& r);

void write_text(const std::string& path, const std::string& text, bool overwrite = true);
void write_json(const std::string& path, const nlohmann::json& j);
void write_manifest(const std::string& dir, const ExperimentConfig& cfg, const nlohmann::json& extra = {});

struct DiagRow {
    std::string series;
    int m = 0;
    int D = 0;
    double statistic = 0.0;
    double stderr_ = 0.0;
};

struct W1Row {
    int q = 0;
    double alpha = 0.0;
    double w1 = 0.0;
};

void emit_plot_data(const std::string& tag, const std::vector<std::pair<std::string, RunRecord>>& records,
                    const std::string& dir);
void emit_plot_data(const std::string& tag, const std::vector<DiagRow>& rows, const std::vector<ScalingFit>& fits,
                    const std::string& dir);
void emit_plot_data(const std::string& tag, const std::vector<W1Row>& rows, const std::string& dir);

struct ScalingDesign {
    std::vector<int> Ds{512, 1024};
    double lo = 1.0 / 1024.0;  // m/D range of the sweep
    double hi = 0.25;
    long P = 100000;
    int q = 2;
    BlockPrior prior;
    std::uint64_t seed = 2024;
    int n_index = 8;
    int n_pairs = 64;
    int m_min = 4;  // keeps blocks multi-dimensional so m and D grow together
};

std::vector<int> sweep_ms(int D, double lo, double hi, int m_min = 1);
std::vector<DiagRow> third_moment_sweep(const ScalingDesign& d);
std::vector<DiagRow> ks_sweep(const ScalingDesign& d);
std::vector<DiagRow> residual_sweep(const ScalingDesign& d);
// Per-series, per-D fits plus a pooled fit per series.
// Labels are "<series>/D=<D>" and "<series>/pooled".
std::vector<ScalingFit> fit_rows(const std::vector<DiagRow>& rows, double lo, double hi);

// sigma_k = 1, mu = alpha (2u - 1) with u shared across alpha, standardized mixtures.
std::vector<W1Row> w1_sweep(const std::vector<int>& qs, const std::vector<double>& alphas, int D,
                            std::uint64_t seed);

struct SweepRow {
    std::string param;
    double value = 0.0;
    std::map<std::string, double> errors;
    bool converged = false;
};

// Variant configs are compared at tau against the Gaussian ODE of the shared model.
SweepRow tau_comparison(const ExperimentConfig& variant, const NetworkState& s, const NonlinearityStats& f,
                        const RunRecord& ode, const Baseline& base, int threads, const std::string& param,
                        double value);

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                const std::vector<double>& values, int threads, const std::string& out_dir);

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace hmlab
