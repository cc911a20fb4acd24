#pragma once

#include "hmlab/distributions.hpp"
#include "hmlab/network.hpp"
#include "hmlab/record.hpp"

#include <cstdint>
#include <vector>

namespace hmlab {

struct SgdConfig {
    double eta = 0.2;
    long steps = -1;   // -1: 10 N
    long stride = -1;  // -1: N / 20
    long P_eval = 10000;
    std::uint64_t sample_seed = 1;
    std::uint64_t eval_seed = 2;
    std::vector<long> extra_snapshots;  // raw step counts recorded in addition to the stride grid
};

void validate(const SgdConfig& cfg);
SgdConfig resolved(const SgdConfig& cfg, int N);

// Held-out evaluation set: features X = f(U) and teacher labels.
// Features are kept in single precision; the scan over them is memory bound.
struct EvalSet {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> X;
    Vec y;
};

EvalSet make_eval_set(const NetworkConfig& net, const NetworkState& s, RowSource& src, long P);

// One online step on a standardized input row; returns the loss (yhat - y)^2 / 2.
double sgd_step(const NetworkConfig& net, NetworkState& s, const Eigen::Ref<const Vec>& cbar, double eta,
                long step_index = 0);

double estimate_eps_g(const NetworkConfig& net, const NetworkState& s, const EvalSet& eval, double* se = nullptr);

RunRecord run_sgd(const NetworkConfig& net, NetworkState s, RowSource& train, const EvalSet& eval,
                  const SgdConfig& cfg, const NonlinearityStats& f);

RunRecord average_runs(const std::vector<RunRecord>& records);

// Euclidean norm of the quantity difference at normalized time tau.
double dynamic_error(const RunRecord& a, const RunRecord& b, Quantity q, double tau);

}  // namespace hmlab
