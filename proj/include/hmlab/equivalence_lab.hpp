#pragma once

#include "hmlab/distributions.hpp"
#include "hmlab/network.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace hmlab {

enum class Target { U, nu, lambda };
Target parse_target(const std::string& tag);
std::string to_string(Target t);

// (start, size) pairs covering 0..D-1
using Partition = std::vector<std::pair<int, int>>;
Partition uniform_partition(int D, int m);
Partition partition_of(const BlockMixtureSpec& spec);
void check_partition(const Partition& part, int D);

// Covariance of each standardized block (analytic, from the spec).
std::vector<Eigen::MatrixXd> standardized_block_covariances(const BlockMixtureSpec& spec);

// Var(sum_r a_r Cbar_r / sqrt(D)) for block-independent inputs.
double block_variance(const Eigen::VectorXd& a, const Partition& part,
                      const std::vector<Eigen::MatrixXd>& block_cov);

// Streams P rows and returns Cbar A / sqrt(D) (P x A.cols()).
Mat project_stream(RowSource& src, long P, const Eigen::MatrixXd& A);

struct BlockStatistic {
    Target target = Target::U;
    int index = 0;
    Mat T;          // P x n_blocks contributions
    Vec total;      // the target itself, per sample
    double sigma = 1.0;

    Mat Z() const { return T / sigma; }
};

// For lambda the blocks carry the linear path b * L_k and `total` is lambda_k.
// sigma comes from block_cov when given (U, nu), else from the sample.
BlockStatistic block_statistic(Target target, const NetworkConfig& cfg, const NetworkState& s,
                               RowSource& src, long P, const Partition& part, int index,
                               const std::vector<Eigen::MatrixXd>* block_cov = nullptr,
                               const NonlinearityStats* f = nullptr);

double third_moment_sum(const BlockStatistic& stat);

double ks_to_normal(std::vector<double> samples);
double wasserstein1_to_normal(std::vector<double> samples);
// 1-d Gaussian mixture against N(0,1), optionally after standardizing the mixture.
double wasserstein1_to_normal(const Eigen::VectorXd& pi, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, bool standardize);
// Mean over dimensions of a dimension-wise mixture.
double wasserstein1_to_normal(const MixtureSpec& spec, bool standardize);

struct Residuals {
    double R1 = 0.0, R2 = 0.0;
    double se1 = 0.0, se2 = 0.0;
};

Residuals residuals(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                    RowSource& src, long P, int i, int j, int r);

// Mean residuals over random index pairs, one pass over the stream.
Residuals mean_residuals(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                         RowSource& src, long P, int n_pairs, std::uint64_t seed);

struct ScalingFit {
    std::string label;
    std::vector<double> x, y;
    double lo = 0.0, hi = 0.0;
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
    int used = 0;
};

ScalingFit fit_scaling(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi);

struct CorrelationDiagnostics {
    double nu = 0.0;
    double U = 0.0;
    double Wt = 0.0;  // teacher-side input covariance
};

CorrelationDiagnostics correlation_diagnostics(const NetworkConfig& cfg, const NetworkState& s,
                                               RowSource& inputs, RowSource& reference, long P);
CorrelationDiagnostics correlation_diagnostics(const NetworkConfig& cfg, const NetworkState& s,
                                               RowSource& inputs, long P, std::uint64_t gaussian_seed);

// Var(R_k) / Var(lambda_k) with R_k = lambda_k - b L_k - a sum_i W_ki / sqrt(N).
double remainder_variance_ratio(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                                RowSource& src, long P, int k);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hmlab
