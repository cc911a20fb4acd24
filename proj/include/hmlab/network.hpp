#pragma once

#include "hmlab/gauss_integrals.hpp"
#include "hmlab/types.hpp"

#include <cstdint>

namespace hmlab {

struct NetworkConfig {
    int N = 1024;
    int D = 512;
    int K = 2;
    int M = 2;
    Fn g = Fn::relu;
    Fn gt = Fn::relu;
    Fn f = Fn::tanh;
    double delta() const { return static_cast<double>(D) / N; }
};

void validate(const NetworkConfig& cfg);

struct NetworkState {
    Mat Wt;  // M x D
    Vec vt;  // M
    Mat W;   // K x N
    Vec v;   // K
    Mat F;   // D x N
};

struct OrderParams {
    double t = 0.0;
    Eigen::MatrixXd Q, R, T, Omega, Sigma, S;
    Vec v;
    double eps_g = 0.0;
};

struct ForwardResult {
    Vec y, yhat;
    Mat nu, lambda, U;
};

NetworkState init_gaussian(const NetworkConfig& cfg, std::uint64_t seed, bool normalize_F = true);
void check_shapes(const NetworkConfig& cfg, const NetworkState& s);

ForwardResult forward(const NetworkConfig& cfg, const NetworkState& s, const Mat& Cbar);

// Teacher and student outputs given precomputed U (P x N) and nu (P x M).
void outputs(const NetworkConfig& cfg, const NetworkState& s, const Mat& X, const Mat& nu, Vec& y,
             Vec& yhat);

OrderParams measure_order_params(const NetworkState& s, const NonlinearityStats& f, bool keep_S = false);

}  // namespace hmlab
