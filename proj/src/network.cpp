#include "hmlab/network.hpp"

#include <cmath>
#include <random>

namespace hmlab {

void validate(const NetworkConfig& c)
{
    if (c.N < 1 || c.D < 1 || c.K < 1 || c.M < 1) throw ParameterError("N, D, K, M must be >= 1");
}

NetworkState init_gaussian(const NetworkConfig& cfg, std::uint64_t seed, bool normalize_F)
{
    validate(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    auto fill = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    };
    NetworkState s;
    s.Wt.resize(cfg.M, cfg.D);
    s.vt.resize(cfg.M);
    s.W.resize(cfg.K, cfg.N);
    s.v.resize(cfg.K);
    s.F.resize(cfg.D, cfg.N);
    fill(s.Wt);
    fill(s.vt);
    fill(s.W);
    fill(s.v);
    fill(s.F);
    if (normalize_F) {
        double target = std::sqrt(static_cast<double>(cfg.D));
        for (int i = 0; i < cfg.N; ++i) s.F.col(i) *= target / s.F.col(i).norm();
    }
    return s;
}

void check_shapes(const NetworkConfig& cfg, const NetworkState& s)
{
    if (s.Wt.rows() != cfg.M || s.Wt.cols() != cfg.D || s.vt.size() != cfg.M || s.W.rows() != cfg.K ||
        s.W.cols() != cfg.N || s.v.size() != cfg.K || s.F.rows() != cfg.D || s.F.cols() != cfg.N)
        throw ShapeError("network state shapes do not match the configuration");
}

void outputs(const NetworkConfig& cfg, const NetworkState& s, const Mat& X, const Mat& nu, Vec& y, Vec& yhat)
{
    Mat lambda = X * s.W.transpose() / std::sqrt(static_cast<double>(cfg.N));
    y = nu.unaryExpr([&](double x) { return act(cfg.gt, x); }) * s.vt;
    yhat = lambda.unaryExpr([&](double x) { return act(cfg.g, x); }) * s.v;
}

ForwardResult forward(const NetworkConfig& cfg, const NetworkState& s, const Mat& Cbar)
{
    check_shapes(cfg, s);
    if (Cbar.cols() != cfg.D) throw ShapeError("input width must equal D");
    ForwardResult r;
    double sD = std::sqrt(static_cast<double>(cfg.D));
    r.U = Cbar * s.F / sD;
    r.nu = Cbar * s.Wt.transpose() / sD;
    Mat X = r.U.unaryExpr([&](double x) { return act(cfg.f, x); });
    r.lambda = X * s.W.transpose() / std::sqrt(static_cast<double>(cfg.N));
    r.y = r.nu.unaryExpr([&](double x) { return act(cfg.gt, x); }) * s.vt;
    r.yhat = r.lambda.unaryExpr([&](double x) { return act(cfg.g, x); }) * s.v;
    return r;
}

OrderParams measure_order_params(const NetworkState& s, const NonlinearityStats& f, bool keep_S)
{
    double N = static_cast<double>(s.W.cols());
    double D = static_cast<double>(s.F.rows());
    OrderParams op;
    Eigen::MatrixXd W = s.W, F = s.F, Wt = s.Wt;
    Eigen::MatrixXd S = W * F.transpose() / std::sqrt(N);
    op.Omega = W * W.transpose() / N;
    op.Sigma = S * S.transpose() / D;
    op.T = Wt * Wt.transpose() / D;
    op.R = (f.b / D) * S * Wt.transpose();
    auto sym = [](Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); };
    sym(op.Omega);
    sym(op.Sigma);
    sym(op.T);
    op.Q = (f.c - f.a * f.a - f.b * f.b) * op.Omega + f.b * f.b * op.Sigma;
    op.v = s.v;
    if (keep_S) op.S = S;
    return op;
}

}  // namespace hmlab
