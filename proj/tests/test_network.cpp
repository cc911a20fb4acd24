#include "hmlab/network.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hmlab;

namespace {

Mat gaussian_rows(long P, int D, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Mat C(P, D);
    for (long i = 0; i < P; ++i)
        for (int r = 0; r < D; ++r) C(i, r) = nd(rng);
    return C;
}

}  // namespace

TEST_CASE("init shapes, normalization and determinism")
{
    NetworkConfig cfg;
    auto s = init_gaussian(cfg, 5, true);
    CHECK(s.Wt.rows() == 2);
    CHECK(s.Wt.cols() == 512);
    CHECK(s.vt.size() == 2);
    CHECK(s.W.rows() == 2);
    CHECK(s.W.cols() == 1024);
    CHECK(s.v.size() == 2);
    CHECK(s.F.rows() == 512);
    CHECK(s.F.cols() == 1024);
    CHECK((s.F.colwise().squaredNorm().array() - 512.0).abs().maxCoeff() < 1e-9);
    check_shapes(cfg, s);

    auto s2 = init_gaussian(cfg, 5, true);
    CHECK(s.F == s2.F);
    CHECK(s.W == s2.W);
    CHECK(s.Wt == s2.Wt);
    CHECK(s.v == s2.v);
    CHECK(s.vt == s2.vt);
    auto s3 = init_gaussian(cfg, 6, true);
    CHECK(s.W != s3.W);

    NetworkConfig bad = cfg;
    bad.K = 0;
    CHECK_THROWS_AS(validate(bad), ParameterError);
}

TEST_CASE("forward pass")
{
    NetworkConfig cfg;
    cfg.N = 64;
    cfg.D = 32;
    auto s = init_gaussian(cfg, 1, true);

    Mat zero = Mat::Zero(3, cfg.D);
    auto z = forward(cfg, s, zero);
    CHECK(z.U.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.nu.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.lambda.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.y.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.yhat.cwiseAbs().maxCoeff() == 0.0);

    Mat C = gaussian_rows(50, cfg.D, 2);
    auto r = forward(cfg, s, C);
    CHECK(r.U.cwiseAbs().maxCoeff() > 0.0);

    // tanh features of U stay inside (-1, 1); lambda is their linear read-out
    Mat X = r.U.array().tanh().matrix();
    CHECK(X.cwiseAbs().maxCoeff() < 1.0);
    Mat lam = X * s.W.transpose() / std::sqrt(double(cfg.N));
    CHECK((lam - r.lambda).cwiseAbs().maxCoeff() < 1e-12);

    // identity features collapse to a dense linear map of C
    NetworkConfig lin = cfg;
    lin.f = Fn::identity;
    auto rl = forward(lin, s, C);
    Mat direct = C * (s.F * s.W.transpose()) / std::sqrt(double(cfg.D) * cfg.N);
    CHECK((rl.lambda - direct).cwiseAbs().maxCoeff() < 1e-11);
    Mat nu = C * s.Wt.transpose() / std::sqrt(double(cfg.D));
    CHECK((rl.nu - nu).cwiseAbs().maxCoeff() < 1e-12);

    // doubling the second layer doubles the output exactly
    auto s2 = s;
    s2.v *= 2.0;
    auto r2 = forward(cfg, s2, C);
    CHECK(r2.yhat == 2.0 * r.yhat);
}

TEST_CASE("order parameters")
{
    NetworkConfig cfg;
    cfg.N = 256;
    cfg.D = 128;
    auto s = init_gaussian(cfg, 3, true);
    auto f = nonlinearity_stats(Fn::tanh);

    auto z = s;
    z.W.setZero();
    auto oz = measure_order_params(z, f);
    CHECK(oz.Q.cwiseAbs().maxCoeff() == 0.0);
    CHECK(oz.R.cwiseAbs().maxCoeff() == 0.0);
    CHECK(oz.Omega.cwiseAbs().maxCoeff() == 0.0);
    CHECK(oz.Sigma.cwiseAbs().maxCoeff() == 0.0);

    auto op = measure_order_params(s, f);
    CHECK(op.Q == op.Q.transpose());
    CHECK(op.T == op.T.transpose());
    CHECK(op.Omega == op.Omega.transpose());
    CHECK(op.Sigma == op.Sigma.transpose());

    // Gaussian equivalence: preactivation covariances over Gaussian latents
    const long P = 100000;
    Mat C = gaussian_rows(P, cfg.D, 4);
    auto r = forward(cfg, s, C);
    auto check_cov = [&](const Mat& A, const Mat& B, const Eigen::MatrixXd& theory) {
        for (int i = 0; i < theory.rows(); ++i)
            for (int j = 0; j < theory.cols(); ++j) {
                Eigen::ArrayXd prod = A.col(i).array() * B.col(j).array();
                double mean = prod.mean();
                double se = std::sqrt((prod - mean).square().mean() / P);
                CHECK(std::abs(mean - theory(i, j)) < 3.0 * se);
            }
    };
    check_cov(r.lambda, r.lambda, op.Q);
    check_cov(r.lambda, r.nu, op.R);
    check_cov(r.nu, r.nu, op.T);
}

TEST_CASE("teacher overlap concentrates")
{
    const int D = 10000;
    NetworkState s;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    s.Wt.resize(1, D);
    for (int r = 0; r < D; ++r) s.Wt(0, r) = nd(rng);
    s.vt = Vec::Ones(1);
    s.W = Mat::Ones(1, 2);
    s.v = Vec::Ones(1);
    s.F = Mat::Zero(D, 2);
    auto op = measure_order_params(s, nonlinearity_stats(Fn::tanh));
    CHECK(std::abs(op.T(0, 0) - 1.0) < 0.04);
}
