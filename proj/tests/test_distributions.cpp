#include "hmlab/distributions.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace hmlab;

namespace {

MixtureSpec two_point_mixture(int D)
{
    MixtureSpec s;
    s.q = 2;
    s.D = D;
    s.mu.resize(D, 2);
    s.mu.col(0).setConstant(-2.0);
    s.mu.col(1).setConstant(2.0);
    s.sigma = Eigen::MatrixXd::Ones(D, 2);
    s.pi = Eigen::MatrixXd::Constant(D, 2, 0.5);
    return s;
}

BlockMixtureSpec equicorrelated(int D, int m, double rho)
{
    BlockMixtureSpec s;
    s.D = D;
    s.m = m;
    s.q = 1;
    for (int start = 0; start < D; start += m) {
        Block b;
        b.start = start;
        b.size = m;
        b.u = Eigen::VectorXd::Zero(m);
        b.u(0) = 1.0;
        b.v = b.u;
        b.sd = Eigen::VectorXd::Ones(m);
        MixtureComponent c;
        c.rho = rho;
        b.comps.push_back(c);
        s.blocks.push_back(b);
    }
    validate(s);
    return s;
}

Eigen::VectorXd col_mean(const Mat& C) { return C.colwise().mean().transpose(); }

Eigen::VectorXd col_var(const Mat& C)
{
    Mat c = C.rowwise() - C.colwise().mean();
    return (c.array().square().colwise().sum() / static_cast<double>(C.rows())).matrix().transpose();
}

}  // namespace

TEST_CASE("single-component mixture is standard normal")
{
    MixtureSpec s;
    s.q = 1;
    s.D = 4;
    s.mu = Eigen::MatrixXd::Zero(4, 1);
    s.sigma = Eigen::MatrixXd::Ones(4, 1);
    s.pi = Eigen::MatrixXd::Ones(4, 1);
    const long P = 200000;
    Mat C = sample_dimensionwise_mixture(s, P, 3);
    double tol = 4.0 / std::sqrt(static_cast<double>(P));
    CHECK(col_mean(C).cwiseAbs().maxCoeff() < tol);
    CHECK((col_var(C).array() - 1.0).abs().maxCoeff() < tol * std::sqrt(2.0));
}

TEST_CASE("two-point mixture moments and standardization")
{
    auto s = two_point_mixture(3);
    const long P = 200000;
    Mat C = sample_dimensionwise_mixture(s, P, 5);
    double tol = 4.0 / std::sqrt(static_cast<double>(P));
    CHECK(col_mean(C).cwiseAbs().maxCoeff() < tol * std::sqrt(5.0));
    // fourth central moment of this mixture is 43, so Var(s^2) ~ (43 - 25) / P
    CHECK((col_var(C).array() - 5.0).abs().maxCoeff() < tol * std::sqrt(18.0));

    auto rec = analytic_moments(InputSpec{s}, 3);
    CHECK(rec.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK((rec.sigma.array() - std::sqrt(5.0)).abs().maxCoeff() < 1e-14);
    InputSpec spec{s};
    auto [Cb, r2] = standardize(C, StdMode::analytic, &spec);
    CHECK((Cb - C / std::sqrt(5.0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("block mixture within-block correlation and block independence")
{
    auto s = equicorrelated(8, 2, 0.5);
    const long P = 100000;
    Mat C = sample_block_mixture(s, P, 9);
    Mat c = C.rowwise() - C.colwise().mean();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(P);
    double tol = 4.0 / std::sqrt(static_cast<double>(P));
    for (int b = 0; b < 4; ++b) {
        int i = 2 * b;
        double corr = cov(i, i + 1) / std::sqrt(cov(i, i) * cov(i + 1, i + 1));
        CHECK(std::abs(corr - 0.5) < tol);
    }
    double cross = 0.0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            if (i / 2 != j / 2) cross = std::max(cross, std::abs(cov(i, j)));
    CHECK(cross < tol);
}

TEST_CASE("degenerate block mixture is iid standard normal")
{
    auto s = equicorrelated(6, 1, 0.0);
    Mat C = sample_block_mixture(s, 100000, 4);
    double tol = 4.0 / std::sqrt(1e5);
    CHECK(col_mean(C).cwiseAbs().maxCoeff() < tol);
    CHECK((col_var(C).array() - 1.0).abs().maxCoeff() < tol * std::sqrt(2.0));
}

TEST_CASE("drawn block specs are valid at the sweep endpoint")
{
    auto s = draw_block_spec(4096, 64, 2, BlockPrior{}, 17);
    CHECK(s.blocks.size() == 64);
    Mat C = sample_block_mixture(s, 50, 1);
    CHECK(C.rows() == 50);
    CHECK(C.cols() == 4096);
    CHECK(C.allFinite());
}

TEST_CASE("scalar laws")
{
    auto u = make_law(Law::uniform, {{"a", 0.0}, {"b", 10.0}});
    const long P = 200000;
    Mat C = sample_scalar_law(u, P, 2, 6);
    CHECK((col_mean(C).array() - 5.0).abs().maxCoeff() < 0.05);
    CHECK((col_var(C).array() - 100.0 / 12.0).abs().maxCoeff() < 0.1);

    auto proxy = make_law(Law::affine_proxy);
    proxy.mu_r = Eigen::VectorXd::Zero(2);
    proxy.sigma_r = Eigen::VectorXd::Ones(2);
    Mat G = sample_scalar_law(proxy, P, 2, 6);
    CHECK(col_mean(G).cwiseAbs().maxCoeff() < 4.0 / std::sqrt(double(P)));
    CHECK((col_var(G).array() - 1.0).abs().maxCoeff() < 0.02);

    CHECK_THROWS_AS(analytic_moments(InputSpec{make_law(Law::lorentz)}, 2), UnsupportedError);
    CHECK_THROWS_AS(parse_law("cauchy"), ParameterError);
}

TEST_CASE("standardization modes")
{
    auto g = make_law(Law::gaussian);
    Mat C = sample_scalar_law(g, 1000, 5, 2);
    InputSpec spec{g};
    auto [Ca, rec] = standardize(C, StdMode::analytic, &spec);
    CHECK(Ca == C);

    auto [Ce, r1] = standardize(C, StdMode::empirical);
    auto [Ce2, r2] = standardize(Ce, StdMode::empirical);
    CHECK((Ce2 - Ce).cwiseAbs().maxCoeff() < 1e-10);

    // lorentz: empirically standardized, yet the fourth moment swings across seeds
    auto l = make_law(Law::lorentz);
    std::vector<double> kurt;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        auto [L, r] = standardize(sample_scalar_law(l, 20000, 1, seed), StdMode::empirical);
        CHECK(std::abs(L.col(0).mean()) < 1e-10);
        CHECK(std::abs(L.col(0).array().square().mean() - 1.0) < 1e-10);
        kurt.push_back(L.col(0).array().pow(4).mean());
    }
    auto [lo, hi] = std::minmax_element(kurt.begin(), kurt.end());
    CHECK(*hi / *lo > 2.0);
}

TEST_CASE("sampling is deterministic and chunk independent")
{
    auto spec = draw_mixture_spec(16, 4, 1.0, 10.0, 8);
    Mat A = sample_dimensionwise_mixture(spec, 300, 21);
    Mat B = sample_dimensionwise_mixture(spec, 300, 21);
    CHECK(A == B);

    auto src = make_source(InputSpec{spec}, 16, 21);
    Mat part1 = src->take(7);
    Mat part2 = src->take(293);
    Mat joined(300, 16);
    joined << part1, part2;
    auto whole = make_source(InputSpec{spec}, 16, 21)->take(300);
    CHECK(joined == whole);

    auto bs = draw_block_spec(32, 4, 2, BlockPrior{}, 3);
    CHECK(sample_block_mixture(bs, 100, 5) == sample_block_mixture(bs, 100, 5));
}

TEST_CASE("mixture hyper-sampling ranges")
{
    auto s = draw_mixture_spec(200, 3, 2.0, 5.0, 1);
    CHECK(s.mu.minCoeff() >= -2.0);
    CHECK(s.mu.maxCoeff() < 2.0);
    CHECK(s.sigma.minCoeff() > 1e-3);
    CHECK(s.sigma.maxCoeff() < 5.0);
    CHECK((s.pi.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
}

TEST_CASE("matrix source")
{
    Mat rows = Mat::Random(5, 3);
    auto src = matrix_source(rows);
    CHECK(src->dim() == 3);
    CHECK(src->take(5) == rows);
    CHECK_THROWS_AS(src->take(1), ParameterError);
}
