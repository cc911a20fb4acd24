#include "hmlab/equivalence_lab.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <numbers>

using namespace hmlab;

namespace {

std::unique_ptr<RowSource> gaussian(int D, std::uint64_t seed)
{
    return make_source(InputSpec{make_law(Law::gaussian)}, D, seed);
}

std::vector<Eigen::MatrixXd> identity_blocks(const Partition& part)
{
    std::vector<Eigen::MatrixXd> out;
    for (auto [start, size] : part) out.push_back(Eigen::MatrixXd::Identity(size, size));
    return out;
}

std::vector<double> normal_quantiles(int P, double shift)
{
    boost::math::normal nd;
    std::vector<double> v(P);
    for (int i = 0; i < P; ++i) v[i] = boost::math::quantile(nd, (i + 0.5) / P) + shift;
    return v;
}

}  // namespace

TEST_CASE("wasserstein distance to the normal")
{
    Eigen::VectorXd one = Eigen::VectorXd::Ones(1), zero = Eigen::VectorXd::Zero(1);
    CHECK(wasserstein1_to_normal(one, zero, one, false) < 1e-6);
    CHECK(wasserstein1_to_normal(one, one, one, false) == doctest::Approx(1.0).epsilon(1e-6));
    // standardizing a translate removes the shift
    CHECK(wasserstein1_to_normal(one, one * 3.0, one * 2.0, true) < 1e-6);
    CHECK(wasserstein1_to_normal(normal_quantiles(100000, 0.0)) < 1e-3);
    CHECK(wasserstein1_to_normal(normal_quantiles(100000, 1.0)) == doctest::Approx(1.0).epsilon(1e-3));
    Eigen::VectorXd pi(2), mu(2), sd(2);
    pi << 0.5, 0.5;
    mu << -2.0, 2.0;
    sd << 1.0, 1.0;
    double w_raw = wasserstein1_to_normal(pi, mu, sd, false);
    double w_std = wasserstein1_to_normal(pi, mu, sd, true);
    CHECK(w_std < w_raw);
    CHECK(w_std > 0.0);

    // independent route: empirical distance of the mixture quantiles
    boost::math::normal nd;
    auto cdf = [&](double x) { return 0.5 * boost::math::cdf(nd, x + 2.0) + 0.5 * boost::math::cdf(nd, x - 2.0); };
    const int n = 20000;
    std::vector<double> q(n);
    for (int i = 0; i < n; ++i) {
        double u = (i + 0.5) / n, a = -20.0, b = 20.0;
        for (int it = 0; it < 80; ++it) {
            double c = 0.5 * (a + b);
            (cdf(c) < u ? a : b) = c;
        }
        q[i] = 0.5 * (a + b);
    }
    CHECK(w_raw == doctest::Approx(wasserstein1_to_normal(q)).epsilon(2e-3));
}

TEST_CASE("kolmogorov-smirnov distance")
{
    CHECK(ks_to_normal(std::vector<double>(100, 0.0)) == doctest::Approx(0.5).epsilon(1e-12));
    const int P = 100000;
    Mat g = gaussian(1, 3)->take(P);
    CHECK(ks_to_normal(std::vector<double>(g.data(), g.data() + P)) <= 1.63 / std::sqrt(double(P)));
    auto [L, rec] = standardize(sample_scalar_law(make_law(Law::lorentz), P, 1, 4), StdMode::empirical);
    CHECK(ks_to_normal(std::vector<double>(L.data(), L.data() + P)) > 0.01);
}

TEST_CASE("block statistics")
{
    NetworkConfig cfg;
    cfg.N = 128;
    cfg.D = 64;
    auto s = init_gaussian(cfg, 2, true);
    const long P = 50000;

    Partition whole{{0, cfg.D}};
    auto cov1 = identity_blocks(whole);
    auto src = gaussian(cfg.D, 5);
    auto st = block_statistic(Target::U, cfg, s, *src, P, whole, 3, &cov1);
    CHECK(st.T.cols() == 1);
    CHECK((st.Z().col(0) - st.total / st.sigma).cwiseAbs().maxCoeff() == 0.0);
    double m3 = (st.total / st.sigma).array().abs().cube().mean();
    CHECK(third_moment_sum(st) == doctest::Approx(m3).epsilon(1e-12));
    // Gaussian absolute third moment, MC tolerance
    CHECK(m3 == doctest::Approx(2.0 * std::sqrt(2.0 / std::numbers::pi)).epsilon(0.03));

    for (int m : {1, 4, 16}) {
        auto part = uniform_partition(cfg.D, m);
        auto cov = identity_blocks(part);
        auto g = gaussian(cfg.D, 10 + m);
        auto b = block_statistic(Target::U, cfg, s, *g, P, part, 1, &cov);
        double var_sum = b.Z().array().square().colwise().mean().sum();
        CHECK(std::abs(var_sum - 1.0) < 4.0 / std::sqrt(double(P)) * 2.0);
    }
    CHECK_THROWS_AS(check_partition({{0, 10}, {11, 53}}, cfg.D), ShapeError);
    CHECK_THROWS_AS(parse_target("mu"), ParameterError);
}

TEST_CASE("residuals vanish for Gaussian inputs")
{
    NetworkConfig cfg;
    cfg.N = 128;
    cfg.D = 64;
    auto s = init_gaussian(cfg, 6, true);
    auto f = nonlinearity_stats(cfg.f);
    const long P = 100000;
    auto src = gaussian(cfg.D, 7);
    auto r = mean_residuals(cfg, s, f, *src, P, 16, 1);
    CHECK(r.R1 < 4.0 / std::sqrt(double(P)));
    CHECK(r.R2 < 4.0 / std::sqrt(double(P)));

    NetworkConfig lin = cfg;
    lin.f = Fn::identity;
    auto src2 = gaussian(cfg.D, 8);
    auto rl = residuals(lin, s, nonlinearity_stats(Fn::identity), *src2, P, 0, 1, 2);
    CHECK(rl.R1 < 4.0 / std::sqrt(double(P)));
    CHECK_THROWS_AS(mean_residuals(cfg, s, f, *src, 100, 4, 1), ParameterError);
}

TEST_CASE("scaling fits and rank correlation")
{
    std::vector<double> x, y;
    for (int k = 0; k < 8; ++k) {
        x.push_back(std::pow(2.0, -k));
        y.push_back(3.0 * std::sqrt(x.back()));
    }
    auto fit = fit_scaling(x, y, 0.0, 1.0);
    CHECK(fit.slope == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::exp(fit.intercept) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.used == 8);
    auto part = fit_scaling(x, y, 0.01, 0.5);
    CHECK(part.used == 6);
    CHECK_THROWS_AS(fit_scaling(x, y, 0.2, 1.0), ParameterError);
    y[2] = 0.0;
    CHECK_THROWS_AS(fit_scaling(x, y, 0.0, 1.0), ParameterError);

    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4}, {1, 1, 2, 2}) == doctest::Approx(std::sqrt(0.8)));
}

TEST_CASE("correlation diagnostics")
{
    NetworkConfig cfg;
    cfg.N = 128;
    cfg.D = 128;
    auto s = init_gaussian(cfg, 9, true);
    const long P = 20000;
    auto same = gaussian(cfg.D, 77);
    auto d0 = correlation_diagnostics(cfg, s, *same, P, 77);
    CHECK(d0.nu == 0.0);
    CHECK(d0.U == 0.0);
    CHECK(d0.Wt == 0.0);

    auto other = gaussian(cfg.D, 78);
    auto d1 = correlation_diagnostics(cfg, s, *other, P, 77);
    double floor_nu = 4.0 * cfg.M * cfg.M / std::sqrt(double(P));
    CHECK(d1.nu > 0.0);
    CHECK(d1.nu <= floor_nu);

    auto spec = draw_block_spec(cfg.D, 64, 2, BlockPrior{}, 3);
    auto rec = analytic_moments(InputSpec{spec}, cfg.D);
    auto blk = standardized_source(make_source(InputSpec{spec}, cfg.D, 4), rec);
    auto d2 = correlation_diagnostics(cfg, s, *blk, P, 77);
    CHECK(d2.nu > d1.nu);
    CHECK(d2.U > d1.U);
}

TEST_CASE("linear remainder falls to the Gaussian level for small blocks")
{
    NetworkConfig cfg;
    cfg.N = 256;
    cfg.D = 256;
    auto s = init_gaussian(cfg, 12, true);
    auto f = nonlinearity_stats(cfg.f);
    const long P = 20000;
    auto ratio = [&](int m) {
        auto spec = draw_block_spec(cfg.D, m, 2, BlockPrior{}, 40 + m);
        auto src = standardized_source(make_source(InputSpec{spec}, cfg.D, 50 + m),
                                       analytic_moments(InputSpec{spec}, cfg.D));
        return remainder_variance_ratio(cfg, s, f, *src, P, 0);
    };
    auto g = gaussian(cfg.D, 3);
    double floor = remainder_variance_ratio(cfg, s, f, *g, P, 0);
    double small = ratio(2), large = ratio(64);
    CHECK(small == doctest::Approx(floor).epsilon(0.1));
    CHECK(large > 1.15 * small);
}

TEST_CASE("KS stays below the summed third moments")
{
    NetworkConfig cfg;
    cfg.N = 512;
    cfg.D = 512;
    auto s = init_gaussian(cfg, 13, true);
    for (int m : {8, 64}) {
        auto spec = draw_block_spec(cfg.D, m, 2, BlockPrior{}, m);
        auto rec = analytic_moments(InputSpec{spec}, cfg.D);
        auto part = partition_of(spec);
        auto cov = standardized_block_covariances(spec);
        auto src = standardized_source(make_source(InputSpec{spec}, cfg.D, 100 + m), rec);
        auto st = block_statistic(Target::U, cfg, s, *src, 20000, part, 0, &cov);
        Eigen::VectorXd z = st.total / st.sigma;
        double ks = ks_to_normal(std::vector<double>(z.data(), z.data() + z.size()));
        CHECK(ks <= third_moment_sum(st));
    }
}
