#pragma once

#include "hmlab/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hmlab {

enum class Fn { identity, relu, hardtanh, tanh };

Fn parse_fn(const std::string& tag);
std::string to_string(Fn fn);

double act(Fn fn, double x);
double act_prime(Fn fn, double x);

struct NonlinearityStats {
    Fn fn = Fn::tanh;
    double a = 0.0;      // E f(u)
    double b = 0.0;      // E u f(u)
    double c = 0.0;      // E f(u)^2
    double sigma = 1.0;  // u ~ N(0, sigma^2)
    int order = 0;       // Gauss-Hermite order, 0 when closed form
};

NonlinearityStats nonlinearity_stats(Fn fn, int order = 200, double sigma = 1.0);

// Physicists' Gauss-Hermite rule (weight exp(-x^2)) via Golub-Welsch.
struct HermiteRule {
    std::vector<double> x, w;
};
const HermiteRule& hermite_rule(int order);

// Symmetric eigenvalue flooring; returns true when something was clipped.
bool floor_psd(Eigen::Ref<Eigen::MatrixXd> cov, double floor = 1e-12);
std::uint64_t psd_floor_count();
void check_psd(const Eigen::MatrixXd& cov, double tol = 1e-10);

// E[g(u) gt(v)]
double i2(Fn g, Fn gt, const Eigen::Matrix2d& cov);
// E[g'(z0) z1 g(z2)]
double i3(Fn g, const Eigen::Matrix3d& cov);
// E[g'(z0) g'(z1) g(z2) g(z3)], ReLU only
double i4(Fn g, const Eigen::Matrix4d& cov);

// P(z > 0 componentwise) for a zero-mean Gaussian, dimension <= 4.
double orthant_probability(const Eigen::MatrixXd& cov);

// E[prod_i z_i^{p_i} 1{z_i > 0}] for p_i in {-1 (absent), 0, 1, 2}.
// Exact up to the one-dimensional path integral used for 4-d orthants.
double relu_moment(const Eigen::MatrixXd& cov, const std::vector<int>& powers);

double price_stein_cross(const NonlinearityStats& f, const NonlinearityStats& g,
                         double sxx, double syy, double sxy, double rho);

enum class Factor { z, z2, relu, relu_prime, hardtanh, hardtanh_prime, tanh };

struct FactorTerm {
    Factor kind;
    int index;
};

struct McEstimate {
    double estimate;
    double se;
};

McEstimate mc_oracle(const Eigen::MatrixXd& cov, const std::vector<FactorTerm>& product,
                     std::int64_t samples, std::uint64_t seed);

}  // namespace hmlab
