#pragma once

#include <Eigen/Dense>
#include <random>

inline Eigen::MatrixXd random_psd(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    Eigen::MatrixXd G(n, n + 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= n; ++j) G(i, j) = nd(rng);
    return G * G.transpose() / (n + 1);
}
