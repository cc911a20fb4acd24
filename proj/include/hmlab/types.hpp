#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hmlab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParameterError : Error { using Error::Error; };
struct ModelError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct DegenerateError : Error { using Error::Error; };
struct UnsupportedError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

struct DivergenceError : Error {
    DivergenceError(const std::string& what, double where)
        : Error(what), at(where) {}
    double at;  // step index (sgd) or normalized time (ode)
};

struct AccuracyError : Error {
    AccuracyError(const std::string& what, double est, double err)
        : Error(what), estimate(est), achieved(err) {}
    double estimate;
    double achieved;
};

}  // namespace hmlab
