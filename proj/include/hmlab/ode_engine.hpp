#pragma once

#include "hmlab/gauss_integrals.hpp"
#include "hmlab/network.hpp"
#include "hmlab/record.hpp"

#include <cstdint>
#include <vector>

namespace hmlab {

enum class GridMode { empirical, analytic };
GridMode parse_grid_mode(const std::string& tag);
std::string to_string(GridMode m);

struct SpectralGrid {
    GridMode mode = GridMode::empirical;
    double delta = 0.5;
    Eigen::VectorXd edges;  // n_bins + 1
    Eigen::VectorXd p;      // bin weights
    Eigen::VectorXd rho;    // representative eigenvalue per bin
    // empirical mode only
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd psi;    // D x D, columns normalized to squared norm D
    std::vector<int> bin_of;

    int n_bins() const { return static_cast<int>(p.size()); }
};

double mp_density(double rho, double delta);
std::pair<double, double> mp_support(double delta);

SpectralGrid build_spectral_grid(const NetworkState& s, GridMode mode, int n_bins);
SpectralGrid build_spectral_grid_mp(double delta, int n_bins);

struct DensityField {
    std::vector<Eigen::MatrixXd> r;      // K x M per bin
    std::vector<Eigen::MatrixXd> sigma;  // K x K per bin
    std::vector<Eigen::MatrixXd> t;      // M x M per bin
    Eigen::MatrixXd T_script;            // sum p rho t
};

DensityField init_density_fields(const NetworkState& s, const SpectralGrid& grid);

struct OdeConfig {
    double dt = 0.01;
    double t_end = 10.0;
    int n_bins = 64;
    double eta = 0.2;
    double record_every = 0.05;
    GridMode grid = GridMode::empirical;
};

void validate(const OdeConfig& cfg);

struct OdeState {
    DensityField fields;
    Eigen::MatrixXd Omega;
    Eigen::VectorXd v;
    double t = 0.0;
};

struct OdeContext {
    const SpectralGrid* grid;
    NonlinearityStats f;
    Eigen::MatrixXd T;
    Eigen::VectorXd vt;
    double eta = 0.2;
    std::uint64_t det_regularized = 0;
};

OdeState init_ode_state(const NetworkState& s, const SpectralGrid& grid);
void ode_step(OdeState& st, OdeContext& ctx, double dt);
// Q, R, Sigma assembled from the fields.
void assemble(const OdeState& st, const OdeContext& ctx, Eigen::MatrixXd& Q, Eigen::MatrixXd& R,
              Eigen::MatrixXd& Sigma);
OrderParams snapshot(const OdeState& st, const OdeContext& ctx);

double assemble_eps_g(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R, const Eigen::MatrixXd& T,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& vt, Fn g = Fn::relu,
                      Fn gt = Fn::relu);

RunRecord run_ode(const NetworkConfig& net, const NetworkState& s, const OdeConfig& cfg,
                  const NonlinearityStats& f);
// Variant reusing a prebuilt empirical grid.
RunRecord run_ode(const NetworkConfig& net, const NetworkState& s, const OdeConfig& cfg,
                  const NonlinearityStats& f, const SpectralGrid& grid);

}  // namespace hmlab
