#pragma once

#include "hmlab/types.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace hmlab {

// Per-dimension q-component Gaussian mixture; arrays are D x q.
struct MixtureSpec {
    int q = 1;
    int D = 1;
    double alpha = 0.0;
    double beta = 1.0;
    Eigen::MatrixXd mu;
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd pi;
};

struct MixturePrior {
    double mu_lo, mu_hi;
    double sigma_lo, sigma_hi;
    std::vector<double> weights;  // fixed weights when nonempty, else normalized U(0,1)
};

// mu ~ U[-alpha, alpha), sigma ~ U(1e-3, beta)
MixturePrior uniform_prior(double alpha, double beta);
MixtureSpec draw_mixture_spec(int D, int q, const MixturePrior& prior, std::uint64_t seed);
MixtureSpec draw_mixture_spec(int D, int q, double alpha, double beta, std::uint64_t seed);
void validate(const MixtureSpec& spec);

struct MixtureComponent {
    double pi = 1.0;
    double mu = 0.0;
    double delta = 0.0;
    double rho = 0.0;
    double tau = 0.0;
};

struct Block {
    int start = 0;
    int size = 1;
    Eigen::VectorXd u;
    Eigen::VectorXd v;
    Eigen::VectorXd sd;
    std::vector<MixtureComponent> comps;
    std::vector<Eigen::MatrixXd> chol;  // filled only when the structured draw is not valid
};

struct BlockMixtureSpec {
    int D = 1;
    int m = 1;
    int q = 1;
    std::vector<Block> blocks;
    int rejections = 0;
};

struct BlockPrior {
    double mu_lo = -2.0, mu_hi = 2.0;
    double delta_lo = 0.0, delta_hi = 1.0;
    double rho_lo = 0.0, rho_hi = 0.5;
    double tau_lo = 0.0, tau_hi = 0.3;
    double sd_lo = 0.5, sd_hi = 2.0;
};

BlockMixtureSpec draw_block_spec(int D, int m, int q, const BlockPrior& prior, std::uint64_t seed);
void validate(BlockMixtureSpec& spec);
// Unstandardized covariance of the coordinates of block b (mixture over components).
Eigen::MatrixXd block_covariance(const BlockMixtureSpec& spec, int b);
Eigen::MatrixXd component_covariance(const Block& blk, const MixtureComponent& c);

enum class Law {
    uniform, beta, poisson, laplace, pareto, lorentz, gaussian, gaussian_mixture, affine_proxy
};

Law parse_law(const std::string& tag);
std::string to_string(Law law);

struct ScalarLawSpec {
    Law law = Law::gaussian;
    std::map<std::string, double> params;
    // affine_proxy may carry per-dimension location/scale
    Eigen::VectorXd mu_r;
    Eigen::VectorXd sigma_r;
    // gaussian_mixture: realized per-dimension mixture
    std::shared_ptr<MixtureSpec> mixture;
};

ScalarLawSpec make_law(Law law, std::map<std::string, double> params = {});
// Standard law table; the mixture entry is realized for dimension D.
std::vector<std::pair<std::string, ScalarLawSpec>> table_laws(int D, std::uint64_t seed);
void validate(const ScalarLawSpec& spec);

using InputSpec = std::variant<MixtureSpec, BlockMixtureSpec, ScalarLawSpec>;

enum class StdMode { none, analytic, empirical };
StdMode parse_std_mode(const std::string& tag);
std::string to_string(StdMode mode);

struct StandardizationRecord {
    StdMode mode = StdMode::none;
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;
};

// Chunked row stream; rows come out in the same order regardless of chunking.
class RowSource {
public:
    virtual ~RowSource() = default;
    virtual int dim() const = 0;
    virtual void fill(Eigen::Ref<Mat> out) = 0;
    Mat take(Eigen::Index rows);
};

std::unique_ptr<RowSource> make_source(const InputSpec& spec, int D, std::uint64_t seed);
std::unique_ptr<RowSource> standardized_source(std::unique_ptr<RowSource> src,
                                               StandardizationRecord rec);
// Finite stream over stored rows; reading past the end throws.
std::unique_ptr<RowSource> matrix_source(Mat rows);

Mat sample_dimensionwise_mixture(const MixtureSpec& spec, Eigen::Index P, std::uint64_t seed);
Mat sample_block_mixture(const BlockMixtureSpec& spec, Eigen::Index P, std::uint64_t seed);
Mat sample_scalar_law(const ScalarLawSpec& spec, Eigen::Index P, int D, std::uint64_t seed);

// Per-column analytic mean and standard deviation.
StandardizationRecord analytic_moments(const InputSpec& spec, int D);
StandardizationRecord empirical_moments(const Mat& C);
Mat apply_standardization(const Mat& C, const StandardizationRecord& rec);
std::pair<Mat, StandardizationRecord> standardize(const Mat& C, StdMode mode,
                                                  const InputSpec* spec = nullptr);

int input_dim(const InputSpec& spec);

}  // namespace hmlab
