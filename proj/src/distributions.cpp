#include "hmlab/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hmlab {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::VectorXd unit_gaussian(Rng& rng, int n)
{
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x(i) = nd(rng);
    double norm = x.norm();
    if (norm == 0.0) x(0) = norm = 1.0;
    return x / norm;
}

std::vector<double> normalized_uniform(Rng& rng, int q)
{
    std::vector<double> w(q);
    double s = 0.0;
    for (auto& x : w) {
        x = uniform(rng, 0.0, 1.0);
        s += x;
    }
    for (auto& x : w) x /= s;
    return w;
}

int pick(Rng& rng, const double* w, int q, Eigen::Index stride = 1)
{
    double u = uniform(rng, 0.0, 1.0);
    double acc = 0.0;
    for (int k = 0; k < q - 1; ++k) {
        acc += w[k * stride];
        if (u < acc) return k;
    }
    return q - 1;
}

std::pair<double, double> mixture_moments(const MixtureSpec& s, int r)
{
    double mean = 0.0, second = 0.0;
    for (int k = 0; k < s.q; ++k) {
        double mu = s.mu(r, k), sd = s.sigma(r, k);
        mean += s.pi(r, k) * mu;
        second += s.pi(r, k) * (sd * sd + mu * mu);
    }
    return {mean, std::sqrt(std::max(second - mean * mean, 0.0))};
}

}  // namespace

MixturePrior uniform_prior(double alpha, double beta)
{
    return {-alpha, alpha, 1e-3, beta, {}};
}

MixtureSpec draw_mixture_spec(int D, int q, const MixturePrior& prior, std::uint64_t seed)
{
    if (D < 1 || q < 1) throw ParameterError("mixture needs D >= 1 and q >= 1");
    if (!prior.weights.empty() && static_cast<int>(prior.weights.size()) != q)
        throw ParameterError("fixed weights must have q entries");
    if (!(prior.mu_hi >= prior.mu_lo) || !(prior.sigma_hi >= prior.sigma_lo) || !(prior.sigma_lo > 0.0))
        throw ParameterError("invalid mixture prior ranges");
    Rng rng(seed);
    MixtureSpec s;
    s.q = q;
    s.D = D;
    s.alpha = std::max(std::abs(prior.mu_lo), std::abs(prior.mu_hi));
    s.beta = prior.sigma_hi;
    s.mu.resize(D, q);
    s.sigma.resize(D, q);
    s.pi.resize(D, q);
    for (int r = 0; r < D; ++r) {
        for (int k = 0; k < q; ++k) {
            s.mu(r, k) = prior.mu_hi > prior.mu_lo ? uniform(rng, prior.mu_lo, prior.mu_hi) : prior.mu_lo;
            s.sigma(r, k) =
                prior.sigma_hi > prior.sigma_lo ? uniform(rng, prior.sigma_lo, prior.sigma_hi) : prior.sigma_lo;
        }
        auto w = prior.weights.empty() ? normalized_uniform(rng, q) : prior.weights;
        for (int k = 0; k < q; ++k) s.pi(r, k) = w[k];
    }
    return s;
}

MixtureSpec draw_mixture_spec(int D, int q, double alpha, double beta, std::uint64_t seed)
{
    return draw_mixture_spec(D, q, uniform_prior(alpha, beta), seed);
}

void validate(const MixtureSpec& s)
{
    if (s.q < 1 || s.D < 1) throw ParameterError("mixture needs D >= 1 and q >= 1");
    if (s.mu.rows() != s.D || s.mu.cols() != s.q || s.sigma.rows() != s.D || s.sigma.cols() != s.q ||
        s.pi.rows() != s.D || s.pi.cols() != s.q)
        throw ParameterError("mixture arrays must be D x q");
    for (int r = 0; r < s.D; ++r) {
        double sum = 0.0;
        for (int k = 0; k < s.q; ++k) {
            if (!(s.sigma(r, k) > 0.0)) throw ParameterError("mixture std-dev must be positive");
            if (!(s.pi(r, k) >= 0.0)) throw ParameterError("mixture weight must be nonnegative");
            sum += s.pi(r, k);
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw ParameterError("mixture weights of dimension " + std::to_string(r) + " do not sum to 1");
    }
}

Eigen::MatrixXd component_covariance(const Block& blk, const MixtureComponent& c)
{
    int n = blk.size;
    Eigen::MatrixXd A = (1.0 - c.rho - c.tau) * Eigen::MatrixXd::Identity(n, n);
    A.array() += c.rho;
    A += c.tau * blk.v * blk.v.transpose();
    return blk.sd.asDiagonal() * A * blk.sd.asDiagonal();
}

namespace {

bool structured_draw_ok(const MixtureComponent& c)
{
    return c.rho >= 0.0 && c.tau >= 0.0 && 1.0 - c.rho - c.tau >= 0.0;
}

// PD test of (1-rho-tau) I + rho 11' + tau vv'. Small blocks are factorized
// directly; large ones use the exact rank-2 eigenvalue criterion.
bool component_pd(const Block& blk, const MixtureComponent& c)
{
    int n = blk.size;
    if (n <= 512) {
        Eigen::LLT<Eigen::MatrixXd> llt(component_covariance(blk, c));
        return llt.info() == Eigen::Success;
    }
    double a = 1.0 - c.rho - c.tau;
    if (!(a > 0.0)) return false;
    Eigen::MatrixXd L(n, 2);
    L.col(0).setOnes();
    L.col(1) = blk.v;
    Eigen::Matrix2d G = L.transpose() * L;
    Eigen::Matrix2d S = Eigen::Vector2d(c.rho, c.tau).asDiagonal();
    // nonzero eigenvalues of L S L' are those of S G
    Eigen::EigenSolver<Eigen::Matrix2d> es(S * G);
    for (int i = 0; i < 2; ++i)
        if (a + es.eigenvalues()(i).real() <= 0.0) return false;
    return true;
}

}  // namespace

BlockMixtureSpec draw_block_spec(int D, int m, int q, const BlockPrior& prior, std::uint64_t seed)
{
    if (D < 1 || m < 1 || q < 1) throw ParameterError("block mixture needs D, m, q >= 1");
    Rng rng(seed);
    BlockMixtureSpec s;
    s.D = D;
    s.m = m;
    s.q = q;
    for (int start = 0; start < D; start += m) {
        Block blk;
        blk.start = start;
        blk.size = std::min(m, D - start);
        blk.u = unit_gaussian(rng, blk.size);
        blk.v = unit_gaussian(rng, blk.size);
        blk.sd.resize(blk.size);
        for (int r = 0; r < blk.size; ++r) blk.sd(r) = uniform(rng, prior.sd_lo, prior.sd_hi);
        auto w = normalized_uniform(rng, q);
        for (int k = 0; k < q; ++k) {
            MixtureComponent c;
            c.pi = w[k];
            c.mu = uniform(rng, prior.mu_lo, prior.mu_hi);
            c.delta = uniform(rng, prior.delta_lo, prior.delta_hi);
            for (;;) {
                c.rho = uniform(rng, prior.rho_lo, prior.rho_hi);
                c.tau = uniform(rng, prior.tau_lo, prior.tau_hi);
                if (component_pd(blk, c)) break;
                if (++s.rejections > 100000) throw ModelError("block covariance rejection limit reached");
            }
            blk.comps.push_back(c);
        }
        s.blocks.push_back(std::move(blk));
    }
    validate(s);
    return s;
}

void validate(BlockMixtureSpec& s)
{
    int covered = 0;
    for (std::size_t b = 0; b < s.blocks.size(); ++b) {
        Block& blk = s.blocks[b];
        if (blk.start != covered || blk.size < 1 || blk.size > s.m)
            throw ParameterError("blocks must partition 0..D-1 with sizes <= m");
        covered += blk.size;
        if (blk.u.size() != blk.size || blk.v.size() != blk.size || blk.sd.size() != blk.size)
            throw ParameterError("block vectors must match block size");
        if (std::abs(blk.u.norm() - 1.0) > 1e-12 || std::abs(blk.v.norm() - 1.0) > 1e-12)
            throw ParameterError("block directions must be unit vectors");
        if (static_cast<int>(blk.comps.size()) != s.q) throw ParameterError("block needs q components");
        double wsum = 0.0;
        bool need_chol = false;
        for (const auto& c : blk.comps) {
            if (!(c.pi >= 0.0)) throw ParameterError("negative block weight");
            wsum += c.pi;
            need_chol = need_chol || !structured_draw_ok(c);
        }
        if (std::abs(wsum - 1.0) > 1e-12) throw ParameterError("block weights must sum to 1");
        blk.chol.clear();
        for (int k = 0; k < s.q; ++k) {
            const auto& c = blk.comps[k];
            if (!component_pd(blk, c))
                throw ModelError("covariance of block " + std::to_string(b) + " component " +
                                 std::to_string(k) + " is not positive definite");
            if (need_chol) {
                Eigen::LLT<Eigen::MatrixXd> llt(component_covariance(blk, c));
                if (llt.info() != Eigen::Success)
                    throw ModelError("covariance of block " + std::to_string(b) + " component " +
                                     std::to_string(k) + " failed to factorize");
                blk.chol.push_back(llt.matrixL());
            }
        }
    }
    if (covered != s.D) throw ParameterError("blocks must cover all D coordinates");
}

Eigen::MatrixXd block_covariance(const BlockMixtureSpec& spec, int b)
{
    const Block& blk = spec.blocks.at(b);
    int n = blk.size;
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (const auto& c : blk.comps) {
        Eigen::VectorXd mk = Eigen::VectorXd::Constant(n, c.mu) + c.delta * blk.u;
        second += c.pi * (component_covariance(blk, c) + mk * mk.transpose());
        mean += c.pi * mk;
    }
    return second - mean * mean.transpose();
}

Law parse_law(const std::string& tag)
{
    static const std::map<std::string, Law> m{
        {"uniform", Law::uniform},   {"beta", Law::beta},
        {"poisson", Law::poisson},   {"laplace", Law::laplace},
        {"pareto", Law::pareto},     {"lorentz", Law::lorentz},
        {"gaussian", Law::gaussian}, {"gaussian_mixture", Law::gaussian_mixture},
        {"affine_proxy", Law::affine_proxy}};
    auto it = m.find(tag);
    if (it == m.end()) throw ParameterError("unknown law tag '" + tag + "'");
    return it->second;
}

std::string to_string(Law law)
{
    switch (law) {
    case Law::uniform: return "uniform";
    case Law::beta: return "beta";
    case Law::poisson: return "poisson";
    case Law::laplace: return "laplace";
    case Law::pareto: return "pareto";
    case Law::lorentz: return "lorentz";
    case Law::gaussian: return "gaussian";
    case Law::gaussian_mixture: return "gaussian_mixture";
    case Law::affine_proxy: return "affine_proxy";
    }
    return "?";
}

ScalarLawSpec make_law(Law law, std::map<std::string, double> params)
{
    static const std::map<Law, std::map<std::string, double>> defaults{
        {Law::uniform, {{"a", 0.0}, {"b", 1.0}}},
        {Law::beta, {{"alpha", 1.0}, {"beta", 1.0}}},
        {Law::poisson, {{"lambda", 1.0}}},
        {Law::laplace, {{"mu", 0.0}, {"b", 1.0}}},
        {Law::pareto, {{"alpha", 5.0}, {"scale", 1.0}}},
        {Law::lorentz, {{"x0", 0.0}, {"gamma", 1.0}}},
        {Law::gaussian, {{"mu", 0.0}, {"sigma", 1.0}}},
        {Law::gaussian_mixture, {}},
        {Law::affine_proxy, {{"mu", 0.0}, {"sigma", 1.0}}}};
    ScalarLawSpec s;
    s.law = law;
    s.params = defaults.at(law);
    for (auto& [k, v] : params) s.params[k] = v;
    return s;
}

std::vector<std::pair<std::string, ScalarLawSpec>> table_laws(int D, std::uint64_t seed)
{
    std::vector<std::pair<std::string, ScalarLawSpec>> out;
    out.emplace_back("uniform", make_law(Law::uniform, {{"a", 0.0}, {"b", 10.0}}));
    out.emplace_back("beta1", make_law(Law::beta, {{"alpha", 0.5}, {"beta", 0.5}}));
    out.emplace_back("beta2", make_law(Law::beta, {{"alpha", 5.0}, {"beta", 1.0}}));
    out.emplace_back("poisson", make_law(Law::poisson, {{"lambda", 2.0}}));
    out.emplace_back("laplace", make_law(Law::laplace, {{"mu", 0.0}, {"b", 1.0}}));
    out.emplace_back("pareto", make_law(Law::pareto, {{"alpha", 5.0}, {"scale", 1.0}}));
    out.emplace_back("lorentz", make_law(Law::lorentz, {{"x0", 0.0}, {"gamma", 1.0}}));
    ScalarLawSpec gm = make_law(Law::gaussian_mixture);
    gm.mixture = std::make_shared<MixtureSpec>(
        draw_mixture_spec(D, 2, MixturePrior{-2.0, 2.0, 0.5, 5.0, {0.3, 0.7}}, seed));
    out.emplace_back("gaussian_mixture", gm);
    return out;
}

void validate(const ScalarLawSpec& s)
{
    auto p = [&](const char* k) {
        auto it = s.params.find(k);
        if (it == s.params.end()) throw ParameterError(std::string("missing law parameter '") + k + "'");
        return it->second;
    };
    switch (s.law) {
    case Law::uniform:
        if (!(p("b") > p("a"))) throw ParameterError("uniform needs b > a");
        break;
    case Law::beta:
        if (!(p("alpha") > 0.0) || !(p("beta") > 0.0)) throw ParameterError("beta needs alpha, beta > 0");
        break;
    case Law::poisson:
        if (!(p("lambda") > 0.0)) throw ParameterError("poisson needs lambda > 0");
        break;
    case Law::laplace:
        p("mu");
        if (!(p("b") > 0.0)) throw ParameterError("laplace needs b > 0");
        break;
    case Law::pareto:
        if (!(p("alpha") > 0.0) || !(p("scale") > 0.0)) throw ParameterError("pareto needs alpha, scale > 0");
        break;
    case Law::lorentz:
        p("x0");
        if (!(p("gamma") > 0.0)) throw ParameterError("lorentz needs gamma > 0");
        break;
    case Law::gaussian:
    case Law::affine_proxy:
        p("mu");
        if (!(p("sigma") > 0.0)) throw ParameterError("sigma must be positive");
        if (s.sigma_r.size() && (s.sigma_r.array() <= 0.0).any())
            throw ParameterError("affine proxy scales must be positive");
        if (s.mu_r.size() != s.sigma_r.size()) throw ParameterError("affine proxy vectors differ in size");
        break;
    case Law::gaussian_mixture:
        if (!s.mixture) throw ParameterError("gaussian_mixture law needs a realized mixture");
        validate(*s.mixture);
        break;
    }
}

StdMode parse_std_mode(const std::string& tag)
{
    if (tag == "none") return StdMode::none;
    if (tag == "analytic") return StdMode::analytic;
    if (tag == "empirical") return StdMode::empirical;
    throw ParameterError("unknown standardization mode '" + tag + "'");
}

std::string to_string(StdMode mode)
{
    switch (mode) {
    case StdMode::none: return "none";
    case StdMode::analytic: return "analytic";
    case StdMode::empirical: return "empirical";
    }
    return "?";
}

Mat RowSource::take(Eigen::Index rows)
{
    Mat out(rows, dim());
    if (rows > 0) fill(out);
    return out;
}

namespace {

class MixtureSource : public RowSource {
public:
    MixtureSource(MixtureSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {}
    int dim() const override { return spec_.D; }
    void fill(Eigen::Ref<Mat> out) override
    {
        if (out.cols() != spec_.D) throw ShapeError("row width does not match mixture dimension");
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            for (int r = 0; r < spec_.D; ++r) {
                int k = pick(rng_, &spec_.pi(r, 0), spec_.q, spec_.pi.outerStride());
                out(i, r) = spec_.mu(r, k) + spec_.sigma(r, k) * nd_(rng_);
            }
        }
    }

private:
    MixtureSpec spec_;
    Rng rng_;
    std::normal_distribution<double> nd_;
};

class BlockSource : public RowSource {
public:
    BlockSource(BlockMixtureSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed)
    {
        for (const auto& blk : spec_.blocks) {
            std::vector<double> w;
            for (const auto& c : blk.comps) w.push_back(c.pi);
            weights_.push_back(std::move(w));
        }
    }
    int dim() const override { return spec_.D; }
    void fill(Eigen::Ref<Mat> out) override
    {
        if (out.cols() != spec_.D) throw ShapeError("row width does not match block mixture dimension");
        Eigen::VectorXd z;
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
                const Block& blk = spec_.blocks[b];
                int k = pick(rng_, weights_[b].data(), spec_.q);
                const auto& c = blk.comps[k];
                auto row = out.row(i).segment(blk.start, blk.size);
                z.resize(blk.size);
                for (int r = 0; r < blk.size; ++r) z(r) = nd_(rng_);
                if (blk.chol.empty()) {
                    double g = nd_(rng_), h = nd_(rng_);
                    double a = std::sqrt(1.0 - c.rho - c.tau);
                    double sr = std::sqrt(c.rho) * g, st = std::sqrt(c.tau) * h;
                    for (int r = 0; r < blk.size; ++r) {
                        double x = a * z(r) + sr + st * blk.v(r);
                        row(r) = c.mu + c.delta * blk.u(r) + blk.sd(r) * x;
                    }
                } else {
                    Eigen::VectorXd x = blk.chol[k] * z;
                    for (int r = 0; r < blk.size; ++r) row(r) = c.mu + c.delta * blk.u(r) + x(r);
                }
            }
        }
    }

private:
    BlockMixtureSpec spec_;
    Rng rng_;
    std::normal_distribution<double> nd_;
    std::vector<std::vector<double>> weights_;
};

class LawSource : public RowSource {
public:
    LawSource(ScalarLawSpec spec, int D, std::uint64_t seed) : spec_(std::move(spec)), D_(D), rng_(seed)
    {
        validate(spec_);
        if (spec_.law == Law::gaussian_mixture) {
            if (spec_.mixture->D != D) throw ShapeError("realized mixture dimension differs from D");
            mix_ = std::make_unique<MixtureSource>(*spec_.mixture, seed);
        }
        if (spec_.mu_r.size() && spec_.mu_r.size() != D) throw ShapeError("affine proxy vectors must have D entries");
    }
    int dim() const override { return D_; }
    void fill(Eigen::Ref<Mat> out) override
    {
        if (out.cols() != D_) throw ShapeError("row width does not match law dimension");
        if (mix_) return mix_->fill(out);
        const auto& p = spec_.params;
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (int r = 0; r < D_; ++r) out(i, r) = draw(p, r);
    }

private:
    double draw(const std::map<std::string, double>& p, int r)
    {
        switch (spec_.law) {
        case Law::uniform: return uniform(rng_, p.at("a"), p.at("b"));
        case Law::beta: {
            double x = std::gamma_distribution<double>(p.at("alpha"), 1.0)(rng_);
            double y = std::gamma_distribution<double>(p.at("beta"), 1.0)(rng_);
            return x / (x + y);
        }
        case Law::poisson: return static_cast<double>(std::poisson_distribution<long>(p.at("lambda"))(rng_));
        case Law::laplace: {
            double u = uniform(rng_, -0.5, 0.5);
            double s = u < 0.0 ? -1.0 : 1.0;
            return p.at("mu") - p.at("b") * s * std::log1p(-2.0 * std::abs(u));
        }
        case Law::pareto: {
            double u = 1.0 - uniform(rng_, 0.0, 1.0);
            return p.at("scale") * std::pow(u, -1.0 / p.at("alpha"));
        }
        case Law::lorentz: return std::cauchy_distribution<double>(p.at("x0"), p.at("gamma"))(rng_);
        case Law::gaussian: return p.at("mu") + p.at("sigma") * nd_(rng_);
        case Law::affine_proxy:
            if (spec_.mu_r.size()) return spec_.mu_r(r) + spec_.sigma_r(r) * nd_(rng_);
            return p.at("mu") + p.at("sigma") * nd_(rng_);
        case Law::gaussian_mixture: break;
        }
        return 0.0;
    }

    ScalarLawSpec spec_;
    int D_;
    Rng rng_;
    std::normal_distribution<double> nd_;
    std::unique_ptr<MixtureSource> mix_;
};

class StandardizedSource : public RowSource {
public:
    StandardizedSource(std::unique_ptr<RowSource> src, StandardizationRecord rec)
        : src_(std::move(src)), rec_(std::move(rec))
    {
        if (rec_.mode != StdMode::none &&
            (rec_.mu.size() != src_->dim() || rec_.sigma.size() != src_->dim()))
            throw ShapeError("standardization record does not match source dimension");
    }
    int dim() const override { return src_->dim(); }
    void fill(Eigen::Ref<Mat> out) override
    {
        src_->fill(out);
        if (rec_.mode == StdMode::none) return;
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index r = 0; r < out.cols(); ++r) out(i, r) = (out(i, r) - rec_.mu(r)) / rec_.sigma(r);
    }

private:
    std::unique_ptr<RowSource> src_;
    StandardizationRecord rec_;
};

class MatrixSource : public RowSource {
public:
    explicit MatrixSource(Mat rows) : rows_(std::move(rows)) {}
    int dim() const override { return static_cast<int>(rows_.cols()); }
    void fill(Eigen::Ref<Mat> out) override
    {
        if (out.cols() != rows_.cols()) throw ShapeError("row width does not match stored rows");
        if (next_ + out.rows() > rows_.rows()) throw ParameterError("input source exhausted");
        out = rows_.middleRows(next_, out.rows());
        next_ += out.rows();
    }

private:
    Mat rows_;
    Eigen::Index next_ = 0;
};

}  // namespace

int input_dim(const InputSpec& spec)
{
    if (auto* m = std::get_if<MixtureSpec>(&spec)) return m->D;
    if (auto* b = std::get_if<BlockMixtureSpec>(&spec)) return b->D;
    auto& l = std::get<ScalarLawSpec>(spec);
    if (l.mixture) return l.mixture->D;
    if (l.mu_r.size()) return static_cast<int>(l.mu_r.size());
    return -1;
}

std::unique_ptr<RowSource> make_source(const InputSpec& spec, int D, std::uint64_t seed)
{
    if (auto* m = std::get_if<MixtureSpec>(&spec)) {
        validate(*m);
        if (m->D != D) throw ShapeError("mixture dimension differs from D");
        return std::make_unique<MixtureSource>(*m, seed);
    }
    if (auto* b = std::get_if<BlockMixtureSpec>(&spec)) {
        if (b->D != D) throw ShapeError("block mixture dimension differs from D");
        BlockMixtureSpec copy = *b;
        validate(copy);
        return std::make_unique<BlockSource>(std::move(copy), seed);
    }
    return std::make_unique<LawSource>(std::get<ScalarLawSpec>(spec), D, seed);
}

std::unique_ptr<RowSource> standardized_source(std::unique_ptr<RowSource> src, StandardizationRecord rec)
{
    return std::make_unique<StandardizedSource>(std::move(src), std::move(rec));
}

std::unique_ptr<RowSource> matrix_source(Mat rows)
{
    return std::make_unique<MatrixSource>(std::move(rows));
}

Mat sample_dimensionwise_mixture(const MixtureSpec& spec, Eigen::Index P, std::uint64_t seed)
{
    if (P < 1) throw ParameterError("P must be >= 1");
    return make_source(spec, spec.D, seed)->take(P);
}

Mat sample_block_mixture(const BlockMixtureSpec& spec, Eigen::Index P, std::uint64_t seed)
{
    if (P < 1) throw ParameterError("P must be >= 1");
    return make_source(spec, spec.D, seed)->take(P);
}

Mat sample_scalar_law(const ScalarLawSpec& spec, Eigen::Index P, int D, std::uint64_t seed)
{
    if (P < 1 || D < 1) throw ParameterError("P and D must be >= 1");
    return make_source(spec, D, seed)->take(P);
}

StandardizationRecord analytic_moments(const InputSpec& spec, int D)
{
    StandardizationRecord rec;
    rec.mode = StdMode::analytic;
    rec.mu.resize(D);
    rec.sigma.resize(D);
    if (auto* m = std::get_if<MixtureSpec>(&spec)) {
        if (m->D != D) throw ShapeError("mixture dimension differs from D");
        for (int r = 0; r < D; ++r) std::tie(rec.mu(r), rec.sigma(r)) = mixture_moments(*m, r);
    } else if (auto* b = std::get_if<BlockMixtureSpec>(&spec)) {
        if (b->D != D) throw ShapeError("block mixture dimension differs from D");
        for (const auto& blk : b->blocks) {
            for (int r = 0; r < blk.size; ++r) {
                double mean = 0.0, second = 0.0;
                for (const auto& c : blk.comps) {
                    double mr = c.mu + c.delta * blk.u(r);
                    double var = blk.sd(r) * blk.sd(r) * (1.0 - c.tau + c.tau * blk.v(r) * blk.v(r));
                    mean += c.pi * mr;
                    second += c.pi * (var + mr * mr);
                }
                rec.mu(blk.start + r) = mean;
                rec.sigma(blk.start + r) = std::sqrt(std::max(second - mean * mean, 0.0));
            }
        }
    } else {
        const auto& l = std::get<ScalarLawSpec>(spec);
        validate(l);
        const auto& p = l.params;
        double mean = 0.0, var = 1.0;
        switch (l.law) {
        case Law::uniform:
            mean = 0.5 * (p.at("a") + p.at("b"));
            var = std::pow(p.at("b") - p.at("a"), 2) / 12.0;
            break;
        case Law::beta: {
            double a = p.at("alpha"), bb = p.at("beta");
            mean = a / (a + bb);
            var = a * bb / ((a + bb) * (a + bb) * (a + bb + 1.0));
            break;
        }
        case Law::poisson:
            mean = var = p.at("lambda");
            break;
        case Law::laplace:
            mean = p.at("mu");
            var = 2.0 * p.at("b") * p.at("b");
            break;
        case Law::pareto: {
            double a = p.at("alpha"), s = p.at("scale");
            if (!(a > 2.0)) throw UnsupportedError("pareto with alpha <= 2 has no finite variance");
            mean = a * s / (a - 1.0);
            var = s * s * a / ((a - 1.0) * (a - 1.0) * (a - 2.0));
            break;
        }
        case Law::lorentz:
            throw UnsupportedError("lorentz law has no finite moments; use empirical standardization");
        case Law::gaussian:
        case Law::affine_proxy:
            if (l.mu_r.size()) {
                if (l.mu_r.size() != D) throw ShapeError("affine proxy vectors must have D entries");
                rec.mu = l.mu_r;
                rec.sigma = l.sigma_r;
                return rec;
            }
            mean = p.at("mu");
            var = p.at("sigma") * p.at("sigma");
            break;
        case Law::gaussian_mixture:
            return analytic_moments(InputSpec(*l.mixture), D);
        }
        rec.mu.setConstant(mean);
        rec.sigma.setConstant(std::sqrt(var));
    }
    return rec;
}

StandardizationRecord empirical_moments(const Mat& C)
{
    if (C.rows() < 2) throw ParameterError("empirical standardization needs P >= 2");
    StandardizationRecord rec;
    rec.mode = StdMode::empirical;
    rec.mu.resize(C.cols());
    rec.sigma.resize(C.cols());
    for (Eigen::Index r = 0; r < C.cols(); ++r) {
        long double s = 0;
        for (Eigen::Index i = 0; i < C.rows(); ++i) s += C(i, r);
        double mean = static_cast<double>(s / C.rows());
        long double s2 = 0;
        for (Eigen::Index i = 0; i < C.rows(); ++i) {
            double d = C(i, r) - mean;
            s2 += static_cast<long double>(d) * d;
        }
        double sd = std::sqrt(static_cast<double>(s2 / C.rows()));
        if (!(sd > 0.0) || !std::isfinite(sd))
            throw DegenerateError("column " + std::to_string(r) + " has zero empirical variance");
        rec.mu(r) = mean;
        rec.sigma(r) = sd;
    }
    return rec;
}

Mat apply_standardization(const Mat& C, const StandardizationRecord& rec)
{
    if (rec.mode == StdMode::none) return C;
    if (rec.mu.size() != C.cols() || rec.sigma.size() != C.cols())
        throw ShapeError("standardization record does not match matrix width");
    if ((rec.sigma.array() <= 0.0).any()) throw DegenerateError("standardization scale must be positive");
    Mat out(C.rows(), C.cols());
    for (Eigen::Index i = 0; i < C.rows(); ++i)
        for (Eigen::Index r = 0; r < C.cols(); ++r) out(i, r) = (C(i, r) - rec.mu(r)) / rec.sigma(r);
    return out;
}

std::pair<Mat, StandardizationRecord> standardize(const Mat& C, StdMode mode, const InputSpec* spec)
{
    StandardizationRecord rec;
    switch (mode) {
    case StdMode::none:
        return {C, rec};
    case StdMode::analytic:
        if (!spec) throw ParameterError("analytic standardization requires a spec");
        rec = analytic_moments(*spec, static_cast<int>(C.cols()));
        break;
    case StdMode::empirical:
        rec = empirical_moments(C);
        break;
    }
    return {apply_standardization(C, rec), rec};
}

}  // namespace hmlab
