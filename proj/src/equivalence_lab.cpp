#include "hmlab/equivalence_lab.hpp"

#include <algorithm>
#include <array>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <numeric>
#include <random>

namespace hmlab {

namespace {

constexpr long kChunk = 4096;

double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
// antiderivative of Phi vanishing at -inf
double G(double x) { return x * Phi(x) + phi(x); }

struct Moments {
    long n = 0;
    double sum = 0.0, sum2 = 0.0;
    void add(double x)
    {
        ++n;
        sum += x;
        sum2 += x * x;
    }
    double mean() const { return n ? sum / n : 0.0; }
    double se() const
    {
        if (n < 2) return 0.0;
        double m = mean();
        double var = std::max(0.0, (sum2 - n * m * m) / (n - 1));
        return std::sqrt(var / n);
    }
};

template <class Fn>
void stream(RowSource& src, long P, int D, Fn&& fn)
{
    if (src.dim() != D) throw ShapeError("input stream width must equal D");
    if (P < 1) throw ParameterError("sample count must be positive");
    Mat C;
    for (long i0 = 0; i0 < P; i0 += kChunk) {
        long n = std::min(kChunk, P - i0);
        C.resize(n, D);
        src.fill(C);
        fn(C, i0);
    }
}

}  // namespace

Target parse_target(const std::string& tag)
{
    if (tag == "U") return Target::U;
    if (tag == "nu") return Target::nu;
    if (tag == "lambda") return Target::lambda;
    throw ParameterError("unknown target '" + tag + "'");
}

std::string to_string(Target t)
{
    switch (t) {
    case Target::U: return "U";
    case Target::nu: return "nu";
    case Target::lambda: return "lambda";
    }
    return "?";
}

Partition uniform_partition(int D, int m)
{
    if (D < 1 || m < 1) throw ParameterError("partition needs D, m >= 1");
    Partition p;
    for (int s = 0; s < D; s += m) p.emplace_back(s, std::min(m, D - s));
    return p;
}

Partition partition_of(const BlockMixtureSpec& spec)
{
    Partition p;
    for (const auto& b : spec.blocks) p.emplace_back(b.start, b.size);
    return p;
}

void check_partition(const Partition& part, int D)
{
    int covered = 0;
    for (auto [s, n] : part) {
        if (s != covered || n < 1) throw ShapeError("partition must cover 0..D-1 in order");
        covered += n;
    }
    if (covered != D) throw ShapeError("partition does not match the input dimension");
}

std::vector<Eigen::MatrixXd> standardized_block_covariances(const BlockMixtureSpec& spec)
{
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        Eigen::MatrixXd S = block_covariance(spec, static_cast<int>(b));
        Eigen::VectorXd inv = S.diagonal().cwiseSqrt().cwiseInverse();
        out.push_back(inv.asDiagonal() * S * inv.asDiagonal());
    }
    return out;
}

double block_variance(const Eigen::VectorXd& a, const Partition& part,
                      const std::vector<Eigen::MatrixXd>& block_cov)
{
    check_partition(part, static_cast<int>(a.size()));
    if (block_cov.size() != part.size()) throw ShapeError("one covariance per block required");
    double var = 0.0;
    for (std::size_t b = 0; b < part.size(); ++b) {
        auto seg = a.segment(part[b].first, part[b].second);
        if (block_cov[b].rows() != part[b].second) throw ShapeError("block covariance size mismatch");
        var += seg.dot(block_cov[b] * seg);
    }
    return var / static_cast<double>(a.size());
}

Mat project_stream(RowSource& src, long P, const Eigen::MatrixXd& A)
{
    int D = static_cast<int>(A.rows());
    Mat out(P, A.cols());
    double sD = std::sqrt(static_cast<double>(D));
    stream(src, P, D, [&](const Mat& C, long i0) { out.middleRows(i0, C.rows()).noalias() = C * A / sD; });
    return out;
}

BlockStatistic block_statistic(Target target, const NetworkConfig& cfg, const NetworkState& s,
                               RowSource& src, long P, const Partition& part, int index,
                               const std::vector<Eigen::MatrixXd>* block_cov, const NonlinearityStats* f)
{
    check_shapes(cfg, s);
    check_partition(part, cfg.D);
    const double sD = std::sqrt(static_cast<double>(cfg.D));
    const double sN = std::sqrt(static_cast<double>(cfg.N));
    Eigen::VectorXd a;
    switch (target) {
    case Target::U:
        if (index < 0 || index >= cfg.N) throw ParameterError("U index out of range");
        a = s.F.col(index);
        break;
    case Target::nu:
        if (index < 0 || index >= cfg.M) throw ParameterError("nu index out of range");
        a = s.Wt.row(index).transpose();
        break;
    case Target::lambda:
        if (index < 0 || index >= cfg.K) throw ParameterError("lambda index out of range");
        if (!f) throw ParameterError("lambda statistic needs the feature-function stats");
        a = f->b * (s.F * s.W.row(index).transpose()) / sN;
        break;
    }

    BlockStatistic st;
    st.target = target;
    st.index = index;
    st.T.resize(P, static_cast<Eigen::Index>(part.size()));
    st.total.resize(P);
    stream(src, P, cfg.D, [&](const Mat& C, long i0) {
        long n = C.rows();
        for (std::size_t b = 0; b < part.size(); ++b)
            st.T.block(i0, b, n, 1).noalias() =
                C.middleCols(part[b].first, part[b].second) * a.segment(part[b].first, part[b].second) / sD;
        if (target == Target::lambda) {
            Mat U = C * s.F / sD;
            Mat X = U.unaryExpr([&](double x) { return act(cfg.f, x); });
            st.total.segment(i0, n).noalias() = X * s.W.row(index).transpose() / sN;
        } else {
            st.total.segment(i0, n) = st.T.middleRows(i0, n).rowwise().sum();
        }
    });

    if (block_cov && target != Target::lambda) {
        st.sigma = std::sqrt(block_variance(a, part, *block_cov));
    } else {
        double m = st.total.mean();
        st.sigma = std::sqrt((st.total.array() - m).square().mean());
    }
    if (!(st.sigma > 0.0)) throw DegenerateError("target has zero variance");
    return st;
}

double third_moment_sum(const BlockStatistic& stat)
{
    if (stat.T.rows() == 0) throw ParameterError("empty block statistic");
    double s3 = stat.sigma * stat.sigma * stat.sigma;
    return (stat.T.array().abs().cube().colwise().mean()).sum() / s3;
}

double ks_to_normal(std::vector<double> x)
{
    if (x.empty()) throw ParameterError("KS distance of an empty sample");
    std::sort(x.begin(), x.end());
    double n = static_cast<double>(x.size()), d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double F = Phi(x[i]);
        d = std::max({d, (i + 1) / n - F, F - i / n});
    }
    return d;
}

double wasserstein1_to_normal(std::vector<double> x)
{
    if (x.empty()) throw ParameterError("W1 distance of an empty sample");
    std::sort(x.begin(), x.end());
    boost::math::normal nd;
    std::size_t n = x.size();
    double w = G(x.front()) + (G(x.back()) - x.back());
    for (std::size_t i = 1; i < n; ++i) {
        double a = x[i - 1], b = x[i];
        if (b <= a) continue;
        double c = static_cast<double>(i) / n;
        double xs = std::clamp(boost::math::quantile(nd, c), a, b);
        w += c * (xs - a) - (G(xs) - G(a)) + (G(b) - G(xs)) - c * (b - xs);
    }
    return w;
}

namespace {

// Adaptive Gauss-Kronrod with an absolute tolerance, so negligible tails stop early.
template <class F>
double integrate_abs_tol(const F& f, double a, double b, double tol, int depth = 0)
{
    double err = 0.0;
    double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 0, 0.0, &err);
    if (err <= tol || depth >= 30) return v;
    double mid = 0.5 * (a + b);
    return integrate_abs_tol(f, a, mid, 0.5 * tol, depth + 1) + integrate_abs_tol(f, mid, b, 0.5 * tol, depth + 1);
}

}  // namespace

double wasserstein1_to_normal(const Eigen::VectorXd& pi, const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma,
                              bool standardize)
{
    Eigen::Index q = pi.size();
    if (q == 0 || mu.size() != q || sigma.size() != q) throw ParameterError("mixture arrays must share length q >= 1");
    Eigen::VectorXd m = mu, sd = sigma;
    if (standardize) {
        double mean = pi.dot(mu);
        double second = (pi.array() * (sigma.array().square() + mu.array().square())).sum();
        double s = std::sqrt(second - mean * mean);
        if (!(s > 0.0)) throw DegenerateError("mixture has zero variance");
        m = (mu.array() - mean) / s;
        sd = sigma / s;
    }
    auto diff = [&](double x) {
        double F = 0.0;
        for (Eigen::Index k = 0; k < q; ++k) F += pi(k) * Phi((x - m(k)) / sd(k));
        return F - Phi(x);
    };
    double lo = -12.0, hi = 12.0;
    for (Eigen::Index k = 0; k < q; ++k) {
        lo = std::min(lo, m(k) - 12.0 * sd(k));
        hi = std::max(hi, m(k) + 12.0 * sd(k));
    }
    // split at the crossings of the two CDFs so each piece is smooth and signed
    const int n_grid = 2048;
    std::vector<double> pts{lo};
    double x0 = lo, d0 = diff(lo);
    for (int i = 1; i <= n_grid; ++i) {
        double x1 = lo + (hi - lo) * i / n_grid, d1 = diff(x1);
        if ((d0 < 0.0 && d1 > 0.0) || (d0 > 0.0 && d1 < 0.0)) {
            std::uintmax_t iters = 100;
            auto root = boost::math::tools::toms748_solve(diff, x0, x1, d0, d1,
                                                          boost::math::tools::eps_tolerance<double>(50), iters);
            pts.push_back(0.5 * (root.first + root.second));
        } else if (d1 == 0.0 && i < n_grid) {
            pts.push_back(x1);
        }
        x0 = x1;
        d0 = d1;
    }
    pts.push_back(hi);
    double w = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) w += std::abs(integrate_abs_tol(diff, pts[i - 1], pts[i], 1e-13));
    return w;
}

double wasserstein1_to_normal(const MixtureSpec& spec, bool standardize)
{
    validate(spec);
    double w = 0.0;
    for (int r = 0; r < spec.D; ++r)
        w += wasserstein1_to_normal(spec.pi.row(r).transpose(), spec.mu.row(r).transpose(),
                                    spec.sigma.row(r).transpose(), standardize);
    return w / spec.D;
}

namespace {

struct PairSet {
    std::vector<std::pair<int, int>> uu;  // (i, j)
    std::vector<std::pair<int, int>> uc;  // (i, r)
};

Residuals residual_pass(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                        RowSource& src, long P, const PairSet& pairs)
{
    check_shapes(cfg, s);
    if (P < 10000) throw ParameterError("residuals need at least 1e4 samples");
    std::vector<int> cols;
    for (auto [i, j] : pairs.uu) {
        if (i == j) throw ParameterError("R1 needs i != j");
        cols.push_back(i);
        cols.push_back(j);
    }
    for (auto [i, r] : pairs.uc) {
        if (r < 0 || r >= cfg.D) throw ParameterError("input index out of range");
        cols.push_back(i);
    }
    for (int c : cols)
        if (c < 0 || c >= cfg.N) throw ParameterError("feature index out of range");
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    std::vector<int> slot(cfg.N, -1);
    Eigen::MatrixXd Fsel(cfg.D, cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
        slot[cols[c]] = static_cast<int>(c);
        Fsel.col(c) = s.F.col(cols[c]);
    }

    const double sD = std::sqrt(static_cast<double>(cfg.D));
    std::vector<Moments> m1(pairs.uu.size()), m2(pairs.uc.size());
    stream(src, P, cfg.D, [&](const Mat& C, long) {
        Mat X = (C * Fsel / sD).unaryExpr([&](double x) { return act(cfg.f, x); });
        for (Eigen::Index p = 0; p < C.rows(); ++p) {
            for (std::size_t q = 0; q < pairs.uu.size(); ++q)
                m1[q].add(X(p, slot[pairs.uu[q].first]) * X(p, slot[pairs.uu[q].second]));
            for (std::size_t q = 0; q < pairs.uc.size(); ++q)
                m2[q].add(X(p, slot[pairs.uc[q].first]) * C(p, pairs.uc[q].second));
        }
    });

    Residuals out;
    for (std::size_t q = 0; q < pairs.uu.size(); ++q) {
        auto [i, j] = pairs.uu[q];
        double theory = f.a * f.a + f.b * f.b * s.F.col(i).dot(s.F.col(j)) / cfg.D;
        out.R1 += std::abs(m1[q].mean() - theory);
        out.se1 += m1[q].se();
    }
    for (std::size_t q = 0; q < pairs.uc.size(); ++q) {
        auto [i, r] = pairs.uc[q];
        double theory = s.F(r, i) / sD * f.b;
        out.R2 += std::abs(m2[q].mean() - theory);
        out.se2 += m2[q].se();
    }
    if (!pairs.uu.empty()) {
        out.R1 /= pairs.uu.size();
        out.se1 /= pairs.uu.size();
    }
    if (!pairs.uc.empty()) {
        out.R2 /= pairs.uc.size();
        out.se2 /= pairs.uc.size();
    }
    return out;
}

}  // namespace

Residuals residuals(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f, RowSource& src,
                    long P, int i, int j, int r)
{
    PairSet ps;
    ps.uu.emplace_back(i, j);
    ps.uc.emplace_back(i, r);
    return residual_pass(cfg, s, f, src, P, ps);
}

Residuals mean_residuals(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                         RowSource& src, long P, int n_pairs, std::uint64_t seed)
{
    if (n_pairs < 1) throw ParameterError("need at least one index pair");
    if (cfg.N < 2) throw ParameterError("R1 needs N >= 2");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> ui(0, cfg.N - 1), ur(0, cfg.D - 1);
    PairSet ps;
    for (int q = 0; q < n_pairs; ++q) {
        int i = ui(rng), j;
        do j = ui(rng);
        while (j == i);
        ps.uu.emplace_back(i, j);
        ps.uc.emplace_back(ui(rng), ur(rng));
    }
    return residual_pass(cfg, s, f, src, P, ps);
}

ScalingFit fit_scaling(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi)
{
    if (x.size() != y.size()) throw ShapeError("x and y must have equal length");
    ScalingFit fit;
    fit.x = x;
    fit.y = y;
    fit.lo = lo;
    fit.hi = hi;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < lo * (1 - 1e-12) || x[i] > hi * (1 + 1e-12)) continue;
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ParameterError("nonpositive value in log-log fit");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    if (lx.size() < 4) throw ParameterError("scaling fit needs at least 4 points in range");
    double n = static_cast<double>(lx.size());
    double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw ParameterError("scaling fit needs distinct x values");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    fit.used = static_cast<int>(lx.size());
    return fit;
}

namespace {

struct CovAccumulator {
    Eigen::MatrixXd S;
    Eigen::VectorXd s;
    long n = 0;

    void add(const Mat& X)
    {
        if (S.size() == 0) {
            S = Eigen::MatrixXd::Zero(X.cols(), X.cols());
            s = Eigen::VectorXd::Zero(X.cols());
        }
        S.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        s += X.colwise().sum().transpose();
        n += X.rows();
    }
    Eigen::MatrixXd cov() const
    {
        Eigen::MatrixXd full = S.selfadjointView<Eigen::Lower>();
        Eigen::VectorXd m = s / static_cast<double>(n);
        return (full - n * m * m.transpose()) / static_cast<double>(n - 1);
    }
};

std::array<Eigen::MatrixXd, 3> covariances(const NetworkConfig& cfg, const NetworkState& s, RowSource& src,
                                           long P)
{
    const double sD = std::sqrt(static_cast<double>(cfg.D));
    CovAccumulator nu, U, C;
    stream(src, P, cfg.D, [&](const Mat& X, long) {
        nu.add(X * s.Wt.transpose() / sD);
        U.add(X * s.F / sD);
        C.add(X);
    });
    return {nu.cov(), U.cov(), C.cov()};
}

}  // namespace

CorrelationDiagnostics correlation_diagnostics(const NetworkConfig& cfg, const NetworkState& s,
                                               RowSource& inputs, RowSource& reference, long P)
{
    check_shapes(cfg, s);
    if (P < 10000) throw ParameterError("correlation diagnostics need at least 1e4 samples");
    auto a = covariances(cfg, s, inputs, P);
    auto b = covariances(cfg, s, reference, P);
    CorrelationDiagnostics d;
    d.nu = (a[0] - b[0]).cwiseAbs().sum();
    d.U = (a[1] - b[1]).cwiseAbs().sum();
    d.Wt = (a[2] - b[2]).cwiseAbs().sum();
    return d;
}

CorrelationDiagnostics correlation_diagnostics(const NetworkConfig& cfg, const NetworkState& s,
                                               RowSource& inputs, long P, std::uint64_t gaussian_seed)
{
    auto ref = make_source(make_law(Law::gaussian), cfg.D, gaussian_seed);
    return correlation_diagnostics(cfg, s, inputs, *ref, P);
}

double remainder_variance_ratio(const NetworkConfig& cfg, const NetworkState& s, const NonlinearityStats& f,
                                RowSource& src, long P, int k)
{
    check_shapes(cfg, s);
    if (k < 0 || k >= cfg.K) throw ParameterError("lambda index out of range");
    const double sD = std::sqrt(static_cast<double>(cfg.D));
    const double sN = std::sqrt(static_cast<double>(cfg.N));
    const Eigen::VectorXd w = s.W.row(k).transpose();
    const double offset = f.a * w.sum() / sN;
    Moments lam, rem;
    stream(src, P, cfg.D, [&](const Mat& C, long) {
        Mat U = C * s.F / sD;
        Eigen::VectorXd L = U * w / sN;
        Eigen::VectorXd l = U.unaryExpr([&](double x) { return act(cfg.f, x); }) * w / sN;
        for (Eigen::Index p = 0; p < C.rows(); ++p) {
            lam.add(l(p));
            rem.add(l(p) - f.b * L(p) - offset);
        }
    });
    auto var = [](const Moments& m) { return m.sum2 / m.n - m.mean() * m.mean(); };
    double vl = var(lam);
    if (!(vl > 0.0)) throw DegenerateError("lambda has zero variance");
    return var(rem) / vl;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw ParameterError("spearman needs two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * (i + j) + 1.0;
            i = j + 1;
        }
        return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace hmlab
