#include "hmlab/gauss_integrals.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>

namespace hmlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kOrthantTol = 1e-7;

std::atomic<std::uint64_t> g_floor_count{0};

double clamp1(double r) { return std::clamp(r, -1.0, 1.0); }

}  // namespace

Fn parse_fn(const std::string& tag)
{
    if (tag == "identity") return Fn::identity;
    if (tag == "relu") return Fn::relu;
    if (tag == "hardtanh") return Fn::hardtanh;
    if (tag == "tanh") return Fn::tanh;
    throw ParameterError("unknown function tag '" + tag + "'");
}

std::string to_string(Fn fn)
{
    switch (fn) {
    case Fn::identity: return "identity";
    case Fn::relu: return "relu";
    case Fn::hardtanh: return "hardtanh";
    case Fn::tanh: return "tanh";
    }
    return "?";
}

double act(Fn fn, double x)
{
    switch (fn) {
    case Fn::identity: return x;
    case Fn::relu: return x > 0.0 ? x : 0.0;
    case Fn::hardtanh: return std::clamp(x, -1.0, 1.0);
    case Fn::tanh: return std::tanh(x);
    }
    return 0.0;
}

double act_prime(Fn fn, double x)
{
    switch (fn) {
    case Fn::identity: return 1.0;
    case Fn::relu: return x > 0.0 ? 1.0 : 0.0;
    case Fn::hardtanh: return (x > -1.0 && x < 1.0) ? 1.0 : 0.0;
    case Fn::tanh: {
        double t = std::tanh(x);
        return 1.0 - t * t;
    }
    }
    return 0.0;
}

const HermiteRule& hermite_rule(int order)
{
    static std::mutex mu;
    static std::map<int, HermiteRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;

    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) {
        J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    HermiteRule rule;
    rule.x.resize(order);
    rule.w.resize(order);
    for (int i = 0; i < order; ++i) {
        rule.x[i] = es.eigenvalues()(i);
        double v0 = es.eigenvectors()(0, i);
        rule.w[i] = std::sqrt(kPi) * v0 * v0;
    }
    return cache.emplace(order, std::move(rule)).first->second;
}

NonlinearityStats nonlinearity_stats(Fn fn, int order, double sigma)
{
    if (order < 20) throw ParameterError("quadrature order must be >= 20");
    if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
    NonlinearityStats s;
    s.fn = fn;
    s.sigma = sigma;
    double s2 = sigma * sigma;
    switch (fn) {
    case Fn::identity:
        s.a = 0.0;
        s.b = s2;
        s.c = s2;
        return s;
    case Fn::relu:
        s.a = sigma / std::sqrt(2.0 * kPi);
        s.b = s2 / 2.0;
        s.c = s2 / 2.0;
        return s;
    case Fn::hardtanh: {
        double x = 1.0 / sigma;
        double inside = std::erf(x / std::sqrt(2.0));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
        s.a = 0.0;
        s.b = s2 * inside;
        s.c = s2 * (inside - 2.0 * x * pdf) + (1.0 - inside);
        return s;
    }
    case Fn::tanh:
        break;
    }
    const HermiteRule& r = hermite_rule(order);
    long double a = 0, b = 0, c = 0;
    for (int i = 0; i < order; ++i) {
        double u = std::sqrt(2.0) * sigma * r.x[i];
        double f = act(fn, u);
        a += r.w[i] * f;
        b += r.w[i] * u * f;
        c += r.w[i] * f * f;
    }
    double norm = 1.0 / std::sqrt(kPi);
    s.a = static_cast<double>(a) * norm;
    s.b = static_cast<double>(b) * norm;
    s.c = static_cast<double>(c) * norm;
    // odd function: the symmetric rule cancels up to rounding
    if (std::abs(s.a) < 1e-14) s.a = 0.0;
    s.order = order;
    return s;
}

bool floor_psd(Eigen::Ref<Eigen::MatrixXd> cov, double floor)
{
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.eigenvalues().minCoeff() >= floor) {
        cov = sym;
        return false;
    }
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    ++g_floor_count;
    return true;
}

std::uint64_t psd_floor_count() { return g_floor_count.load(); }

void check_psd(const Eigen::MatrixXd& cov, double tol)
{
    if (cov.rows() != cov.cols()) throw ShapeError("covariance must be square");
    double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > tol * scale)
        throw ParameterError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < -tol * scale)
        throw ParameterError("covariance is not positive semidefinite");
}

namespace {

double orthant4(const Eigen::Matrix4d& R)
{
    auto integrand = [&](double s) {
        double t = 1.0 - s * s;
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) {
            for (int j = i + 1; j < 4; ++j) {
                double rij = R(i, j);
                if (rij == 0.0) continue;
                int k = -1, l = -1;
                for (int q = 0; q < 4; ++q) {
                    if (q == i || q == j) continue;
                    (k < 0 ? k : l) = q;
                }
                double ar = std::abs(rij);
                double d = 1.0 - ar + ar * s * s;
                double omr2 = std::max(d * (1.0 + ar * t), 1e-300);
                double r = t * rij;
                // conditional covariance of (k, l) given z_i = z_j = 0
                double bki = t * R(k, i), bkj = t * R(k, j);
                double bli = t * R(l, i), blj = t * R(l, j);
                auto quad = [&](double x1, double x2, double y1, double y2) {
                    return (x1 * y1 - r * (x1 * y2 + x2 * y1) + x2 * y2) / omr2;
                };
                double ckk = std::max(1.0 - quad(bki, bkj, bki, bkj), 0.0);
                double cll = std::max(1.0 - quad(bli, blj, bli, blj), 0.0);
                double ckl = t * R(k, l) - quad(bki, bkj, bli, blj);
                double den = std::sqrt(ckk * cll);
                double rc = den > 0.0 ? clamp1(ckl / den) : 0.0;
                double p2 = 0.25 + std::asin(rc) / (2.0 * kPi);
                // phi2(0,0;r) * dt/ds, the 1/sqrt(1-t) singularity absorbed
                double ds_ratio = d > 0.0 ? 2.0 * s / std::sqrt(d) : 2.0 / std::sqrt(ar);
                double phi = ds_ratio / (2.0 * kPi * std::sqrt(1.0 + ar * t));
                sum += rij * phi * p2;
            }
        }
        return sum;
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    double err = 0.0, l1 = 0.0;
    double val = ts.integrate(integrand, 0.0, 1.0, 1e-10, &err, &l1);
    double p = 1.0 / 16.0 + val;
    if (!(err <= kOrthantTol) || !std::isfinite(p))
        throw AccuracyError("4-d orthant integral did not reach tolerance", p, err);
    return std::clamp(p, 0.0, 1.0);
}

Eigen::MatrixXd condition_zero(const Eigen::MatrixXd& C, int j)
{
    int n = static_cast<int>(C.rows());
    Eigen::MatrixXd out(n - 1, n - 1);
    double cjj = C(j, j);
    for (int a = 0, ia = 0; a < n; ++a) {
        if (a == j) continue;
        for (int b = 0, ib = 0; b < n; ++b) {
            if (b == j) continue;
            out(ia, ib) = C(a, b) - C(a, j) * C(j, b) / cjj;
            ++ib;
        }
        out(ia, ia) = std::max(out(ia, ia), 0.0);
        ++ia;
    }
    return out;
}

std::vector<int> drop_power(const std::vector<int>& p, int j)
{
    std::vector<int> out;
    out.reserve(p.size() - 1);
    for (int i = 0; i < static_cast<int>(p.size()); ++i)
        if (i != j) out.push_back(p[i]);
    return out;
}

double stein_rec(const Eigen::MatrixXd& C, const std::vector<int>& p)
{
    int n = static_cast<int>(p.size());
    if (n == 0) return 1.0;
    int c = -1;
    for (int i = 0; i < n; ++i)
        if (p[i] > 0 && (c < 0 || p[i] > p[c])) c = i;
    if (c < 0) return orthant_probability(C);

    std::vector<int> low = p;
    --low[c];
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        double ccj = C(c, j);
        if (ccj == 0.0) continue;
        int pj = low[j];
        double term;
        if (pj == 0) {
            double cjj = C(j, j);
            if (!(cjj > 0.0)) continue;
            double phi0 = 1.0 / std::sqrt(2.0 * kPi * cjj);
            term = phi0 * stein_rec(condition_zero(C, j), drop_power(low, j));
        } else {
            std::vector<int> q = low;
            --q[j];
            term = pj * stein_rec(C, q);
        }
        sum += ccj * term;
    }
    return sum;
}

}  // namespace

double orthant_probability(const Eigen::MatrixXd& cov)
{
    int n = static_cast<int>(cov.rows());
    if (n == 0) return 1.0;
    if (n == 1) return 0.5;
    if (n > 4) throw UnsupportedError("orthant probability implemented for dimension <= 4");
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) s(i) = std::sqrt(std::max(cov(i, i), 1e-300));
    Eigen::MatrixXd R(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) R(i, j) = i == j ? 1.0 : clamp1(cov(i, j) / (s(i) * s(j)));
    // identical variables collapse, opposite ones make the orthant null
    std::vector<int> keep;
    for (int i = 0; i < n; ++i) {
        bool dup = false;
        for (int k : keep) {
            if (R(i, k) >= 1.0 - 1e-12) dup = true;
            if (R(i, k) <= -1.0 + 1e-12) return 0.0;
        }
        if (!dup) keep.push_back(i);
    }
    if (static_cast<int>(keep.size()) < n) {
        Eigen::MatrixXd sub(keep.size(), keep.size());
        for (std::size_t a = 0; a < keep.size(); ++a)
            for (std::size_t b = 0; b < keep.size(); ++b) sub(a, b) = R(keep[a], keep[b]);
        return orthant_probability(sub);
    }
    if (n == 2) return 0.25 + std::asin(R(0, 1)) / (2.0 * kPi);
    if (n == 3)
        return std::max(0.0, 0.125 + (std::asin(R(0, 1)) + std::asin(R(0, 2)) + std::asin(R(1, 2))) /
                                         (4.0 * kPi));
    return orthant4(R);
}

double relu_moment(const Eigen::MatrixXd& cov, const std::vector<int>& powers)
{
    if (cov.rows() != static_cast<Eigen::Index>(powers.size()) || cov.cols() != cov.rows())
        throw ShapeError("relu_moment: covariance/powers size mismatch");
    std::vector<int> idx;
    std::vector<int> p;
    for (int i = 0; i < static_cast<int>(powers.size()); ++i) {
        if (powers[i] < 0) continue;
        // identical variables are merged: z^a H * z^b H = z^(a+b) H
        bool merged = false;
        for (std::size_t q = 0; q < idx.size(); ++q) {
            int k = idx[q];
            double vi = cov(i, i), vk = cov(k, k);
            double tol = 1e-12 * std::max(vi, vk);
            if (std::abs(vi - vk) <= tol && std::abs(cov(i, k) - vi) <= tol) {
                p[q] += powers[i];
                merged = true;
                break;
            }
        }
        if (!merged) {
            idx.push_back(i);
            p.push_back(powers[i]);
        }
    }
    int n = static_cast<int>(idx.size());
    Eigen::MatrixXd C(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) C(a, b) = cov(idx[a], idx[b]);
    return stein_rec(C, p);
}

namespace {

// E[h(x, y)] for (x, y) ~ N(0, C), integrand smooth away from x, y = +-1.
template <class H>
double expect2(const Eigen::Matrix2d& C, H h)
{
    using boost::math::quadrature::gauss;
    constexpr double kSpan = 12.0;
    auto pieces = [](double lo, double hi) {
        std::vector<double> pts{lo};
        for (double bp : {-1.0, 1.0})
            if (bp > lo && bp < hi) pts.push_back(bp);
        pts.push_back(hi);
        return pts;
    };
    auto inner = [&](double x) {
        double c00 = C(0, 0);
        double m = c00 > 0.0 ? C(0, 1) / c00 * x : 0.0;
        double v = c00 > 0.0 ? C(1, 1) - C(0, 1) * C(0, 1) / c00 : C(1, 1);
        if (v <= 1e-24) return h(x, m);
        double sd = std::sqrt(v);
        auto pts = pieces(m - kSpan * sd, m + kSpan * sd);
        double acc = 0.0;
        for (std::size_t q = 0; q + 1 < pts.size(); ++q) {
            acc += gauss<double, 40>::integrate(
                [&](double y) {
                    double z = (y - m) / sd;
                    return h(x, y) * std::exp(-0.5 * z * z);
                },
                pts[q], pts[q + 1]);
        }
        return acc / (sd * std::sqrt(2.0 * kPi));
    };
    double c00 = C(0, 0);
    if (c00 <= 1e-24) return inner(0.0);
    double sd = std::sqrt(c00);
    auto pts = pieces(-kSpan * sd, kSpan * sd);
    double acc = 0.0;
    for (std::size_t q = 0; q + 1 < pts.size(); ++q) {
        acc += gauss<double, 40>::integrate(
            [&](double x) {
                double z = x / sd;
                return inner(x) * std::exp(-0.5 * z * z);
            },
            pts[q], pts[q + 1]);
    }
    return acc / (sd * std::sqrt(2.0 * kPi));
}

}  // namespace

double i2(Fn g, Fn gt, const Eigen::Matrix2d& cov_in)
{
    Eigen::MatrixXd cov = cov_in;
    check_psd(cov);
    floor_psd(cov, 0.0);
    double s0 = std::sqrt(std::max(cov(0, 0), 0.0));
    double s1 = std::sqrt(std::max(cov(1, 1), 0.0));
    if (g == Fn::relu && gt == Fn::relu) {
        if (s0 == 0.0 || s1 == 0.0) return 0.0;
        double r = clamp1(cov(0, 1) / (s0 * s1));
        return s0 * s1 * (std::sqrt(1.0 - r * r) + r * (kPi - std::acos(r))) / (2.0 * kPi);
    }
    if (g == Fn::identity && gt == Fn::identity) return cov(0, 1);
    if ((g == Fn::identity && gt == Fn::relu) || (g == Fn::relu && gt == Fn::identity))
        return cov(0, 1) / 2.0;
    Eigen::Matrix2d C = cov;
    return expect2(C, [&](double x, double y) { return act(g, x) * act(gt, y); });
}

double i3(Fn g, const Eigen::Matrix3d& cov_in)
{
    Eigen::MatrixXd cov = cov_in;
    check_psd(cov);
    floor_psd(cov, 0.0);
    if (g == Fn::relu) {
        // Stein on z1: C10 E[delta(z0) relu(z2)] + C12 E[H(z0) H(z2)]
        double c00 = cov(0, 0), c22 = cov(2, 2);
        if (c00 <= 0.0) return 0.0;
        double s0 = std::sqrt(c00), s2 = std::sqrt(std::max(c22, 0.0));
        double r02 = s2 > 0.0 ? clamp1(cov(0, 2) / (s0 * s2)) : 0.0;
        double t1 = cov(1, 0) * s2 * std::sqrt(1.0 - r02 * r02) / (2.0 * kPi * s0);
        double t2 = cov(1, 2) * (0.25 + std::asin(r02) / (2.0 * kPi));
        return t1 + t2;
    }
    // E[z1 | z0, z2] = beta . (z0, z2)
    Eigen::Matrix2d A;
    A << cov(0, 0), cov(0, 2), cov(2, 0), cov(2, 2);
    Eigen::RowVector2d c1(cov(1, 0), cov(1, 2));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
    Eigen::Vector2d inv_ev;
    double tol = 1e-13 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    for (int i = 0; i < 2; ++i)
        inv_ev(i) = es.eigenvalues()(i) > tol ? 1.0 / es.eigenvalues()(i) : 0.0;
    Eigen::RowVector2d beta =
        c1 * es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    return expect2(A, [&](double x, double y) {
        return act_prime(g, x) * act(g, y) * (beta(0) * x + beta(1) * y);
    });
}

double i4(Fn g, const Eigen::Matrix4d& cov_in)
{
    if (g != Fn::relu) throw UnsupportedError("i4 is implemented for relu only");
    Eigen::MatrixXd cov = cov_in;
    check_psd(cov);
    // flooring is applied only when the matrix is numerically indefinite,
    // exact duplicates are merged inside relu_moment instead
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() < 0.0) {
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        ++g_floor_count;
    }
    return relu_moment(cov, {0, 0, 1, 1});
}

double price_stein_cross(const NonlinearityStats& f, const NonlinearityStats& g, double sxx,
                         double syy, double sxy, double rho)
{
    if (std::abs(rho) > 1.0) throw ParameterError("|rho| must be <= 1");
    if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateError("zero variance in price_stein_cross");
    return f.a * g.a + rho * f.b * (sxy / (sxx * syy)) * g.b;
}

McEstimate mc_oracle(const Eigen::MatrixXd& cov, const std::vector<FactorTerm>& product,
                     std::int64_t samples, std::uint64_t seed)
{
    check_psd(cov);
    int n = static_cast<int>(cov.rows());
    for (const auto& f : product)
        if (f.index < 0 || f.index >= n) throw ShapeError("mc_oracle: factor index out of range");
    if (samples < 2) throw ParameterError("mc_oracle needs at least 2 samples");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    Eigen::MatrixXd L =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::VectorXd g(n), z(n);
    long double sum = 0, sum2 = 0;
    for (std::int64_t s = 0; s < samples; ++s) {
        for (int i = 0; i < n; ++i) g(i) = nd(rng);
        z.noalias() = L * g;
        double v = 1.0;
        for (const auto& f : product) {
            double x = z(f.index);
            switch (f.kind) {
            case Factor::z: v *= x; break;
            case Factor::z2: v *= x * x; break;
            case Factor::relu: v *= x > 0.0 ? x : 0.0; break;
            case Factor::relu_prime: v *= x > 0.0 ? 1.0 : 0.0; break;
            case Factor::hardtanh: v *= std::clamp(x, -1.0, 1.0); break;
            case Factor::hardtanh_prime: v *= (x > -1.0 && x < 1.0) ? 1.0 : 0.0; break;
            case Factor::tanh: v *= std::tanh(x); break;
            }
        }
        sum += v;
        sum2 += static_cast<long double>(v) * v;
    }
    long double mean = sum / samples;
    long double var = (sum2 - samples * mean * mean) / (samples - 1);
    return {static_cast<double>(mean),
            static_cast<double>(std::sqrt(std::max(var, 0.0L) / samples))};
}

}  // namespace hmlab
