#include "hmlab/ode_engine.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace hmlab {

namespace {
constexpr double kDetFloor = 1e-12;
}

GridMode parse_grid_mode(const std::string& tag)
{
    if (tag == "empirical") return GridMode::empirical;
    if (tag == "analytic" || tag == "analytic-MP") return GridMode::analytic;
    throw ParameterError("unknown grid mode '" + tag + "'");
}

std::string to_string(GridMode m) { return m == GridMode::empirical ? "empirical" : "analytic"; }

std::pair<double, double> mp_support(double delta)
{
    double s = std::sqrt(delta);
    return {(1.0 - s) * (1.0 - s), (1.0 + s) * (1.0 + s)};
}

double mp_density(double rho, double delta)
{
    auto [lo, hi] = mp_support(delta);
    if (rho <= lo || rho >= hi || rho <= 0.0) return 0.0;
    return std::sqrt((hi - rho) * (rho - lo)) / (2.0 * std::numbers::pi * delta * rho);
}

SpectralGrid build_spectral_grid_mp(double delta, int n_bins)
{
    if (n_bins < 16) throw ParameterError("n_bins must be >= 16");
    if (!(delta > 0.0) || delta > 1.0) throw UnsupportedError("analytic grid needs 0 < delta <= 1");
    SpectralGrid g;
    g.mode = GridMode::analytic;
    g.delta = delta;
    auto [lo, hi] = mp_support(delta);
    g.edges.resize(n_bins + 1);
    g.p.resize(n_bins);
    g.rho.resize(n_bins);
    double w = (hi - lo) / n_bins;
    for (int i = 0; i <= n_bins; ++i) g.edges(i) = lo + w * i;
    g.edges(n_bins) = hi;
    for (int i = 0; i < n_bins; ++i) {
        g.rho(i) = 0.5 * (g.edges(i) + g.edges(i + 1));
        g.p(i) = mp_density(g.rho(i), delta) * w;
    }
    g.p /= g.p.sum();
    return g;
}

SpectralGrid build_spectral_grid(const NetworkState& s, GridMode mode, int n_bins)
{
    double delta = static_cast<double>(s.F.rows()) / s.F.cols();
    if (mode == GridMode::analytic) return build_spectral_grid_mp(delta, n_bins);
    if (n_bins < 16) throw ParameterError("n_bins must be >= 16");
    if (s.F.size() == 0) throw ParameterError("empirical grid requires F");
    int D = static_cast<int>(s.F.rows());
    Eigen::MatrixXd F = s.F;
    Eigen::MatrixXd FF = F * F.transpose() / static_cast<double>(s.F.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(FF);
    if (es.info() != Eigen::Success) throw ModelError("eigendecomposition of F F^T / N failed");

    SpectralGrid g;
    g.mode = GridMode::empirical;
    g.delta = delta;
    g.eigenvalues = es.eigenvalues();
    g.psi = es.eigenvectors() * std::sqrt(static_cast<double>(D));
    double lo = g.eigenvalues.minCoeff(), hi = g.eigenvalues.maxCoeff();
    double w = (hi - lo) / n_bins;
    g.edges.resize(n_bins + 1);
    for (int i = 0; i <= n_bins; ++i) g.edges(i) = lo + w * i;
    g.edges(n_bins) = hi;
    g.p = Eigen::VectorXd::Zero(n_bins);
    g.rho = Eigen::VectorXd::Zero(n_bins);
    g.bin_of.resize(D);
    for (int tau = 0; tau < D; ++tau) {
        int b = w > 0.0 ? static_cast<int>((g.eigenvalues(tau) - lo) / w) : 0;
        b = std::clamp(b, 0, n_bins - 1);
        g.bin_of[tau] = b;
        g.p(b) += 1.0;
        g.rho(b) += g.eigenvalues(tau);
    }
    for (int b = 0; b < n_bins; ++b) {
        if (g.p(b) > 0.0)
            g.rho(b) /= g.p(b);
        else
            g.rho(b) = 0.5 * (g.edges(b) + g.edges(b + 1));
    }
    g.p /= static_cast<double>(D);
    return g;
}

DensityField init_density_fields(const NetworkState& s, const SpectralGrid& grid)
{
    if (grid.mode != GridMode::empirical || grid.psi.size() == 0)
        throw ParameterError("density fields need an empirical grid with eigenvectors");
    int D = static_cast<int>(s.F.rows());
    if (grid.psi.rows() != D) throw ShapeError("grid does not match the state dimension");
    int K = static_cast<int>(s.W.rows()), M = static_cast<int>(s.Wt.rows());
    double N = static_cast<double>(s.W.cols());
    Eigen::MatrixXd W = s.W, F = s.F, Wt = s.Wt;
    Eigen::MatrixXd S = W * F.transpose() / std::sqrt(N);
    Eigen::MatrixXd Sp = S * grid.psi / std::sqrt(static_cast<double>(D));   // K x D
    Eigen::MatrixXd Wp = Wt * grid.psi / std::sqrt(static_cast<double>(D));  // M x D

    int nb = grid.n_bins();
    DensityField fld;
    fld.r.assign(nb, Eigen::MatrixXd::Zero(K, M));
    fld.sigma.assign(nb, Eigen::MatrixXd::Zero(K, K));
    fld.t.assign(nb, Eigen::MatrixXd::Zero(M, M));
    std::vector<int> count(nb, 0);
    for (int tau = 0; tau < D; ++tau) {
        int b = grid.bin_of[tau];
        ++count[b];
        fld.r[b] += Sp.col(tau) * Wp.col(tau).transpose();
        fld.sigma[b] += Sp.col(tau) * Sp.col(tau).transpose();
        fld.t[b] += Wp.col(tau) * Wp.col(tau).transpose();
    }
    fld.T_script = Eigen::MatrixXd::Zero(M, M);
    for (int b = 0; b < nb; ++b) {
        if (count[b] == 0) continue;
        fld.r[b] /= count[b];
        fld.sigma[b] /= count[b];
        fld.t[b] /= count[b];
        fld.sigma[b] = 0.5 * (fld.sigma[b] + fld.sigma[b].transpose()).eval();
        fld.t[b] = 0.5 * (fld.t[b] + fld.t[b].transpose()).eval();
        fld.T_script += grid.p(b) * grid.rho(b) * fld.t[b];
    }
    return fld;
}

void validate(const OdeConfig& c)
{
    if (!(c.dt > 0.0)) throw ParameterError("dt must be positive");
    if (c.n_bins < 16) throw ParameterError("n_bins must be >= 16");
    if (!(c.t_end >= 0.0)) throw ParameterError("t_end must be >= 0");
    if (!(c.eta >= 0.0)) throw ParameterError("eta must be >= 0");
    if (!(c.record_every > 0.0)) throw ParameterError("record_every must be positive");
}

OdeState init_ode_state(const NetworkState& s, const SpectralGrid& grid)
{
    OdeState st;
    st.fields = init_density_fields(s, grid);
    Eigen::MatrixXd W = s.W;
    st.Omega = W * W.transpose() / static_cast<double>(s.W.cols());
    st.Omega = 0.5 * (st.Omega + st.Omega.transpose()).eval();
    st.v = s.v;
    return st;
}

void assemble(const OdeState& st, const OdeContext& ctx, Eigen::MatrixXd& Q, Eigen::MatrixXd& R,
              Eigen::MatrixXd& Sigma)
{
    const SpectralGrid& g = *ctx.grid;
    int K = static_cast<int>(st.Omega.rows());
    int M = static_cast<int>(ctx.T.rows());
    R = Eigen::MatrixXd::Zero(K, M);
    Sigma = Eigen::MatrixXd::Zero(K, K);
    for (int b = 0; b < g.n_bins(); ++b) {
        if (g.p(b) == 0.0) continue;
        R += g.p(b) * st.fields.r[b];
        Sigma += g.p(b) * st.fields.sigma[b];
    }
    R *= ctx.f.b;
    double b2 = ctx.f.b * ctx.f.b;
    Q = (ctx.f.c - ctx.f.a * ctx.f.a - b2) * st.Omega + b2 * Sigma;
}

double assemble_eps_g(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R, const Eigen::MatrixXd& T,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& vt, Fn g, Fn gt)
{
    int K = static_cast<int>(Q.rows()), M = static_cast<int>(T.rows());
    Eigen::MatrixXd C(K + M, K + M);
    C << Q, R, R.transpose(), T;
    check_psd(C, 1e-6);
    floor_psd(C, 0.0);
    auto I2 = [&](int a, Fn fa, int b, Fn fb) {
        Eigen::Matrix2d c;
        c << C(a, a), C(a, b), C(b, a), C(b, b);
        return i2(fa, fb, c);
    };
    double e = 0.0;
    for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) e += 0.5 * v(k) * v(l) * I2(k, g, l, g);
    for (int n = 0; n < M; ++n)
        for (int m = 0; m < M; ++m) e += 0.5 * vt(n) * vt(m) * I2(K + n, gt, K + m, gt);
    for (int k = 0; k < K; ++k)
        for (int n = 0; n < M; ++n) e -= v(k) * vt(n) * I2(k, g, K + n, gt);
    return std::max(e, 0.0);
}

OrderParams snapshot(const OdeState& st, const OdeContext& ctx)
{
    OrderParams op;
    op.t = st.t;
    assemble(st, ctx, op.Q, op.R, op.Sigma);
    op.Omega = st.Omega;
    op.T = ctx.T;
    op.v = st.v;
    op.eps_g = assemble_eps_g(op.Q, op.R, op.T, op.v, ctx.vt);
    return op;
}

void ode_step(OdeState& st, OdeContext& ctx, double dt)
{
    if (!(dt > 0.0)) throw ParameterError("dt must be positive");
    const SpectralGrid& g = *ctx.grid;
    const int K = static_cast<int>(st.Omega.rows());
    const int M = static_cast<int>(ctx.T.rows());
    const int n = K + M;
    const double eta = ctx.eta;
    const double b = ctx.f.b, c = ctx.f.c;
    const double b2 = b * b;
    const double delta = g.delta;

    Eigen::MatrixXd Q, R, Sig;
    assemble(st, ctx, Q, R, Sig);
    Eigen::MatrixXd C(n, n);
    C << Q, R, R.transpose(), ctx.T;
    if (!C.allFinite()) throw DivergenceError("non-finite order parameters in the ODE", st.t);
    floor_psd(C, kDetFloor);

    // weights of g(z_y) in the residual: student v_j, teacher -vt_n
    Eigen::VectorXd w(n);
    w << st.v, -ctx.vt;

    auto I3 = [&](int k, int x, int y) {
        Eigen::Matrix3d c3;
        int id[3] = {k, x, y};
        for (int a = 0; a < 3; ++a)
            for (int bb = 0; bb < 3; ++bb) c3(a, bb) = C(id[a], id[bb]);
        return i3(Fn::relu, c3);
    };

    // E[B g'(z_k) g(z_y)] = ck(k,y) Cov(B, z_k) + cy(k,y) Cov(B, z_y) for any
    // Gaussian B, via the regression of B on (z_k, z_y).
    Eigen::MatrixXd ck = Eigen::MatrixXd::Zero(K, n), cy = Eigen::MatrixXd::Zero(K, n);
    Eigen::MatrixXd I3lam(K * K, n);  // E[g'(z_k) z_l g(z_y)]
    for (int k = 0; k < K; ++k) {
        for (int y = 0; y < n; ++y) {
            if (y == k) {
                double qkk = C(k, k);
                if (qkk < kDetFloor) {
                    qkk += kDetFloor;
                    ++ctx.det_regularized;
                }
                ck(k, y) = I3(k, k, k) / qkk;
                continue;
            }
            double det = C(y, y) * C(k, k) - C(k, y) * C(k, y);
            if (det < kDetFloor) {
                det += kDetFloor;
                ++ctx.det_regularized;
            }
            double a_kky = I3(k, k, y), a_kyy = I3(k, y, y);
            ck(k, y) = (C(y, y) * a_kky - C(k, y) * a_kyy) / det;
            cy(k, y) = (C(k, k) * a_kyy - C(k, y) * a_kky) / det;
        }
        for (int l = 0; l < K; ++l)
            for (int y = 0; y < n; ++y) I3lam(k * K + l, y) = I3(k, l, y);
    }
    Eigen::VectorXd A = ck * w;  // coefficient multiplying Cov(B, lambda_k)

    // E[g'(z_k) g'(z_l) Delta^2]
    Eigen::MatrixXd E4 = Eigen::MatrixXd::Zero(K, K);
    for (int k = 0; k < K; ++k) {
        for (int l = k; l < K; ++l) {
            double s = 0.0;
            for (int x = 0; x < n; ++x) {
                for (int y = x; y < n; ++y) {
                    Eigen::Matrix4d c4;
                    int id[4] = {k, l, x, y};
                    for (int a = 0; a < 4; ++a)
                        for (int bb = 0; bb < 4; ++bb) c4(a, bb) = C(id[a], id[bb]);
                    double val = i4(Fn::relu, c4);
                    s += (x == y ? 1.0 : 2.0) * w(x) * w(y) * val;
                }
            }
            E4(k, l) = E4(l, k) = s;
        }
    }

    // v and Omega
    Eigen::VectorXd dv(K);
    for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (int y = 0; y < n; ++y) {
            Eigen::Matrix2d c2;
            c2 << C(k, k), C(k, y), C(y, k), C(y, y);
            s += w(y) * i2(Fn::relu, Fn::relu, c2);
        }
        dv(k) = -eta * s;
    }
    Eigen::MatrixXd dOmega(K, K);
    for (int k = 0; k < K; ++k) {
        for (int l = 0; l < K; ++l) {
            double first_kl = st.v(k) * I3lam.row(k * K + l).dot(w);
            double first_lk = st.v(l) * I3lam.row(l * K + k).dot(w);
            dOmega(k, l) = -eta * (first_kl + first_lk) + c * eta * eta * st.v(k) * st.v(l) * E4(k, l);
        }
    }

    // per-bin fields
    const auto& tf = st.fields.t;
    std::vector<Eigen::MatrixXd> dr(g.n_bins()), dsig(g.n_bins());
    for (int bin = 0; bin < g.n_bins(); ++bin) {
        if (g.p(bin) == 0.0) continue;
        const double rho = g.rho(bin);
        const double dl = ((c - b2) * delta + b2 * rho) / delta;  // Cov(B, lambda) per unit density
        const double dn = b * rho / delta;                         // Cov(B, nu) per unit density
        const Eigen::MatrixXd& r = st.fields.r[bin];
        const Eigen::MatrixXd& sg = st.fields.sigma[bin];

        // projections: P_W(y, m) for the teacher partner, P_S(y, l) for a student partner
        Eigen::MatrixXd PW(n, M), PS(n, K);
        PW.topRows(K) = dl * r;
        PW.bottomRows(M) = dn * tf[bin];
        PS.topRows(K) = dl * sg;
        PS.bottomRows(M) = dn * r.transpose();

        Eigen::MatrixXd drb(K, M), Gs(K, K);
        for (int k = 0; k < K; ++k) {
            Eigen::RowVectorXd cyw = cy.row(k).cwiseProduct(w.transpose());
            Eigen::RowVectorXd gw = A(k) * PW.row(k) + cyw * PW;
            Eigen::RowVectorXd gs = A(k) * PS.row(k) + cyw * PS;
            drb.row(k) = -eta * st.v(k) * gw;
            Gs.row(k) = -eta * st.v(k) * gs;
        }
        double noise = (c - b2) * rho + b2 * rho * rho / delta;
        Eigen::MatrixXd ds = Gs + Gs.transpose();
        for (int k = 0; k < K; ++k)
            for (int l = 0; l < K; ++l) ds(k, l) += eta * eta * st.v(k) * st.v(l) * noise * E4(k, l);
        dr[bin] = drb;
        dsig[bin] = ds;
    }

    for (int bin = 0; bin < g.n_bins(); ++bin) {
        if (g.p(bin) == 0.0) continue;
        st.fields.r[bin] += dt * dr[bin];
        st.fields.sigma[bin] += dt * dsig[bin];
        st.fields.sigma[bin] = 0.5 * (st.fields.sigma[bin] + st.fields.sigma[bin].transpose()).eval();
    }
    st.Omega += dt * dOmega;
    st.Omega = 0.5 * (st.Omega + st.Omega.transpose()).eval();
    st.v += dt * dv;
    st.t += dt;
    if (!st.Omega.allFinite() || !st.v.allFinite())
        throw DivergenceError("ODE produced non-finite values", st.t);
}

RunRecord run_ode(const NetworkConfig& net, const NetworkState& s, const OdeConfig& cfg,
                  const NonlinearityStats& f)
{
    SpectralGrid grid = build_spectral_grid(s, GridMode::empirical, cfg.n_bins);
    return run_ode(net, s, cfg, f, grid);
}

RunRecord run_ode(const NetworkConfig& net, const NetworkState& s, const OdeConfig& cfg,
                  const NonlinearityStats& f, const SpectralGrid& grid)
{
    validate(cfg);
    check_shapes(net, s);
    if (net.g != Fn::relu || net.gt != Fn::relu)
        throw UnsupportedError("the ODE integrator supports g = gt = relu only");
    if (grid.n_bins() != cfg.n_bins) throw ParameterError("grid bin count differs from the ODE config");
    auto t0 = std::chrono::steady_clock::now();

    OdeContext ctx;
    ctx.grid = &grid;
    ctx.f = f;
    Eigen::MatrixXd Wt = s.Wt;
    ctx.T = Wt * Wt.transpose() / static_cast<double>(net.D);
    ctx.T = 0.5 * (ctx.T + ctx.T.transpose()).eval();
    ctx.vt = s.vt;
    ctx.eta = cfg.eta;

    OdeState st = init_ode_state(s, grid);
    RunRecord rec;
    rec.snaps.push_back(snapshot(st, ctx));
    long n_steps = std::lround(cfg.t_end / cfg.dt);
    long every = std::max(1L, std::lround(cfg.record_every / cfg.dt));
    std::uint64_t floors0 = psd_floor_count();
    for (long i = 1; i <= n_steps; ++i) {
        ode_step(st, ctx, cfg.dt);
        st.t = i * cfg.dt;
        if (i % every == 0 || i == n_steps) rec.snaps.push_back(snapshot(st, ctx));
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.meta = {{"kind", "ode"},
                {"dt", cfg.dt},
                {"t_end", cfg.t_end},
                {"n_bins", cfg.n_bins},
                {"eta", cfg.eta},
                {"grid", to_string(grid.mode)},
                {"det_regularized", ctx.det_regularized},
                {"psd_floored", psd_floor_count() - floors0},
                {"wall_seconds", secs}};
    return rec;
}

}  // namespace hmlab
