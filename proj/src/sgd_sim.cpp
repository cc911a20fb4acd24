#include "hmlab/sgd_sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

namespace hmlab {

void validate(const SgdConfig& c)
{
    if (!(c.eta > 0.0)) throw ParameterError("eta must be positive");
    if (c.steps < 0) throw ParameterError("steps must be >= 0");
    if (c.stride < 1) throw ParameterError("stride must be >= 1");
    if (c.P_eval < 1000) throw ParameterError("P_eval must be >= 1000");
}

SgdConfig resolved(const SgdConfig& cfg, int N)
{
    SgdConfig c = cfg;
    if (c.steps < 0) c.steps = 10L * N;
    if (c.stride < 0) c.stride = std::max(1, N / 20);
    return c;
}

EvalSet make_eval_set(const NetworkConfig& net, const NetworkState& s, RowSource& src, long P)
{
    check_shapes(net, s);
    if (src.dim() != net.D) throw ShapeError("evaluation source width must equal D");
    EvalSet e;
    e.X.resize(P, net.N);
    e.y.resize(P);
    const long chunk = 1024;
    double sD = std::sqrt(static_cast<double>(net.D));
    Mat C;
    for (long i0 = 0; i0 < P; i0 += chunk) {
        long n = std::min(chunk, P - i0);
        C.resize(n, net.D);
        src.fill(C);
        Mat U = C * s.F / sD;
        Mat nu = C * s.Wt.transpose() / sD;
        e.X.middleRows(i0, n) = U.unaryExpr([&](double x) { return act(net.f, x); }).cast<float>();
        e.y.segment(i0, n) = nu.unaryExpr([&](double x) { return act(net.gt, x); }) * s.vt;
    }
    if (!e.X.allFinite() || !e.y.allFinite()) throw DivergenceError("non-finite evaluation inputs", 0);
    return e;
}

namespace {

double step_from(const NetworkConfig& net, NetworkState& s, const Eigen::Ref<const Vec>& u,
                 const Eigen::Ref<const Vec>& nu, double eta, long step_index, Vec& x, Vec& lambda)
{
    const double sN = std::sqrt(static_cast<double>(net.N));
    x.resize(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) x(i) = act(net.f, u(i));
    lambda.noalias() = s.W * x;
    lambda /= sN;
    double y = 0.0, yhat = 0.0;
    for (int n = 0; n < net.M; ++n) y += s.vt(n) * act(net.gt, nu(n));
    for (int k = 0; k < net.K; ++k) yhat += s.v(k) * act(net.g, lambda(k));
    double delta = yhat - y;
    if (!std::isfinite(delta)) throw DivergenceError("non-finite forward pass", static_cast<double>(step_index));
    if (delta == 0.0 || eta == 0.0) return 0.0;
    for (int k = 0; k < net.K; ++k) {
        double coef = eta / sN * s.v(k) * delta * act_prime(net.g, lambda(k));
        if (coef != 0.0) s.W.row(k) -= coef * x.transpose();
    }
    for (int k = 0; k < net.K; ++k) s.v(k) -= (eta / net.N) * delta * act(net.g, lambda(k));
    return 0.5 * delta * delta;
}

}  // namespace

double sgd_step(const NetworkConfig& net, NetworkState& s, const Eigen::Ref<const Vec>& cbar, double eta,
                long step_index)
{
    check_shapes(net, s);
    if (cbar.size() != net.D) throw ShapeError("input row must have D entries");
    if (eta < 0.0) throw ParameterError("eta must be >= 0");
    double sD = std::sqrt(static_cast<double>(net.D));
    Vec u = s.F.transpose() * cbar / sD;
    Vec nu = s.Wt * cbar / sD;
    Vec x, lambda;
    return step_from(net, s, u, nu, eta, step_index, x, lambda);
}

double estimate_eps_g(const NetworkConfig& net, const NetworkState& s, const EvalSet& eval, double* se)
{
    if (eval.X.cols() != net.N) throw ShapeError("evaluation set width must equal N");
    Eigen::MatrixXf Wf = s.W.transpose().cast<float>();
    Mat lambda = (eval.X * Wf).cast<double>() / std::sqrt(static_cast<double>(net.N));
    Vec yhat = lambda.unaryExpr([&](double x) { return act(net.g, x); }) * s.v;
    Vec e = 0.5 * (yhat - eval.y).array().square().matrix();
    double mean = e.mean();
    if (se) {
        double var = (e.array() - mean).square().sum() / std::max<Eigen::Index>(1, e.size() - 1);
        *se = std::sqrt(var / e.size());
    }
    if (!std::isfinite(mean)) throw DivergenceError("non-finite generalization error", 0);
    return mean;
}

RunRecord run_sgd(const NetworkConfig& net, NetworkState s, RowSource& train, const EvalSet& eval,
                  const SgdConfig& cfg_in, const NonlinearityStats& f)
{
    SgdConfig cfg = resolved(cfg_in, net.N);
    validate(cfg);
    check_shapes(net, s);
    if (train.dim() != net.D) throw ShapeError("training source width must equal D");
    if (eval.X.cols() != net.N) throw ShapeError("evaluation set width must equal N");
    auto t0 = std::chrono::steady_clock::now();

    std::set<long> marks;
    for (long i = 0; i <= cfg.steps; i += cfg.stride) marks.insert(i);
    marks.insert(cfg.steps);
    for (long e : cfg.extra_snapshots)
        if (e >= 0 && e <= cfg.steps) marks.insert(e);

    RunRecord rec;
    auto snap = [&](long step) {
        OrderParams op = measure_order_params(s, f);
        op.t = static_cast<double>(step) / net.N;
        op.eps_g = estimate_eps_g(net, s, eval);
        rec.snaps.push_back(std::move(op));
    };
    snap(0);

    const long chunk = 1024;
    const double sD = std::sqrt(static_cast<double>(net.D));
    Mat C, U, nu;
    Vec x, lambda(net.K);
    long step = 0;
    double loss_sum = 0.0;
    while (step < cfg.steps) {
        long n = std::min(chunk, cfg.steps - step);
        C.resize(n, net.D);
        train.fill(C);
        U.noalias() = C * s.F;
        U /= sD;
        nu.noalias() = C * s.Wt.transpose();
        nu /= sD;
        for (long i = 0; i < n; ++i) {
            loss_sum += step_from(net, s, U.row(i).transpose(), nu.row(i).transpose(), cfg.eta, step, x, lambda);
            ++step;
            if (marks.count(step)) {
                if (!s.W.allFinite() || !s.v.allFinite())
                    throw DivergenceError("student weights became non-finite", static_cast<double>(step));
                snap(step);
            }
        }
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.meta = {{"kind", "sgd"},
                {"eta", cfg.eta},
                {"steps", cfg.steps},
                {"stride", cfg.stride},
                {"P_eval", cfg.P_eval},
                {"sample_seed", cfg.sample_seed},
                {"eval_seed", cfg.eval_seed},
                {"mean_train_loss", cfg.steps ? loss_sum / cfg.steps : 0.0},
                {"wall_seconds", secs}};
    return rec;
}

RunRecord average_runs(const std::vector<RunRecord>& records)
{
    if (records.empty()) throw ParameterError("no records to average");
    const auto& ref = records.front().snaps;
    for (const auto& r : records) {
        if (r.snaps.size() != ref.size()) throw ParameterError("records have mismatched time grids");
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (std::abs(r.snaps[i].t - ref[i].t) > 1e-12) throw ParameterError("records have mismatched time grids");
    }
    if (records.size() == 1) return records.front();
    RunRecord out = records.front();
    double n = static_cast<double>(records.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        OrderParams& o = out.snaps[i];
        for (std::size_t r = 1; r < records.size(); ++r) {
            const OrderParams& x = records[r].snaps[i];
            o.eps_g += x.eps_g;
            o.Q += x.Q;
            o.R += x.R;
            o.T += x.T;
            o.v += x.v;
            if (o.Omega.size() && x.Omega.size()) o.Omega += x.Omega;
            if (o.Sigma.size() && x.Sigma.size()) o.Sigma += x.Sigma;
        }
        o.eps_g /= n;
        o.Q /= n;
        o.R /= n;
        o.T /= n;
        o.v /= n;
        if (o.Omega.size()) o.Omega /= n;
        if (o.Sigma.size()) o.Sigma /= n;
        o.S.resize(0, 0);
    }
    out.meta = {{"kind", "average"}, {"n_records", records.size()}};
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& r : records) parts.push_back(r.meta);
    out.meta["parts"] = parts;
    return out;
}

double dynamic_error(const RunRecord& a, const RunRecord& b, Quantity q, double tau)
{
    OrderParams x = interpolate(a, tau);
    OrderParams y = interpolate(b, tau);
    Eigen::VectorXd dx = quantity_vector(x, q), dy = quantity_vector(y, q);
    if (dx.size() != dy.size()) throw ShapeError("records have different shapes");
    return (dx - dy).norm();
}

}  // namespace hmlab
