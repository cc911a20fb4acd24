#include "hmlab/record.hpp"

#include "hmlab/matrix_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace hmlab {

Quantity parse_quantity(const std::string& tag)
{
    if (tag == "eps_g") return Quantity::eps_g;
    if (tag == "Q") return Quantity::Q;
    if (tag == "R") return Quantity::R;
    if (tag == "v") return Quantity::v;
    throw ParameterError("unknown quantity tag '" + tag + "'");
}

std::string to_string(Quantity q)
{
    switch (q) {
    case Quantity::eps_g: return "eps_g";
    case Quantity::Q: return "Q";
    case Quantity::R: return "R";
    case Quantity::v: return "v";
    }
    return "?";
}

std::vector<std::string> record_header(int K, int M)
{
    std::vector<std::string> h{"t", "eps_g"};
    auto add = [&](const char* name, int rows, int cols) {
        for (int a = 0; a < rows; ++a)
            for (int b = 0; b < cols; ++b) h.push_back(std::string(name) + "_" + std::to_string(a) + std::to_string(b));
    };
    add("Q", K, K);
    add("R", K, M);
    add("T", M, M);
    for (int k = 0; k < K; ++k) h.push_back("v_" + std::to_string(k));
    return h;
}

void write_record_csv(const std::string& path, const RunRecord& rec)
{
    if (rec.snaps.empty()) throw ParameterError("cannot write an empty record");
    int K = static_cast<int>(rec.snaps[0].Q.rows());
    int M = static_cast<int>(rec.snaps[0].T.rows());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    auto h = record_header(K, M);
    for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
    out << '\n';
    for (const auto& s : rec.snaps) {
        out << fmt17(s.t) << ',' << fmt17(s.eps_g);
        for (int a = 0; a < K; ++a)
            for (int b = 0; b < K; ++b) out << ',' << fmt17(s.Q(a, b));
        for (int a = 0; a < K; ++a)
            for (int b = 0; b < M; ++b) out << ',' << fmt17(s.R(a, b));
        for (int a = 0; a < M; ++a)
            for (int b = 0; b < M; ++b) out << ',' << fmt17(s.T(a, b));
        for (int k = 0; k < K; ++k) out << ',' << fmt17(s.v(k));
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

RunRecord read_record_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": missing header");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    int K = 0, M = 0;
    for (const auto& c : cols) {
        if (c.rfind("v_", 0) == 0) ++K;
    }
    int nT = 0;
    for (const auto& c : cols)
        if (c.rfind("T_", 0) == 0) ++nT;
    while (M * M < nT) ++M;
    if (K == 0 || M * M != nT || cols != record_header(K, M)) throw IoError(path + ": unexpected record header");
    RunRecord rec;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string c;
        std::vector<double> x;
        while (std::getline(ss, c, ',')) {
            try {
                x.push_back(std::stod(c));
            } catch (const std::exception&) {
                throw IoError(path + ": bad number '" + c + "'");
            }
        }
        if (x.size() != cols.size()) throw IoError(path + ": ragged record row");
        OrderParams s;
        std::size_t p = 0;
        s.t = x[p++];
        s.eps_g = x[p++];
        s.Q.resize(K, K);
        s.R.resize(K, M);
        s.T.resize(M, M);
        s.v.resize(K);
        for (int a = 0; a < K; ++a)
            for (int b = 0; b < K; ++b) s.Q(a, b) = x[p++];
        for (int a = 0; a < K; ++a)
            for (int b = 0; b < M; ++b) s.R(a, b) = x[p++];
        for (int a = 0; a < M; ++a)
            for (int b = 0; b < M; ++b) s.T(a, b) = x[p++];
        for (int k = 0; k < K; ++k) s.v(k) = x[p++];
        rec.snaps.push_back(std::move(s));
    }
    return rec;
}

OrderParams interpolate(const RunRecord& rec, double t)
{
    const auto& s = rec.snaps;
    if (s.empty()) throw ParameterError("empty record");
    double lo = s.front().t, hi = s.back().t;
    double tol = 1e-9 * std::max(1.0, std::abs(hi));
    if (t < lo - tol || t > hi + tol) throw ParameterError("time outside the record range");
    auto it = std::lower_bound(s.begin(), s.end(), t, [](const OrderParams& a, double x) { return a.t < x; });
    if (it == s.end()) return s.back();
    if (it == s.begin() || std::abs(it->t - t) <= tol) return *it;
    const OrderParams& b = *it;
    const OrderParams& a = *(it - 1);
    double w = (t - a.t) / (b.t - a.t);
    OrderParams o;
    o.t = t;
    o.eps_g = (1 - w) * a.eps_g + w * b.eps_g;
    o.Q = (1 - w) * a.Q + w * b.Q;
    o.R = (1 - w) * a.R + w * b.R;
    o.T = (1 - w) * a.T + w * b.T;
    o.v = (1 - w) * a.v + w * b.v;
    return o;
}

Eigen::VectorXd quantity_vector(const OrderParams& op, Quantity q)
{
    switch (q) {
    case Quantity::eps_g: return Eigen::VectorXd::Constant(1, op.eps_g);
    case Quantity::Q: return Eigen::Map<const Eigen::VectorXd>(op.Q.data(), op.Q.size());
    case Quantity::R: return Eigen::Map<const Eigen::VectorXd>(op.R.data(), op.R.size());
    case Quantity::v: return op.v;
    }
    return {};
}

}  // namespace hmlab
