#include "hmlab/matrix_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace hmlab {

static_assert(std::endian::native == std::endian::little, "binary matrix IO assumes a little-endian host");

std::string fmt17(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_matrix_csv(const std::string& path, const Mat& M)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (Eigen::Index r = 0; r < M.cols(); ++r) out << (r ? ",c_" : "c_") << r;
    out << '\n';
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        for (Eigen::Index r = 0; r < M.cols(); ++r) {
            if (r) out << ',';
            out << fmt17(M(i, r));
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

Mat read_matrix_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": missing header");
    Eigen::Index D = 1;
    for (char c : line) D += c == ',';
    std::vector<double> vals;
    Eigen::Index P = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::Index n = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path + ": bad number '" + cell + "'");
            }
            ++n;
        }
        if (n != D) throw IoError(path + ": ragged row " + std::to_string(P));
        ++P;
    }
    Mat M(P, D);
    std::copy(vals.begin(), vals.end(), M.data());
    return M;
}

void write_matrix_bin(const std::string& path, const Mat& M)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    std::uint32_t hdr[3] = {static_cast<std::uint32_t>(M.rows()), static_cast<std::uint32_t>(M.cols()), 0};
    out.write("HMMC", 4);
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char*>(M.data()), static_cast<std::streamsize>(M.size() * sizeof(double)));
    if (!out) throw IoError("write failed for " + path);
}

Mat read_matrix_bin(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    std::uint32_t hdr[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    if (!in || std::memcmp(magic, "HMMC", 4) != 0) throw IoError(path + ": not an HMMC matrix file");
    Mat M(hdr[0], hdr[1]);
    in.read(reinterpret_cast<char*>(M.data()), static_cast<std::streamsize>(M.size() * sizeof(double)));
    if (!in) throw IoError(path + ": truncated matrix data");
    return M;
}

}  // namespace hmlab
