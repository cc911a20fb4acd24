#pragma once

#include "hmlab/types.hpp"

#include <string>

namespace hmlab {

// Shortest round-trip formatting with 17 significant digits.
std::string fmt17(double x);

void write_matrix_csv(const std::string& path, const Mat& M);
Mat read_matrix_csv(const std::string& path);

// 16-byte header: "HMMC", u32 P, u32 D, u32 reserved; then P*D little-endian f64, row-major.
void write_matrix_bin(const std::string& path, const Mat& M);
Mat read_matrix_bin(const std::string& path);

}  // namespace hmlab
