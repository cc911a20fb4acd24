#pragma once

#include "hmlab/network.hpp"

#include <json.hpp>
#include <string>
#include <vector>

namespace hmlab {

struct RunRecord {
    std::vector<OrderParams> snaps;
    nlohmann::json meta = nlohmann::json::object();
};

enum class Quantity { eps_g, Q, R, v };
Quantity parse_quantity(const std::string& tag);
std::string to_string(Quantity q);

std::vector<std::string> record_header(int K, int M);
void write_record_csv(const std::string& path, const RunRecord& rec);
RunRecord read_record_csv(const std::string& path);

// Linear interpolation of a snapshot at time t (Q, R, T, v, eps_g only).
OrderParams interpolate(const RunRecord& rec, double t);
Eigen::VectorXd quantity_vector(const OrderParams& op, Quantity q);

}  // namespace hmlab
