#pragma once

#include <filesystem>

#include <json.hpp>

#include "zonocert/neural.hpp"
#include "zonocert/pwa.hpp"
#include "zonocert/setgeom.hpp"

namespace zonocert {

using Json = nlohmann::json;

Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);  // row-major nested arrays
Eigen::VectorXd vector_from_json(const Json& j);
Eigen::MatrixXd matrix_from_json(const Json& j);

/// {"center": [...], "generators": [[row], ...]}
Json zonotope_to_json(const Zonotope& z);
Zonotope zonotope_from_json(const Json& j);

/// {"version": 1, "layers": [{"activation", "W", "b"}]}
Json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const Json& j);

Json system_to_json(const PwaSystem& sys);
PwaSystem system_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace zonocert
