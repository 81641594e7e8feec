#include "zonocert/json_io.hpp"

#include <fstream>

#include "zonocert/errors.hpp"

namespace zonocert {

Json to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError("expected a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected an array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw FormatError("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw FormatError("expected a number");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

Json zonotope_to_json(const Zonotope& z) {
  return Json{{"center", to_json(z.center())}, {"generators", to_json(z.generators())}};
}

Zonotope zonotope_from_json(const Json& j) {
  if (!j.contains("center")) throw FormatError("zonotope needs a center");
  Eigen::VectorXd c = vector_from_json(j.at("center"));
  Eigen::MatrixXd g = j.contains("generators") ? matrix_from_json(j.at("generators")) : Eigen::MatrixXd(0, 0);
  if (g.size() == 0) return Zonotope(std::move(c));
  return Zonotope(std::move(c), std::move(g));
}

Json mlp_to_json(const Mlp& net) {
  Json layers = Json::array();
  for (const auto& l : net.layers())
    layers.push_back(Json{{"activation", to_string(l.activation)}, {"W", to_json(l.w)}, {"b", to_json(l.b)}});
  return Json{{"version", kWeightFormatVersion}, {"layers", std::move(layers)}};
}

Mlp mlp_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("version")) throw FormatError("weight file lacks a version field");
  if (!j.at("version").is_number_integer()) throw FormatError("weight file version must be an integer");
  const int version = j.at("version").get<int>();
  if (version != kWeightFormatVersion)
    throw FormatError("weight file version " + std::to_string(version) + " unsupported; expected version " +
                      std::to_string(kWeightFormatVersion));
  if (!j.contains("layers") || !j.at("layers").is_array()) throw FormatError("weight file lacks layers");
  std::vector<Layer> layers;
  try {
    for (const auto& lj : j.at("layers")) {
      Layer l;
      l.activation = parse_activation(lj.at("activation").get<std::string>());
      l.w = matrix_from_json(lj.at("W"));
      l.b = vector_from_json(lj.at("b"));
      layers.push_back(std::move(l));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed layer entry: ") + e.what());
  }
  return Mlp(std::move(layers));
}

Json system_to_json(const PwaSystem& sys) {
  Json modes = Json::array();
  for (const auto& m : sys.modes) {
    Json hs = Json::array();
    for (const auto& h : m.region.halfspaces) hs.push_back(Json{{"normal", to_json(h.normal)}, {"offset", h.offset}});
    modes.push_back(Json{{"A", to_json(m.a)}, {"B", to_json(m.b)}, {"halfspaces", std::move(hs)}});
  }
  return Json{{"name", sys.name},
              {"modes", std::move(modes)},
              {"sigma_w", sys.sigma_w},
              {"action_bounds", Json{{"lower", to_json(sys.action_lower)}, {"upper", to_json(sys.action_upper)}}},
              {"domain", Json{{"lower", to_json(sys.domain_lower)}, {"upper", to_json(sys.domain_upper)}}},
              {"target", Json{{"center", to_json(sys.target_center)}, {"radius", sys.target_radius}}}};
}

PwaSystem system_from_json(const Json& j) {
  try {
    PwaSystem s;
    s.name = j.value("name", std::string("custom"));
    for (const auto& mj : j.at("modes")) {
      Mode m;
      m.a = matrix_from_json(mj.at("A"));
      m.b = matrix_from_json(mj.at("B"));
      for (const auto& hj : mj.at("halfspaces"))
        m.region.halfspaces.emplace_back(vector_from_json(hj.at("normal")), hj.at("offset").get<double>());
      s.modes.push_back(std::move(m));
    }
    if (s.modes.empty()) throw FormatError("system has no modes");
    s.state_dim = s.modes.front().a.rows();
    s.input_dim = s.modes.front().b.cols();
    s.sigma_w = j.at("sigma_w").get<double>();
    s.action_lower = vector_from_json(j.at("action_bounds").at("lower"));
    s.action_upper = vector_from_json(j.at("action_bounds").at("upper"));
    s.domain_lower = vector_from_json(j.at("domain").at("lower"));
    s.domain_upper = vector_from_json(j.at("domain").at("upper"));
    s.target_center = vector_from_json(j.at("target").at("center"));
    s.target_radius = j.at("target").at("radius").get<double>();
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed system definition: ") + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace zonocert
