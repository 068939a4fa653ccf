#pragma once

#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "rain/landmarks.hpp"
#include "rain/toml_util.hpp"

namespace rain {

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

/// {"scheme": "human68" | "anime26", "points": [[x, y], ...]}
inline LandmarkSet landmarks_from_json(const nlohmann::json& j, const std::string& what = "landmarks") {
  try {
    LandmarkSet s{parse_scheme(j.at("scheme").get<std::string>()), {}};
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw ConfigError(what + ": each point must be [x, y]");
      s.points.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

inline LandmarkSet read_landmarks(const std::string& path) { return landmarks_from_json(detail::read_json_file(path), path); }

/// Points are written with round-trip precision, one per line.
inline void write_landmarks(std::ostream& os, const LandmarkSet& s) {
  os << "{\n  \"scheme\": \"" << to_string(s.scheme) << "\",\n  \"points\": [\n"
     << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < s.points.size(); ++i)
    os << "    [" << s.points[i].x() << ", " << s.points[i].y() << "]" << (i + 1 < s.points.size() ? "," : "") << '\n';
  os << "  ]\n}\n";
}

/// {"entries": [{"target": 0, "sources": [0, 1, 2]}, ...]}; extra fields
/// such as labels are allowed.
inline MergeTable read_merge_table(const std::string& path) {
  const nlohmann::json j = detail::read_json_file(path);
  MergeTable table;
  try {
    for (const auto& e : j.at("entries")) table.push_back({e.at("target").get<int>(), e.at("sources").get<std::vector<int>>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    validate(table);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return table;
}

/// [global] scale, rotation (radians), translation, center;
/// [region.<name>] matrix (row-major 2x2), offset.
inline RegionTransformParams region_params_from_toml(TomlDoc& doc) {
  RegionTransformParams p;
  const toml::table& root = doc.root();
  doc.allow(root, "", {"global", "region"});
  auto vec2 = [&](const toml::table& t, std::string_view key, std::string dotted, Eigen::Vector2d& out) {
    std::vector<double> v;
    if (!doc.read(t, key, dotted, v)) return;
    if (v.size() != 2) doc.fail(dotted, "'" + dotted + "' needs 2 numbers");
    out << v[0], v[1];
  };
  if (const toml::table* g = doc.table(root, "global", "global")) {
    doc.allow(*g, "global", {"scale", "rotation", "translation", "center"});
    doc.read(*g, "scale", "global.scale", p.global.scale);
    doc.read(*g, "rotation", "global.rotation", p.global.rotation);
    vec2(*g, "translation", "global.translation", p.global.translation);
    vec2(*g, "center", "global.center", p.global.center);
    if (!(p.global.scale > 0)) doc.fail("global.scale", "global.scale must be positive");
  }
  if (const toml::table* regions = doc.table(root, "region", "region")) {
    for (auto&& [k, v] : *regions) {
      const std::string name(k.str());
      Region r;
      try {
        r = parse_region(name);
      } catch (const ConfigError&) {
        throw ConfigError(doc.path() + ":" + std::to_string(k.source().begin.line) + ": unknown region '" + name + "'");
      }
      const std::string base = "region." + name;
      if (!v.is_table()) throw ConfigError(doc.where(v) + ": '" + base + "' must be a table");
      const toml::table& t = *v.as_table();
      doc.allow(t, base, {"matrix", "offset"});
      std::vector<double> m;
      if (doc.read(t, "matrix", base + ".matrix", m)) {
        if (m.size() != 4) doc.fail(base + ".matrix", "'" + base + ".matrix' needs 4 numbers (row-major 2x2)");
        p[r].matrix << m[0], m[1], m[2], m[3];
        if (std::abs(p[r].matrix.determinant()) <= 1e-9) doc.fail(base + ".matrix", "'" + base + ".matrix' is singular");
      }
      vec2(t, "offset", base + ".offset", p[r].offset);
    }
  }
  p.validate();
  return p;
}

inline RegionTransformParams read_region_params(const std::string& path) {
  TomlDoc doc = TomlDoc::load(path);
  return region_params_from_toml(doc);
}

}  // namespace rain
