#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rain/core.hpp"

namespace rain {

enum class Scheme { human68, anime26 };

inline std::string_view to_string(Scheme s) { return s == Scheme::human68 ? "human68" : "anime26"; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "human68") return Scheme::human68;
  if (s == "anime26") return Scheme::anime26;
  throw ConfigError("unknown landmark scheme '" + std::string(s) + "'");
}

inline constexpr std::size_t point_count(Scheme s) { return s == Scheme::human68 ? 68 : 26; }

using Point = Eigen::Vector2d;

struct LandmarkSet {
  Scheme scheme = Scheme::human68;
  std::vector<Point> points;

  void validate() const {
    if (points.size() != point_count(scheme))
      throw ShapeError(std::string(to_string(scheme)) + " needs " + std::to_string(point_count(scheme)) +
                       " points, got " + std::to_string(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i)
      if (!points[i].allFinite()) throw NumericError("landmark " + std::to_string(i) + " is not finite");
  }
};

struct MergeEntry {
  int target = 0;
  std::vector<int> sources;
};

using MergeTable = std::vector<MergeEntry>;

inline void validate(const MergeTable& table) {
  std::array<int, 26> seen{};
  if (table.size() != 26) throw ConfigError("merge table needs 26 entries, got " + std::to_string(table.size()));
  for (const MergeEntry& e : table) {
    if (e.target < 0 || e.target >= 26) throw ConfigError("merge table target " + std::to_string(e.target) + " outside [0, 26)");
    if (seen[static_cast<std::size_t>(e.target)]++) throw ConfigError("merge table target " + std::to_string(e.target) + " listed twice");
    if (e.sources.empty()) throw ConfigError("merge table target " + std::to_string(e.target) + " has no sources");
    for (int s : e.sources)
      if (s < 0 || s >= 68) throw ConfigError("merge table source " + std::to_string(s) + " outside [0, 68)");
  }
}

/// Anime-26 layout: contour 0-4, brows 5-10, nose 11, image-left eye 12-15,
/// image-right eye 16-19, mouth 20-25. Eyes run corner, upper lid, corner,
/// lower lid; the mouth is corners, outer lips, inner lips.
inline MergeTable default_merge_table() {
  return {
      {0, {0, 1, 2}},    {1, {4, 5, 6}},    {2, {7, 8, 9}},     {3, {10, 11, 12}},  {4, {14, 15, 16}},
      {5, {17, 18}},     {6, {19}},         {7, {20, 21}},      {8, {22, 23}},      {9, {24}},
      {10, {25, 26}},    {11, {30, 33}},    {12, {36}},         {13, {37, 38}},     {14, {39}},
      {15, {40, 41}},    {16, {42}},        {17, {43, 44}},     {18, {45}},         {19, {46, 47}},
      {20, {48, 60}},    {21, {54, 64}},    {22, {50, 51, 52}}, {23, {56, 57, 58}}, {24, {61, 62, 63}},
      {25, {65, 66, 67}},
  };
}

enum class Region { face_contour, left_eye, right_eye, mouth, brows };

inline constexpr std::array<std::string_view, 5> kRegionNames{"face_contour", "left_eye", "right_eye", "mouth", "brows"};

inline Region parse_region(std::string_view s) {
  for (std::size_t i = 0; i < kRegionNames.size(); ++i)
    if (kRegionNames[i] == s) return static_cast<Region>(i);
  throw ConfigError("unknown landmark region '" + std::string(s) + "'");
}

/// Anime-26 indices of each region. The nose point belongs to none and only
/// follows the global similarity.
inline std::vector<int> region_indices(Region r) {
  switch (r) {
    case Region::face_contour: return {0, 1, 2, 3, 4};
    case Region::brows: return {5, 6, 7, 8, 9, 10};
    case Region::left_eye: return {12, 13, 14, 15};
    case Region::right_eye: return {16, 17, 18, 19};
    case Region::mouth: return {20, 21, 22, 23, 24, 25};
  }
  return {};
}

/// Upper/lower pairs whose distance is the opening of an eye or the mouth.
struct AperturePair {
  std::string_view name;
  int upper, lower;
};

inline constexpr std::array<AperturePair, 3> kApertures{{{"left_eye", 13, 15}, {"right_eye", 17, 19}, {"mouth", 24, 25}}};

struct RegionTransform {
  Eigen::Matrix2d matrix = Eigen::Matrix2d::Identity();
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();

  bool identity() const { return matrix == Eigen::Matrix2d::Identity() && offset.isZero(0); }
};

struct Similarity {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  Eigen::Vector2d center{0.5, 0.5};

  bool identity() const { return scale == 1.0 && rotation == 0.0 && translation.isZero(0); }

  Point apply(const Point& p) const {
    return center + translation + scale * (Eigen::Rotation2Dd(rotation) * (p - center));
  }
};

struct RegionTransformParams {
  std::array<RegionTransform, 5> regions{};
  Similarity global{};

  RegionTransform& operator[](Region r) { return regions[static_cast<std::size_t>(r)]; }
  const RegionTransform& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }

  void validate() const {
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (!regions[i].matrix.allFinite() || !regions[i].offset.allFinite())
        throw ConfigError("region " + std::string(kRegionNames[i]) + ": non-finite transform");
      if (std::abs(regions[i].matrix.determinant()) <= 1e-9)
        throw ConfigError("region " + std::string(kRegionNames[i]) + ": matrix is singular (|det| <= 1e-9)");
    }
    if (!(global.scale > 0) || !std::isfinite(global.scale)) throw ConfigError("global scale must be positive");
    if (!std::isfinite(global.rotation) || !global.translation.allFinite() || !global.center.allFinite())
      throw ConfigError("global similarity has non-finite values");
  }
};

/// Each anime point is the mean of its source group.
inline LandmarkSet merge_points(const LandmarkSet& src, const MergeTable& table) {
  if (src.scheme != Scheme::human68) throw ConfigError("merge_points expects human68 landmarks");
  src.validate();
  validate(table);
  LandmarkSet out{Scheme::anime26, std::vector<Point>(26)};
  for (const MergeEntry& e : table) {
    Point sum = Point::Zero();
    for (int s : e.sources) sum += src.points[static_cast<std::size_t>(s)];
    out.points[static_cast<std::size_t>(e.target)] = sum / static_cast<double>(e.sources.size());
  }
  return out;
}

inline Point centroid(const LandmarkSet& pts, const std::vector<int>& idx) {
  Point c = Point::Zero();
  for (int i : idx) c += pts.points[static_cast<std::size_t>(i)];
  return c / static_cast<double>(idx.size());
}

/// Per-region M (p - c) + offset + c about the region centroid, then the
/// global similarity. Identity pieces are skipped, so they leave points
/// bit-identical.
inline LandmarkSet apply_region_transforms(const LandmarkSet& pts, const RegionTransformParams& params) {
  if (pts.scheme != Scheme::anime26) throw ConfigError("apply_region_transforms expects anime26 landmarks");
  pts.validate();
  params.validate();
  LandmarkSet out = pts;
  for (std::size_t r = 0; r < params.regions.size(); ++r) {
    const RegionTransform& tf = params.regions[r];
    if (tf.identity()) continue;
    const std::vector<int> idx = region_indices(static_cast<Region>(r));
    const Point c = centroid(pts, idx);
    for (int i : idx) {
      const auto k = static_cast<std::size_t>(i);
      out.points[k] = tf.matrix * (pts.points[k] - c) + tf.offset + c;
    }
  }
  if (!params.global.identity())
    for (Point& p : out.points) p = params.global.apply(p);
  return out;
}

inline LandmarkSet retarget(const LandmarkSet& src, const MergeTable& table, const RegionTransformParams& params) {
  return apply_region_transforms(merge_points(src, table), params);
}

/// Opening of each eye and the mouth (upper minus lower point distance).
inline std::map<std::string, double, std::less<>> apertures(const LandmarkSet& anime) {
  if (anime.scheme != Scheme::anime26) throw ConfigError("apertures expects anime26 landmarks");
  std::map<std::string, double, std::less<>> out;
  for (const AperturePair& a : kApertures)
    out[std::string(a.name)] =
        (anime.points[static_cast<std::size_t>(a.upper)] - anime.points[static_cast<std::size_t>(a.lower)]).norm();
  return out;
}

}  // namespace rain
