#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rain/landmark_io.hpp"

using namespace rain;

namespace {

const std::string kData = RAIN_DATA_DIR;

LandmarkSet random_face(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LandmarkSet s{Scheme::human68, {}};
  for (int i = 0; i < 68; ++i) s.points.emplace_back(u(rng), u(rng));
  return s;
}

RegionTransformParams random_params(Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  RegionTransformParams p;
  for (auto& r : p.regions) {
    r.matrix << 1 + u(rng), u(rng), u(rng), 1 + u(rng);
    r.offset << 0.1 * u(rng), 0.1 * u(rng);
  }
  p.global = {1.0 + u(rng), u(rng), {0.1 * u(rng), 0.1 * u(rng)}, {0.5, 0.5}};
  return p;
}

double max_diff(const LandmarkSet& a, const LandmarkSet& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.points.size(); ++i) m = std::max(m, (a.points[i] - b.points[i]).cwiseAbs().maxCoeff());
  return m;
}

}  // namespace

TEST(Merge, ConstantFaceStaysConstant) {
  const LandmarkSet src{Scheme::human68, std::vector<Point>(68, Point(0.5, 0.5))};
  for (const Point& p : merge_points(src, default_merge_table()).points) EXPECT_EQ(p, Point(0.5, 0.5));
}

TEST(Merge, SingletonsCopyAndHandMean) {
  MergeTable table;
  for (int t = 0; t < 26; ++t) table.push_back({t, {t + 10}});
  table[3].sources = {0, 1, 2};
  LandmarkSet src{Scheme::human68, std::vector<Point>(68, Point(0.9, 0.9))};
  src.points[0] = {0, 0};
  src.points[1] = {0.3, 0.6};
  src.points[2] = {0.6, 0};
  for (int i = 10; i < 36; ++i) src.points[static_cast<std::size_t>(i)] = {0.01 * i, 1 - 0.01 * i};
  const LandmarkSet out = merge_points(src, table);
  EXPECT_NEAR(out.points[3].x(), 0.3, 1e-15);
  EXPECT_NEAR(out.points[3].y(), 0.2, 1e-15);
  for (int t = 0; t < 26; ++t)
    if (t != 3) {
      EXPECT_EQ(out.points[static_cast<std::size_t>(t)], src.points[static_cast<std::size_t>(t + 10)]);
    }
}

TEST(Merge, TableValidation) {
  MergeTable t = default_merge_table();
  EXPECT_NO_THROW(validate(t));
  t[5].target = 4;
  EXPECT_THROW(validate(t), ConfigError);
  t = default_merge_table();
  t[0].sources.clear();
  EXPECT_THROW(validate(t), ConfigError);
  t = default_merge_table();
  t[0].sources.push_back(68);
  EXPECT_THROW(validate(t), ConfigError);
  t.pop_back();
  EXPECT_THROW(validate(t), ConfigError);
}

TEST(Merge, ShippedTableMatchesDefault) {
  const MergeTable file = read_merge_table(kData + "/landmarks/merge_table.json");
  const MergeTable def = default_merge_table();
  ASSERT_EQ(file.size(), def.size());
  for (std::size_t i = 0; i < def.size(); ++i) {
    EXPECT_EQ(file[i].target, def[i].target);
    EXPECT_EQ(file[i].sources, def[i].sources);
  }
}

TEST(Merge, Linear) {
  Rng rng(1);
  const MergeTable table = default_merge_table();
  for (int k = 0; k < 100; ++k) {
    const LandmarkSet a = random_face(rng), b = random_face(rng);
    const double alpha = 0.7, beta = -1.3;
    LandmarkSet mix{Scheme::human68, {}};
    for (std::size_t i = 0; i < 68; ++i) mix.points.push_back(alpha * a.points[i] + beta * b.points[i]);
    const LandmarkSet ma = merge_points(a, table), mb = merge_points(b, table), mm = merge_points(mix, table);
    for (std::size_t i = 0; i < 26; ++i)
      ASSERT_LT((mm.points[i] - alpha * ma.points[i] - beta * mb.points[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Regions, IdentityLeavesPointsUnchanged) {
  Rng rng(2);
  const LandmarkSet anime = merge_points(random_face(rng), default_merge_table());
  EXPECT_EQ(max_diff(apply_region_transforms(anime, {}), anime), 0.0);
}

TEST(Regions, EyeScaleDoublesApertureOnly) {
  const LandmarkSet anime = merge_points(read_landmarks(kData + "/landmarks/neutral_face.json"), default_merge_table());
  RegionTransformParams p;
  p[Region::left_eye].matrix *= 2.0;
  const LandmarkSet out = apply_region_transforms(anime, p);
  EXPECT_NEAR(apertures(out).at("left_eye"), 2 * apertures(anime).at("left_eye"), 1e-15);
  const auto eye = region_indices(Region::left_eye);
  for (int i = 0; i < 26; ++i)
    if (std::find(eye.begin(), eye.end(), i) == eye.end()) {
      EXPECT_EQ(out.points[static_cast<std::size_t>(i)], anime.points[static_cast<std::size_t>(i)]) << i;
    }
}

TEST(Regions, GlobalSimilarityScalesDistances) {
  Rng rng(3);
  const LandmarkSet anime = merge_points(random_face(rng), default_merge_table());
  RegionTransformParams p;
  p.global = {1.7, 0.6, {0.2, -0.1}, {0.4, 0.3}};
  const LandmarkSet out = apply_region_transforms(anime, p);
  for (std::size_t i = 0; i < 26; ++i)
    for (std::size_t j = i + 1; j < 26; ++j)
      EXPECT_NEAR((out.points[i] - out.points[j]).norm(), 1.7 * (anime.points[i] - anime.points[j]).norm(), 1e-12);
}

TEST(Regions, SingularMatrixRejected) {
  RegionTransformParams p;
  p[Region::mouth].matrix << 1, 2, 2, 4;
  const LandmarkSet anime{Scheme::anime26, std::vector<Point>(26, Point(0.5, 0.5))};
  EXPECT_THROW(apply_region_transforms(anime, p), ConfigError);
  EXPECT_THROW(merge_points(anime, default_merge_table()), ConfigError);
}

TEST(Retarget, ClosedMouthStaysClosed) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    LandmarkSet face = random_face(rng);
    for (int i = 0; i < 3; ++i) face.points[static_cast<std::size_t>(65 + i)] = face.points[static_cast<std::size_t>(61 + i)];
    const LandmarkSet out = retarget(face, default_merge_table(), random_params(rng));
    EXPECT_EQ(apertures(out).at("mouth"), 0.0);
  }
}

TEST(Retarget, ApertureZeroIffInputZero) {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    const LandmarkSet face = random_face(rng);
    const RegionTransformParams p = random_params(rng);
    const auto in = apertures(merge_points(face, default_merge_table()));
    const auto out = apertures(retarget(face, default_merge_table(), p));
    for (const auto& [name, v] : in) EXPECT_EQ(v == 0.0, out.at(name) == 0.0) << name;
  }
}

TEST(Retarget, TranslationEquivariance) {
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    const LandmarkSet face = random_face(rng);
    const RegionTransformParams p = random_params(rng);
    const Point tau(0.03 * k - 1, 0.5 - 0.01 * k);
    LandmarkSet moved = face;
    for (Point& q : moved.points) q += tau;
    const LandmarkSet a = retarget(face, default_merge_table(), p), b = retarget(moved, default_merge_table(), p);
    const Point expect = p.global.scale * (Eigen::Rotation2Dd(p.global.rotation) * tau);
    for (std::size_t i = 0; i < 26; ++i) ASSERT_LT((b.points[i] - a.points[i] - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Retarget, AffineEquivarianceWithIdentityTransforms) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 100; ++k) {
    const LandmarkSet face = random_face(rng);
    Eigen::Matrix2d A;
    A << u(rng), u(rng), u(rng), u(rng);
    const Point b(u(rng), u(rng));
    LandmarkSet mapped = face;
    for (Point& q : mapped.points) q = A * q + b;
    const LandmarkSet lhs = retarget(mapped, default_merge_table(), {});
    LandmarkSet rhs = retarget(face, default_merge_table(), {});
    for (Point& q : rhs.points) q = A * q + b;
    ASSERT_LT(max_diff(lhs, rhs), 1e-12);
  }
}

TEST(Retarget, NeutralFaceGoldens) {
  const LandmarkSet face = read_landmarks(kData + "/landmarks/neutral_face.json");
  const LandmarkSet id = retarget(face, read_merge_table(kData + "/landmarks/merge_table.json"), {});
  EXPECT_LT(max_diff(id, read_landmarks(kData + "/golden/neutral_face_anime26_identity.json")), 1e-12);
  const RegionTransformParams p = read_region_params(kData + "/landmarks/example_params.toml");
  const LandmarkSet ex = retarget(face, default_merge_table(), p);
  EXPECT_LT(max_diff(ex, read_landmarks(kData + "/golden/neutral_face_anime26_example.json")), 1e-12);
}

TEST(LandmarkIo, JsonRoundTripIsExact) {
  Rng rng(8);
  const LandmarkSet face = random_face(rng);
  std::ostringstream os;
  write_landmarks(os, face);
  const LandmarkSet back = landmarks_from_json(nlohmann::json::parse(os.str()));
  EXPECT_EQ(back.scheme, Scheme::human68);
  EXPECT_EQ(max_diff(back, face), 0.0);
  EXPECT_THROW(landmarks_from_json(nlohmann::json::parse(R"({"scheme":"anime26","points":[[0,0]]})")), ConfigError);
  EXPECT_THROW(landmarks_from_json(nlohmann::json::parse(R"({"scheme":"cat","points":[]})")), ConfigError);
}

TEST(LandmarkIo, ParamErrorsNameTheLine) {
  auto parse = [](std::string_view text) {
    TomlDoc doc = TomlDoc::parse(text, "p.toml");
    return region_params_from_toml(doc);
  };
  EXPECT_NO_THROW(parse("[global]\nscale = 2\n[region.mouth]\nmatrix = [1, 0, 0, 1]\n"));
  auto message = [&](std::string_view text) {
    try {
      parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message("[global]\nscale = 1\nzoom = 2\n"), "p.toml:3: unknown key 'global.zoom'");
  EXPECT_EQ(message("[region.nose]\nmatrix = [1, 0, 0, 1]\n"), "p.toml:1: unknown region 'nose'");
  EXPECT_EQ(message("\n[region.mouth]\nmatrix = [1, 2, 2, 4]\n"), "p.toml:3: 'region.mouth.matrix' is singular");
  EXPECT_EQ(message("[region.mouth]\noffset = [1]\n"), "p.toml:2: 'region.mouth.offset' needs 2 numbers");
  EXPECT_EQ(message("[global]\nscale = \"big\"\n"), "p.toml:2: 'global.scale' must be a number");
  EXPECT_NE(message("[global\n").find("p.toml:1:"), std::string::npos);
}
