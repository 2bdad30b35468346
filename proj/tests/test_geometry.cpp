#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "eacnet/data.hpp"
#include "eacnet/geometry.hpp"

using namespace eacnet;
using namespace eacnet::geometry;

namespace {

LandmarkSet face_at(double dx = 0, double dy = 0) {
  LandmarkSet l;
  l.width = l.height = 224;
  const auto& f = data::detail::template_face();
  for (std::size_t i = 0; i < kLandmarkCount; ++i) l.points[i] = {f[i].x + dx, f[i].y + dy};
  return l;
}

LandmarkSet bundled() { return load_landmarks(std::string(EACNET_DATA_DIR) + "/example_landmarks.json"); }

}  // namespace

TEST(InnerEyeDistance, Examples) {
  LandmarkSet l = face_at();
  l.points[39] = {40, 50};
  l.points[42] = {60, 50};
  EXPECT_DOUBLE_EQ(inner_eye_distance(l), 20.0);
  l.points[39] = {0, 0};
  l.points[42] = {3, 4};
  EXPECT_DOUBLE_EQ(inner_eye_distance(l), 5.0);
  l.points[42] = {0, 0};
  EXPECT_THROW(inner_eye_distance(l), DegenerateLandmarksError);
  EXPECT_THROW(au_centers(l), DegenerateLandmarksError);
}

TEST(LandmarkSet, RejectsPointsOutsideImage) {
  LandmarkSet l = face_at();
  l.points[5] = {224, 10};
  EXPECT_THROW(l.validate(), ValidationError);
  l = face_at();
  l.width = 0;
  EXPECT_THROW(l.validate(), ValidationError);
}

TEST(AuCenters, TwentyCentersCoveringEveryAu) {
  const auto set = au_centers(bundled());
  ASSERT_EQ(set.centers.size(), kCenterCount);
  std::set<int> aus;
  for (const auto& c : set.centers) {
    aus.insert(c.au_ids.begin(), c.au_ids.end());
    EXPECT_GE(c.position.x, 0);
    EXPECT_LT(c.position.x, 100);
    EXPECT_GE(c.position.y, 0);
    EXPECT_LT(c.position.y, 100);
  }
  EXPECT_EQ(aus, std::set<int>(kActionUnits.begin(), kActionUnits.end()));
  // lip corners serve 12/14/15, lip centers serve 23/24
  for (const auto& c : set.centers) {
    if (std::count(c.au_ids.begin(), c.au_ids.end(), 12)) EXPECT_EQ(c.au_ids, (std::vector<int>{12, 14, 15}));
    if (std::count(c.au_ids.begin(), c.au_ids.end(), 23)) EXPECT_EQ(c.au_ids, (std::vector<int>{23, 24}));
  }
}

TEST(AuCenters, SymmetricFaceGivesMirroredCenters) {
  const auto set = au_centers(face_at());
  for (std::size_t i = 0; i < set.centers.size(); i += 2) {
    const auto& l = set.centers[i];
    const auto& r = set.centers[i + 1];
    ASSERT_EQ(l.side, Side::Left);
    ASSERT_EQ(r.side, Side::Right);
    EXPECT_NEAR(l.position.x + r.position.x, 100.0, 1e-9);
    EXPECT_NEAR(l.position.y, r.position.y, 1e-9);
  }
}

TEST(AuCenters, EyeCenterIsEyeCentroid) {
  const LandmarkSet l = bundled();
  const auto set = au_centers(l);
  const double s = 100.0 / 224.0;
  double lx = 0, ly = 0, rx = 0, ry = 0;
  for (int i = 36; i <= 41; ++i) lx += l.points[i].x, ly += l.points[i].y;
  for (int i = 42; i <= 47; ++i) rx += l.points[i].x, ry += l.points[i].y;
  for (const auto& c : set.centers) {
    if (c.au_ids != std::vector<int>{7}) continue;
    const bool left = c.side == Side::Left;
    EXPECT_NEAR(c.position.x, (left ? lx : rx) / 6 * s, 1e-9);
    EXPECT_NEAR(c.position.y, (left ? ly : ry) / 6 * s, 1e-9);
  }
}

TEST(AuCenters, InnerBrowCenterSitsHalfScaleAbove) {
  const LandmarkSet l = bundled();
  const auto set = au_centers(l);
  const double s = 100.0 / 224.0;
  const double d = std::hypot((l.points[42].x - l.points[39].x) * s,
                              (l.points[42].y - l.points[39].y) * s);
  EXPECT_NEAR(set.scale_d, d, 1e-12);
  EXPECT_NEAR(set.centers[0].position.y, l.points[21].y * s - d / 2, 1e-9);
  EXPECT_NEAR(set.centers[1].position.y, l.points[22].y * s - d / 2, 1e-9);
  EXPECT_EQ(set.centers[0].au_ids, std::vector<int>{1});
}

TEST(AttentionMap, SpotValues) {
  AUCenterSet set;
  set.centers.push_back({{50, 50}, {1}, Side::Left});
  const auto m = attention_map(set);
  EXPECT_EQ(m.at(50, 50), 1.0);
  EXPECT_NEAR(m.at(45, 45), 0.05, 1e-12);
  EXPECT_NEAR(m.at(55, 45), 0.05, 1e-12);
  EXPECT_NEAR(m.at(51, 52), 0.715, 1e-12);
  EXPECT_EQ(m.at(44, 50), 0.0);
  EXPECT_EQ(m.at(50, 56), 0.0);
}

TEST(AttentionMap, OverlapTakesMaximum) {
  AUCenterSet set;
  set.centers.push_back({{50, 50}, {1}, Side::Left});
  set.centers.push_back({{53, 50}, {1}, Side::Right});
  const auto m = attention_map(set);
  // (row 50, col 52): distance 2 from the first, 1 from the second
  EXPECT_NEAR(m.at(50, 52), 1 - 0.095, 1e-12);
  EXPECT_NEAR(m.at(50, 51), 1 - 0.095, 1e-12);
  EXPECT_EQ(m.at(50, 53), 1.0);
}

TEST(AttentionMap, ValueSetAndCenterInvariants) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-8, 8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto set = au_centers(face_at(u(rng), u(rng)));
    const auto m = attention_map(set);
    for (double v : m.grid) EXPECT_TRUE(v == 0.0 || (v >= 0.05 - 1e-12 && v <= 1.0)) << v;
    for (const auto& c : set.centers) {
      const auto cell = rounded_center(c);
      EXPECT_EQ(m.at(cell.row, cell.col), 1.0);
    }
  }
}

TEST(AttentionMap, ReorderingCentersChangesNothing) {
  auto set = au_centers(bundled());
  const auto ref = attention_map(set);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(set.centers.begin(), set.centers.end(), rng);
    EXPECT_EQ(attention_map(set).grid, ref.grid);
  }
}

TEST(AttentionMap, TranslationShiftsCenters) {
  const auto a = au_centers(face_at());
  const double dx = 11.2, dy = -6.72;  // 5 and -3 grid cells
  const auto b = au_centers(face_at(dx, dy));
  for (std::size_t i = 0; i < a.centers.size(); ++i) {
    const auto ca = rounded_center(a.centers[i]), cb = rounded_center(b.centers[i]);
    EXPECT_LE(std::abs(long(cb.col) - long(ca.col) - 5), 1);
    EXPECT_LE(std::abs(long(cb.row) - long(ca.row) + 3), 1);
  }
}

TEST(MapCenterToGrid, Examples) {
  EXPECT_EQ(map_center_to_grid({50, 50}, 28, 3), (GridCell{14, 14}));
  EXPECT_EQ(map_center_to_grid({99, 99}, 28, 3), (GridCell{26, 26}));
  EXPECT_EQ(map_center_to_grid({0, 0}, 28, 3), (GridCell{1, 1}));
  EXPECT_THROW(map_center_to_grid({0, 0}, 28, 2), DomainError);
  EXPECT_THROW(map_center_to_grid({0, 0}, 2, 3), DomainError);
}

TEST(MapCenterToGrid, WindowAlwaysInside) {
  for (double x = 0; x < 100; x += 0.7)
    for (std::size_t grid : {3u, 7u, 14u, 28u}) {
      const auto c = map_center_to_grid({x, 99.9 - x}, grid, 3);
      EXPECT_GE(c.row, 1u);
      EXPECT_GE(c.col, 1u);
      EXPECT_LE(c.row + 1, grid - 1);
      EXPECT_LE(c.col + 1, grid - 1);
    }
}

TEST(Formats, LandmarksJsonRoundTrip) {
  const LandmarkSet l = bundled();
  const LandmarkSet back = landmarks_from_json(landmarks_to_json(l));
  EXPECT_EQ(back.points, l.points);
  EXPECT_EQ(back.width, l.width);
  EXPECT_EQ(back.image, l.image);

  auto j = landmarks_to_json(l);
  j["points"].erase(j["points"].begin());
  EXPECT_THROW(landmarks_from_json(j), ParseError);
  j = landmarks_to_json(l);
  j["points"][3] = {1.0};
  EXPECT_THROW(landmarks_from_json(j), ParseError);
  j = landmarks_to_json(l);
  j.erase("width");
  EXPECT_THROW(landmarks_from_json(j), ParseError);
}

TEST(Formats, AttentionPgmAndRaw) {
  const auto m = attention_map(au_centers(bundled()));
  const std::string pgm = encode_attention_pgm(m);
  const std::string header = "P5\n100 100\n65535\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(pgm.size(), header.size() + 2 * 100 * 100);
  std::uint16_t peak = 0;
  for (std::size_t i = header.size(); i < pgm.size(); i += 2)
    peak = std::max<std::uint16_t>(peak, std::uint16_t((std::uint8_t(pgm[i]) << 8) | std::uint8_t(pgm[i + 1])));
  EXPECT_EQ(peak, 65535);

  const auto back = decode_attention_raw(encode_attention_raw(m));
  for (std::size_t i = 0; i < m.grid.size(); ++i)
    EXPECT_EQ(back.grid[i], double(float(m.grid[i])));
  EXPECT_THROW(decode_attention_raw("EACATT01abc"), ParseError);
  EXPECT_THROW(decode_attention_raw("NOTMAGIC"), ParseError);
}
