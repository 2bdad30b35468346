#pragma once

// Facial landmark geometry: AU centers derived from iBUG-68 landmarks, the
// 100x100 attention map built around them, and the mapping of centers onto
// coarser feature grids for region cropping.
//
// iBUG-68 indices used here (0-based, image-left first):
//   17-21 / 22-26   brows, outer to inner / inner to outer
//   36-41 / 42-47   eyes; 39 and 42 are the inner corners
//   48, 54          outer lip corners; 50, 52 upper lip peaks
//   56, 58          lower lip; 61, 63 / 65, 67 inner upper / lower lip

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eacnet/error.hpp"
#include "eacnet/io.hpp"
#include "eacnet/tensor.hpp"

namespace eacnet::geometry {

inline constexpr std::size_t kLandmarkCount = 68;
inline constexpr std::size_t kGridSize = 100;
inline constexpr std::size_t kCenterCount = 20;
inline constexpr int kBoxRadius = 5;
inline constexpr double kWeightSlope = 0.095;

/// The 12 action units handled by the detector, in label order.
inline constexpr std::array<int, 12> kActionUnits = {1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24};

struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct LandmarkSet {
  std::array<Point, kLandmarkCount> points{};
  int width = 0;
  int height = 0;
  std::string image;

  /// Throws ValidationError when the size is non-positive or any point lies
  /// outside [0,width) x [0,height).
  void validate() const {
    if (width <= 0 || height <= 0)
      throw ValidationError("landmark image size must be positive, got " +
                            std::to_string(width) + "x" + std::to_string(height));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height))
        throw ValidationError("landmark " + std::to_string(i) + " (" + std::to_string(p.x) +
                              "," + std::to_string(p.y) + ") outside the " +
                              std::to_string(width) + "x" + std::to_string(height) + " image");
    }
  }
};

enum class Side { Left, Right };

inline const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }

struct AUCenter {
  Point position;  // on the 100x100 grid
  std::vector<int> au_ids;
  Side side = Side::Left;
};

struct AUCenterSet {
  std::vector<AUCenter> centers;
  double scale_d = 0;  // inner-eye-corner distance on the 100x100 grid
};

/// 100x100 attention weights, row-major (row = y, column = x).
struct AttentionMap {
  std::vector<double> grid = std::vector<double>(kGridSize * kGridSize, 0.0);

  double& at(std::size_t row, std::size_t col) { return grid[row * kGridSize + col]; }
  double at(std::size_t row, std::size_t col) const { return grid[row * kGridSize + col]; }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({kGridSize, kGridSize}, std::vector<T>(grid.begin(), grid.end()));
  }
};

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

namespace detail {

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline Point mean_of(std::span<const Point> pts, const std::vector<int>& idx) {
  Point m;
  for (int i : idx) {
    m.x += pts[static_cast<std::size_t>(i)].x;
    m.y += pts[static_cast<std::size_t>(i)].y;
  }
  m.x /= static_cast<double>(idx.size());
  m.y /= static_cast<double>(idx.size());
  return m;
}

/// Center rule: anchor landmarks (averaged) plus a vertical offset in units
/// of the scaled distance d (positive = down).
struct CenterRule {
  std::vector<int> aus;
  std::vector<int> left;
  std::vector<int> right;
  double offset_in_d;
};

inline const std::vector<CenterRule>& center_rules() {
  static const std::vector<CenterRule> rules = {
      {{1}, {21}, {22}, -1.0 / 2},                                       // inner brow
      {{2}, {17}, {26}, -1.0 / 3},                                       // outer brow
      {{4}, {19}, {24}, +1.0 / 3},                                       // brow center
      {{6}, {40, 41}, {46, 47}, +1.0},                                   // eye bottom
      {{7}, {36, 37, 38, 39, 40, 41}, {42, 43, 44, 45, 46, 47}, 0.0},    // eye center
      {{10}, {50}, {52}, 0.0},                                           // upper lip center
      {{12, 14, 15}, {48}, {54}, 0.0},                                   // lip corners
      {{17}, {58}, {56}, +1.0 / 2},                                      // below lower lip
      {{23, 24}, {61}, {63}, 0.0},                                       // lip center, upper
      {{23, 24}, {67}, {65}, 0.0},                                       // lip center, lower
  };
  return rules;
}

inline double clamp_to_grid(double v) {
  return std::clamp(v, 0.0, static_cast<double>(kGridSize - 1));
}

}  // namespace detail

/// Euclidean distance between the inner eye corners (points 39 and 42), in
/// image pixels.
inline double inner_eye_distance(const LandmarkSet& l) {
  const double d = detail::distance(l.points[39], l.points[42]);
  if (d == 0) throw DegenerateLandmarksError("inner eye corners 39 and 42 coincide");
  return d;
}

/// The 20 AU centers on the 100x100 grid, ordered by AU then left before
/// right. Landmarks are scaled independently per axis from the image frame.
inline AUCenterSet au_centers(const LandmarkSet& l) {
  l.validate();
  std::array<Point, kLandmarkCount> norm{};
  const double sx = static_cast<double>(kGridSize) / l.width;
  const double sy = static_cast<double>(kGridSize) / l.height;
  for (std::size_t i = 0; i < kLandmarkCount; ++i)
    norm[i] = {l.points[i].x * sx, l.points[i].y * sy};

  AUCenterSet set;
  set.scale_d = detail::distance(norm[39], norm[42]);
  if (set.scale_d == 0) throw DegenerateLandmarksError("inner eye corners 39 and 42 coincide");

  for (const auto& rule : detail::center_rules()) {
    for (Side side : {Side::Left, Side::Right}) {
      Point p = detail::mean_of(norm, side == Side::Left ? rule.left : rule.right);
      p.y += rule.offset_in_d * set.scale_d;
      p.x = detail::clamp_to_grid(p.x);
      p.y = detail::clamp_to_grid(p.y);
      set.centers.push_back({p, rule.aus, side});
    }
  }
  return set;
}

/// Integer pixel of a center on the 100x100 grid.
inline GridCell rounded_center(const AUCenter& c) {
  return {static_cast<std::size_t>(std::lround(c.position.y)),
          static_cast<std::size_t>(std::lround(c.position.x))};
}

/// w = 1 - 0.095 * manhattan distance over the 11x11 box of every center;
/// overlapping boxes take the per-pixel maximum.
inline AttentionMap attention_map(const AUCenterSet& c) {
  AttentionMap map;
  const int last = static_cast<int>(kGridSize) - 1;
  for (const auto& center : c.centers) {
    const GridCell cell = rounded_center(center);
    const int cy = static_cast<int>(cell.row), cx = static_cast<int>(cell.col);
    for (int dy = -kBoxRadius; dy <= kBoxRadius; ++dy) {
      const int r = cy + dy;
      if (r < 0 || r > last) continue;
      for (int dx = -kBoxRadius; dx <= kBoxRadius; ++dx) {
        const int col = cx + dx;
        if (col < 0 || col > last) continue;
        const double w = 1.0 - kWeightSlope * (std::abs(dx) + std::abs(dy));
        double& cur = map.at(static_cast<std::size_t>(r), static_cast<std::size_t>(col));
        cur = std::max(cur, w);
      }
    }
  }
  return map;
}

/// Maps a 100-grid position onto a grid x grid feature map and clamps it so
/// a window x window crop around it stays inside.
inline GridCell map_center_to_grid(Point position, std::size_t grid, std::size_t window) {
  if (window < 1 || window % 2 == 0 || grid < window)
    throw DomainError("map_center_to_grid needs grid >= window >= 1 and an odd window");
  const double scale = static_cast<double>(grid) / static_cast<double>(kGridSize);
  const long half = static_cast<long>(window / 2);
  const long hi = static_cast<long>(grid) - 1 - half;
  const long row = std::clamp(std::lround(position.y * scale), half, hi);
  const long col = std::clamp(std::lround(position.x * scale), half, hi);
  return {static_cast<std::size_t>(row), static_cast<std::size_t>(col)};
}

/// Everything the attention-bearing networks need from one sample's landmarks.
struct SampleGeometry {
  AUCenterSet centers;
  AttentionMap attention;
};

inline SampleGeometry sample_geometry(const LandmarkSet& l) {
  SampleGeometry g{au_centers(l), {}};
  g.attention = attention_map(g.centers);
  return g;
}

// ---------------------------------------------------------------------------
// File formats

inline nlohmann::json landmarks_to_json(const LandmarkSet& l) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : l.points) pts.push_back({p.x, p.y});
  return {{"image", l.image}, {"width", l.width}, {"height", l.height}, {"points", pts}};
}

inline LandmarkSet landmarks_from_json(const nlohmann::json& j) {
  LandmarkSet l;
  try {
    l.image = j.value("image", std::string{});
    l.width = j.at("width").get<int>();
    l.height = j.at("height").get<int>();
    const auto& pts = j.at("points");
    if (!pts.is_array() || pts.size() != kLandmarkCount)
      throw ParseError("landmarks: expected exactly 68 points, got " +
                       std::to_string(pts.is_array() ? pts.size() : 0));
    for (std::size_t i = 0; i < kLandmarkCount; ++i) {
      if (!pts[i].is_array() || pts[i].size() != 2)
        throw ParseError("landmarks: point " + std::to_string(i) + " is not an [x,y] pair");
      l.points[i] = {pts[i][0].get<double>(), pts[i][1].get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("landmarks: ") + e.what());
  }
  l.validate();
  return l;
}

inline LandmarkSet load_landmarks(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("landmarks file '" + path.string() + "': " + e.what());
  }
  return landmarks_from_json(j);
}

inline void save_landmarks(const LandmarkSet& l, const std::filesystem::path& path) {
  io::write_file_atomic(path, landmarks_to_json(l).dump(1) + "\n");
}

/// 16-bit binary PGM, pixel = round(w * 65535).
inline std::string encode_attention_pgm(const AttentionMap& map) {
  std::vector<std::uint16_t> px(map.grid.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint16_t>(std::lround(std::clamp(map.grid[i], 0.0, 1.0) * 65535.0));
  return io::encode_pgm(kGridSize, kGridSize, 65535, px);
}

inline constexpr std::string_view kAttentionRawMagic = "EACATT01";

/// "EACATT01" followed by the 100x100 grid as little-endian float32.
inline std::string encode_attention_raw(const AttentionMap& map) {
  io::ByteWriter w;
  w.put_bytes(kAttentionRawMagic);
  for (double v : map.grid) w.put<float>(static_cast<float>(v));
  return w.bytes();
}

inline AttentionMap decode_attention_raw(std::string_view bytes) {
  io::ByteReader<ParseError> r(bytes);
  if (r.get_bytes(kAttentionRawMagic.size()) != kAttentionRawMagic)
    throw ParseError("attention grid: bad magic");
  AttentionMap map;
  for (double& v : map.grid) v = r.get<float>();
  if (!r.at_end()) throw ParseError("attention grid: trailing bytes");
  return map;
}

inline nlohmann::json centers_to_json(const AUCenterSet& set) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : set.centers)
    arr.push_back({{"x", c.position.x},
                   {"y", c.position.y},
                   {"aus", c.au_ids},
                   {"side", side_name(c.side)}});
  return {{"scale_d", set.scale_d}, {"centers", arr}};
}

}  // namespace eacnet::geometry
