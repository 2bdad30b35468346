#pragma once

// Dataset plumbing: manifest ingestion, PGM/PPM decoding into [3,224,224]
// tensors, and a procedural face generator that plants AU-specific
// appearance changes around the AU centers of ground-truth landmarks.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "eacnet/error.hpp"
#include "eacnet/geometry.hpp"
#include "eacnet/io.hpp"
#include "eacnet/labels.hpp"
#include "eacnet/tensor.hpp"

namespace eacnet::data {

namespace fs = std::filesystem;

inline constexpr std::size_t kImageSize = 224;

// ---------------------------------------------------------------------------
// Images

/// Decoded 8-bit PNM raster, interleaved channels.
struct RasterImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

inline RasterImage decode_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_int = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError(std::string("PNM header: missing ") + what);
    return std::stoul(std::string(bytes.substr(start, pos - start)));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError("PNM header: expected P5 or P6 magic");
  RasterImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  img.width = read_int("width");
  img.height = read_int("height");
  const auto maxval = read_int("maxval");
  if (img.width == 0 || img.height == 0) throw ParseError("PNM header: zero image size");
  if (maxval != 255) throw ParseError("PNM header: maxval must be 255, got " +
                                      std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ParseError("PNM header: missing separator before pixel data");
  ++pos;
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - pos < need)
    throw ParseError("PNM payload truncated: " + std::to_string(bytes.size() - pos) + " of " +
                     std::to_string(need) + " bytes");
  img.pixels.assign(bytes.begin() + static_cast<long>(pos),
                    bytes.begin() + static_cast<long>(pos + need));
  return img;
}

/// [3,224,224] tensor in [0,1]; grayscale is replicated to three channels and
/// other sizes are resized with corner-aligned bilinear interpolation.
template <typename T = float>
Tensor<T> image_to_tensor(const RasterImage& img) {
  Tensor<T> out({3, kImageSize, kImageSize});
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = img.channels == 1 ? 0 : c;
    Tensor<T> plane({img.height, img.width});
    for (std::size_t i = 0; i < img.width * img.height; ++i)
      plane[i] = static_cast<T>(img.pixels[i * img.channels + src_c]) / T(255);
    if (img.height != kImageSize || img.width != kImageSize)
      plane = bilinear_resize(plane, kImageSize, kImageSize);
    std::copy(plane.data().begin(), plane.data().end(), out.raw() + c * kImageSize * kImageSize);
  }
  return out;
}

template <typename T = float>
Tensor<T> load_image(const fs::path& path) {
  try {
    return image_to_tensor<T>(decode_pnm(io::read_file(path)));
  } catch (const ParseError& e) {
    throw ParseError("image '" + path.string() + "': " + e.what());
  }
}

/// Binary PPM (P6) of a [3,H,W] tensor, values rounded from [0,1] to 0..255.
template <typename T>
std::string encode_ppm(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("encode_ppm expects [3,H,W], got " + shape_string(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(img[c * h * w + i]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  return out;
}

template <typename T>
void save_ppm(const Tensor<T>& img, const fs::path& path) {
  io::write_file_atomic(path, encode_ppm(img));
}

// ---------------------------------------------------------------------------
// Manifest

struct SampleRecord {
  fs::path image_path;
  std::string subject_id;
  LabelVector labels{};
  fs::path landmarks_path;
};

struct ManifestResult {
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;
};

inline std::vector<std::string> manifest_columns() {
  std::vector<std::string> cols = {"image", "subject"};
  for (int au : geometry::kActionUnits) cols.push_back("au" + std::to_string(au));
  cols.push_back("landmarks");
  return cols;
}

namespace detail {
inline std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}
}  // namespace detail

/// Reads a manifest CSV. Relative paths resolve against the manifest's
/// directory. Errors name the offending line and column.
inline ManifestResult load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  ManifestResult result;
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r\n") == std::string::npos) {
    result.warnings.push_back("manifest '" + path.string() + "' is empty");
    return result;
  }
  const auto header = detail::split_csv_line(line);
  std::vector<std::size_t> col_index;
  for (const auto& name : manifest_columns()) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw ParseError("manifest '" + path.string() + "': missing column '" + name + "'");
    col_index.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  const fs::path base = path.parent_path();
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = "manifest '" + path.string() + "' line " + std::to_string(line_no);
    if (cells.size() != header.size())
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    SampleRecord rec;
    const auto resolve = [&](const std::string& p) {
      fs::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    rec.image_path = resolve(cells[col_index[0]]);
    rec.subject_id = cells[col_index[1]];
    for (std::size_t a = 0; a < kNumAUs; ++a) {
      const std::string& v = cells[col_index[2 + a]];
      if (v != "0" && v != "1")
        throw ParseError(where + ", column 'au" + std::to_string(geometry::kActionUnits[a]) +
                         "': label '" + v + "' is not 0 or 1");
      rec.labels[a] = v == "1";
    }
    rec.landmarks_path = resolve(cells[col_index.back()]);
    if (cells[col_index[0]].empty()) throw ParseError(where + ", column 'image': empty path");
    if (!seen.insert(rec.image_path.lexically_normal().string()).second)
      throw ParseError(where + ", column 'image': duplicate image '" + cells[col_index[0]] + "'");
    for (const auto& [col, p] : {std::pair{"image", rec.image_path},
                                 std::pair{"landmarks", rec.landmarks_path}}) {
      std::ifstream probe(p, std::ios::binary);
      if (!probe)
        throw IoError(where + ", column '" + col + "': cannot read '" + p.string() + "'");
    }
    result.records.push_back(std::move(rec));
  }
  if (result.records.empty())
    result.warnings.push_back("manifest '" + path.string() + "' has no samples");
  return result;
}

inline std::string encode_manifest(const std::vector<SampleRecord>& records,
                                   const fs::path& relative_to) {
  std::ostringstream out;
  const auto cols = manifest_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& r : records) {
    out << r.image_path.lexically_relative(relative_to).generic_string() << "," << r.subject_id;
    for (int l : r.labels) out << "," << l;
    out << "," << r.landmarks_path.lexically_relative(relative_to).generic_string() << "\n";
  }
  return out.str();
}

/// A decoded sample ready for the network.
template <typename T>
struct Sample {
  Tensor<T> image;  // [3,224,224]
  LabelVector labels{};
  geometry::LandmarkSet landmarks;
  geometry::SampleGeometry geometry;
  std::string subject;
};

template <typename T>
Sample<T> load_sample(const SampleRecord& r) {
  Sample<T> s;
  s.image = load_image<T>(r.image_path);
  s.landmarks = geometry::load_landmarks(r.landmarks_path);
  s.geometry = geometry::sample_geometry(s.landmarks);
  s.labels = r.labels;
  s.subject = r.subject_id;
  return s;
}

template <typename T>
std::vector<Sample<T>> load_samples(const std::vector<SampleRecord>& records) {
  std::vector<Sample<T>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_sample<T>(r));
  return out;
}

/// Stacks sample images into [N,3,224,224].
template <typename T>
Tensor<T> stack_images(std::span<const Sample<T>* const> samples) {
  Tensor<T> out({samples.size(), 3, kImageSize, kImageSize});
  const std::size_t per = 3 * kImageSize * kImageSize;
  for (std::size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i]->image.data().begin(), samples[i]->image.data().end(),
              out.raw() + i * per);
  return out;
}

// ---------------------------------------------------------------------------
// Label populations

namespace detail {
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    tag};
  return std::mt19937_64(seq);
}
}  // namespace detail

/// Two-regime label population reproducing the reference occurrence rates:
/// a fraction `minority_share` of samples carries at least one minority AU
/// (with the conditional rates of the majority AUs), the rest carries none.
inline std::vector<LabelVector> reference_label_population(std::size_t count, std::uint64_t seed,
                                                           double minority_share = 0.42) {
  using namespace reference;
  std::array<double, kNumAUs> p_minor{}, p_rest{};
  std::vector<std::size_t> minority;
  for (std::size_t a = 0; a < kNumAUs; ++a) {
    if (is_minority(geometry::kActionUnits[a])) {
      minority.push_back(a);
      p_minor[a] = kOccurrence[a] / minority_share;
    } else {
      p_minor[a] = kMinorityConditional[a];
      p_rest[a] = (kOccurrence[a] - minority_share * kMinorityConditional[a]) /
                  (1 - minority_share);
    }
  }
  // Rejecting all-negative minority draws inflates rates by 1/(1-P0); solve
  // p = rate * (1 - P0(p)) / share by fixed-point iteration.
  for (int it = 0; it < 50; ++it) {
    double none = 1;
    for (std::size_t a : minority) none *= 1 - p_minor[a];
    for (std::size_t a : minority) p_minor[a] = kOccurrence[a] * (1 - none) / minority_share;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<LabelVector> out(count);
  for (auto& l : out) {
    if (u(rng) < minority_share) {
      bool any = false;
      while (!any) {
        for (std::size_t a : minority) any |= (l[a] = u(rng) < p_minor[a]) != 0;
      }
      for (std::size_t a = 0; a < kNumAUs; ++a)
        if (!is_minority(geometry::kActionUnits[a])) l[a] = u(rng) < p_minor[a];
    } else {
      for (std::size_t a = 0; a < kNumAUs; ++a)
        l[a] = is_minority(geometry::kActionUnits[a]) ? 0 : (u(rng) < p_rest[a]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic faces

struct SynthSpec {
  std::size_t count = 64;
  std::uint64_t seed = 0;
  std::size_t image_size = kImageSize;
  std::array<double, kNumAUs> au_probabilities{};
  double deformation_magnitude = 2.0;  // peak warp, pixels
  double signal_strength = 0.35;       // peak brightness change
  std::size_t subjects = 27;

  void validate() const {
    std::vector<std::string> bad;
    if (count == 0) bad.push_back("count must be positive");
    if (image_size != kImageSize) bad.push_back("image_size must be 224");
    for (std::size_t a = 0; a < kNumAUs; ++a)
      if (!(au_probabilities[a] >= 0 && au_probabilities[a] <= 1))
        bad.push_back("au_probabilities[" + std::to_string(a) + "] outside [0,1]");
    if (!(deformation_magnitude >= 0)) bad.push_back("deformation_magnitude must be >= 0");
    if (!(signal_strength >= 0)) bad.push_back("signal_strength must be >= 0");
    if (subjects == 0) bad.push_back("subjects must be positive");
    if (!bad.empty()) {
      std::string msg = "invalid synth spec:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ValidationError(msg);
    }
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
      s.count = j.value("count", s.count);
      s.seed = j.value("seed", s.seed);
      s.image_size = j.value("image_size", s.image_size);
      if (j.contains("au_probabilities")) {
        const auto& p = j.at("au_probabilities");
        if (!p.is_array() || p.size() != kNumAUs)
          throw ValidationError("synth spec: au_probabilities must list 12 values");
        for (std::size_t a = 0; a < kNumAUs; ++a) s.au_probabilities[a] = p[a].get<double>();
      }
      s.deformation_magnitude = j.value("deformation_magnitude", s.deformation_magnitude);
      s.signal_strength = j.value("signal_strength", s.signal_strength);
      s.subjects = j.value("subjects", s.subjects);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

namespace detail {

using geometry::Point;

/// Frontal neutral face in a 224x224 frame, symmetric about x = 112.
inline const std::array<Point, geometry::kLandmarkCount>& template_face() {
  static const auto pts = [] {
    std::array<Point, geometry::kLandmarkCount> p{};
    const double pi = std::acos(-1.0);
    for (int i = 0; i <= 16; ++i) {
      const double th = pi * (1.0 - i / 16.0);
      p[i] = {112 + 80 * std::cos(th), 100 + 95 * std::sin(th)};
    }
    const Point brow[5] = {{60, 74}, {70, 68}, {80, 66}, {90, 67}, {100, 70}};
    for (int i = 0; i < 5; ++i) {
      p[17 + i] = brow[i];
      p[26 - i] = {224 - brow[i].x, brow[i].y};
    }
    const Point nose[9] = {{112, 82},  {112, 94},  {112, 106}, {112, 118}, {98, 126},
                           {105, 129}, {112, 131}, {119, 129}, {126, 126}};
    for (int i = 0; i < 9; ++i) p[27 + i] = nose[i];
    const Point eye[6] = {{66, 88}, {74, 83}, {84, 83}, {92, 88}, {84, 92}, {74, 92}};
    const int mirror_eye[6] = {45, 44, 43, 42, 47, 46};
    for (int i = 0; i < 6; ++i) {
      p[36 + i] = eye[i];
      p[mirror_eye[i]] = {224 - eye[i].x, eye[i].y};
    }
    const Point outer[12] = {{86, 152},  {94, 147},  {104, 144}, {112, 146},
                             {120, 144}, {130, 147}, {138, 152}, {130, 159},
                             {120, 163}, {112, 164}, {104, 163}, {94, 159}};
    for (int i = 0; i < 12; ++i) p[48 + i] = outer[i];
    const Point inner[8] = {{90, 152},  {104, 150}, {112, 151}, {120, 150},
                            {134, 152}, {120, 155}, {112, 156}, {104, 155}};
    for (int i = 0; i < 8; ++i) p[60 + i] = inner[i];
    return p;
  }();
  return pts;
}

struct SubjectLook {
  double eye_spread = 0, brow_lift = 0, mouth_scale = 1, face_scale = 1;
  double skin = 0.7, background = 0.2;
};

struct Pose {
  double tx = 0, ty = 0, scale = 1, angle = 0;
  Point apply(Point q) const {
    const double cx = 112, cy = 112;
    const double c = std::cos(angle) * scale, s = std::sin(angle) * scale;
    const double dx = q.x - cx, dy = q.y - cy;
    return {cx + c * dx - s * dy + tx, cy + s * dx + c * dy + ty};
  }
  Point invert(Point p) const {
    const double cx = 112, cy = 112;
    const double dx = p.x - cx - tx, dy = p.y - cy - ty;
    const double c = std::cos(angle) / scale, s = std::sin(angle) / scale;
    return {cx + c * dx + s * dy, cy - s * dx + c * dy};
  }
};

inline std::array<Point, geometry::kLandmarkCount> subject_face(const SubjectLook& look) {
  auto p = template_face();
  for (int i = 17; i <= 26; ++i) p[i].y -= look.brow_lift;
  for (int i = 36; i <= 47; ++i) p[i].x += (p[i].x < 112 ? -1 : 1) * look.eye_spread;
  for (int i = 48; i <= 67; ++i) p[i].x = 112 + (p[i].x - 112) * look.mouth_scale;
  for (auto& q : p) q = {112 + (q.x - 112) * look.face_scale, 112 + (q.y - 112) * look.face_scale};
  return p;
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

inline double polyline_distance(Point p, std::span<const Point> pts, int first, int last) {
  double d = 1e9;
  for (int i = first; i < last; ++i) d = std::min(d, segment_distance(p, pts[i], pts[i + 1]));
  return d;
}

inline bool inside_polygon(Point p, std::span<const Point> pts, int first, int last) {
  bool in = false;
  for (int i = first, j = last; i <= last; j = i++) {
    const Point a = pts[i], b = pts[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
      in = !in;
  }
  return in;
}

/// Renders the neutral face into a [3,224,224] float image by sampling each
/// output pixel in the subject's (pre-pose) face frame.
inline Tensor<float> render_face(std::span<const Point> face, const SubjectLook& look,
                                 const Pose& pose) {
  const std::size_t n = kImageSize;
  Tensor<float> img({3, n, n});
  const std::array<double, 3> skin = {look.skin, look.skin * 0.8, look.skin * 0.68};
  const std::array<double, 3> lip = {0.62, 0.28, 0.32};
  const Point eye_c[2] = {{(face[36].x + face[39].x) / 2, (face[37].y + face[41].y) / 2},
                          {(face[42].x + face[45].x) / 2, (face[43].y + face[47].y) / 2}};
  const double hx = 86 * look.face_scale, hy = 102 * look.face_scale;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Point q = pose.invert({x + 0.5, y + 0.5});
      std::array<double, 3> c = {look.background, look.background, look.background * 1.1};
      const double ex = (q.x - 112) / hx, ey = (q.y - 105) / hy;
      if (ex * ex + ey * ey <= 1) {
        c = skin;
        if (polyline_distance(q, face, 27, 30) < 1.3 || polyline_distance(q, face, 31, 35) < 1.5)
          for (auto& v : c) v *= 0.78;
        if (polyline_distance(q, face, 17, 21) < 2.6 || polyline_distance(q, face, 22, 26) < 2.6)
          c = {0.18, 0.13, 0.1};
        for (int e = 0; e < 2; ++e) {
          if (inside_polygon(q, face, 36 + 6 * e, 41 + 6 * e)) {
            c = {0.92, 0.92, 0.9};
            if (std::hypot(q.x - eye_c[e].x, q.y - eye_c[e].y) < 3.5) c = {0.1, 0.08, 0.06};
          }
        }
        if (inside_polygon(q, face, 48, 59)) c = lip;
        if (inside_polygon(q, face, 60, 67)) c = {0.25, 0.08, 0.1};
      }
      for (std::size_t ch = 0; ch < 3; ++ch)
        img[(ch * n + y) * n + x] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
    }
  return img;
}

enum class Pattern { Flat, HStripes, VStripes, Checker };

struct AuSignature {
  double sign;
  Pattern pattern;
  Point direction;  // warp direction; x flips outward for right-side centers
};

/// Appearance change per AU, in LabelVector order.
inline const std::array<AuSignature, kNumAUs>& signatures() {
  static const std::array<AuSignature, kNumAUs> s = {{
      {+1, Pattern::Flat, {0, -1}},        // 1
      {+1, Pattern::HStripes, {0, -1}},    // 2
      {-1, Pattern::Flat, {0, 1}},         // 4
      {+1, Pattern::VStripes, {0, -1}},    // 6
      {-1, Pattern::HStripes, {0, 0}},     // 7
      {+1, Pattern::Checker, {0, -1}},     // 10
      {+1, Pattern::Flat, {-0.9, -0.45}},  // 12
      {+1, Pattern::VStripes, {0, 0}},     // 14
      {-1, Pattern::Flat, {0, 1}},         // 15
      {+1, Pattern::HStripes, {0, -1}},    // 17
      {-1, Pattern::VStripes, {0, 0}},     // 23
      {+1, Pattern::Checker, {0, 0}},      // 24
  }};
  return s;
}

inline double pattern_value(Pattern p, double u, double v) {
  const double pi = std::acos(-1.0);
  switch (p) {
    case Pattern::Flat: return 1;
    case Pattern::HStripes: return std::cos(3 * pi * v);
    case Pattern::VStripes: return std::cos(3 * pi * u);
    case Pattern::Checker: return std::cos(2 * pi * u) * std::cos(2 * pi * v);
  }
  return 0;
}

/// Warps and brightens the neighbourhood of every AU center carrying an
/// active AU. Changes stay inside the center's attention box.
inline Tensor<float> apply_au_signals(const Tensor<float>& neutral, const LabelVector& labels,
                                      const geometry::AUCenterSet& centers, double warp,
                                      double strength) {
  const std::size_t n = kImageSize;
  const double to_px = double(n) / double(geometry::kGridSize);
  const double radius = geometry::kBoxRadius * to_px;
  std::vector<double> disp_x(n * n, 0), disp_y(n * n, 0), bright(n * n, 0);
  std::vector<char> touched(n * n, 0);
  for (const auto& c : centers.centers) {
    const double cx = c.position.x * to_px, cy = c.position.y * to_px;
    for (int au : c.au_ids) {
      const std::size_t a = au_index(au);
      if (!labels[a]) continue;
      const auto& sig = signatures()[a];
      const Point dir{c.side == geometry::Side::Right ? -sig.direction.x : sig.direction.x,
                      sig.direction.y};
      const long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
      const long y1 = std::min(long(n) - 1, static_cast<long>(std::ceil(cy + radius)));
      const long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
      const long x1 = std::min(long(n) - 1, static_cast<long>(std::ceil(cx + radius)));
      for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
          const double u = (x + 0.5 - cx) / radius, v = (y + 0.5 - cy) / radius;
          if (std::abs(u) >= 1 || std::abs(v) >= 1) continue;
          const double tent = (1 - std::abs(u)) * (1 - std::abs(v));
          const std::size_t i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
          disp_x[i] += warp * tent * dir.x;
          disp_y[i] += warp * tent * dir.y;
          bright[i] += strength * sig.sign * pattern_value(sig.pattern, u, v) * tent;
          touched[i] = 1;
        }
    }
  }
  Tensor<float> out = neutral;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t i = y * n + x;
      if (!touched[i]) continue;
      const double sx = std::clamp(double(x) - disp_x[i], 0.0, double(n - 1));
      const double sy = std::clamp(double(y) - disp_y[i], 0.0, double(n - 1));
      const std::size_t xl = static_cast<std::size_t>(sx), yl = static_cast<std::size_t>(sy);
      const std::size_t xh = std::min(xl + 1, n - 1), yh = std::min(yl + 1, n - 1);
      const double fx = sx - double(xl), fy = sy - double(yl);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float* p = neutral.raw() + ch * n * n;
        const double top = std::lerp(double(p[yl * n + xl]), double(p[yl * n + xh]), fx);
        const double bot = std::lerp(double(p[yh * n + xl]), double(p[yh * n + xh]), fx);
        const double v = std::lerp(top, bot, fy) + bright[i];
        out[ch * n * n + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

}  // namespace detail

/// One generated sample held in memory.
struct SynthSample {
  Tensor<float> image;  // [3,224,224]
  geometry::LandmarkSet landmarks;
  LabelVector labels{};
  std::string subject;
};

/// Sample `index` of a synthetic set. Pose, subject look and labels come
/// from independent streams, so changing AU probabilities leaves faces and
/// poses untouched.
inline SynthSample synthesize_sample(const SynthSpec& spec, std::size_t index) {
  const std::size_t subject = index % spec.subjects;
  auto look_rng = detail::stream(spec.seed, subject, 1);
  std::uniform_real_distribution<double> u(-1, 1);
  detail::SubjectLook look;
  look.eye_spread = 3 * u(look_rng);
  look.brow_lift = 3 * u(look_rng);
  look.mouth_scale = 1 + 0.08 * u(look_rng);
  look.face_scale = 1 + 0.04 * u(look_rng);
  look.skin = 0.68 + 0.12 * u(look_rng);
  look.background = 0.25 + 0.1 * u(look_rng);

  auto pose_rng = detail::stream(spec.seed, index, 2);
  detail::Pose pose;
  pose.tx = 5 * u(pose_rng);
  pose.ty = 5 * u(pose_rng);
  pose.scale = 1 + 0.04 * u(pose_rng);
  pose.angle = 0.05 * u(pose_rng);

  auto label_rng = detail::stream(spec.seed, index, 3);
  std::uniform_real_distribution<double> unit(0, 1);
  SynthSample s;
  for (std::size_t a = 0; a < kNumAUs; ++a) s.labels[a] = unit(label_rng) < spec.au_probabilities[a];

  const auto face = detail::subject_face(look);
  s.landmarks.width = static_cast<int>(kImageSize);
  s.landmarks.height = static_cast<int>(kImageSize);
  for (std::size_t i = 0; i < geometry::kLandmarkCount; ++i) {
    const auto p = pose.apply(face[i]);
    s.landmarks.points[i] = {std::clamp(p.x, 0.0, kImageSize - 1e-6),
                             std::clamp(p.y, 0.0, kImageSize - 1e-6)};
  }
  const Tensor<float> neutral = detail::render_face(face, look, pose);
  const auto centers = geometry::au_centers(s.landmarks);
  s.image = detail::apply_au_signals(neutral, s.labels, centers, spec.deformation_magnitude,
                                     spec.signal_strength);
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%03zu", subject);
  s.subject = buf;
  return s;
}

/// Writes images/NNNNNN.ppm, landmarks/NNNNNN.json and manifest.csv under
/// `out_dir` and returns the records.
inline std::vector<SampleRecord> generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "landmarks", ec);
  if (ec || !fs::is_directory(out_dir / "images"))
    throw IoError("cannot create output directory '" + out_dir.string() + "'");
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < spec.count; ++i) {
    SynthSample s = synthesize_sample(spec, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    SampleRecord r;
    r.image_path = out_dir / "images" / (std::string(stem) + ".ppm");
    r.landmarks_path = out_dir / "landmarks" / (std::string(stem) + ".json");
    r.subject_id = s.subject;
    r.labels = s.labels;
    s.landmarks.image = "images/" + std::string(stem) + ".ppm";
    save_ppm(s.image, r.image_path);
    geometry::save_landmarks(s.landmarks, r.landmarks_path);
    records.push_back(std::move(r));
  }
  io::write_file_atomic(out_dir / "manifest.csv", encode_manifest(records, out_dir));
  return records;
}

}  // namespace eacnet::data
