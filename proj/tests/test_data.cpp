#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "eacnet/data.hpp"
#include "test_support.hpp"

using namespace eacnet;
using namespace eacnet::data;
namespace fs = std::filesystem;

namespace {

std::string pnm(const std::string& magic, std::size_t w, std::size_t h, const std::vector<std::uint8_t>& px) {
  return magic + "\n# made by hand\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n" +
         std::string(px.begin(), px.end());
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

/// Writes one image and landmark pair and returns a manifest header.
std::string prepare_files(const fs::path& dir) {
  write(dir / "a.ppm", pnm("P6", 2, 2, std::vector<std::uint8_t>(12, 9)));
  write(dir / "b.pgm", pnm("P5", 2, 2, std::vector<std::uint8_t>(4, 9)));
  geometry::save_landmarks(synthesize_sample(fixtures::synth_spec(1, 0), 0).landmarks, dir / "a.json");
  std::string header;
  for (const auto& c : manifest_columns()) header += (header.empty() ? "" : ",") + c;
  return header + "\n";
}

std::string row(const std::string& image, const std::string& label1 = "0") {
  return image + ",S1," + label1 + ",0,0,0,0,0,1,0,0,0,0,0,a.json\n";
}

}  // namespace

TEST(Pnm, AllWhitePpmIsOnes) {
  const auto t = image_to_tensor<double>(decode_pnm(pnm("P6", 224, 224, std::vector<std::uint8_t>(3 * 224 * 224, 255))));
  EXPECT_EQ(t.shape(), (Shape{3, 224, 224}));
  for (double v : t.data()) EXPECT_EQ(v, 1.0);
}

TEST(Pnm, GrayscaleReplicatesChannels) {
  std::vector<std::uint8_t> px(224 * 224);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::uint8_t(i * 7);
  const auto t = image_to_tensor<float>(decode_pnm(pnm("P5", 224, 224, px)));
  for (std::size_t i = 0; i < px.size(); ++i) {
    EXPECT_EQ(t[i], float(px[i]) / 255.0f);
    EXPECT_EQ(t[i + px.size()], t[i]);
    EXPECT_EQ(t[i + 2 * px.size()], t[i]);
  }
}

TEST(Pnm, ResizeKeepsCorners) {
  std::vector<std::uint8_t> px(100 * 100 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::uint8_t((i * 31) % 256);
  const auto img = decode_pnm(pnm("P6", 100, 100, px));
  const auto t = image_to_tensor<double>(img);
  const auto at = [&](std::size_t c, std::size_t y, std::size_t x) { return px[(y * 100 + x) * 3 + c] / 255.0; };
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(t.at(c, 0, 0), at(c, 0, 0));
    EXPECT_DOUBLE_EQ(t.at(c, 0, 223), at(c, 0, 99));
    EXPECT_DOUBLE_EQ(t.at(c, 223, 0), at(c, 99, 0));
    EXPECT_DOUBLE_EQ(t.at(c, 223, 223), at(c, 99, 99));
  }
}

TEST(Pnm, MalformedInputs) {
  EXPECT_THROW(decode_pnm("P3\n1 1\n255\n0 0 0"), ParseError);
  EXPECT_THROW(decode_pnm("P6\n1\n"), ParseError);
  EXPECT_THROW(decode_pnm("P6\n1 1\n65535\n\0\0\0\0\0\0"), ParseError);
  EXPECT_THROW(decode_pnm("P6\n0 1\n255\n"), ParseError);
  EXPECT_THROW(decode_pnm(pnm("P6", 2, 2, std::vector<std::uint8_t>(11))), ParseError);
  const auto dir = fixtures::scratch_dir("pnm");
  write(dir / "bad.ppm", "P6\n2 2\n255\nabc");
  try {
    load_image<float>(dir / "bad.ppm");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.ppm"), std::string::npos);
  }
}

TEST(Pnm, WriteReadRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t({3, 224, 224});
  for (auto& v : t.data()) v = u(rng);
  const auto dir = fixtures::scratch_dir("roundtrip");
  save_ppm(t, dir / "x.ppm");
  const auto back = load_image<double>(dir / "x.ppm");
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(back[i] - t[i]), 1.0 / 255.0);
}

TEST(Manifest, TwoValidRows) {
  const auto dir = fixtures::scratch_dir("manifest_ok");
  const std::string header = prepare_files(dir);
  write(dir / "m.csv", header + row("a.ppm", "1") + row("b.pgm"));
  const auto m = load_manifest(dir / "m.csv");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_TRUE(m.warnings.empty());
  EXPECT_EQ(m.records[0].labels[0], 1);
  EXPECT_EQ(m.records[0].labels[6], 1);
  EXPECT_EQ(m.records[1].image_path, dir / "b.pgm");
  const auto samples = load_samples<float>(m.records);
  EXPECT_EQ(samples[1].subject, "S1");
  EXPECT_EQ(samples[1].geometry.centers.centers.size(), 20u);
}

TEST(Manifest, ErrorsNameRowAndColumn) {
  const auto dir = fixtures::scratch_dir("manifest_bad");
  const std::string header = prepare_files(dir);
  const auto message = [&](const std::string& body) -> std::string {
    write(dir / "m.csv", body);
    try {
      load_manifest(dir / "m.csv");
    } catch (const Error& e) {
      return e.what();
    }
    return "accepted";
  };
  std::string msg = message(header + row("a.ppm") + row("b.pgm", "2"));
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("au1"), std::string::npos) << msg;
  msg = message(header + row("missing.ppm"));
  EXPECT_NE(msg.find("line 2, column 'image'"), std::string::npos) << msg;
  msg = message(header + row("a.ppm") + row("a.ppm"));
  EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
  msg = message("image,subject\n");
  EXPECT_NE(msg.find("missing column 'au1'"), std::string::npos) << msg;
  msg = message(header + "a.ppm,S1,0\n");
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Manifest, EmptyFileWarns) {
  const auto dir = fixtures::scratch_dir("manifest_empty");
  write(dir / "m.csv", "");
  const auto m = load_manifest(dir / "m.csv");
  EXPECT_TRUE(m.records.empty());
  EXPECT_EQ(m.warnings.size(), 1u);
  EXPECT_THROW(load_manifest(dir / "nope.csv"), IoError);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  const auto a = fixtures::scratch_dir("synth_a"), b = fixtures::scratch_dir("synth_b");
  auto spec = fixtures::synth_spec(5, 42);
  const auto ra = generate_synthetic(spec, a);
  generate_synthetic(spec, b);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  for (const auto& r : ra) {
    const auto rel = r.image_path.lexically_relative(a);
    EXPECT_EQ(slurp(r.image_path), slurp(b / rel));
    EXPECT_EQ(slurp(r.landmarks_path), slurp(b / r.landmarks_path.lexically_relative(a)));
  }
  const auto loaded = load_manifest(a / "manifest.csv");
  ASSERT_EQ(loaded.records.size(), 5u);
  EXPECT_EQ(loaded.records[3].labels, ra[3].labels);
  for (const auto& r : loaded.records) EXPECT_NO_THROW(geometry::load_landmarks(r.landmarks_path));
}

TEST(Synth, ZeroProbabilitiesGiveNeutralFaces) {
  const auto spec = fixtures::synth_spec(4, 1, 0.0);
  auto with_signal = spec;
  with_signal.signal_strength = 0.9;
  with_signal.deformation_magnitude = 4;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto a = synthesize_sample(spec, i);
    const auto b = synthesize_sample(with_signal, i);
    EXPECT_EQ(a.labels, LabelVector{});
    EXPECT_EQ(a.image, b.image);  // nothing active, so signal settings are irrelevant
  }
}

TEST(Synth, Au12ChangesOnlyLipCornerBoxes) {
  auto neutral = fixtures::synth_spec(3, 8, 0.0);
  auto active = neutral;
  active.au_probabilities[au_index(12)] = 1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto n = synthesize_sample(neutral, i);
    const auto a = synthesize_sample(active, i);
    ASSERT_EQ(a.landmarks.points, n.landmarks.points);
    const auto centers = geometry::au_centers(a.landmarks);
    std::size_t changed = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 224; ++y)
        for (std::size_t x = 0; x < 224; ++x) {
          if (a.image.at(c, y, x) == n.image.at(c, y, x)) continue;
          ++changed;
          const double gx = (x + 0.5) * 100.0 / 224.0, gy = (y + 0.5) * 100.0 / 224.0;
          bool inside = false;
          for (const auto& ctr : centers.centers)
            if (ctr.au_ids.front() == 12)
              inside |= std::abs(gx - ctr.position.x) <= 5 && std::abs(gy - ctr.position.y) <= 5;
          EXPECT_TRUE(inside) << x << "," << y;
        }
    EXPECT_GT(changed, 100u);
  }
}

TEST(Synth, SignalsFallInsideAttentionSupport) {
  auto neutral = fixtures::synth_spec(4, 9, 0.0);
  for (std::size_t a = 0; a < kNumAUs; ++a) {
    auto one = neutral;
    one.au_probabilities[a] = 1.0;
    const auto n = synthesize_sample(neutral, a % 4);
    const auto s = synthesize_sample(one, a % 4);
    const auto att = geometry::sample_geometry(s.landmarks).attention;
    std::size_t changed = 0;
    for (std::size_t y = 0; y < 224; ++y)
      for (std::size_t x = 0; x < 224; ++x) {
        if (s.image.at(0, y, x) == n.image.at(0, y, x)) continue;
        ++changed;
        const auto gy = std::size_t(std::lround((y + 0.5) * 100.0 / 224.0));
        const auto gx = std::size_t(std::lround((x + 0.5) * 100.0 / 224.0));
        EXPECT_GT(att.at(std::min<std::size_t>(gy, 99), std::min<std::size_t>(gx, 99)), 0.0);
      }
    EXPECT_GT(changed, 0u) << "AU index " << a;
  }
}

TEST(Synth, LabelMarginalsWithinThreeSigma) {
  data::SynthSpec spec = fixtures::synth_spec(1000, 11);
  for (std::size_t a = 0; a < kNumAUs; ++a) spec.au_probabilities[a] = 0.05 + 0.08 * double(a);
  std::array<double, kNumAUs> hits{};
  for (std::size_t i = 0; i < spec.count; ++i) {
    // labels come from their own stream; render cost is irrelevant here
    auto rng = data::detail::stream(spec.seed, i, 3);
    std::uniform_real_distribution<double> unit(0, 1);
    for (std::size_t a = 0; a < kNumAUs; ++a) hits[a] += unit(rng) < spec.au_probabilities[a];
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const auto s = synthesize_sample(spec, i * 97);
    auto rng = data::detail::stream(spec.seed, i * 97, 3);
    std::uniform_real_distribution<double> unit(0, 1);
    for (std::size_t a = 0; a < kNumAUs; ++a) EXPECT_EQ(s.labels[a], unit(rng) < spec.au_probabilities[a]);
  }
  for (std::size_t a = 0; a < kNumAUs; ++a) {
    const double p = spec.au_probabilities[a];
    EXPECT_NEAR(hits[a] / 1000.0, p, 3 * std::sqrt(p * (1 - p) / 1000.0)) << a;
  }
}

TEST(Synth, SubjectsAndLandmarksValid) {
  auto spec = fixtures::synth_spec(30, 2);
  std::set<std::string> subjects;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto s = synthesize_sample(spec, i);
    EXPECT_NO_THROW(s.landmarks.validate());
    subjects.insert(s.subject);
  }
  EXPECT_EQ(subjects.size(), 27u);
  EXPECT_TRUE(subjects.count("S000"));
}

TEST(SynthSpec, JsonAndValidation) {
  const auto s = SynthSpec::from_json(nlohmann::json::parse(R"({"count": 7, "seed": 3, "subjects": 5})"));
  EXPECT_EQ(s.count, 7u);
  EXPECT_EQ(s.subjects, 5u);
  EXPECT_THROW(SynthSpec::from_json(nlohmann::json::parse(R"({"count": 0})")), ValidationError);
  EXPECT_THROW(SynthSpec::from_json(nlohmann::json::parse(R"({"au_probabilities": [0.5]})")), ValidationError);
  EXPECT_THROW(SynthSpec::from_json(nlohmann::json::parse(R"({"count": "x"})")), ParseError);
  auto bad = s;
  bad.au_probabilities[2] = 1.5;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(ReferencePopulation, MatchesOccurrenceRates) {
  const auto labels = reference_label_population(50000, 1);
  std::array<double, kNumAUs> rate{};
  for (const auto& l : labels)
    for (std::size_t a = 0; a < kNumAUs; ++a) rate[a] += l[a];
  for (std::size_t a = 0; a < kNumAUs; ++a)
    EXPECT_NEAR(rate[a] / 50000.0, reference::kOccurrence[a], 0.01) << geometry::kActionUnits[a];
}
