#pragma once

// FVGG / E-Net / EAC-Net assembled from the tensor and layer primitives at a
// configurable channel-width scale. Forward passes return an explicit trace
// that the matching backward pass consumes, so a Model itself is never
// mutated by inference.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eacnet/error.hpp"
#include "eacnet/geometry.hpp"
#include "eacnet/io.hpp"
#include "eacnet/layers.hpp"
#include "eacnet/tensor.hpp"

namespace eacnet::model {

using geometry::SampleGeometry;

enum class Variant { FVGG, ENET, EAC };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::FVGG: return "fvgg";
    case Variant::ENET: return "enet";
    case Variant::EAC: return "eac";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "fvgg") return Variant::FVGG;
  if (s == "enet") return Variant::ENET;
  if (s == "eac") return Variant::EAC;
  throw ValidationError("unknown variant '" + std::string(s) + "' (expected fvgg, enet or eac)");
}

enum class Mode { Train, Eval };

inline constexpr std::array<std::size_t, 5> kGroupConvCount = {2, 2, 4, 4, 4};
inline constexpr std::array<std::size_t, 5> kBaseChannels = {64, 128, 256, 512, 512};
inline constexpr std::size_t kBaseFcWidth = 2048;
inline constexpr std::size_t kBaseRegionWidth = 150;
inline constexpr std::size_t kInputSize = 224;
inline constexpr std::size_t kNumOutputs = 12;

struct NetworkSpec {
  Variant variant = Variant::FVGG;
  double width_scale = 1.0;
  std::size_t input_size = kInputSize;
  std::size_t num_outputs = kNumOutputs;
  std::set<int> freeze_groups;
  double dropout_rate = 0.5;

  /// Freezing follows the original training recipe: the first three groups
  /// for FVGG, the first two for the attention-bearing variants.
  static NetworkSpec defaults(Variant v, double scale = 1.0) {
    NetworkSpec s;
    s.variant = v;
    s.width_scale = scale;
    s.freeze_groups = v == Variant::FVGG ? std::set<int>{1, 2, 3} : std::set<int>{1, 2};
    return s;
  }

  void validate() const {
    std::vector<std::string> bad;
    if (!(width_scale > 0 && width_scale <= 1))
      bad.push_back("width_scale=" + std::to_string(width_scale) + " (must be in (0,1])");
    if (input_size != kInputSize)
      bad.push_back("input_size=" + std::to_string(input_size) + " (must be 224)");
    if (num_outputs != kNumOutputs)
      bad.push_back("num_outputs=" + std::to_string(num_outputs) + " (must be 12)");
    for (int g : freeze_groups)
      if (g < 1 || g > 5) bad.push_back("freeze_groups contains " + std::to_string(g));
    if (!(dropout_rate >= 0 && dropout_rate < 1))
      bad.push_back("dropout_rate=" + std::to_string(dropout_rate) + " (must be in [0,1))");
    if (!bad.empty()) {
      std::string msg = "invalid network spec:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ValidationError(msg);
    }
  }

  std::size_t channels(int group) const {
    const double c = std::round(width_scale * static_cast<double>(kBaseChannels.at(group - 1)));
    return std::max<std::size_t>(1, static_cast<std::size_t>(c));
  }
  std::size_t fc_width() const {
    return std::max<std::size_t>(
        8, static_cast<std::size_t>(std::round(width_scale * static_cast<double>(kBaseFcWidth))));
  }
  std::size_t region_width() const {
    return std::max<std::size_t>(8, static_cast<std::size_t>(std::round(
                                        width_scale * static_cast<double>(kBaseRegionWidth))));
  }
  bool has_attention() const { return variant != Variant::FVGG; }
  bool has_regions() const { return variant == Variant::EAC; }
  /// Conv groups present: EAC replaces group 5 with the cropping path.
  int group_count() const { return variant == Variant::EAC ? 4 : 5; }
  bool is_enhanced(int group) const { return has_attention() && (group == 3 || group == 4); }
  bool pools_after(int group) const { return !(variant == Variant::EAC && group == 4); }
  bool is_frozen(int group) const { return freeze_groups.count(group) > 0; }
  /// Stage numbering: 1..group_count() are conv groups, the next is the head.
  int head_stage() const { return group_count() + 1; }
  std::size_t resolution(int group) const { return input_size >> (group - 1); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Closed-form parameter count for a spec; the constructed model must agree.
inline std::size_t expected_parameter_count(const NetworkSpec& s) {
  std::size_t total = 0;
  std::size_t cin = 3;
  for (int g = 1; g <= s.group_count(); ++g) {
    const std::size_t c = s.channels(g);
    total += cin * c * 9 + c;                  // first conv of the group
    total += (kGroupConvCount[g - 1] - 1) * (c * c * 9 + c);
    if (s.is_enhanced(g)) total += cin * c;    // 1x1 projection, no bias
    cin = c;
  }
  std::size_t fc_in = 0;
  if (s.has_regions()) {
    const std::size_t c = s.channels(4), w = s.region_width();
    total += layers::kRegionCount * (c * c * 9 + c + c * 16 * w + w);
    fc_in = layers::kRegionCount * w;
  } else {
    fc_in = s.channels(5) * 7 * 7;
  }
  total += fc_in * s.fc_width() + s.fc_width();
  total += s.fc_width() * s.num_outputs + s.num_outputs;
  return total;
}

template <typename T>
struct Parameter {
  std::string name;
  int group = 0;  // conv group 1..5, or 0 for head layers (never frozen)
  Tensor<T> value;
  double fan_in = 1;
  bool is_bias = false;
};

/// Intermediate values of one conv group.
template <typename T>
struct GroupTrace {
  int group = 0;
  std::vector<Tensor<T>> activations;  // group input, then each conv's relu output
  Tensor<T> attention;                 // [N,1,H,W] when enhanced
  Tensor<T> output;                    // after enhancement, before pooling
  Shape pool_input_shape;
  std::vector<std::size_t> pool_argmax;
};

template <typename T>
struct Trace {
  int start_stage = 1;
  std::vector<GroupTrace<T>> groups;
  // EAC cropping path
  Tensor<T> lrn_input;
  std::vector<geometry::AUCenterSet> centers;
  std::vector<layers::RegionHeadTrace<T>> regions;
  // shared head
  Tensor<T> fc1_input;
  Tensor<T> fc1_pre;
  Tensor<T> dropout_mask;  // empty in eval mode
  Tensor<T> fc1_dropped;
  Tensor<T> logits;
};

template <typename T>
struct ForwardResult {
  Tensor<T> probs;     // [N,12]
  Tensor<T> features;  // [N,fc_width], penultimate layer after relu
  Trace<T> trace;

  /// Group output ("group1".."group5"), after enhancement and before pooling.
  const Tensor<T>& tap(std::string_view name) const {
    for (const auto& g : trace.groups)
      if (name == "group" + std::to_string(g.group)) return g.output;
    throw ValidationError("feature tap '" + std::string(name) + "' not available");
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct ConvRef {
  std::size_t weight, bias;
};

struct GroupLayout {
  int group = 0;
  std::vector<ConvRef> convs;
  std::optional<std::size_t> projection;
};

struct RegionRef {
  std::size_t conv_weight, conv_bias, fc_weight, fc_bias;
};

struct Layout {
  std::vector<GroupLayout> groups;
  std::vector<RegionRef> regions;
  std::size_t fc1_weight = 0, fc1_bias = 0, fc2_weight = 0, fc2_bias = 0;
};

}  // namespace detail

template <typename T>
class Model {
 public:
  /// Builds the network with He-uniform weights and zero biases. Each
  /// parameter draws from its own stream keyed by (seed, name), so layers
  /// shared between variants start identical for the same seed.
  static Model build(const NetworkSpec& spec, std::uint64_t seed) {
    Model m = skeleton(spec);
    for (auto& p : m.params_) {
      if (p.is_bias) continue;
      const std::uint64_t h = detail::fnv1a(p.name);
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
      std::mt19937_64 rng(seq);
      const double bound = std::sqrt(6.0 / p.fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : p.value.data()) v = static_cast<T>(dist(rng));
    }
    return m;
  }

  /// Same layout as build() with every parameter zero.
  static Model skeleton(const NetworkSpec& spec) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    std::size_t cin = 3;
    for (int g = 1; g <= spec.group_count(); ++g) {
      const std::size_t c = spec.channels(g);
      detail::GroupLayout gl;
      gl.group = g;
      std::size_t in = cin;
      for (std::size_t j = 1; j <= kGroupConvCount[g - 1]; ++j) {
        const std::string base = "g" + std::to_string(g) + ".conv" + std::to_string(j);
        const std::size_t w = m.add(base + ".weight", g, {c, in, 3, 3}, double(in * 9), false);
        const std::size_t b = m.add(base + ".bias", g, {c}, 1, true);
        gl.convs.push_back({w, b});
        in = c;
      }
      if (spec.is_enhanced(g))
        gl.projection = m.add("g" + std::to_string(g) + ".enhance.projection", g, {c, cin, 1, 1},
                              double(cin), false);
      m.layout_.groups.push_back(std::move(gl));
      cin = c;
    }
    std::size_t fc_in = 0;
    if (spec.has_regions()) {
      const std::size_t c = spec.channels(4), w = spec.region_width();
      for (std::size_t r = 0; r < layers::kRegionCount; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "region%02zu", r);
        const std::string base = buf;
        detail::RegionRef rr{};
        rr.conv_weight = m.add(base + ".conv.weight", 0, {c, c, 3, 3}, double(c * 9), false);
        rr.conv_bias = m.add(base + ".conv.bias", 0, {c}, 1, true);
        rr.fc_weight = m.add(base + ".fc.weight", 0, {c * 16, w}, double(c * 16), false);
        rr.fc_bias = m.add(base + ".fc.bias", 0, {w}, 1, true);
        m.layout_.regions.push_back(rr);
      }
      fc_in = layers::kRegionCount * w;
    } else {
      fc_in = spec.channels(5) * 7 * 7;
    }
    m.layout_.fc1_weight = m.add("fc1.weight", 0, {fc_in, spec.fc_width()}, double(fc_in), false);
    m.layout_.fc1_bias = m.add("fc1.bias", 0, {spec.fc_width()}, 1, true);
    m.layout_.fc2_weight = m.add("fc2.weight", 0, {spec.fc_width(), spec.num_outputs},
                                 double(spec.fc_width()), false);
    m.layout_.fc2_bias = m.add("fc2.bias", 0, {spec.num_outputs}, 1, true);
    return m;
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  bool is_trainable(const Parameter<T>& p) const {
    return p.group == 0 || !spec_.is_frozen(p.group);
  }

  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Runs the network from `start_stage`; `input` is the activation entering
  /// that stage (the images [N,3,224,224] for stage 1). `geometry` holds one
  /// entry per sample and is required by the attention-bearing variants.
  ForwardResult<T> forward(const Tensor<T>& input, std::span<const SampleGeometry> geometry,
                           Mode mode, std::mt19937_64* rng = nullptr, int start_stage = 1) const {
    check_geometry(input, geometry);
    if (start_stage < 1 || start_stage > spec_.head_stage())
      throw ValidationError("forward: start stage out of range");
    ForwardResult<T> r;
    r.trace.start_stage = start_stage;
    Tensor<T> x = start_stage == 1 ? check_images(input) : input;
    for (int g = start_stage; g <= spec_.group_count(); ++g) {
      GroupTrace<T> gt;
      x = run_group(g, std::move(x), geometry, &gt);
      r.trace.groups.push_back(std::move(gt));
    }
    run_head(x, geometry, mode, rng, r);
    return r;
  }

  /// Images and landmark-derived geometry for the variants that need them.
  ForwardResult<T> forward(const Tensor<T>& images, std::span<const geometry::LandmarkSet> lm,
                           Mode mode, std::mt19937_64* rng = nullptr) const {
    std::vector<SampleGeometry> geo;
    if (spec_.has_attention()) {
      if (lm.size() != images.dim(0))
        throw ValidationError("forward: " + std::string(variant_name(spec_.variant)) +
                              " needs landmarks for every sample");
      for (const auto& l : lm) geo.push_back(geometry::sample_geometry(l));
    }
    return forward(images, geo, mode, rng);
  }

  /// Activation entering `stage`, computed in eval mode without a trace.
  Tensor<T> stage_input(const Tensor<T>& images, std::span<const SampleGeometry> geometry,
                        int stage) const {
    check_geometry(images, geometry);
    if (stage < 1 || stage > spec_.head_stage())
      throw ValidationError("stage_input: stage out of range");
    Tensor<T> x = check_images(images);
    for (int g = 1; g < stage; ++g) x = run_group(g, std::move(x), geometry, nullptr);
    return x;
  }

  /// Penultimate-layer activations (after relu), eval mode.
  Tensor<T> extract_features(const Tensor<T>& images,
                             std::span<const SampleGeometry> geometry) const {
    return forward(images, geometry, Mode::Eval).features;
  }

  /// Gradients of a scalar objective with respect to every trainable
  /// parameter reached by the trace (empty tensors elsewhere), given the
  /// objective's gradient with respect to the output probabilities.
  std::vector<Tensor<T>> backward(const ForwardResult<T>& f, const Tensor<T>& d_probs) const {
    const Trace<T>& tr = f.trace;
    std::vector<Tensor<T>> grads(params_.size());
    const auto& L = layout_;

    const Tensor<T> d_logits = sigmoid_backward(tr.logits, d_probs);
    auto fc2 = layers::dense_backward(f.features, value(L.fc2_weight), d_logits);
    grads[L.fc2_weight] = std::move(fc2.weight);
    grads[L.fc2_bias] = std::move(fc2.bias);
    Tensor<T> d = relu_backward(tr.fc1_dropped, fc2.input);
    if (!tr.dropout_mask.empty()) d = mul(d, tr.dropout_mask);
    const int lowest = lowest_trainable_stage(tr.start_stage);
    const bool need_fc1_input = lowest < spec_.head_stage();
    auto fc1 = layers::dense_backward(tr.fc1_input, value(L.fc1_weight), d, {true, true});
    grads[L.fc1_weight] = std::move(fc1.weight);
    grads[L.fc1_bias] = std::move(fc1.bias);

    Tensor<T> d_stage;  // gradient of the tensor entering the head
    if (spec_.has_regions()) {
      const std::size_t w = spec_.region_width();
      auto d_regions = layers::concat_regions_backward(fc1.input, w);
      std::vector<Tensor<T>> d_crops(layers::kRegionCount);
      const GradRequest req{need_fc1_input, true};
      std::vector<layers::RegionHeadGrads<T>> rg(layers::kRegionCount);
      parallel_for(layers::kRegionCount, [&](std::size_t r) {
        rg[r] = layers::region_head_backward(tr.regions[r], region_params(r), d_regions[r], req);
      });
      for (std::size_t r = 0; r < layers::kRegionCount; ++r) {
        const auto& ref = L.regions[r];
        grads[ref.conv_weight] = std::move(rg[r].conv_kernel);
        grads[ref.conv_bias] = std::move(rg[r].conv_bias);
        grads[ref.fc_weight] = std::move(rg[r].fc_weight);
        grads[ref.fc_bias] = std::move(rg[r].fc_bias);
        d_crops[r] = std::move(rg[r].crop);
      }
      if (need_fc1_input) {
        const Tensor<T> d_lrn_out =
            layers::crop_backward<T>(tr.lrn_input.shape(), tr.centers, d_crops);
        d_stage = layers::lrn_backward(tr.lrn_input, layers::LrnParams{}, d_lrn_out);
      }
    } else if (need_fc1_input) {
      const Tensor<T>& pooled_shape_src = tr.groups.back().output;
      const Shape& ps = pooled_shape_src.shape();
      d_stage = fc1.input.reshaped({ps[0], ps[1], ps[2] / 2, ps[3] / 2});
    }

    for (int g = spec_.group_count(); g >= lowest && g >= tr.start_stage; --g) {
      const GroupTrace<T>& gt = tr.groups[static_cast<std::size_t>(g - tr.start_stage)];
      const auto& gl = L.groups[static_cast<std::size_t>(g - 1)];
      const bool trainable = !spec_.is_frozen(g);
      const bool need_input = g > lowest;
      Tensor<T> d_out = spec_.pools_after(g)
                            ? maxpool2_backward<T>(gt.pool_input_shape, gt.pool_argmax, d_stage)
                            : std::move(d_stage);
      Tensor<T> d_skip;
      if (gl.projection) {
        auto eg = layers::enhance_backward(gt.activations.front(), gt.attention,
                                           layers::EnhanceParams<T>{value(*gl.projection)}, d_out,
                                           {need_input, trainable});
        if (trainable) grads[*gl.projection] = std::move(eg.projection_kernel);
        d_skip = std::move(eg.input);
      }
      Tensor<T> dx = std::move(d_out);
      for (std::size_t j = gl.convs.size(); j-- > 0;) {
        const Tensor<T> d_pre = relu_backward(gt.activations[j + 1], dx);
        const bool want_input = j > 0 || need_input;
        auto cg = conv2d_backward(gt.activations[j], value(gl.convs[j].weight), true, same_pad(),
                                  d_pre, {want_input, trainable});
        if (trainable) {
          grads[gl.convs[j].weight] = std::move(cg.kernel);
          grads[gl.convs[j].bias] = std::move(cg.bias);
        }
        dx = std::move(cg.input);
      }
      if (!need_input) break;
      d_stage = d_skip.empty() ? std::move(dx) : eacnet::add(dx, d_skip);
    }
    return grads;
  }

  /// Name of the first traced layer holding a non-finite value, if any.
  std::optional<std::string> first_non_finite(const ForwardResult<T>& f) const {
    for (const auto& g : f.trace.groups) {
      for (std::size_t j = 1; j < g.activations.size(); ++j)
        if (!g.activations[j].all_finite())
          return "g" + std::to_string(g.group) + ".conv" + std::to_string(j);
      if (!g.output.all_finite()) return "g" + std::to_string(g.group) + ".enhance";
    }
    for (std::size_t r = 0; r < f.trace.regions.size(); ++r)
      if (!f.trace.regions[r].output.all_finite()) return "region" + std::to_string(r);
    if (!f.trace.fc1_pre.empty() && !f.trace.fc1_pre.all_finite()) return "fc1";
    if (!f.trace.logits.empty() && !f.trace.logits.all_finite()) return "fc2";
    return std::nullopt;
  }

 private:
  Model() = default;

  std::size_t add(std::string name, int group, Shape shape, double fan_in, bool is_bias) {
    params_.push_back({std::move(name), group, Tensor<T>(std::move(shape)), fan_in, is_bias});
    return params_.size() - 1;
  }

  const Tensor<T>& value(std::size_t i) const { return params_[i].value; }

  static Conv2dConfig same_pad() { return {1, 1}; }

  layers::RegionHeadParams<T> region_params(std::size_t r) const {
    const auto& ref = layout_.regions[r];
    return {value(ref.conv_weight), value(ref.conv_bias), value(ref.fc_weight),
            value(ref.fc_bias)};
  }

  Tensor<T> check_images(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != spec_.input_size ||
        images.dim(3) != spec_.input_size)
      throw ShapeError("model input must be [N,3,224,224], got " + shape_string(images.shape()));
    return images;
  }

  void check_geometry(const Tensor<T>& input, std::span<const SampleGeometry> geometry) const {
    if (spec_.has_attention() && geometry.size() != input.dim(0))
      throw ValidationError("forward: " + std::string(variant_name(spec_.variant)) +
                            " needs landmarks for every sample (" +
                            std::to_string(geometry.size()) + " given for " +
                            std::to_string(input.dim(0)) + ")");
  }

  /// Lowest stage whose parameters receive gradients, bounded by the stage
  /// the trace starts at.
  int lowest_trainable_stage(int start_stage) const {
    for (int g = std::max(1, start_stage); g <= spec_.group_count(); ++g)
      if (!spec_.is_frozen(g)) return g;
    return spec_.head_stage();
  }

  Tensor<T> run_group(int g, Tensor<T> x, std::span<const SampleGeometry> geometry,
                      GroupTrace<T>* trace) const {
    const auto& gl = layout_.groups[static_cast<std::size_t>(g - 1)];
    const Tensor<T> group_input = x;
    if (trace) {
      trace->group = g;
      trace->activations.push_back(x);
    }
    for (const auto& conv : gl.convs) {
      x = relu(conv2d(x, value(conv.weight), value(conv.bias), same_pad()));
      if (trace) trace->activations.push_back(x);
    }
    if (gl.projection) {
      std::vector<geometry::AttentionMap> maps;
      maps.reserve(geometry.size());
      for (const auto& s : geometry) maps.push_back(s.attention);
      Tensor<T> att = layers::resized_attention<T>(maps, group_input.dim(2), group_input.dim(3));
      x = layers::enhance_forward(group_input, x, att,
                                  layers::EnhanceParams<T>{value(*gl.projection)});
      if (trace) trace->attention = std::move(att);
    }
    if (trace) trace->output = x;
    if (!spec_.pools_after(g)) return x;
    auto pooled = maxpool2(x);
    if (trace) {
      trace->pool_input_shape = x.shape();
      trace->pool_argmax = std::move(pooled.argmax);
    }
    return std::move(pooled.output);
  }

  void run_head(const Tensor<T>& x, std::span<const SampleGeometry> geometry, Mode mode,
                std::mt19937_64* rng, ForwardResult<T>& r) const {
    Trace<T>& tr = r.trace;
    const std::size_t n = x.dim(0);
    if (spec_.has_regions()) {
      tr.lrn_input = x;
      const Tensor<T> normalized = layers::lrn(x, layers::LrnParams{});
      for (const auto& s : geometry) tr.centers.push_back(s.centers);
      const auto crops = layers::crop_forward(normalized, std::span(tr.centers));
      tr.regions.resize(layers::kRegionCount);
      parallel_for(layers::kRegionCount, [&](std::size_t k) {
        tr.regions[k] = layers::region_head_forward(crops[k], region_params(k));
      });
      std::vector<Tensor<T>> outs;
      outs.reserve(layers::kRegionCount);
      for (const auto& reg : tr.regions) outs.push_back(reg.output);
      tr.fc1_input = layers::concat_regions<T>(outs);
    } else {
      tr.fc1_input = x.reshaped({n, x.size() / n});
    }
    const auto& L = layout_;
    tr.fc1_pre = layers::dense_forward(tr.fc1_input, value(L.fc1_weight), value(L.fc1_bias));
    tr.fc1_dropped = tr.fc1_pre;
    if (mode == Mode::Train && spec_.dropout_rate > 0) {
      if (!rng) throw ValidationError("train-mode forward needs an RNG for dropout");
      tr.dropout_mask = layers::dropout_mask<T>(tr.fc1_pre.shape(), spec_.dropout_rate, *rng);
      tr.fc1_dropped = mul(tr.fc1_pre, tr.dropout_mask);
    }
    r.features = relu(tr.fc1_dropped);
    tr.logits = layers::dense_forward(r.features, value(L.fc2_weight), value(L.fc2_bias));
    r.probs = sigmoid(tr.logits);
  }

  NetworkSpec spec_;
  std::vector<Parameter<T>> params_;
  detail::Layout layout_;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "EACN" | u32 version | u32 variant | f64 width_scale | u32 input_size |
//   u32 num_outputs | u32 freeze mask (bit g-1 = group g) | f64 dropout |
//   u32 parameter count | per parameter: u32 name length, name bytes,
//   u32 rank, u32 extents[rank], f32 values[]

inline constexpr std::string_view kCheckpointMagic = "EACN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { BadMagic, UnsupportedVersion, Truncated, ShapeMismatch, InvalidSpec };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {
struct CheckpointTruncated : CheckpointError {
  explicit CheckpointTruncated(const std::string& what)
      : CheckpointError(Kind::Truncated, "checkpoint truncated: " + what) {}
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointContents {
  NetworkSpec spec;
  std::vector<NamedTensor> tensors;
};

inline CheckpointContents decode_checkpoint(std::string_view bytes) {
  io::ByteReader<CheckpointTruncated> r(bytes);
  if (bytes.size() < 4 || r.get_bytes(4) != kCheckpointMagic)
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::UnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  CheckpointContents c;
  const auto variant = r.get<std::uint32_t>();
  if (variant > 2)
    throw CheckpointError(CheckpointError::Kind::InvalidSpec, "unknown variant code");
  c.spec.variant = static_cast<Variant>(variant);
  c.spec.width_scale = r.get<double>();
  c.spec.input_size = r.get<std::uint32_t>();
  c.spec.num_outputs = r.get<std::uint32_t>();
  const auto mask = r.get<std::uint32_t>();
  for (int g = 1; g <= 5; ++g)
    if (mask & (1u << (g - 1))) c.spec.freeze_groups.insert(g);
  c.spec.dropout_rate = r.get<double>();
  try {
    c.spec.validate();
  } catch (const ValidationError& e) {
    throw CheckpointError(CheckpointError::Kind::InvalidSpec, e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 4)
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "bad rank for " + t.name);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_size(t.shape);
    if (r.remaining() < n * sizeof(float)) throw CheckpointTruncated(t.name);
    t.values.resize(n);
    for (auto& v : t.values) v = r.get<float>();
    c.tensors.push_back(std::move(t));
  }
  if (!r.at_end())
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "trailing bytes after tensors");
  return c;
}
}  // namespace detail

template <typename T>
std::string encode_checkpoint(const Model<T>& m) {
  io::ByteWriter w;
  const auto& s = m.spec();
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.variant));
  w.put<double>(s.width_scale);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.input_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.num_outputs));
  std::uint32_t mask = 0;
  for (int g : s.freeze_groups) mask |= 1u << (g - 1);
  w.put<std::uint32_t>(mask);
  w.put<double>(s.dropout_rate);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.parameters().size()));
  for (const auto& p : m.parameters()) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (T v : p.value.data()) w.put<float>(static_cast<float>(v));
  }
  return w.bytes();
}

template <typename T>
Model<T> decode_checkpoint(std::string_view bytes) {
  auto c = detail::decode_checkpoint(bytes);
  Model<T> m = Model<T>::skeleton(c.spec);
  auto& params = m.parameters();
  if (c.tensors.size() != params.size())
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          "checkpoint holds " + std::to_string(c.tensors.size()) +
                              " tensors, spec requires " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = c.tensors[i];
    if (t.name != params[i].name || t.shape != params[i].value.shape())
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "tensor '" + t.name + "' " + shape_string(t.shape) +
                                " does not match expected '" + params[i].name + "' " +
                                shape_string(params[i].value.shape()));
    std::copy(t.values.begin(), t.values.end(), params[i].value.data().begin());
  }
  return m;
}

template <typename T>
void save(const Model<T>& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(m));
}

template <typename T>
Model<T> load(const std::filesystem::path& path) {
  return decode_checkpoint<T>(io::read_file(path));
}

/// Copies every tensor from a checkpoint file whose name and shape match a
/// parameter of `m`; other parameters keep their values. Returns the names
/// copied. Used to seed EAC from a trained E-Net, or to import external
/// weights converted to the checkpoint format.
template <typename T>
std::vector<std::string> load_matching(Model<T>& m, const std::filesystem::path& path) {
  const auto c = detail::decode_checkpoint(io::read_file(path));
  std::vector<std::string> copied;
  for (auto& p : m.parameters())
    for (const auto& t : c.tensors)
      if (t.name == p.name && t.shape == p.value.shape()) {
        std::copy(t.values.begin(), t.values.end(), p.value.data().begin());
        copied.push_back(p.name);
        break;
      }
  return copied;
}

// ---------------------------------------------------------------------------
// Feature-map visualization

struct Tiling {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Tiling&, const Tiling&) = default;
};

/// Grid for C maps: rows = 2 * cols when C = 2c^2, a square when C = c^2,
/// otherwise the smallest rows = 2 * cols-ish rectangle with blank pads.
inline Tiling feature_tiling(std::size_t c) {
  if (c == 0) throw ShapeError("feature map has no channels");
  const auto isqrt = [](std::size_t v) {
    auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v))));
    while (r * r > v) --r;
    while ((r + 1) * (r + 1) <= v) ++r;
    return r;
  };
  if (c % 2 == 0) {
    const std::size_t half = isqrt(c / 2);
    if (half * half * 2 == c) return {2 * half, half};
  }
  const std::size_t s = isqrt(c);
  if (s * s == c) return {s, s};
  std::size_t cols = std::max<std::size_t>(1, isqrt(c / 2));
  if (cols * cols * 2 < c) ++cols;
  return {(c + cols - 1) / cols, cols};
}

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> pixels;
};

/// Tiles the C maps of `tap` ([C,H,W] or [1,C,H,W]) row-major, each map
/// min-max normalized to 0..255 on its own; constant maps render mid-gray.
template <typename T>
GrayImage render_feature_map(const Tensor<T>& tap) {
  std::size_t c, h, w;
  if (tap.rank() == 3) {
    c = tap.dim(0), h = tap.dim(1), w = tap.dim(2);
  } else if (tap.rank() == 4 && tap.dim(0) == 1) {
    c = tap.dim(1), h = tap.dim(2), w = tap.dim(3);
  } else {
    throw ShapeError("feature map dump expects [C,H,W], got " + shape_string(tap.shape()));
  }
  const Tiling t = feature_tiling(c);
  GrayImage img{t.cols * w, t.rows * h, {}};
  img.pixels.assign(img.width * img.height, 0);
  for (std::size_t k = 0; k < c; ++k) {
    const T* src = tap.raw() + k * h * w;
    const auto [lo, hi] = std::minmax_element(src, src + h * w);
    const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
    const std::size_t oy = (k / t.cols) * h, ox = (k % t.cols) * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = range > 0 ? (static_cast<double>(src[y * w + x]) - *lo) / range : 0.5;
        img.pixels[(oy + y) * img.width + ox + x] =
            static_cast<std::uint16_t>(std::lround(v * 255.0));
      }
  }
  return img;
}

template <typename T>
GrayImage dump_feature_map(const Tensor<T>& tap, const std::filesystem::path& path) {
  GrayImage img = render_feature_map(tap);
  io::write_file_atomic(path, io::encode_pgm(img.width, img.height, 255, img.pixels));
  return img;
}

}  // namespace eacnet::model
