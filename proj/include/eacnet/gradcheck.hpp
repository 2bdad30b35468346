#pragma once

// Central-difference gradient checks for every differentiable operation,
// grouped into suites: tensor, layers, loss, model.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eacnet/data.hpp"
#include "eacnet/layers.hpp"
#include "eacnet/model.hpp"
#include "eacnet/tensor.hpp"
#include "eacnet/training.hpp"

namespace eacnet::gradcheck {

using Tensor64 = Tensor<double>;
using Inputs = std::vector<Tensor64>;

inline constexpr double kStep = 1e-5;
inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kLossTolerance = 1e-7;
inline constexpr double kModelTolerance = 1e-4;
inline constexpr double kModelSubset = 0.01;
inline constexpr double kMinModelStep = 1e-8;

struct CheckResult {
  std::string suite;
  std::string op;
  std::string detail;  // shapes or parameter names
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct SuiteReport {
  std::string name;
  std::vector<CheckResult> results;
  double seconds = 0;
  bool passed() const {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.passed(); });
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline std::string format_result(const CheckResult& r) {
  std::ostringstream out;
  out << (r.passed() ? "ok   " : "FAIL ") << "[" << r.suite << "] " << r.op << " " << r.detail
      << "  max_rel=" << std::scientific << std::setprecision(2) << r.max_rel_error
      << " tol=" << r.tolerance << " n=" << r.checked;
  return out.str();
}

namespace detail {

inline Tensor64 uniform(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Uniform in [-1,1] with every |x| >= margin, keeping kinks out of reach
/// of the finite-difference step.
inline Tensor64 away_from_zero(const Shape& s, std::mt19937_64& rng, double margin = 1e-3) {
  Tensor64 t = uniform(s, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.data())
    while (std::abs(v) < margin) v = u(rng);
  return t;
}

/// Distinct values on a shuffled lattice so every 2x2 window has a clear max.
inline Tensor64 distinct(const Shape& s, std::mt19937_64& rng) {
  Tensor64 t(s);
  std::vector<double> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i)
    vals[i] = -1 + 2 * (double(i) + 0.5) / double(vals.size());
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

inline double dot(const Tensor64& a, const Tensor64& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using Forward = std::function<Tensor64(const Inputs&)>;
using Backward = std::function<Inputs(const Inputs&, const Tensor64&)>;

/// Checks the vector-Jacobian product of `fwd` against central differences
/// of the scalar <u, fwd(x)> for a random upstream u. `differentiable`
/// selects which inputs are checked (all when empty).
inline CheckResult check_vjp(const std::string& suite, const std::string& op, Inputs inputs,
                             const Forward& fwd, const Backward& back, std::mt19937_64& rng,
                             std::vector<bool> differentiable = {}) {
  const Tensor64 out = fwd(inputs);
  const Tensor64 u = uniform(out.shape(), rng);
  const Inputs analytic = back(inputs, u);
  if (differentiable.empty()) differentiable.assign(inputs.size(), true);
  CheckResult r{suite, op, "", 0, kOpTolerance, 0};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    r.detail += (k ? "," : "") + shape_string(inputs[k].shape());
    if (!differentiable[k]) continue;
    if (analytic.at(k).shape() != inputs[k].shape())
      throw ShapeError("gradcheck " + op + ": gradient " + shape_string(analytic[k].shape()) +
                       " for input " + shape_string(inputs[k].shape()));
    for (std::size_t j = 0; j < inputs[k].size(); ++j) {
      const double orig = inputs[k][j];
      inputs[k][j] = orig + kStep;
      const double plus = dot(u, fwd(inputs));
      inputs[k][j] = orig - kStep;
      const double minus = dot(u, fwd(inputs));
      inputs[k][j] = orig;
      const double numeric = (plus - minus) / (2 * kStep);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][j], numeric));
      ++r.checked;
    }
  }
  return r;
}

/// Hash of every relu on/off state and max-pool choice in a trace.
inline std::uint64_t kink_pattern(const model::Trace<double>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  const auto signs = [&mix](const Tensor64& x) {
    for (double v : x.data()) mix(v > 0);
  };
  for (const auto& g : t.groups) {
    for (std::size_t j = 1; j < g.activations.size(); ++j) signs(g.activations[j]);
    for (std::size_t a : g.pool_argmax) mix(a);
  }
  for (const auto& r : t.regions) {
    signs(r.conv_pre);
    signs(r.fc_pre);
  }
  signs(t.fc1_pre);
  return h;
}

inline Inputs from_binary(BinaryGrads<double> g) { return {std::move(g.a), std::move(g.b)}; }

}  // namespace detail

// ---------------------------------------------------------------------------

inline SuiteReport tensor_suite(std::uint64_t seed = 1) {
  using namespace detail;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  SuiteReport rep{"tensor", {}, 0};
  const std::string s = "tensor";

  struct ConvCase {
    Shape in, k;
    Conv2dConfig cfg;
  };
  const std::vector<ConvCase> convs = {
      {{1, 1, 5, 5}, {1, 1, 3, 3}, {1, 0}}, {{2, 3, 6, 6}, {4, 3, 3, 3}, {1, 1}},
      {{1, 2, 8, 8}, {3, 2, 3, 3}, {2, 1}}, {{2, 3, 7, 5}, {2, 3, 1, 1}, {1, 0}},
      {{2, 2, 8, 8}, {3, 2, 2, 2}, {2, 0}}, {{1, 3, 4, 4}, {2, 3, 3, 3}, {1, 2}},
  };
  for (const auto& c : convs) {
    Inputs in = {uniform(c.in, rng), uniform(c.k, rng), uniform({c.k[0]}, rng)};
    rep.results.push_back(check_vjp(
        s, "conv2d", in, [&](const Inputs& x) { return conv2d(x[0], x[1], x[2], c.cfg); },
        [&](const Inputs& x, const Tensor64& u) {
          auto g = conv2d_backward(x[0], x[1], true, c.cfg, u);
          return Inputs{g.input, g.kernel, g.bias};
        },
        rng));
  }
  for (const Shape& sh : std::vector<Shape>{
           {1, 1, 2, 2}, {1, 1, 4, 4}, {2, 3, 4, 6}, {1, 2, 8, 8}, {2, 3, 6, 8}, {2, 1, 6, 2}}) {
    rep.results.push_back(check_vjp(
        s, "maxpool2", {distinct(sh, rng)},
        [](const Inputs& x) { return maxpool2(x[0]).output; },
        [](const Inputs& x, const Tensor64& u) {
          const auto p = maxpool2(x[0]);
          return Inputs{maxpool2_backward<double>(x[0].shape(), p.argmax, u)};
        },
        rng));
  }
  for (const auto& [m, k, n] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {2, 3, 4}, {5, 2, 3}, {4, 8, 2}, {3, 7, 6}}) {
    rep.results.push_back(check_vjp(
        s, "matmul", {uniform({m, k}, rng), uniform({k, n}, rng)},
        [](const Inputs& x) { return matmul(x[0], x[1]); },
        [](const Inputs& x, const Tensor64& u) { return from_binary(matmul_backward(x[0], x[1], u)); },
        rng));
  }
  const std::vector<Shape> elementwise = {{3}, {2, 5}, {2, 3, 4}, {1, 2, 3, 4}, {2, 3, 8, 8}};
  for (const Shape& sh : elementwise) {
    rep.results.push_back(check_vjp(
        s, "add", {uniform(sh, rng), uniform(sh, rng)},
        [](const Inputs& x) { return add(x[0], x[1]); },
        [](const Inputs& x, const Tensor64& u) { return from_binary(add_backward(x[0], x[1], u)); },
        rng));
    rep.results.push_back(check_vjp(
        s, "mul", {uniform(sh, rng), uniform(sh, rng)},
        [](const Inputs& x) { return mul(x[0], x[1]); },
        [](const Inputs& x, const Tensor64& u) { return from_binary(mul_backward(x[0], x[1], u)); },
        rng));
    const double factor = std::uniform_real_distribution<double>(-2, 2)(rng);
    rep.results.push_back(check_vjp(
        s, "scale", {uniform(sh, rng)}, [=](const Inputs& x) { return scale(x[0], factor); },
        [=](const Inputs& x, const Tensor64& u) { return Inputs{scale_backward(x[0], factor, u)}; },
        rng));
    rep.results.push_back(check_vjp(
        s, "relu", {away_from_zero(sh, rng)}, [](const Inputs& x) { return relu(x[0]); },
        [](const Inputs& x, const Tensor64& u) { return Inputs{relu_backward(x[0], u)}; }, rng));
    rep.results.push_back(check_vjp(
        s, "sigmoid", {scale(uniform(sh, rng), 4.0)},
        [](const Inputs& x) { return sigmoid(x[0]); },
        [](const Inputs& x, const Tensor64& u) { return Inputs{sigmoid_backward(x[0], u)}; },
        rng));
  }
  for (const Shape& sh : std::vector<Shape>{
           {1, 1, 1, 1}, {1, 1, 3, 3}, {2, 3, 2, 4}, {1, 2, 4, 4}, {2, 3, 3, 3}}) {
    rep.results.push_back(check_vjp(
        s, "upscale2x", {uniform(sh, rng)}, [](const Inputs& x) { return nearest_upscale2x(x[0]); },
        [](const Inputs& x, const Tensor64& u) {
          return Inputs{nearest_upscale2x_backward<double>(x[0].shape(), u)};
        },
        rng));
  }
  for (const auto& [ih, iw, oh, ow] : std::vector<std::array<std::size_t, 4>>{
           {4, 4, 8, 8}, {5, 3, 2, 7}, {8, 8, 3, 3}, {2, 2, 5, 5}, {6, 4, 1, 6}}) {
    rep.results.push_back(check_vjp(
        s, "bilinear_resize", {uniform({ih, iw}, rng)},
        [=](const Inputs& x) { return bilinear_resize(x[0], oh, ow); },
        [](const Inputs& x, const Tensor64& u) {
          return Inputs{bilinear_resize_backward<double>(x[0].shape(), u)};
        },
        rng));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

namespace detail {

/// 20 AU centers at random grid positions.
inline geometry::AUCenterSet random_centers(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 99);
  geometry::AUCenterSet set;
  set.scale_d = 20;
  for (std::size_t i = 0; i < geometry::kCenterCount; ++i)
    set.centers.push_back({{u(rng), u(rng)}, {1}, geometry::Side::Left});
  return set;
}

}  // namespace detail

inline SuiteReport layers_suite(std::uint64_t seed = 2) {
  using namespace detail;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  SuiteReport rep{"layers", {}, 0};
  const std::string s = "layers";

  for (const auto& [n, in, out] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {2, 3, 4}, {3, 8, 5}, {1, 16, 3}, {4, 5, 12}}) {
    rep.results.push_back(check_vjp(
        s, "dense", {uniform({n, in}, rng), uniform({in, out}, rng), uniform({out}, rng)},
        [](const Inputs& x) { return layers::dense_forward(x[0], x[1], x[2]); },
        [](const Inputs& x, const Tensor64& u) {
          auto g = layers::dense_backward(x[0], x[1], u);
          return Inputs{g.input, g.weight, g.bias};
        },
        rng));
  }
  for (const auto& [n, cin, cout, h, w] : std::vector<std::array<std::size_t, 5>>{
           {1, 1, 1, 3, 3}, {2, 2, 3, 4, 4}, {1, 3, 2, 8, 8}, {2, 3, 3, 5, 6}, {1, 2, 4, 7, 7}}) {
    const Tensor64 att = uniform({n, 1, h, w}, rng, 0, 1);
    rep.results.push_back(check_vjp(
        s, "enhance",
        {uniform({n, cin, h, w}, rng), uniform({n, cout, h, w}, rng),
         uniform({cout, cin, 1, 1}, rng)},
        [att](const Inputs& x) {
          return layers::enhance_forward(x[0], x[1], att, layers::EnhanceParams<double>{x[2]});
        },
        [att](const Inputs& x, const Tensor64& u) {
          auto g = layers::enhance_backward(x[0], att, layers::EnhanceParams<double>{x[2]}, u);
          return Inputs{g.input, g.group_output, g.projection_kernel};
        },
        rng));
  }
  for (const Shape& sh : std::vector<Shape>{
           {1, 1, 2, 2}, {1, 3, 3, 3}, {2, 5, 2, 2}, {1, 7, 4, 3}, {2, 8, 3, 3}, {1, 12, 2, 2}}) {
    // Scaled so the squared-sum term of the denominator is not negligible.
    rep.results.push_back(check_vjp(
        s, "lrn", {scale(uniform(sh, rng), 6.0)}, [](const Inputs& x) { return layers::lrn(x[0]); },
        [](const Inputs& x, const Tensor64& u) {
          return Inputs{layers::lrn_backward(x[0], layers::LrnParams{}, u)};
        },
        rng));
  }
  for (const Shape& sh : std::vector<Shape>{
           {1, 1, 3, 3}, {1, 2, 6, 6}, {2, 2, 8, 8}, {2, 3, 7, 7}, {1, 3, 5, 5}}) {
    std::vector<geometry::AUCenterSet> centers;
    for (std::size_t b = 0; b < sh[0]; ++b) centers.push_back(random_centers(rng));
    rep.results.push_back(check_vjp(
        s, "crop", {uniform(sh, rng)},
        [&centers](const Inputs& x) {
          std::vector<Tensor64> flat;
          for (const auto& t : layers::crop_forward<double>(x[0], centers))
            flat.push_back(t.reshaped({t.dim(0), t.size() / t.dim(0)}));
          return concat_columns<double>(flat);
        },
        [&centers](const Inputs& x, const Tensor64& u) {
          const std::size_t per = x[0].dim(1) * 9;
          std::vector<Tensor64> parts;
          for (std::size_t r = 0; r < layers::kRegionCount; ++r)
            parts.push_back(slice_columns(u, r * per, per)
                                .reshaped({x[0].dim(0), x[0].dim(1), 3, 3}));
          return Inputs{layers::crop_backward<double>(x[0].shape(), centers, parts)};
        },
        rng));
  }
  for (const auto& [n, c, w] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {1, 2, 3}, {2, 2, 4}, {2, 3, 2}, {1, 4, 5}}) {
    const auto params = [](const Inputs& x) {
      return layers::RegionHeadParams<double>{x[1], x[2], x[3], x[4]};
    };
    Inputs in = {uniform({n, c, 3, 3}, rng), uniform({c, c, 3, 3}, rng), uniform({c}, rng),
                 uniform({c * 16, w}, rng), uniform({w}, rng)};
    rep.results.push_back(check_vjp(
        s, "region_head", in,
        [params](const Inputs& x) { return layers::region_head_forward(x[0], params(x)).output; },
        [params](const Inputs& x, const Tensor64& u) {
          const auto t = layers::region_head_forward(x[0], params(x));
          auto g = layers::region_head_backward(t, params(x), u);
          return Inputs{g.crop, g.conv_kernel, g.conv_bias, g.fc_weight, g.fc_bias};
        },
        rng));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Loss against its own derivative at fixed probabilities, and composed
/// with the sigmoid for random logits.
inline SuiteReport loss_suite(std::uint64_t seed = 3) {
  using namespace detail;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  SuiteReport rep{"loss", {}, 0};
  for (int label : {0, 1}) {
    CheckResult r{"loss", "loss_term", "l=" + std::to_string(label) + " p in {0,.25,.5,.75,1}", 0,
                  kLossTolerance, 0};
    for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double numeric = (training::detail::loss_term_raw(label, p + kStep) -
                              training::detail::loss_term_raw(label, p - kStep)) /
                             (2 * kStep);
      r.max_rel_error =
          std::max(r.max_rel_error, relative_error(training::loss_term_grad(label, p), numeric));
      ++r.checked;
    }
    rep.results.push_back(r);
  }
  std::bernoulli_distribution coin(0.5);
  for (std::size_t n : {1, 2, 3, 4, 6}) {
    std::vector<LabelVector> labels(n);
    for (auto& l : labels)
      for (auto& v : l) v = coin(rng);
    const Tensor64 z = scale(uniform({n, kNumAUs}, rng), 3.0);
    const auto objective = [&](const Tensor64& logits) {
      return training::loss<double>(sigmoid(logits), labels).value;
    };
    const auto l = training::loss<double>(sigmoid(z), labels);
    const Tensor64 analytic = sigmoid_backward(z, l.grad);
    CheckResult r{"loss", "loss_sigmoid", shape_string(z.shape()), 0, kLossTolerance, 0};
    Tensor64 x = z;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double orig = x[j];
      x[j] = orig + kStep;
      const double plus = objective(x);
      x[j] = orig - kStep;
      const double minus = objective(x);
      x[j] = orig;
      r.max_rel_error =
          std::max(r.max_rel_error, relative_error(analytic[j], (plus - minus) / (2 * kStep)));
      ++r.checked;
    }
    rep.results.push_back(r);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Bundled-style frontal face used where a concrete landmark set is needed.
inline geometry::LandmarkSet template_landmarks() {
  geometry::LandmarkSet l;
  l.width = l.height = static_cast<int>(data::kImageSize);
  const auto& face = data::detail::template_face();
  std::copy(face.begin(), face.end(), l.points.begin());
  return l;
}

/// Whole-network check at width 1/16 on one sample, every group trainable,
/// dropout active with a fixed mask. Each checked parameter is perturbed and
/// the network rerun from the stage that owns it.
inline CheckResult check_model(model::Variant variant, std::uint64_t seed) {
  auto spec = model::NetworkSpec::defaults(variant, 1.0 / 16);
  spec.freeze_groups.clear();
  auto m = model::Model<double>::build(spec, seed);
  std::mt19937_64 rng(seed);
  const Tensor64 image = detail::uniform({1, 3, data::kImageSize, data::kImageSize}, rng, 0, 1);
  const std::vector<geometry::SampleGeometry> geo = {geometry::sample_geometry(template_landmarks())};
  std::vector<LabelVector> labels(1);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : labels[0]) v = coin(rng);
  const std::uint64_t dropout_seed = seed + 17;

  std::vector<Tensor64> stage_inputs(static_cast<std::size_t>(spec.head_stage()) + 1);
  for (int st = 1; st <= spec.head_stage(); ++st)
    stage_inputs[std::size_t(st)] = m.stage_input(image, geo, st);
  struct Eval {
    double loss;
    std::uint64_t pattern;
  };
  const auto objective = [&](int stage) {
    std::mt19937_64 drop(dropout_seed);
    const auto f = m.forward(stage_inputs[std::size_t(stage)], geo, model::Mode::Train, &drop, stage);
    return Eval{training::loss<double>(f.probs, labels).value, detail::kink_pattern(f.trace)};
  };

  std::mt19937_64 drop(dropout_seed);
  const auto f = m.forward(image, geo, model::Mode::Train, &drop);
  const auto l = training::loss<double>(f.probs, labels);
  const auto grads = m.backward(f, l.grad);

  // 1% of all scalars plus one element of every tensor.
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::bernoulli_distribution pick(kModelSubset);
  auto& params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    picks.push_back({i, std::uniform_int_distribution<std::size_t>(0, params[i].value.size() - 1)(rng)});
    for (std::size_t j = 0; j < params[i].value.size(); ++j)
      if (pick(rng)) picks.push_back({i, j});
  }
  CheckResult r{"model", std::string(model::variant_name(spec.variant)) + "@1/16",
                std::to_string(picks.size()) + " of " + std::to_string(m.parameter_count()) +
                    " parameters",
                0, kModelTolerance, 0};
  for (const auto& [i, j] : picks) {
    const int stage = params[i].group == 0 ? spec.head_stage() : params[i].group;
    double& theta = params[i].value[j];
    const double orig = theta;
    const std::uint64_t base = objective(stage).pattern;
    // Piecewise-smooth network: shrink the step until neither probe crosses
    // a relu or max-pool switching boundary.
    double numeric = 0;
    for (double h = kStep; h >= kMinModelStep; h /= 10) {
      theta = orig + h;
      const Eval plus = objective(stage);
      theta = orig - h;
      const Eval minus = objective(stage);
      theta = orig;
      numeric = (plus.loss - minus.loss) / (2 * h);
      if (plus.pattern == base && minus.pattern == base) break;
    }
    const double analytic = grads[i].empty() ? 0.0 : grads[i][j];
    const double err = relative_error(analytic, numeric);
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      if (err > r.tolerance) r.detail += "; worst " + params[i].name;
    }
    ++r.checked;
  }
  return r;
}

inline SuiteReport model_suite(std::uint64_t seed = 4) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteReport rep{"model", {}, 0};
  for (auto v : {model::Variant::FVGG, model::Variant::ENET, model::Variant::EAC})
    rep.results.push_back(check_model(v, seed));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline std::vector<std::string> suite_names() { return {"tensor", "layers", "loss", "model"}; }

inline SuiteReport run_suite(const std::string& name) {
  if (name == "tensor") return tensor_suite();
  if (name == "layers") return layers_suite();
  if (name == "loss") return loss_suite();
  if (name == "model") return model_suite();
  throw ValidationError("unknown gradcheck module '" + name +
                        "' (expected tensor, layers, loss or model)");
}

}  // namespace eacnet::gradcheck
