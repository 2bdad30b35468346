#pragma once

// Offset cross-entropy loss, momentum SGD, minority-AU resampling and the
// training loop, plus the ridge least-squares transfer head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "eacnet/data.hpp"
#include "eacnet/error.hpp"
#include "eacnet/evaluation.hpp"
#include "eacnet/labels.hpp"
#include "eacnet/model.hpp"
#include "eacnet/tensor.hpp"

namespace eacnet::training {

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kLossOffset = 0.5;
inline constexpr double kLossScale = 1.05;

namespace detail {
/// Unchecked; finite on (-0.5, 1.05).
inline double loss_term_raw(int label, double p) {
  return label ? -std::log((p + kLossOffset) / kLossScale)
               : -std::log((kLossScale - p) / kLossScale);
}
}  // namespace detail

/// Contribution of one (sample, AU) pair.
inline double loss_term(int label, double p) {
  if (!(p >= 0 && p <= 1)) throw DomainError("loss: probability " + std::to_string(p) +
                                             " outside [0,1]");
  return detail::loss_term_raw(label, p);
}

inline double loss_term_grad(int label, double p) {
  return label ? -1.0 / (p + kLossOffset) : 1.0 / (kLossScale - p);
}

template <typename T>
struct LossResult {
  double value = 0;
  Tensor<T> grad;  // d loss / d p, [N,12]
};

/// Summed over every sample and AU.
template <typename T>
LossResult<T> loss(const Tensor<T>& p, std::span<const LabelVector> labels) {
  if (p.rank() != 2 || p.dim(0) != labels.size() || p.dim(1) != kNumAUs)
    throw ShapeError("loss: probabilities " + shape_string(p.shape()) + " for " +
                     std::to_string(labels.size()) + " label vectors");
  LossResult<T> r{0, Tensor<T>(p.shape())};
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t a = 0; a < kNumAUs; ++a) {
      const double pv = static_cast<double>(p.at(i, a));
      r.value += loss_term(labels[i][a], pv);
      r.grad.at(i, a) = static_cast<T>(loss_term_grad(labels[i][a], pv));
    }
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Classical momentum: v <- m v - lr g; theta <- theta + v. Empty gradients
/// leave the corresponding parameter untouched.
template <typename T>
void sgd_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
              std::vector<Tensor<T>>& velocity, double lr, double momentum) {
  if (grads.size() != params.size())
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  if (velocity.size() != params.size()) velocity.assign(params.size(), Tensor<T>());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;
    Tensor<T>& theta = *params[i];
    if (grads[i].shape() != theta.shape())
      throw ShapeError("sgd_step: gradient " + shape_string(grads[i].shape()) +
                       " for parameter " + shape_string(theta.shape()));
    if (velocity[i].shape() != theta.shape()) velocity[i] = Tensor<T>(theta.shape());
    T* v = velocity[i].raw();
    T* th = theta.raw();
    const T* g = grads[i].raw();
    const T m = static_cast<T>(momentum), l = static_cast<T>(lr);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = m * v[k] - l * g[k];
      th[k] += v[k];
    }
  }
}

template <typename T>
void sgd_step(model::Model<T>& m, std::span<const Tensor<T>> grads,
              std::vector<Tensor<T>>& velocity, double lr, double momentum) {
  std::vector<Tensor<T>*> ptrs;
  for (auto& p : m.parameters()) ptrs.push_back(&p.value);
  sgd_step<T>(ptrs, grads, velocity, lr, momentum);
}

// ---------------------------------------------------------------------------
// Resampling

using Multipliers = std::map<int, double>;

inline Multipliers default_multipliers() {
  Multipliers m;
  for (int au : geometry::kActionUnits) m[au] = is_minority(au) ? 4.0 : 1.0;
  return m;
}

/// Largest multiplier among the sample's positive AUs, 1 when none applies.
inline std::vector<double> sample_weights(std::span<const LabelVector> labels,
                                          const Multipliers& mult) {
  std::vector<double> w(labels.size(), 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t a = 0; a < kNumAUs; ++a)
      if (labels[i][a]) {
        const auto it = mult.find(geometry::kActionUnits[a]);
        if (it != mult.end()) w[i] = std::max(w[i], it->second);
      }
  return w;
}

/// `count` indices drawn with replacement, probability proportional to weight.
inline std::vector<std::size_t> weighted_draws(const std::vector<double>& weights,
                                               std::size_t count, std::mt19937_64& rng) {
  if (weights.empty()) throw ValidationError("weighted_draws: no samples");
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = dist(rng);
  return out;
}

/// Expected label marginals under weighted sampling.
inline std::array<double, kNumAUs> weighted_marginals(std::span<const LabelVector> labels,
                                                      const std::vector<double>& weights) {
  std::array<double, kNumAUs> m{};
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += weights[i];
    for (std::size_t a = 0; a < kNumAUs; ++a) m[a] += weights[i] * labels[i][a];
  }
  for (auto& v : m) v = total > 0 ? v / total : 0;
  return m;
}

struct CalibrationOptions {
  std::array<double, kNumAUs> targets = [] {
    std::array<double, kNumAUs> t{};
    t.fill(0.5);
    return t;
  }();
  double low = 4, high = 7, step = 0.25;
  int sweeps = 20;
};

/// Coordinate search over the minority-AU multipliers on the grid
/// low, low+step, ..., high, minimizing the largest deviation of the
/// resampled minority marginals from their targets.
inline Multipliers calibrate_multipliers(std::span<const LabelVector> labels,
                                         const CalibrationOptions& opt = {}) {
  if (labels.empty()) throw ValidationError("calibrate_multipliers: no samples");
  if (!(opt.low >= 1 && opt.low <= opt.high && opt.step > 0))
    throw ValidationError("calibrate_multipliers: bad search range");
  Multipliers m = default_multipliers();
  for (int au : kMinorityAUs) m[au] = opt.low;
  const auto objective = [&](const Multipliers& mm) {
    const auto marg = weighted_marginals(labels, sample_weights(labels, mm));
    double worst = 0;
    for (int au : kMinorityAUs) {
      const std::size_t a = au_index(au);
      worst = std::max(worst, std::abs(marg[a] - opt.targets[a]));
    }
    return worst;
  };
  const int steps = static_cast<int>(std::floor((opt.high - opt.low) / opt.step + 1e-9));
  double best = objective(m);
  for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
    bool improved = false;
    for (int au : kMinorityAUs) {
      double keep = m[au];
      for (int k = 0; k <= steps; ++k) {
        m[au] = opt.low + k * opt.step;
        const double v = objective(m);
        if (v < best - 1e-15) {
          best = v;
          keep = m[au];
          improved = true;
        }
      }
      m[au] = keep;
    }
    if (!improved) break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

/// Flat `key = value` file; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                           const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(source + " line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source + " line " + std::to_string(n) + ": empty key");
    if (kv.count(key))
      throw ParseError(source + " line " + std::to_string(n) + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
  Multipliers multipliers = default_multipliers();
  std::size_t samples_per_epoch = 0;  // 0: one draw per training sample
  double holdout_fraction = 0.0;      // of subjects; 0 evaluates on the training set
  double target_f1 = 0.0;             // stop once the evaluated mean F1 reaches it; 0 disables
  bool cache_frozen_prefix = true;

  void validate() const {
    std::vector<std::string> bad;
    if (!(learning_rate >= 0)) bad.push_back("learning_rate must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) bad.push_back("momentum must be in [0,1)");
    if (epochs < 1) bad.push_back("epochs must be >= 1");
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    for (const auto& [au, v] : multipliers) {
      bool known = false;
      for (int a : geometry::kActionUnits) known |= a == au;
      if (!known) bad.push_back("multiplier for unknown AU " + std::to_string(au));
      if (!(v >= 1 && v <= 7))
        bad.push_back("multiplier.au" + std::to_string(au) + " must be in [1,7]");
    }
    if (!(holdout_fraction >= 0 && holdout_fraction < 1))
      bad.push_back("holdout_fraction must be in [0,1)");
    if (!(target_f1 >= 0 && target_f1 <= 1)) bad.push_back("target_f1 must be in [0,1]");
    if (!bad.empty()) {
      std::string msg = "invalid training config:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ValidationError(msg);
    }
  }

  /// Applies one key; returns false for keys this struct does not own.
  bool set(const std::string& key, const std::string& value) {
    const auto num = [&]() {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || value.empty())
        throw ValidationError("config key '" + key + "': '" + value + "' is not a number");
      return v;
    };
    const auto integer = [&]() {
      const double v = num();
      if (v != std::floor(v) || v < 0)
        throw ValidationError("config key '" + key + "': '" + value +
                              "' is not a non-negative integer");
      return v;
    };
    if (key == "learning_rate") learning_rate = num();
    else if (key == "momentum") momentum = num();
    else if (key == "epochs") epochs = static_cast<int>(integer());
    else if (key == "batch_size") batch_size = static_cast<int>(integer());
    else if (key == "seed") seed = static_cast<std::uint64_t>(integer());
    else if (key == "samples_per_epoch") samples_per_epoch = static_cast<std::size_t>(integer());
    else if (key == "holdout_fraction") holdout_fraction = num();
    else if (key == "target_f1") target_f1 = num();
    else if (key == "cache_frozen_prefix") {
      if (value != "true" && value != "false")
        throw ValidationError("config key '" + key + "' must be true or false");
      cache_frozen_prefix = value == "true";
    } else if (key.rfind("multiplier.au", 0) == 0) {
      int au = 0;
      try {
        au = std::stoi(key.substr(13));
      } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': bad AU number");
      }
      multipliers[au] = num();
    } else {
      return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double loss = 0;  // mean per drawn sample
  evaluation::MetricsTable metrics;
};

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << std::setprecision(8);
  out << "epoch,loss,mean_f1,mean_acc";
  for (int au : geometry::kActionUnits) out << ",f1_au" << au;
  for (int au : geometry::kActionUnits) out << ",acc_au" << au;
  out << "\n";
  for (const auto& e : log) {
    out << e.epoch << "," << e.loss << "," << e.metrics.mean_f1 << ","
        << e.metrics.mean_accuracy;
    for (double v : e.metrics.f1) out << "," << v;
    for (double v : e.metrics.accuracy) out << "," << v;
    out << "\n";
  }
  return out.str();
}

/// Training and evaluation index sets. Holdout subjects are chosen by a
/// seeded shuffle of the sorted subject ids.
struct Split {
  std::vector<std::size_t> train, eval;
};

template <typename T>
Split holdout_split(const std::vector<data::Sample<T>>& samples, double fraction,
                    std::uint64_t seed) {
  Split s;
  if (fraction <= 0) {
    for (std::size_t i = 0; i < samples.size(); ++i) s.train.push_back(i);
    s.eval = s.train;
    return s;
  }
  std::vector<std::string> subjects;
  for (const auto& x : samples) subjects.push_back(x.subject);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.size() < 2)
    throw ValidationError("holdout_fraction needs at least two subjects");
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const std::size_t n_hold = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * double(subjects.size()))), 1,
      subjects.size() - 1);
  const std::set<std::string> held(subjects.begin(), subjects.begin() + long(n_hold));
  for (std::size_t i = 0; i < samples.size(); ++i)
    (held.count(samples[i].subject) ? s.eval : s.train).push_back(i);
  return s;
}

namespace detail {

/// Stacks per-sample rows of `source` ([N,...]) at `idx` into a batch.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& source, std::span<const std::size_t> idx) {
  Shape shape = source.shape();
  const std::size_t per = source.size() / shape[0];
  shape[0] = idx.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(source.raw() + idx[i] * per, per, out.raw() + i * per);
  return out;
}

template <typename T>
Tensor<T> gather_images(const std::vector<data::Sample<T>>& samples,
                        std::span<const std::size_t> idx) {
  std::vector<const data::Sample<T>*> ptrs;
  for (std::size_t i : idx) ptrs.push_back(&samples[i]);
  return data::stack_images<T>(ptrs);
}

template <typename T>
std::vector<geometry::SampleGeometry> gather_geometry(const std::vector<data::Sample<T>>& samples,
                                                      std::span<const std::size_t> idx,
                                                      bool needed) {
  std::vector<geometry::SampleGeometry> g;
  if (!needed) return g;
  for (std::size_t i : idx) g.push_back(samples[i].geometry);
  return g;
}

}  // namespace detail

/// Batched inputs for the stage the model starts at. When the leading conv
/// groups are frozen their output is computed once and reused.
template <typename T>
class InputCache {
 public:
  InputCache(const model::Model<T>& m, const std::vector<data::Sample<T>>& samples, bool enabled,
             std::size_t chunk = 16)
      : model_(m), samples_(samples) {
    const auto& spec = m.spec();
    stage_ = 1;
    if (enabled)
      while (stage_ <= spec.group_count() && spec.is_frozen(stage_)) ++stage_;
    if (stage_ == 1) return;
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t b = 0; b < all.size(); b += chunk) {
      const std::span<const std::size_t> idx(all.data() + b, std::min(chunk, all.size() - b));
      const auto geo = detail::gather_geometry(samples, idx, spec.has_attention());
      Tensor<T> part = m.stage_input(detail::gather_images(samples, idx), geo, stage_);
      if (cache_.empty()) {
        Shape s = part.shape();
        s[0] = samples.size();
        cache_ = Tensor<T>(s);
      }
      std::copy(part.data().begin(), part.data().end(), cache_.raw() + b * (part.size() / idx.size()));
    }
  }

  int stage() const { return stage_; }

  Tensor<T> batch(std::span<const std::size_t> idx) const {
    return stage_ == 1 ? detail::gather_images(samples_, idx) : detail::gather_rows(cache_, idx);
  }

  std::vector<geometry::SampleGeometry> geometry(std::span<const std::size_t> idx) const {
    return detail::gather_geometry(samples_, idx, model_.spec().has_attention());
  }

 private:
  const model::Model<T>& model_;
  const std::vector<data::Sample<T>>& samples_;
  int stage_ = 1;
  Tensor<T> cache_;
};

/// Eval-mode probabilities [N,12] for the samples at `idx`.
template <typename T>
Tensor<T> predict_probs(const model::Model<T>& m, const InputCache<T>& cache,
                        std::span<const std::size_t> idx, std::size_t chunk = 16) {
  Tensor<T> out({idx.size(), kNumAUs});
  for (std::size_t b = 0; b < idx.size(); b += chunk) {
    const auto part = idx.subspan(b, std::min(chunk, idx.size() - b));
    const auto geo = cache.geometry(part);
    const auto r = m.forward(cache.batch(part), geo, model::Mode::Eval, nullptr, cache.stage());
    std::copy(r.probs.data().begin(), r.probs.data().end(), out.raw() + b * kNumAUs);
  }
  return out;
}

template <typename T>
Tensor<T> predict_probs(const model::Model<T>& m, const std::vector<data::Sample<T>>& samples) {
  const InputCache<T> cache(m, samples, false);
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return predict_probs(m, cache, idx);
}

template <typename T>
evaluation::BinaryRows binarize(const Tensor<T>& probs, double threshold = 0.5) {
  evaluation::BinaryRows rows(probs.dim(0), std::vector<int>(probs.dim(1)));
  for (std::size_t i = 0; i < probs.dim(0); ++i)
    for (std::size_t j = 0; j < probs.dim(1); ++j)
      rows[i][j] = static_cast<double>(probs.at(i, j)) >= threshold;
  return rows;
}

template <typename T>
evaluation::BinaryRows label_rows(const std::vector<data::Sample<T>>& samples,
                                  std::span<const std::size_t> idx) {
  evaluation::BinaryRows rows;
  for (std::size_t i : idx) rows.push_back(to_row(samples[i].labels));
  return rows;
}

struct TrainResult {
  std::vector<EpochLog> log;
  Split split;
  bool reached_target = false;
};

/// Minibatch training with weighted resampling. Identical inputs, config and
/// seed give identical parameters.
template <typename T>
TrainResult train(model::Model<T>& m, const std::vector<data::Sample<T>>& samples,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("train: dataset is empty");
  TrainResult result;
  result.split = holdout_split(samples, cfg.holdout_fraction, cfg.seed);
  const auto& split = result.split;

  std::vector<LabelVector> train_labels;
  for (std::size_t i : split.train) train_labels.push_back(samples[i].labels);
  const auto weights = sample_weights(train_labels, cfg.multipliers);

  const InputCache<T> cache(m, samples, cfg.cache_frozen_prefix);
  std::mt19937_64 draw_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Tensor<T>> velocity;
  const std::size_t per_epoch = cfg.samples_per_epoch ? cfg.samples_per_epoch : split.train.size();
  const auto eval_labels = label_rows(samples, split.eval);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = weighted_draws(weights, per_epoch, draw_rng);
    for (auto& i : order) i = split.train[i];
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min<std::size_t>(cfg.batch_size, order.size() - b));
      const auto geo = cache.geometry(idx);
      const auto f = m.forward(cache.batch(idx), geo, model::Mode::Train, &dropout_rng,
                               cache.stage());
      std::vector<LabelVector> batch_labels;
      for (std::size_t i : idx) batch_labels.push_back(samples[i].labels);
      const auto non_finite = [&](const char* fallback) {
        return TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                             "; first offending layer: " + m.first_non_finite(f).value_or(fallback));
      };
      if (!f.probs.all_finite()) throw non_finite("output");
      const auto l = loss<T>(f.probs, batch_labels);
      if (!std::isfinite(l.value)) throw non_finite("loss");
      total += l.value;
      const auto grads = m.backward(f, l.grad);
      sgd_step<T>(m, grads, velocity, cfg.learning_rate, cfg.momentum);
    }
    EpochLog e;
    e.epoch = epoch;
    e.loss = total / double(order.size());
    const auto probs = predict_probs(m, cache, split.eval);
    e.metrics = evaluation::f1_accuracy(evaluation::confusion(binarize(probs), eval_labels));
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
    if (cfg.target_f1 > 0 && e.metrics.mean_f1 >= cfg.target_f1) {
      result.reached_target = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear transfer head

struct LinearHead {
  Eigen::MatrixXd weights;  // [F+1,K], last row is the intercept

  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const {
    const auto f = weights.rows() - 1;
    if (features.cols() != f)
      throw ShapeError("linear head expects " + std::to_string(f) + " features, got " +
                       std::to_string(features.cols()));
    Eigen::MatrixXd out = features * weights.topRows(f);
    out.rowwise() += weights.row(f);
    return out;
  }

  evaluation::BinaryRows predict_binary(const Eigen::MatrixXd& features,
                                        double threshold = 0.5) const {
    const Eigen::MatrixXd p = predict(features);
    evaluation::BinaryRows rows(std::size_t(p.rows()), std::vector<int>(std::size_t(p.cols())));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) rows[std::size_t(i)][std::size_t(j)] = p(i, j) >= threshold;
    return rows;
  }
};

/// Least squares with an unpenalized intercept and optional ridge penalty.
inline LinearHead fit_linear_head(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  double ridge) {
  if (x.rows() != y.rows() || x.rows() == 0)
    throw ShapeError("fit_linear_head: " + std::to_string(x.rows()) + " feature rows for " +
                     std::to_string(y.rows()) + " label rows");
  if (!(ridge >= 0)) throw ValidationError("fit_linear_head: ridge must be >= 0");
  const Eigen::RowVectorXd xm = x.colwise().mean();
  const Eigen::RowVectorXd ym = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - xm;
  const Eigen::MatrixXd yc = y.rowwise() - ym;
  Eigen::MatrixXd a = xc.transpose() * xc;
  a.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const auto d = ldlt.vectorD();
  const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * scale)
    throw SingularSystemError(
        "fit_linear_head: normal equations are singular (fewer informative samples than "
        "features); use a ridge penalty > 0");
  const Eigen::MatrixXd w = ldlt.solve(xc.transpose() * yc);
  LinearHead h;
  h.weights.resize(x.cols() + 1, y.cols());
  h.weights.topRows(x.cols()) = w;
  h.weights.row(x.cols()) = ym - xm * w;
  return h;
}

template <typename T>
Eigen::MatrixXd to_matrix(const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix expects rank 2, got " + shape_string(t.shape()));
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(Eigen::Index(i), Eigen::Index(j)) = double(t.at(i, j));
  return m;
}

}  // namespace eacnet::training
