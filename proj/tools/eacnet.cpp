// Command-line front end: attention maps, AU centers, synthetic data,
// training, evaluation, gradient checks, feature-map dumps and the linear
// transfer protocol.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eacnet/eacnet.hpp"

namespace fs = std::filesystem;
using namespace eacnet;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

class RunFailure : public Error {
 public:
  using Error::Error;
};

void write_output(const fs::path& path, const std::string& text) {
  io::write_file_atomic(path, text);
  std::cerr << "wrote " << path.string() << "\n";
}

template <typename T>
std::vector<data::Sample<T>> load_manifest_samples(const fs::path& manifest) {
  auto loaded = data::load_manifest(manifest);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
  if (loaded.records.empty()) throw ValidationError("--manifest: no samples to process");
  return data::load_samples<T>(loaded.records);
}

// ---------------------------------------------------------------------------

struct AttentionArgs {
  fs::path landmarks, out, raw;
};

int run_attention(const AttentionArgs& a) {
  const auto lm = geometry::load_landmarks(a.landmarks);
  const auto g = geometry::sample_geometry(lm);
  write_output(a.out, geometry::encode_attention_pgm(g.attention));
  const fs::path raw = a.raw.empty() ? fs::path(a.out).replace_extension(".att") : a.raw;
  write_output(raw, geometry::encode_attention_raw(g.attention));
  return 0;
}

int run_centers(const fs::path& landmarks) {
  const auto set = geometry::au_centers(geometry::load_landmarks(landmarks));
  std::cout << geometry::centers_to_json(set).dump(2) << "\n";
  return 0;
}

struct SynthArgs {
  fs::path spec, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
};

int run_synth(const SynthArgs& a) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(a.spec));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("--spec: " + std::string(e.what()));
  }
  if (a.seed) j["seed"] = *a.seed;
  if (a.count) j["count"] = *a.count;
  const auto spec = data::SynthSpec::from_json(j);
  const auto records = data::generate_synthetic(spec, a.out);
  std::cerr << "generated " << records.size() << " samples in " << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path config, manifest, init, out, log;
  std::string variant;
  std::optional<double> lr, momentum, width_scale, holdout, target_f1;
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
};

struct RunSettings {
  training::TrainConfig train;
  model::NetworkSpec net;
  std::string precision = "32";
};

std::set<int> parse_group_list(const std::string& v) {
  std::set<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" ") == std::string::npos) continue;
    try {
      out.insert(std::stoi(item));
    } catch (const std::exception&) {
      throw ValidationError("config key 'freeze_groups': '" + item + "' is not a group number");
    }
  }
  return out;
}

double config_number(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  return x;
}

RunSettings resolve_settings(const TrainArgs& a) {
  RunSettings s;
  s.net = model::NetworkSpec::defaults(model::parse_variant(a.variant));
  if (!a.config.empty()) {
    const auto kv = training::parse_key_values(io::read_file(a.config), a.config.string());
    for (const auto& [k, v] : kv) {
      if (s.train.set(k, v)) continue;
      if (k == "width_scale") {
        s.net.width_scale = config_number(k, v);
      } else if (k == "freeze_groups") {
        s.net.freeze_groups = parse_group_list(v);
      } else if (k == "dropout") {
        s.net.dropout_rate = config_number(k, v);
      } else if (k == "precision") {
        s.precision = v;
      } else {
        throw ValidationError("--config: unknown key '" + k + "'");
      }
    }
  }
  if (a.lr) s.train.learning_rate = *a.lr;
  if (a.momentum) s.train.momentum = *a.momentum;
  if (a.epochs) s.train.epochs = *a.epochs;
  if (a.batch_size) s.train.batch_size = *a.batch_size;
  if (a.seed) s.train.seed = *a.seed;
  if (a.holdout) s.train.holdout_fraction = *a.holdout;
  if (a.target_f1) s.train.target_f1 = *a.target_f1;
  if (a.width_scale) s.net.width_scale = *a.width_scale;
  if (a.precision) s.precision = *a.precision;
  if (s.precision != "32" && s.precision != "64")
    throw ValidationError("precision must be 32 or 64");
  s.net.validate();
  s.train.validate();
  return s;
}

template <typename T>
int train_with(const TrainArgs& a, const RunSettings& s) {
  auto samples = load_manifest_samples<T>(a.manifest);
  auto m = model::Model<T>::build(s.net, s.train.seed);
  if (!a.init.empty()) {
    const auto copied = model::load_matching(m, a.init);
    std::cerr << "initialized " << copied.size() << " of " << m.parameters().size()
              << " parameter tensors from " << a.init.string() << "\n";
  }
  std::cerr << model::variant_name(s.net.variant) << " width " << s.net.width_scale << ", "
            << m.parameter_count() << " parameters, " << samples.size() << " samples\n";
  const auto result = training::train<T>(m, samples, s.train, [](const training::EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.loss << " mean_f1 " << e.metrics.mean_f1
              << " mean_acc " << e.metrics.mean_accuracy << "\n";
  });
  model::save(m, a.out);
  std::cerr << "wrote " << a.out.string() << "\n";
  const fs::path log = a.log.empty() ? fs::path(a.out).replace_extension(".log.csv") : a.log;
  write_output(log, training::epoch_log_csv(result.log));
  return 0;
}

int run_train(const TrainArgs& a) {
  const RunSettings s = resolve_settings(a);
  return s.precision == "64" ? train_with<double>(a, s) : train_with<float>(a, s);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt, manifest, out;
  int folds = 3;
  std::uint64_t seed = 0;
};

/// Per-fold tables (fold index by subject) plus their macro average.
std::pair<std::vector<std::string>, std::vector<evaluation::MetricsTable>> fold_tables(
    const evaluation::BinaryRows& preds, const evaluation::BinaryRows& labels,
    const std::vector<std::string>& subjects, int folds, std::uint64_t seed,
    const std::vector<std::string>& names) {
  std::vector<std::string> table_names;
  std::vector<evaluation::MetricsTable> tables;
  if (folds <= 1) {
    tables.push_back(evaluation::f1_accuracy(evaluation::confusion(preds, labels), names));
    table_names.push_back("all");
    return {table_names, tables};
  }
  const auto fold_of = evaluation::subject_folds(subjects, folds, seed);
  for (int f = 0; f < folds; ++f) {
    evaluation::BinaryRows p, l;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (fold_of[i] == f) {
        p.push_back(preds[i]);
        l.push_back(labels[i]);
      }
    tables.push_back(evaluation::f1_accuracy(evaluation::confusion(p, l), names));
    table_names.push_back("fold" + std::to_string(f + 1));
  }
  tables.push_back(evaluation::average_tables(tables));
  table_names.push_back("mean");
  return {table_names, tables};
}

int run_eval(const EvalArgs& a) {
  const auto m = model::load<float>(a.ckpt);
  const auto samples = load_manifest_samples<float>(a.manifest);
  const auto probs = training::predict_probs(m, samples);
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::string> subjects;
  for (const auto& s : samples) subjects.push_back(s.subject);
  const auto [names, tables] =
      fold_tables(training::binarize(probs), training::label_rows(samples, all), subjects,
                  a.folds, a.seed, evaluation::default_label_names());
  for (std::size_t t = 0; t < tables.size(); ++t)
    std::cerr << evaluation::metrics_text(names[t], tables[t]);
  const std::string csv = evaluation::metrics_csv(names, tables);
  if (a.out.empty()) std::cout << csv;
  else write_output(a.out, csv);
  return 0;
}

int run_gradcheck(const std::string& module) {
  std::vector<std::string> suites = gradcheck::suite_names();
  if (!module.empty()) suites = {module};
  bool ok = true;
  for (const auto& name : suites) {
    const auto rep = gradcheck::run_suite(name);
    for (const auto& r : rep.results) std::cout << gradcheck::format_result(r) << "\n";
    std::cout << "suite " << name << ": " << (rep.passed() ? "PASS" : "FAIL") << " ("
              << rep.seconds << " s)\n";
    ok = ok && rep.passed();
  }
  if (!ok) throw RunFailure("gradient check failed");
  return 0;
}

struct FeatmapArgs {
  fs::path ckpt, image, landmarks, out;
  std::string tap = "group4";
};

int run_featmap(const FeatmapArgs& a) {
  const auto m = model::load<float>(a.ckpt);
  Tensor<float> img = data::load_image<float>(a.image);
  img = img.reshaped({1, 3, data::kImageSize, data::kImageSize});
  const std::vector<geometry::LandmarkSet> lm = {geometry::load_landmarks(a.landmarks)};
  const auto f = m.forward(img, lm, model::Mode::Eval);
  const auto gi = model::dump_feature_map(f.tap(a.tap), a.out);
  std::cerr << "wrote " << a.out.string() << " (" << gi.width << "x" << gi.height << ")\n";
  return 0;
}

struct TransferArgs {
  fs::path ckpt, manifest, labels, out;
  int folds = 3;
  double ridge = 0;
  std::uint64_t seed = 0;
};

/// Labels CSV: an `image` column matching the manifest plus one 0/1 column
/// per target label.
std::pair<std::vector<std::string>, std::map<std::string, std::vector<int>>> load_label_table(
    const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("--labels: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("--labels: file is empty");
  auto header = data::detail::split_csv_line(line);
  const auto img_col = std::find(header.begin(), header.end(), "image");
  if (img_col == header.end()) throw ValidationError("--labels: missing column 'image'");
  const std::size_t ic = static_cast<std::size_t>(img_col - header.begin());
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != ic) names.push_back(header[c]);
  if (names.empty()) throw ValidationError("--labels: no label columns");
  std::map<std::string, std::vector<int>> rows;
  const fs::path base = path.parent_path();
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = data::detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("--labels line " + std::to_string(n) + ": wrong field count");
    std::vector<int> v;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == ic) continue;
      if (cells[c] != "0" && cells[c] != "1")
        throw ValidationError("--labels line " + std::to_string(n) + ", column '" + header[c] +
                              "': '" + cells[c] + "' is not 0 or 1");
      v.push_back(cells[c] == "1");
    }
    const fs::path p = fs::path(cells[ic]).is_absolute() ? fs::path(cells[ic]) : base / cells[ic];
    rows[p.lexically_normal().string()] = v;
  }
  return {names, rows};
}

int run_transfer(const TransferArgs& a) {
  const auto m = model::load<float>(a.ckpt);
  const auto loaded = data::load_manifest(a.manifest);
  if (loaded.records.empty()) throw ValidationError("--manifest: no samples to process");
  const auto [names, rows] = load_label_table(a.labels);
  evaluation::BinaryRows labels;
  for (const auto& r : loaded.records) {
    const auto it = rows.find(r.image_path.lexically_normal().string());
    if (it == rows.end())
      throw ValidationError("--labels: no row for image '" + r.image_path.string() + "'");
    labels.push_back(it->second);
  }
  const auto samples = data::load_samples<float>(loaded.records);
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const training::InputCache<float> cache(m, samples, false);
  Tensor<float> features({samples.size(), m.spec().fc_width()});
  for (std::size_t b = 0; b < all.size(); b += 16) {
    const std::span<const std::size_t> idx(all.data() + b, std::min<std::size_t>(16, all.size() - b));
    const auto geo = cache.geometry(idx);
    const auto f = m.forward(cache.batch(idx), geo, model::Mode::Eval);
    std::copy(f.features.data().begin(), f.features.data().end(),
              features.raw() + b * m.spec().fc_width());
  }
  const Eigen::MatrixXd x = training::to_matrix(features);
  Eigen::MatrixXd y(x.rows(), Eigen::Index(names.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t k = 0; k < names.size(); ++k) y(Eigen::Index(i), Eigen::Index(k)) = labels[i][k];

  evaluation::BinaryRows preds(labels.size());
  std::vector<std::string> subjects;
  for (const auto& s : samples) subjects.push_back(s.subject);
  if (a.folds <= 1) {
    const auto head = training::fit_linear_head(x, y, a.ridge);
    preds = head.predict_binary(x);
  } else {
    const auto fold_of = evaluation::subject_folds(subjects, a.folds, a.seed);
    for (int f = 0; f < a.folds; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (std::size_t i = 0; i < fold_of.size(); ++i)
        (fold_of[i] == f ? te : tr).push_back(Eigen::Index(i));
      const auto head = training::fit_linear_head(x(tr, Eigen::all), y(tr, Eigen::all), a.ridge);
      const auto p = head.predict_binary(x(te, Eigen::all));
      for (std::size_t k = 0; k < te.size(); ++k) preds[std::size_t(te[k])] = p[k];
    }
  }
  const auto [tnames, tables] = fold_tables(preds, labels, subjects, a.folds, a.seed, names);
  for (std::size_t t = 0; t < tables.size(); ++t)
    std::cerr << evaluation::metrics_text(tnames[t], tables[t]);
  const std::string csv = evaluation::metrics_csv(tnames, tables);
  if (a.out.empty()) std::cout << csv;
  else write_output(a.out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based facial action unit detection toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  AttentionArgs att;
  auto* s_att = app.add_subcommand("attention", "Write the 100x100 attention map of a face");
  s_att->add_option("--landmarks", att.landmarks, "68-point landmark JSON")
      ->required()
      ->check(CLI::ExistingFile);
  s_att->add_option("--out", att.out, "Output 16-bit PGM (weight 1 maps to 65535)")->required();
  s_att->add_option("--raw", att.raw, "Output float32 grid (default: <out>.att)");

  fs::path centers_lm;
  auto* s_centers = app.add_subcommand("centers", "Print the 20 AU centers as JSON");
  s_centers->add_option("--landmarks", centers_lm, "68-point landmark JSON")
      ->required()
      ->check(CLI::ExistingFile);

  SynthArgs syn;
  auto* s_syn = app.add_subcommand("synth", "Generate a synthetic face dataset");
  s_syn->add_option("--spec", syn.spec, "Generator spec JSON")->required()->check(CLI::ExistingFile);
  s_syn->add_option("--out", syn.out, "Output directory")->required();
  s_syn->add_option("--seed", syn.seed, "Override the spec seed");
  s_syn->add_option("--count", syn.count, "Override the sample count")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train a network on a manifest");
  s_tr->add_option("--config", tr.config, "key = value training config")->check(CLI::ExistingFile);
  s_tr->add_option("--manifest", tr.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  s_tr->add_option("--variant", tr.variant, "Network variant")
      ->required()
      ->check(CLI::IsMember({"fvgg", "enet", "eac"}));
  s_tr->add_option("--init", tr.init, "Checkpoint seeding every name- and shape-matching tensor")
      ->check(CLI::ExistingFile);
  s_tr->add_option("--out", tr.out, "Output checkpoint")->required();
  s_tr->add_option("--log", tr.log, "Epoch log CSV (default: <out>.log.csv)");
  s_tr->add_option("--lr", tr.lr, "Learning rate (> 0)")->check(CLI::PositiveNumber);
  s_tr->add_option("--momentum", tr.momentum, "Momentum in [0,1)")->check(CLI::Range(0.0, 0.999999));
  s_tr->add_option("--epochs", tr.epochs, "Epoch count")->check(CLI::PositiveNumber);
  s_tr->add_option("--batch-size", tr.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  s_tr->add_option("--seed", tr.seed, "Seed for initialization, sampling and dropout");
  s_tr->add_option("--width-scale", tr.width_scale, "Channel and FC width multiplier in (0,1]")
      ->check(CLI::Range(1e-6, 1.0));
  s_tr->add_option("--holdout", tr.holdout, "Fraction of subjects held out for the epoch log")
      ->check(CLI::Range(0.0, 0.99));
  s_tr->add_option("--target-f1", tr.target_f1, "Stop once the logged mean F1 reaches this")
      ->check(CLI::Range(0.0, 1.0));
  s_tr->add_option("--precision", tr.precision, "Arithmetic: 32 or 64 bit")
      ->check(CLI::IsMember({"32", "64"}));

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Per-fold F1/accuracy of a checkpoint");
  s_ev->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_ev->add_option("--manifest", ev.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  s_ev->add_option("--folds", ev.folds, "Subject folds (1 = whole set)")->capture_default_str()
      ->check(CLI::Range(1, 100));
  s_ev->add_option("--seed", ev.seed, "Fold assignment seed")->capture_default_str();
  s_ev->add_option("--out", ev.out, "Metrics CSV (default: stdout)");

  std::string gc_module;
  auto* s_gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suites");
  s_gc->add_option("--module", gc_module, "Single suite")
      ->check(CLI::IsMember({"tensor", "layers", "loss", "model"}));

  FeatmapArgs fm;
  auto* s_fm = app.add_subcommand("featmap", "Dump a tiled feature map as PGM");
  s_fm->add_option("--ckpt", fm.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_fm->add_option("--image", fm.image, "PGM/PPM face image")->required()->check(CLI::ExistingFile);
  s_fm->add_option("--landmarks", fm.landmarks, "68-point landmark JSON")
      ->required()
      ->check(CLI::ExistingFile);
  s_fm->add_option("--tap", fm.tap, "Group output to dump")->capture_default_str()
      ->check(CLI::IsMember({"group1", "group2", "group3", "group4", "group5"}));
  s_fm->add_option("--out", fm.out, "Output PGM")->required();

  TransferArgs tf;
  auto* s_tf = app.add_subcommand("transfer", "Linear head on penultimate features, per fold");
  s_tf->add_option("--ckpt", tf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_tf->add_option("--manifest", tf.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  s_tf->add_option("--labels", tf.labels, "CSV: image column plus one 0/1 column per label")
      ->required()
      ->check(CLI::ExistingFile);
  s_tf->add_option("--folds", tf.folds, "Subject folds (1 = fit and score on all)")->capture_default_str()
      ->check(CLI::Range(1, 100));
  s_tf->add_option("--ridge", tf.ridge, "Ridge penalty (>= 0)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  s_tf->add_option("--seed", tf.seed, "Fold assignment seed")->capture_default_str();
  s_tf->add_option("--out", tf.out, "Metrics CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (s_att->parsed()) return run_attention(att);
    if (s_centers->parsed()) return run_centers(centers_lm);
    if (s_syn->parsed()) return run_synth(syn);
    if (s_tr->parsed()) return run_train(tr);
    if (s_ev->parsed()) return run_eval(ev);
    if (s_gc->parsed()) return run_gradcheck(gc_module);
    if (s_fm->parsed()) return run_featmap(fm);
    if (s_tf->parsed()) return run_transfer(tf);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DegenerateLandmarksError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
