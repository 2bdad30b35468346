#pragma once

// Multi-label detection metrics (per-label F1 and accuracy with macro
// averages), label occurrence rates, and subject-level fold assignment.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eacnet/error.hpp"
#include "eacnet/geometry.hpp"

namespace eacnet::evaluation {

/// Rows of 0/1 entries, one row per sample.
using BinaryRows = std::vector<std::vector<int>>;

struct Counts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct ConfusionCounts {
  std::vector<Counts> per_label;
};

inline std::vector<std::string> default_label_names() {
  std::vector<std::string> names;
  for (int au : geometry::kActionUnits) names.push_back(std::to_string(au));
  return names;
}

inline void check_binary(const BinaryRows& rows, const char* what, std::size_t width) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width)
      throw ShapeError(std::string(what) + " row " + std::to_string(i) + " has " +
                       std::to_string(rows[i].size()) + " entries, expected " +
                       std::to_string(width));
    for (std::size_t j = 0; j < width; ++j)
      if (rows[i][j] != 0 && rows[i][j] != 1)
        throw DomainError(std::string(what) + " entry (" + std::to_string(i) + "," +
                          std::to_string(j) + ") = " + std::to_string(rows[i][j]) +
                          " is not binary");
  }
}

inline ConfusionCounts confusion(const BinaryRows& preds, const BinaryRows& labels) {
  if (preds.size() != labels.size())
    throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " label rows");
  const std::size_t k = labels.empty() ? 0 : labels.front().size();
  check_binary(preds, "predictions", k);
  check_binary(labels, "labels", k);
  ConfusionCounts c{std::vector<Counts>(k)};
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      auto& cnt = c.per_label[j];
      const bool p = preds[i][j] == 1, l = labels[i][j] == 1;
      if (p && l) ++cnt.tp;
      else if (p) ++cnt.fp;
      else if (l) ++cnt.fn;
      else ++cnt.tn;
    }
  return c;
}

struct MetricsTable {
  std::vector<std::string> labels;
  std::vector<double> f1;
  std::vector<double> accuracy;
  double mean_f1 = 0;
  double mean_accuracy = 0;
};

inline double safe_ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

inline double f1_score(const Counts& c) {
  const double p = safe_ratio(double(c.tp), double(c.tp + c.fp));
  const double r = safe_ratio(double(c.tp), double(c.tp + c.fn));
  return safe_ratio(2 * p * r, p + r);
}

inline double accuracy(const Counts& c) {
  return safe_ratio(double(c.tp + c.tn), double(c.total()));
}

/// Precision / recall / F1 with 0/0 -> 0; averages are macro means.
inline MetricsTable f1_accuracy(const ConfusionCounts& c,
                                std::vector<std::string> names = default_label_names()) {
  MetricsTable t;
  if (names.size() != c.per_label.size()) {
    names.clear();
    for (std::size_t j = 0; j < c.per_label.size(); ++j) names.push_back(std::to_string(j));
  }
  t.labels = std::move(names);
  for (const auto& cnt : c.per_label) {
    t.f1.push_back(f1_score(cnt));
    t.accuracy.push_back(accuracy(cnt));
  }
  if (!t.f1.empty()) {
    t.mean_f1 = std::accumulate(t.f1.begin(), t.f1.end(), 0.0) / double(t.f1.size());
    t.mean_accuracy =
        std::accumulate(t.accuracy.begin(), t.accuracy.end(), 0.0) / double(t.accuracy.size());
  }
  return t;
}

/// Per-label mean of the labels.
inline std::vector<double> occurrence_rates(const BinaryRows& labels) {
  if (labels.empty()) throw ValidationError("occurrence_rates: no samples");
  const std::size_t k = labels.front().size();
  check_binary(labels, "labels", k);
  std::vector<double> rates(k, 0.0);
  for (const auto& row : labels)
    for (std::size_t j = 0; j < k; ++j) rates[j] += row[j];
  for (auto& r : rates) r /= double(labels.size());
  return rates;
}

/// Assigns each distinct subject to one of k folds (subject counts differ by
/// at most one) and returns the fold of every sample.
inline std::vector<int> subject_folds(const std::vector<std::string>& subject_ids, int k,
                                      std::uint64_t seed) {
  if (k < 2) throw ValidationError("subject_folds: need k >= 2");
  std::vector<std::string> subjects = subject_ids;
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.size() < static_cast<std::size_t>(k))
    throw ValidationError("subject_folds: " + std::to_string(subjects.size()) +
                          " subjects cannot fill " + std::to_string(k) + " folds");
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    fold_of[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::vector<int> folds;
  folds.reserve(subject_ids.size());
  for (const auto& s : subject_ids) folds.push_back(fold_of.at(s));
  return folds;
}

// ---------------------------------------------------------------------------
// Reporting

/// CSV with one row per label plus an "Avg" row; one F1 and one accuracy
/// column per named table (e.g. per fold or per method).
inline std::string metrics_csv(const std::vector<std::string>& table_names,
                               const std::vector<MetricsTable>& tables) {
  if (table_names.size() != tables.size() || tables.empty())
    throw ValidationError("metrics_csv: one name per table required");
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  out << "AU";
  for (const auto& n : table_names) out << "," << n << "_F1";
  for (const auto& n : table_names) out << "," << n << "_Acc";
  out << "\n";
  for (std::size_t j = 0; j < tables.front().labels.size(); ++j) {
    out << tables.front().labels[j];
    for (const auto& t : tables) out << "," << t.f1.at(j);
    for (const auto& t : tables) out << "," << t.accuracy.at(j);
    out << "\n";
  }
  out << "Avg";
  for (const auto& t : tables) out << "," << t.mean_f1;
  for (const auto& t : tables) out << "," << t.mean_accuracy;
  out << "\n";
  return out.str();
}

/// Aligned plain-text rendering (percentages, one decimal).
inline std::string metrics_text(const std::string& title, const MetricsTable& t) {
  std::ostringstream out;
  out << title << "\n";
  out << std::left << std::setw(6) << "AU" << std::right << std::setw(8) << "F1" << std::setw(8)
      << "Acc" << "\n";
  out << std::fixed << std::setprecision(1);
  for (std::size_t j = 0; j < t.labels.size(); ++j)
    out << std::left << std::setw(6) << t.labels[j] << std::right << std::setw(8)
        << 100 * t.f1[j] << std::setw(8) << 100 * t.accuracy[j] << "\n";
  out << std::left << std::setw(6) << "Avg" << std::right << std::setw(8) << 100 * t.mean_f1
      << std::setw(8) << 100 * t.mean_accuracy << "\n";
  return out.str();
}

/// Element-wise mean of several tables over the same labels.
inline MetricsTable average_tables(const std::vector<MetricsTable>& tables) {
  if (tables.empty()) throw ValidationError("average_tables: nothing to average");
  MetricsTable m = tables.front();
  for (std::size_t j = 0; j < m.labels.size(); ++j) {
    double f = 0, a = 0;
    for (const auto& t : tables) {
      f += t.f1.at(j);
      a += t.accuracy.at(j);
    }
    m.f1[j] = f / double(tables.size());
    m.accuracy[j] = a / double(tables.size());
  }
  m.mean_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / double(m.f1.size());
  m.mean_accuracy =
      std::accumulate(m.accuracy.begin(), m.accuracy.end(), 0.0) / double(m.accuracy.size());
  return m;
}

}  // namespace eacnet::evaluation
