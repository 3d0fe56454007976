#pragma once

// Per-class and aggregate classification metrics. Undefined ratios
// (zero denominators) are reported as 0.

#include "dora/tensor.hpp"

#include <json.hpp>

#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dora {

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<ClassMetrics> classes;
  double weighted_precision = 0;
  double weighted_recall = 0;
  double weighted_f1 = 0;
  double macro_f1 = 0;
  double accuracy = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
};

inline EvalReport compute_report(std::span<const int> predictions, std::span<const int> golds, int class_count,
                                 std::vector<std::string> labels = {}) {
  if (predictions.size() != golds.size())
    throw InputError("predictions (" + std::to_string(predictions.size()) + ") and golds (" +
                     std::to_string(golds.size()) + ") differ in length");
  if (predictions.empty()) throw InputError("cannot score an empty prediction set");
  if (class_count < 1) throw InputError("class_count must be >= 1");
  if (labels.empty())
    for (int c = 0; c < class_count; ++c) labels.push_back(std::to_string(c));
  if (static_cast<int>(labels.size()) != class_count) throw InputError("label count differs from class_count");

  const std::size_t C = static_cast<std::size_t>(class_count);
  EvalReport r;
  r.labels = std::move(labels);
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] < 0 || golds[i] >= class_count || predictions[i] < 0 || predictions[i] >= class_count)
      throw InputError("class index out of range at position " + std::to_string(i));
    ++r.confusion[golds[i]][predictions[i]];
  }

  std::size_t correct = 0;
  r.classes.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t tp = r.confusion[c][c];
    std::size_t predicted = 0, actual = 0;
    for (std::size_t k = 0; k < C; ++k) {
      predicted += r.confusion[k][c];
      actual += r.confusion[c][k];
    }
    auto& m = r.classes[c];
    m.support = actual;
    m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    correct += tp;
  }

  const double n = static_cast<double>(golds.size());
  for (const auto& m : r.classes) {
    const double w = static_cast<double>(m.support) / n;
    r.weighted_precision += w * m.precision;
    r.weighted_recall += w * m.recall;
    r.weighted_f1 += w * m.f1;
    r.macro_f1 += m.f1;
  }
  r.macro_f1 /= static_cast<double>(C);
  r.accuracy = static_cast<double>(correct) / n;
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["classes"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    nlohmann::ordered_json cj;
    cj["label"] = r.labels[c];
    cj["precision"] = r.classes[c].precision;
    cj["recall"] = r.classes[c].recall;
    cj["f1"] = r.classes[c].f1;
    cj["support"] = r.classes[c].support;
    j["classes"].push_back(cj);
  }
  j["weighted"] = {{"precision", r.weighted_precision}, {"recall", r.weighted_recall}, {"f1", r.weighted_f1}};
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["confusion_matrix"] = r.confusion;
  return j;
}

inline std::string fixed(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width, bool left = true) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

/// Class-wise table: Category | P | R | F1 | Support, followed by the
/// macro and weighted F1 rows.
inline std::string format_class_table(const EvalReport& r) {
  std::ostringstream out;
  std::size_t w = 10;
  for (const auto& l : r.labels) w = std::max(w, l.size() + 2);
  out << pad("Category", w) << pad("P", 8, false) << pad("R", 8, false) << pad("F1", 8, false)
      << pad("Support", 10, false) << '\n';
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const auto& m = r.classes[c];
    out << pad(r.labels[c], w) << pad(fixed(m.precision, 2), 8, false) << pad(fixed(m.recall, 2), 8, false)
        << pad(fixed(m.f1, 2), 8, false) << pad(std::to_string(m.support), 10, false) << '\n';
  }
  out << pad("Ma.F1", w) << pad(fixed(r.macro_f1, 2), 24, false) << '\n';
  out << pad("W.F1", w) << pad(fixed(r.weighted_f1, 2), 24, false) << '\n';
  return out.str();
}

}  // namespace dora
