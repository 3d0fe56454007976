#pragma once

// Ablation grid and cross-dataset transfer matrix.

#include "dora/metrics.hpp"
#include "dora/pipeline.hpp"
#include "dora/training.hpp"

#include <json.hpp>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dora {

struct AblationRow {
  AblationVariant variant = AblationVariant::FULL;
  int fused_width = 0;
  std::vector<std::string> components;
  EvalReport report;
  TrainHistory history;
};

/// One independent training run per variant, all from `train_config.seed`,
/// scored on `eval_examples`.
template <typename T>
std::vector<AblationRow> run_ablation(const TrainData<T>& data, const std::vector<Example<T>>& eval_examples,
                                      const ModelConfig& base, const TrainConfig& train_config,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::string>& labels = {}) {
  if (variants.empty()) throw InputError("no ablation variants requested");
  std::vector<AblationRow> rows;
  for (AblationVariant v : variants) {
    ModelConfig cfg = base;
    cfg.variant = v;
    AblationRow row;
    row.variant = v;
    row.fused_width = cfg.fused_width();
    const auto inc = included_components(v);
    for (int c = 0; c < 4; ++c)
      if (inc[c]) row.components.emplace_back(kComponentNames[c]);
    try {
      TrainOptions opts;
      opts.labels = labels;
      auto trained = train(DoraModel<T>::init(cfg, train_config.seed), data, train_config, opts);
      row.report = evaluate_model(trained.best_model, eval_examples, labels).report;
      row.history = std::move(trained.history);
    } catch (const InputError& e) {
      throw InputError("variant " + to_string(v) + ": " + e.what());
    } catch (const Error& e) {
      throw NumericError("variant " + to_string(v) + ": " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json rj;
    rj["variant"] = to_string(r.variant);
    rj["model"] = display_name(r.variant);
    rj["components"] = r.components;
    rj["fused_width"] = r.fused_width;
    rj["report"] = to_json(r.report);
    rj["best_epoch"] = r.history.best_epoch;
    j.push_back(rj);
  }
  return j;
}

/// Model | P | R | F1 (weighted), one row per variant.
inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << pad("Model", 24) << pad("P", 8, false) << pad("R", 8, false) << pad("F1", 8, false) << '\n';
  for (const auto& r : rows)
    out << pad(display_name(r.variant), 24) << pad(fixed(r.report.weighted_precision), 8, false)
        << pad(fixed(r.report.weighted_recall), 8, false) << pad(fixed(r.report.weighted_f1), 8, false) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

template <typename T>
struct TransferModel {
  std::string dataset;
  DoraModel<T> model;
  Task task = Task::hate_detection;
  std::vector<std::string> labels;  // class names the model was trained with
  Tokenizer tokenizer;
};

template <typename T>
struct TransferTest {
  std::string dataset;
  DatasetManifest manifest;
  InputSources<T> sources;
};

struct TransferCell {
  std::string train_dataset;
  std::string test_dataset;
  std::optional<double> weighted_f1;
  std::string incompatibility;  // set when weighted_f1 is empty
};

/// Row-major |models| x |tests| matrix of weighted F1 on `split` of each test manifest.
template <typename T>
std::vector<TransferCell> transfer_eval(const std::vector<TransferModel<T>>& models,
                                        const std::vector<TransferTest<T>>& tests, Split split = Split::test) {
  std::vector<TransferCell> cells;
  for (const auto& m : models)
    for (const auto& t : tests) {
      TransferCell cell{m.dataset, t.dataset, std::nullopt, {}};
      const auto schema = class_labels(m.task);
      if (m.labels != schema) {
        cell.incompatibility = "label schema differs from the test dataset's task schema";
      } else if (static_cast<int>(schema.size()) != m.model.config.class_count) {
        cell.incompatibility = "model class count does not match the task";
      } else {
        auto examples = build_examples(t.manifest, m.task, split, m.model.config, m.tokenizer, t.sources);
        if (examples.empty())
          cell.incompatibility = "no " + to_string(split) + " samples labelled for task " +
                                 std::to_string(static_cast<int>(m.task));
        else
          cell.weighted_f1 = evaluate_model(m.model, examples, schema).report.weighted_f1;
      }
      cells.push_back(std::move(cell));
    }
  return cells;
}

inline nlohmann::ordered_json to_json(const std::vector<TransferCell>& cells) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json cj;
    cj["train_dataset"] = c.train_dataset;
    cj["test_dataset"] = c.test_dataset;
    if (c.weighted_f1) {
      cj["weighted_f1"] = *c.weighted_f1;
    } else {
      cj["weighted_f1"] = nullptr;
      cj["incompatible"] = c.incompatibility;
    }
    j.push_back(cj);
  }
  return j;
}

/// Rows: training dataset; columns: test dataset; cells: weighted F1 ("n/a"
/// when incompatible).
inline std::string format_transfer_table(const std::vector<TransferCell>& cells) {
  std::vector<std::string> rows, cols;
  for (const auto& c : cells) {
    if (std::find(rows.begin(), rows.end(), c.train_dataset) == rows.end()) rows.push_back(c.train_dataset);
    if (std::find(cols.begin(), cols.end(), c.test_dataset) == cols.end()) cols.push_back(c.test_dataset);
  }
  std::size_t w0 = 12, w = 10;
  for (const auto& r : rows) w0 = std::max(w0, r.size() + 2);
  for (const auto& c : cols) w = std::max(w, c.size() + 2);
  std::ostringstream out;
  out << pad("train \\ test", w0);
  for (const auto& c : cols) out << pad(c, w, false);
  out << '\n';
  for (const auto& r : rows) {
    out << pad(r, w0);
    for (const auto& c : cols) {
      std::string v = "-";
      for (const auto& cell : cells)
        if (cell.train_dataset == r && cell.test_dataset == c) v = cell.weighted_f1 ? fixed(*cell.weighted_f1) : "n/a";
      out << pad(v, w, false);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dora
