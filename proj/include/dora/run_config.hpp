#pragma once

// Flat `key = value` run configuration. Resolution order: built-in defaults,
// then a config file, then command-line overrides. Unknown keys are errors.

#include "dora/model.hpp"
#include "dora/training.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace dora {

using RunConfig = std::map<std::string, std::string>;

inline RunConfig default_run_config() {
  return {
      // training
      {"optimizer", "MADGRAD"},
      {"learning_rate", "2e-05"},
      {"weight_decay", "0.01"},
      {"decoupled_weight_decay", "true"},
      {"batch_size", "4"},
      {"epochs", "20"},
      {"scheduler", "reduce_on_plateau"},
      {"plateau_patience", "3"},
      {"plateau_factor", "0.5"},
      {"class_weighting", "false"},
      {"seed", "42"},
      // task and fusion
      {"task", "1"},
      {"variant", "FULL"},
      {"d_model", "64"},
      {"d_head", "32"},
      {"heads", "2"},
      // visual encoder
      {"visual_backend", "lightweight"},
      {"visual_width", "64"},
      {"image_side", "64"},
      {"patch_size", "16"},
      {"channels", "3"},
      {"visual_depth", "1"},
      {"visual_trainable", "true"},
      // textual encoder
      {"text_backend", "lightweight"},
      {"text_width", "64"},
      {"max_length", "32"},
      {"vocab_words", "4000"},
      {"text_depth", "1"},
      {"text_trainable", "true"},
      {"positional", "true"},
      // adapters: feature directories or commands (empty = unused)
      {"visual_features", ""},
      {"text_features", ""},
      {"visual_adapter_cmd", ""},
      {"text_adapter_cmd", ""},
  };
}

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// Sets `key=value`, rejecting keys that have no default.
inline void set_option(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("expected key=value, got '" + assignment + "'");
  const auto key = trim_copy(assignment.substr(0, eq));
  if (!default_run_config().count(key)) throw InputError("unknown configuration key '" + key + "'");
  cfg[key] = trim_copy(assignment.substr(eq + 1));
}

inline void merge_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim_copy(line).empty()) continue;
    try {
      set_option(cfg, line);
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : cfg) out << k << " = " << v << '\n';
  return out.str();
}

namespace detail {

inline int get_int(const RunConfig& c, const std::string& k) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(c.at(k), &pos);
    if (pos != c.at(k).size()) throw std::invalid_argument(k);
    return v;
  } catch (const std::exception&) {
    throw InputError("configuration key '" + k + "' must be an integer, got '" + c.at(k) + "'");
  }
}

inline double get_double(const RunConfig& c, const std::string& k) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(c.at(k), &pos);
    if (pos != c.at(k).size()) throw std::invalid_argument(k);
    return v;
  } catch (const std::exception&) {
    throw InputError("configuration key '" + k + "' must be a number, got '" + c.at(k) + "'");
  }
}

inline bool get_bool(const RunConfig& c, const std::string& k) {
  const auto& v = c.at(k);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("configuration key '" + k + "' must be true or false, got '" + v + "'");
}

inline EncoderBackend get_backend(const RunConfig& c, const std::string& k) {
  if (c.at(k) == "lightweight") return EncoderBackend::lightweight;
  if (c.at(k) == "adapter") return EncoderBackend::adapter;
  throw InputError("configuration key '" + k + "' must be lightweight or adapter");
}

}  // namespace detail

inline TrainConfig train_config_from(const RunConfig& c) {
  TrainConfig t;
  t.optimizer = parse_optimizer(c.at("optimizer"));
  t.learning_rate = detail::get_double(c, "learning_rate");
  t.weight_decay = detail::get_double(c, "weight_decay");
  t.decoupled_weight_decay = detail::get_bool(c, "decoupled_weight_decay");
  t.batch_size = detail::get_int(c, "batch_size");
  t.epochs = detail::get_int(c, "epochs");
  t.scheduler = parse_scheduler(c.at("scheduler"));
  t.plateau_patience = detail::get_int(c, "plateau_patience");
  t.plateau_factor = detail::get_double(c, "plateau_factor");
  t.class_weighting = detail::get_bool(c, "class_weighting");
  const auto& seed = c.at("seed");
  if (seed.empty() || seed.find_first_not_of("0123456789") != std::string::npos)
    throw InputError("configuration key 'seed' must be a non-negative integer, got '" + seed + "'");
  t.seed = std::stoull(seed);
  t.validate();
  return t;
}

inline Task task_from(const RunConfig& c) { return task_from_int(detail::get_int(c, "task")); }

inline ModelConfig model_config_from(const RunConfig& c, int vocab_size) {
  ModelConfig m;
  m.d_model = detail::get_int(c, "d_model");
  m.d_head = detail::get_int(c, "d_head");
  m.heads = detail::get_int(c, "heads");
  m.variant = parse_variant(c.at("variant"));
  m.class_count = static_cast<int>(class_labels(task_from(c)).size());

  m.visual.modality = Modality::visual;
  m.visual.backend = detail::get_backend(c, "visual_backend");
  m.visual.output_width = detail::get_int(c, "visual_width");
  m.visual.image_side = detail::get_int(c, "image_side");
  m.visual.patch_size = detail::get_int(c, "patch_size");
  m.visual.channels = detail::get_int(c, "channels");
  m.visual.depth = detail::get_int(c, "visual_depth");
  m.visual.trainable = detail::get_bool(c, "visual_trainable");
  m.visual.positional = detail::get_bool(c, "positional");

  m.textual.modality = Modality::textual;
  m.textual.backend = detail::get_backend(c, "text_backend");
  m.textual.output_width = detail::get_int(c, "text_width");
  m.textual.max_length = detail::get_int(c, "max_length");
  m.textual.vocab_size = vocab_size;
  m.textual.depth = detail::get_int(c, "text_depth");
  m.textual.trainable = detail::get_bool(c, "text_trainable");
  m.textual.positional = detail::get_bool(c, "positional");
  m.validate();
  return m;
}

}  // namespace dora
