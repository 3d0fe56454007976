#pragma once

// Samples, labels, splits and the JSON-lines manifest format.
//
// A manifest file holds one JSON object per line:
//   {"id": ..., "image_ref": ..., "caption": ..., "task1": "HT"|"NHT",
//    "task2": "TI"|"TO"|"TC"|"TS"|null, "split": "train"|"valid"|"test"|null}
// An optional first line {"manifest": {"name": ..., "language_tag": ...}}
// carries manifest metadata.

#include "dora/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dora {

enum class Task1Label { HT, NHT };
enum class Task2Label { TI, TO, TC, TS };
enum class Split { train, valid, test, unassigned };
enum class Task { hate_detection = 1, target_identification = 2 };

inline constexpr std::array<std::string_view, 2> kTask1Names{"HT", "NHT"};
inline constexpr std::array<std::string_view, 4> kTask2Names{"TI", "TO", "TC", "TS"};
inline constexpr std::array<std::string_view, 4> kSplitNames{"train", "valid", "test",
                                                             "unassigned"};

inline std::string to_string(Task1Label l) { return std::string(kTask1Names[static_cast<int>(l)]); }
inline std::string to_string(Task2Label l) { return std::string(kTask2Names[static_cast<int>(l)]); }
inline std::string to_string(Split s) { return std::string(kSplitNames[static_cast<int>(s)]); }

inline std::optional<Task1Label> parse_task1(std::string_view s) {
  for (std::size_t i = 0; i < kTask1Names.size(); ++i)
    if (kTask1Names[i] == s) return static_cast<Task1Label>(i);
  return std::nullopt;
}

inline std::optional<Task2Label> parse_task2(std::string_view s) {
  for (std::size_t i = 0; i < kTask2Names.size(); ++i)
    if (kTask2Names[i] == s) return static_cast<Task2Label>(i);
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (kSplitNames[i] == s) return static_cast<Split>(i);
  return std::nullopt;
}

inline Task task_from_int(int id) {
  if (id == 1) return Task::hate_detection;
  if (id == 2) return Task::target_identification;
  throw InputError("unknown task id " + std::to_string(id) + " (expected 1 or 2)");
}

inline std::vector<std::string> class_labels(Task task) {
  if (task == Task::hate_detection) return {kTask1Names.begin(), kTask1Names.end()};
  return {kTask2Names.begin(), kTask2Names.end()};
}

struct TaskLabel {
  Task1Label task1 = Task1Label::NHT;
  std::optional<Task2Label> task2;

  /// Empty when valid, otherwise the violated invariant.
  std::string violation() const {
    if (task2 && task1 != Task1Label::HT) return "task2 is only defined when task1 = HT";
    return {};
  }
};

struct MemeSample {
  std::string id;
  std::string image_ref;
  std::string caption;
  TaskLabel labels;
  Split split = Split::unassigned;

  bool operator==(const MemeSample& o) const {
    return id == o.id && image_ref == o.image_ref && caption == o.caption &&
           labels.task1 == o.labels.task1 && labels.task2 == o.labels.task2 && split == o.split;
  }
};

/// Class index of a sample for a task, or nullopt when the sample has no label
/// for that task (non-hateful memes carry no target).
inline std::optional<int> label_index(const MemeSample& s, Task task) {
  if (task == Task::hate_detection) return static_cast<int>(s.labels.task1);
  if (s.labels.task2) return static_cast<int>(*s.labels.task2);
  return std::nullopt;
}

struct DatasetManifest {
  std::string name;
  std::string language_tag = "und";
  std::vector<MemeSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<const MemeSample*> in_split(Split split) const {
    std::vector<const MemeSample*> out;
    for (const auto& s : samples)
      if (s.split == split) out.push_back(&s);
    return out;
  }
};

struct ManifestReject {
  std::size_t line = 0;
  std::string field;
  std::string error;
  std::string raw;  // the offending line as read
};

struct LoadResult {
  DatasetManifest manifest;
  std::vector<ManifestReject> rejects;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

struct FieldError {
  std::string field;
  std::string message;
};

inline std::string required_string(const nlohmann::json& rec, const std::string& key) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) throw FieldError{key, "missing required field"};
  if (!it->is_string()) throw FieldError{key, "expected a string"};
  return it->get<std::string>();
}

inline MemeSample sample_from_json(const nlohmann::json& rec) {
  if (!rec.is_object()) throw FieldError{"", "record is not a JSON object"};
  MemeSample s;
  s.id = required_string(rec, "id");
  if (s.id.empty()) throw FieldError{"id", "id must be non-empty"};
  s.image_ref = required_string(rec, "image_ref");
  s.caption = required_string(rec, "caption");
  if (trim(s.caption).empty()) throw FieldError{"caption", "caption is empty after trimming"};
  const auto t1 = required_string(rec, "task1");
  auto l1 = parse_task1(t1);
  if (!l1) throw FieldError{"task1", "label '" + t1 + "' not in {HT, NHT}"};
  s.labels.task1 = *l1;
  if (auto it = rec.find("task2"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw FieldError{"task2", "expected a string or null"};
    auto l2 = parse_task2(it->get<std::string>());
    if (!l2)
      throw FieldError{"task2", "label '" + it->get<std::string>() + "' not in {TI, TO, TC, TS}"};
    s.labels.task2 = *l2;
  }
  if (auto v = s.labels.violation(); !v.empty()) throw FieldError{"task2", v};
  if (auto it = rec.find("split"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw FieldError{"split", "expected a string or null"};
    auto sp = parse_split(it->get<std::string>());
    if (!sp) throw FieldError{"split", "unknown split '" + it->get<std::string>() + "'"};
    s.split = *sp;
  }
  return s;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const MemeSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["image_ref"] = s.image_ref;
  j["caption"] = s.caption;
  j["task1"] = to_string(s.labels.task1);
  j["task2"] = s.labels.task2 ? nlohmann::ordered_json(to_string(*s.labels.task2)) : nullptr;
  j["split"] = s.split == Split::unassigned ? nlohmann::ordered_json(nullptr)
                                            : nlohmann::ordered_json(to_string(s.split));
  return j;
}

/// Parses manifest text. Invalid records are collected in `rejects` and left
/// out of the manifest; the first occurrence of a duplicated id wins.
inline LoadResult parse_manifest(std::istream& in, std::string name) {
  LoadResult result;
  result.manifest.name = std::move(name);
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  bool first_record = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.rejects.push_back({line_no, "", std::string("malformed JSON: ") + e.what(), line});
      first_record = false;
      continue;
    }
    if (first_record && rec.is_object() && rec.contains("manifest")) {
      first_record = false;
      const auto& meta = rec["manifest"];
      if (meta.is_object()) {
        if (meta.contains("name") && meta["name"].is_string())
          result.manifest.name = meta["name"].get<std::string>();
        if (meta.contains("language_tag") && meta["language_tag"].is_string())
          result.manifest.language_tag = meta["language_tag"].get<std::string>();
      }
      continue;
    }
    first_record = false;
    try {
      MemeSample s = detail::sample_from_json(rec);
      if (!seen.insert(s.id).second)
        throw detail::FieldError{"id", "duplicate id '" + s.id + "'"};
      result.manifest.samples.push_back(std::move(s));
    } catch (const detail::FieldError& e) {
      result.rejects.push_back({line_no, e.field, e.message, line});
    }
  }
  return result;
}

inline LoadResult load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest '" + path.string() + "'");
  return parse_manifest(in, path.stem().string());
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
  nlohmann::ordered_json meta;
  meta["manifest"]["name"] = m.name;
  meta["manifest"]["language_tag"] = m.language_tag;
  out << meta.dump() << '\n';
  for (const auto& s : m.samples) out << to_json(s).dump() << '\n';
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write manifest '" + path.string() + "'");
  write_manifest(out, m);
}

/// Reject report: the rejected record's fields (when parseable) plus
/// "line" and "error".
inline void write_rejects(std::ostream& out, const std::vector<ManifestReject>& rejects) {
  for (const auto& r : rejects) {
    nlohmann::ordered_json j;
    auto parsed = nlohmann::ordered_json::parse(r.raw, nullptr, false);
    if (parsed.is_object()) j = parsed;
    j["line"] = r.line;
    j["error"] = r.field.empty() ? r.error : r.field + ": " + r.error;
    out << j.dump() << '\n';
  }
}

/// Stratified (by task1) split with largest-remainder rounding of the
/// per-stratum shares. Ties in the remainders go to train, then valid, then test.
inline DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios,
                                     std::uint64_t seed) {
  for (double r : ratios)
    if (!(r > 0.0)) throw InputError("split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw InputError("split ratios must sum to 1");
  for (const auto& s : manifest.samples)
    if (s.split != Split::unassigned)
      throw InputError("sample '" + s.id + "' already has a split assignment");

  DatasetManifest out = manifest;
  Rng rng(seed);
  for (std::size_t stratum = 0; stratum < kTask1Names.size(); ++stratum) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.samples.size(); ++i)
      if (static_cast<std::size_t>(out.samples[i].labels.task1) == stratum) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < 3)
      throw InputError("stratum " + std::string(kTask1Names[stratum]) + " has " +
                       std::to_string(members.size()) + " samples; at least 3 are required");

    for (std::size_t i = members.size() - 1; i > 0; --i)
      std::swap(members[i], members[index_below(rng, i + 1)]);

    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = n * ratios[k];
      sizes[k] = static_cast<std::size_t>(std::floor(quota));
      remainders[k] = quota - std::floor(quota);
      assigned += sizes[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) ++sizes[order[k % 3]];

    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < sizes[k]; ++c)
        out.samples[members[pos++]].split = static_cast<Split>(k);
  }
  return out;
}

/// Label -> count for one task, optionally restricted to a split. Every label
/// of the task appears, with 0 when absent.
inline std::map<std::string, std::size_t> class_distribution(const DatasetManifest& manifest,
                                                             int task_id,
                                                             std::optional<Split> split = {}) {
  const Task task = task_from_int(task_id);
  std::map<std::string, std::size_t> counts;
  for (const auto& name : class_labels(task)) counts[name] = 0;
  const auto names = class_labels(task);
  for (const auto& s : manifest.samples) {
    if (split && s.split != *split) continue;
    if (auto idx = label_index(s, task)) ++counts[names[*idx]];
  }
  return counts;
}

}  // namespace dora
