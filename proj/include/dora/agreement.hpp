#pragma once

// Annotation agreement (Cohen's kappa) and caption statistics.

#include "dora/metrics.hpp"
#include "dora/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dora {

/// Cohen's kappa between two annotators over `label_set`. Computed from
/// integer counts: kappa = (n*agree - sum_k a_k b_k) / (n^2 - sum_k a_k b_k).
inline double cohens_kappa(const std::vector<std::string>& labels_a, const std::vector<std::string>& labels_b,
                           const std::vector<std::string>& label_set) {
  if (labels_a.size() != labels_b.size())
    throw InputError("annotator sequences differ in length (" + std::to_string(labels_a.size()) + " vs " +
                     std::to_string(labels_b.size()) + ")");
  if (labels_a.empty()) throw InputError("annotator sequences are empty");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < label_set.size(); ++k) index.emplace(label_set[k], k);
  std::vector<long long> count_a(label_set.size(), 0), count_b(label_set.size(), 0);
  long long agree = 0;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    auto ia = index.find(labels_a[i]);
    auto ib = index.find(labels_b[i]);
    if (ia == index.end() || ib == index.end())
      throw InputError("label outside the label set at item " + std::to_string(i));
    ++count_a[ia->second];
    ++count_b[ib->second];
    agree += ia->second == ib->second;
  }
  const long long n = static_cast<long long>(labels_a.size());
  long long chance = 0;
  for (std::size_t k = 0; k < label_set.size(); ++k) chance += count_a[k] * count_b[k];
  if (chance == n * n) {
    if (agree == n) return 1.0;
    throw NumericError("kappa undefined: expected agreement is 1 but annotators disagree");
  }
  return static_cast<double>(n * agree - chance) / static_cast<double>(n * n - chance);
}

struct AgreementReport {
  std::vector<std::string> labels;
  std::vector<double> kappas;
  double average = 0;
};

/// One-vs-rest kappa for every label, plus their unweighted mean.
inline AgreementReport per_label_kappa(const std::vector<std::string>& labels_a,
                                       const std::vector<std::string>& labels_b,
                                       const std::vector<std::string>& label_set) {
  if (label_set.empty()) throw InputError("label set is empty");
  cohens_kappa(labels_a, labels_b, label_set);  // validates lengths and labels
  AgreementReport r;
  r.labels = label_set;
  const std::vector<std::string> binary{"yes", "no"};
  for (const auto& label : label_set) {
    std::vector<std::string> a, b;
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
      a.push_back(labels_a[i] == label ? "yes" : "no");
      b.push_back(labels_b[i] == label ? "yes" : "no");
    }
    r.kappas.push_back(cohens_kappa(a, b, binary));
  }
  for (double k : r.kappas) r.average += k;
  r.average /= static_cast<double>(r.kappas.size());
  return r;
}

inline nlohmann::ordered_json to_json(const AgreementReport& r) {
  nlohmann::ordered_json j;
  j["labels"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.labels.size(); ++k) j["labels"].push_back({{"label", r.labels[k]}, {"kappa", r.kappas[k]}});
  j["average"] = r.average;
  return j;
}

/// Label | kappa-score | Average, average printed on the first row.
inline std::string format_agreement_table(const AgreementReport& r, const std::string& title = {}) {
  std::ostringstream out;
  std::size_t w = 8;
  for (const auto& l : r.labels) w = std::max(w, l.size() + 2);
  if (!title.empty()) out << title << '\n';
  out << pad("Label", w) << pad("kappa", 10, false) << pad("Average", 10, false) << '\n';
  for (std::size_t k = 0; k < r.labels.size(); ++k)
    out << pad(r.labels[k], w) << pad(fixed(r.kappas[k], 4), 10, false)
        << pad(k == 0 ? fixed(r.average, 4) : std::string(), 10, false) << '\n';
  return out.str();
}

struct AnnotationPair {
  std::vector<std::string> ids;
  std::vector<std::string> labels_a;
  std::vector<std::string> labels_b;
};

/// Tab-separated `id <TAB> label_a <TAB> label_b`; an optional header line
/// starting with "id" is skipped.
inline AnnotationPair read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open annotation file '" + path.string() + "'");
  AnnotationPair pair;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (line_no == 1 && !cols.empty() && cols[0] == "id") continue;
    if (cols.size() != 3)
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated columns");
    if (!seen.insert(cols[0]).second)
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": duplicate item id '" + cols[0] + "'");
    pair.ids.push_back(cols[0]);
    pair.labels_a.push_back(cols[1]);
    pair.labels_b.push_back(cols[2]);
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Caption statistics. Words are whitespace-separated; by default punctuation
// is stripped from word edges (ASCII, Bengali danda, curly quotes, ellipsis).

namespace detail {

inline constexpr std::array<std::string_view, 7> kEdgePunct{"\xE0\xA5\xA4", "\xE0\xA5\xA5", "\xE2\x80\x9C",
                                                            "\xE2\x80\x9D", "\xE2\x80\x98", "\xE2\x80\x99",
                                                            "\xE2\x80\xA6"};

inline std::string strip_edge_punct(std::string w) {
  bool changed = true;
  while (changed && !w.empty()) {
    changed = false;
    if (std::ispunct(static_cast<unsigned char>(w.front()))) {
      w.erase(0, 1);
      changed = true;
      continue;
    }
    if (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) {
      w.pop_back();
      changed = true;
      continue;
    }
    for (auto p : kEdgePunct) {
      if (w.size() >= p.size() && std::string_view(w).substr(0, p.size()) == p) {
        w.erase(0, p.size());
        changed = true;
        break;
      }
      if (w.size() >= p.size() && std::string_view(w).substr(w.size() - p.size()) == p) {
        w.erase(w.size() - p.size());
        changed = true;
        break;
      }
    }
  }
  return w;
}

}  // namespace detail

inline std::vector<std::string> caption_words(std::string_view caption, bool strip_punct = true) {
  std::vector<std::string> words;
  std::istringstream in{std::string(caption)};
  std::string w;
  while (in >> w) {
    if (strip_punct) w = detail::strip_edge_punct(std::move(w));
    if (!w.empty()) words.push_back(std::move(w));
  }
  return words;
}

/// The n most frequent words, ties broken by first occurrence.
inline std::vector<std::string> top_words(const std::vector<std::string>& captions, std::size_t n,
                                          bool strip_punct = true) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;
  std::size_t order = 0;
  for (const auto& c : captions)
    for (auto& w : caption_words(c, strip_punct)) {
      auto [it, inserted] = stats.try_emplace(w, 0, order++);
      ++it->second.first;
    }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

inline double jaccard_top_words(const std::vector<std::string>& captions_a, const std::vector<std::string>& captions_b,
                                std::size_t n, bool strip_punct = true) {
  if (n < 1) throw InputError("n must be >= 1");
  const auto a = top_words(captions_a, n, strip_punct);
  const auto b = top_words(captions_b, n, strip_punct);
  if (a.empty() || b.empty()) throw InputError("caption collection is empty");
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

struct LexicalStats {
  std::size_t total_words = 0;
  std::size_t unique_words = 0;
  double mean_words = 0;
};

inline LexicalStats lexical_stats(const std::vector<std::string>& captions, bool strip_punct = true) {
  if (captions.empty()) throw InputError("caption collection is empty");
  LexicalStats s;
  std::set<std::string> unique;
  for (const auto& c : captions)
    for (auto& w : caption_words(c, strip_punct)) {
      ++s.total_words;
      unique.insert(std::move(w));
    }
  s.unique_words = unique.size();
  s.mean_words = static_cast<double>(s.total_words) / static_cast<double>(captions.size());
  return s;
}

/// bin index k -> number of captions with word count in [k*w, (k+1)*w).
inline std::map<std::size_t, std::size_t> length_histogram(const std::vector<std::string>& captions,
                                                           std::size_t bin_width, bool strip_punct = true) {
  if (bin_width < 1) throw InputError("bin_width must be >= 1");
  std::map<std::size_t, std::size_t> bins;
  for (const auto& c : captions) ++bins[caption_words(c, strip_punct).size() / bin_width];
  return bins;
}

}  // namespace dora
