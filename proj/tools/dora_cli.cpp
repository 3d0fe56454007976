// dora: command-line entry point for ingesting manifests, training,
// evaluation, ablations, transfer matrices and corpus statistics.
//
// Exit codes: 0 success, 1 input error, 2 computation error, 64 usage error.

#include "dora/dora.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dora;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitCompute = 2;
constexpr int kExitUsage = 64;

struct CommonOptions {
  std::string config;
  std::string manifest;
  std::string out = "dora_out";
  std::string seed, task, variant, epochs, batch_size, lr, optimizer;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool training_flags) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--out", o.out, "output directory (created if absent)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--task", o.task, "1 = hate detection, 2 = target identification");
  cmd->add_option("--set", o.sets, "override any config key: key=value (repeatable)");
  if (!training_flags) return;
  cmd->add_option("--variant", o.variant, "fusion variant (FULL, NO_VF, NO_TF, NO_VF_TF, NO_VGAR, NO_TGAR, NO_VGAR_TGAR)");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch-size", o.batch_size, "batch size");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--optimizer", o.optimizer, "MADGRAD or ADAM");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg = default_run_config();
  if (!o.config.empty()) merge_config_file(cfg, o.config);
  const std::vector<std::pair<std::string, std::string>> flags{
      {"seed", o.seed},     {"task", o.task},          {"variant", o.variant},        {"epochs", o.epochs},
      {"batch_size", o.batch_size}, {"learning_rate", o.lr}, {"optimizer", o.optimizer}};
  for (const auto& [key, value] : flags)
    if (!value.empty()) cfg[key] = value;
  for (const auto& s : o.sets) set_option(cfg, s);
  return cfg;
}

fs::path prepare_out(const std::string& out) {
  fs::path dir = out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

void snapshot(const fs::path& dir, const std::string& command, const RunConfig& cfg,
              const std::vector<std::pair<std::string, std::string>>& inputs = {}) {
  std::ostringstream out;
  out << "# dora " << command << '\n';
  for (const auto& [k, v] : inputs) out << "# " << k << " = " << v << '\n';
  out << format_run_config(cfg);
  write_text(dir / "resolved_config.txt", out.str());
}

DatasetManifest load_clean_manifest(const std::string& path) {
  if (path.empty()) throw InputError("--manifest is required");
  auto loaded = load_manifest(path);
  if (!loaded.rejects.empty()) {
    const auto& r = loaded.rejects.front();
    throw InputError("manifest '" + path + "' has " + std::to_string(loaded.rejects.size()) +
                     " invalid record(s); first at line " + std::to_string(r.line) + ": " +
                     (r.field.empty() ? "" : r.field + ": ") + r.error + " (run 'dora ingest' for a full report)");
  }
  if (loaded.manifest.empty()) throw InputError("empty manifest '" + path + "'");
  return loaded.manifest;
}

InputSources<double> sources_for(const RunConfig& cfg, const fs::path& manifest_path) {
  InputSources<double> src;
  src.base_dir = manifest_path.parent_path();
  auto adapter = [&](const std::string& dir_key, const std::string& cmd_key,
                     Modality m) -> std::shared_ptr<const FeatureAdapter<double>> {
    if (!cfg.at(dir_key).empty()) {
      fs::path dir = cfg.at(dir_key);
      if (dir.is_relative()) dir = src.base_dir / dir;
      return std::make_shared<FeatureDirectoryAdapter<double>>(dir, m);
    }
    if (!cfg.at(cmd_key).empty()) return std::make_shared<CommandAdapter<double>>(cfg.at(cmd_key), m);
    return nullptr;
  };
  if (cfg.at("visual_backend") == "adapter") {
    src.visual_adapter = adapter("visual_features", "visual_adapter_cmd", Modality::visual);
    if (!src.visual_adapter) throw InputError("visual_backend = adapter needs visual_features or visual_adapter_cmd");
  }
  if (cfg.at("text_backend") == "adapter") {
    src.text_adapter = adapter("text_features", "text_adapter_cmd", Modality::textual);
    if (!src.text_adapter) throw InputError("text_backend = adapter needs text_features or text_adapter_cmd");
  }
  return src;
}

Tokenizer tokenizer_for(const DatasetManifest& m, const RunConfig& cfg) {
  std::vector<std::string> corpus;
  for (const auto& s : m.samples)
    if (s.split == Split::train) corpus.push_back(s.caption);
  const int words = detail::get_int(cfg, "vocab_words");
  if (words < 0) throw InputError("vocab_words must be >= 0");
  return Tokenizer::build(corpus, static_cast<std::size_t>(words));
}

std::vector<Example<double>> examples_for(const DatasetManifest& m, Task task, Split split, const ModelConfig& mc,
                                          const Tokenizer& tok, const InputSources<double>& src) {
  auto ex = build_examples(m, task, split, mc, tok, src);
  if (ex.empty())
    throw InputError("empty split: no " + to_string(split) + " samples labelled for task " +
                     std::to_string(static_cast<int>(task)));
  return ex;
}

std::string history_table(const TrainHistory& h) {
  std::ostringstream out;
  out << pad("epoch", 7) << pad("train_loss", 12, false) << pad("valid_loss", 12, false)
      << pad("valid_W.F1", 12, false) << pad("lr", 12, false) << '\n';
  for (const auto& e : h.epochs) {
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.3e", e.learning_rate);
    out << pad(std::to_string(e.epoch) + (e.epoch == h.best_epoch ? "*" : ""), 7) << pad(fixed(e.train_loss, 5), 12, false)
        << pad(fixed(e.valid_loss, 5), 12, false) << pad(fixed(e.valid_weighted_f1, 4), 12, false) << pad(lr, 12, false)
        << '\n';
  }
  return out.str();
}

// --- ingest ----------------------------------------------------------------

struct IngestOptions {
  std::string manifest, out = "dora_out", split;
  std::string seed = "42";
};

int cmd_ingest(const IngestOptions& o) {
  if (o.manifest.empty()) throw InputError("--manifest is required");
  auto loaded = load_manifest(o.manifest);
  const fs::path dir = prepare_out(o.out);
  if (loaded.manifest.empty() && loaded.rejects.empty()) {
    std::cerr << "empty manifest: '" << o.manifest << "' contains no records\n";
    return kExitInput;
  }
  DatasetManifest m = loaded.manifest;
  if (!o.split.empty()) {
    std::array<double, 3> ratios{};
    std::stringstream ss(o.split);
    std::string part;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!std::getline(ss, part, ','))
        throw InputError("--split expects three comma-separated ratios, e.g. 0.8,0.1,0.1");
      try {
        ratios[k] = std::stod(part);
      } catch (const std::exception&) {
        throw InputError("--split ratio '" + part + "' is not a number");
      }
    }
    RunConfig seed_cfg = default_run_config();
    seed_cfg["seed"] = o.seed;
    m = split_dataset(m, ratios, train_config_from(seed_cfg).seed);
  }
  save_manifest(dir / "manifest.jsonl", m);
  {
    std::ofstream rej(dir / "rejects.jsonl", std::ios::binary);
    write_rejects(rej, loaded.rejects);
  }
  std::ostringstream summary;
  summary << m.size() << " samples, " << loaded.rejects.size() << " rejected\n";
  for (int t : {1, 2}) {
    summary << "task " << t << ":";
    for (const auto& [label, n] : class_distribution(m, t)) summary << ' ' << label << '=' << n;
    summary << '\n';
  }
  for (const auto& r : loaded.rejects)
    summary << "line " << r.line << ": " << (r.field.empty() ? "" : r.field + ": ") << r.error << '\n';
  write_text(dir / "summary.txt", summary.str());
  snapshot(dir, "ingest", default_run_config(), {{"manifest", o.manifest}, {"split", o.split}, {"seed", o.seed}});
  std::cout << summary.str();
  return loaded.rejects.empty() ? 0 : kExitInput;
}

// --- train -----------------------------------------------------------------

int cmd_train(const CommonOptions& o) {
  const RunConfig cfg = resolve(o);
  const TrainConfig tc = train_config_from(cfg);
  const Task task = task_from(cfg);
  const auto manifest = load_clean_manifest(o.manifest);
  const auto tok = tokenizer_for(manifest, cfg);
  const auto mc = model_config_from(cfg, static_cast<int>(tok.size()));
  const auto src = sources_for(cfg, o.manifest);
  const fs::path dir = prepare_out(o.out);
  snapshot(dir, "train", cfg, {{"manifest", o.manifest}});

  TrainData<double> data{examples_for(manifest, task, Split::train, mc, tok, src),
                         examples_for(manifest, task, Split::valid, mc, tok, src)};
  const auto labels = class_labels(task);
  TrainOptions opts;
  opts.checkpoint_path = dir / "best.ckpt";
  opts.labels = labels;
  opts.checkpoint_extra = {{"dataset", manifest.name},
                           {"task", static_cast<int>(task)},
                           {"labels", labels},
                           {"vocab", tok.tokens()}};
  auto result = train(DoraModel<double>::init(mc, tc.seed), data, tc, opts);
  tok.save(dir / "vocab.txt");

  auto valid = evaluate_model(result.best_model, data.valid, labels);
  write_json(dir / "history.json", to_json(result.history));
  write_text(dir / "history.txt", history_table(result.history));
  write_json(dir / "valid_report.json", to_json(valid.report));
  write_text(dir / "valid_report.txt", format_class_table(valid.report));
  std::cout << history_table(result.history) << "best epoch " << result.history.best_epoch
            << ", validation weighted F1 " << fixed(result.history.best_valid_weighted_f1(), 4) << '\n';
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalOptions {
  CommonOptions common;
  std::string checkpoint, predictions, split = "test";
};

Tokenizer tokenizer_from_extra(const nlohmann::json& extra) {
  if (!extra.contains("vocab")) throw InputError("checkpoint carries no vocabulary");
  return Tokenizer::from_tokens(extra["vocab"].get<std::vector<std::string>>());
}

Task task_from_extra(const nlohmann::json& extra) {
  if (!extra.contains("task")) throw InputError("checkpoint carries no task id");
  return task_from_int(extra["task"].get<int>());
}

int cmd_eval(const EvalOptions& o) {
  const RunConfig cfg = resolve(o.common);
  const fs::path dir = prepare_out(o.common.out);
  EvalReport report;
  if (!o.predictions.empty()) {
    if (!o.checkpoint.empty()) throw InputError("use either --checkpoint or --predictions, not both");
    const Task task = task_from(cfg);
    const auto labels = class_labels(task);
    std::ifstream in(o.predictions);
    if (!in) throw InputError("cannot open predictions '" + o.predictions + "'");
    std::vector<int> preds, golds;
    std::string line;
    std::size_t line_no = 0;
    auto index_of = [&](const std::string& l) {
      for (std::size_t k = 0; k < labels.size(); ++k)
        if (labels[k] == l) return static_cast<int>(k);
      throw InputError(o.predictions + ":" + std::to_string(line_no) + ": label '" + l + "' not in task " +
                       std::to_string(static_cast<int>(task)) + " schema");
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string c;
      while (std::getline(ss, c, '\t')) cols.push_back(c);
      if (line_no == 1 && !cols.empty() && cols[0] == "id") continue;
      if (cols.size() != 3) throw InputError(o.predictions + ":" + std::to_string(line_no) + ": expected id, predicted, gold");
      preds.push_back(index_of(cols[1]));
      golds.push_back(index_of(cols[2]));
    }
    report = compute_report(preds, golds, static_cast<int>(labels.size()), labels);
    snapshot(dir, "eval", cfg, {{"predictions", o.predictions}});
  } else {
    if (o.checkpoint.empty()) throw InputError("eval needs --checkpoint (with --manifest) or --predictions");
    auto loaded = load_checkpoint<double>(o.checkpoint);
    const Task task = task_from_extra(loaded.extra);
    const auto labels = class_labels(task);
    const auto tok = tokenizer_from_extra(loaded.extra);
    const auto manifest = load_clean_manifest(o.common.manifest);
    const auto split = parse_split(o.split);
    if (!split || *split == Split::unassigned) throw InputError("--split must be train, valid or test");
    const auto src = sources_for(cfg, o.common.manifest);
    const auto examples = examples_for(manifest, task, *split, loaded.model.config, tok, src);
    const auto ev = evaluate_model(loaded.model, examples, labels);
    report = ev.report;
    std::ostringstream preds;
    preds << "id\tpredicted\tgold\n";
    for (std::size_t i = 0; i < examples.size(); ++i)
      preds << examples[i].id << '\t' << labels[ev.predictions[i]] << '\t' << labels[examples[i].label] << '\n';
    write_text(dir / "predictions.tsv", preds.str());
    snapshot(dir, "eval", cfg, {{"checkpoint", o.checkpoint}, {"manifest", o.common.manifest}, {"split", o.split}});
  }
  write_json(dir / "report.json", to_json(report));
  write_text(dir / "report.txt", format_class_table(report));
  std::cout << format_class_table(report);
  return 0;
}

// --- ablate ----------------------------------------------------------------

struct AblateOptions {
  CommonOptions common;
  std::vector<std::string> variants;
  std::string split = "test";
};

int cmd_ablate(const AblateOptions& o) {
  const RunConfig cfg = resolve(o.common);
  const TrainConfig tc = train_config_from(cfg);
  const Task task = task_from(cfg);
  std::vector<AblationVariant> variants;
  for (const auto& v : o.variants) variants.push_back(parse_variant(v));
  if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
  const auto split = parse_split(o.split);
  if (!split || *split == Split::unassigned) throw InputError("--split must be train, valid or test");

  const auto manifest = load_clean_manifest(o.common.manifest);
  const auto tok = tokenizer_for(manifest, cfg);
  const auto mc = model_config_from(cfg, static_cast<int>(tok.size()));
  const auto src = sources_for(cfg, o.common.manifest);
  const fs::path dir = prepare_out(o.common.out);
  snapshot(dir, "ablate", cfg, {{"manifest", o.common.manifest}, {"split", o.split}});

  TrainData<double> data{examples_for(manifest, task, Split::train, mc, tok, src),
                         examples_for(manifest, task, Split::valid, mc, tok, src)};
  const auto eval_set = examples_for(manifest, task, *split, mc, tok, src);
  const auto rows = run_ablation(data, eval_set, mc, tc, variants, class_labels(task));
  const auto table = format_ablation_table(rows);
  write_json(dir / "ablation.json", to_json(rows));
  write_text(dir / "ablation.txt", table);
  std::cout << table;
  return 0;
}

// --- transfer --------------------------------------------------------------

struct TransferOptions {
  CommonOptions common;
  std::vector<std::string> models, tests;
  std::string split = "test";
};

std::pair<std::string, std::string> name_value(const std::string& s, const std::string& flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw InputError(flag + " expects NAME=PATH, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_transfer(const TransferOptions& o) {
  const RunConfig cfg = resolve(o.common);
  if (o.models.empty() || o.tests.empty()) throw InputError("transfer needs at least one --model and one --test");
  const auto split = parse_split(o.split);
  if (!split || *split == Split::unassigned) throw InputError("--split must be train, valid or test");
  const fs::path dir = prepare_out(o.common.out);

  std::vector<TransferModel<double>> models;
  std::vector<std::pair<std::string, std::string>> inputs;
  for (const auto& arg : o.models) {
    auto [name, path] = name_value(arg, "--model");
    auto loaded = load_checkpoint<double>(path);
    const Task task = task_from_extra(loaded.extra);
    auto labels = loaded.extra.value("labels", class_labels(task));
    models.push_back({name, std::move(loaded.model), task, std::move(labels), tokenizer_from_extra(loaded.extra)});
    inputs.emplace_back("model " + name, path);
  }
  std::vector<TransferTest<double>> tests;
  for (const auto& arg : o.tests) {
    auto [name, path] = name_value(arg, "--test");
    tests.push_back({name, load_clean_manifest(path), sources_for(cfg, path)});
    inputs.emplace_back("test " + name, path);
  }
  snapshot(dir, "transfer", cfg, inputs);
  const auto cells = transfer_eval(models, tests, *split);
  const auto table = format_transfer_table(cells);
  write_json(dir / "transfer.json", to_json(cells));
  write_text(dir / "transfer.txt", table);
  std::cout << table;
  for (const auto& c : cells)
    if (!c.weighted_f1) std::cerr << c.train_dataset << " -> " << c.test_dataset << ": " << c.incompatibility << '\n';
  return 0;
}

// --- stats -----------------------------------------------------------------

struct StatsOptions {
  CommonOptions common;
  std::size_t top_n = 0;
  std::size_t bin_width = 5;
  bool keep_punct = false;
};

int cmd_stats(const StatsOptions& o) {
  const RunConfig cfg = resolve(o.common);
  const Task task = task_from(cfg);
  const auto manifest = load_clean_manifest(o.common.manifest);
  const fs::path dir = prepare_out(o.common.out);
  snapshot(dir, "stats", cfg,
           {{"manifest", o.common.manifest}, {"top_n", std::to_string(o.top_n)},
            {"bin_width", std::to_string(o.bin_width)}, {"strip_punct", o.keep_punct ? "false" : "true"}});
  const bool strip = !o.keep_punct;
  const auto labels = class_labels(task);

  std::vector<std::vector<std::string>> by_class(labels.size());
  for (const auto& s : manifest.samples)
    if (auto idx = label_index(s, task)) by_class[*idx].push_back(s.caption);

  nlohmann::ordered_json j;
  std::ostringstream txt;
  j["dataset"] = manifest.name;
  j["task"] = static_cast<int>(task);

  txt << "Class distribution\n" << pad("Split", 8);
  for (const auto& l : labels) txt << pad(l, 8, false);
  txt << '\n';
  for (auto sp : {Split::train, Split::valid, Split::test}) {
    const auto d = class_distribution(manifest, static_cast<int>(task), sp);
    txt << pad(to_string(sp), 8);
    for (const auto& l : labels) {
      txt << pad(std::to_string(d.at(l)), 8, false);
      j["distribution"][to_string(sp)][l] = d.at(l);
    }
    txt << '\n';
  }

  txt << "\nLexical analysis of captions\n"
      << pad("Class", 8) << pad("Words", 10, false) << pad("Unique", 10, false) << pad("Avg.len", 10, false) << '\n';
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (by_class[c].empty()) {
      txt << pad(labels[c], 8) << pad("-", 10, false) << pad("-", 10, false) << pad("-", 10, false) << '\n';
      j["lexical"][labels[c]] = nullptr;
      continue;
    }
    const auto s = lexical_stats(by_class[c], strip);
    txt << pad(labels[c], 8) << pad(std::to_string(s.total_words), 10, false)
        << pad(std::to_string(s.unique_words), 10, false) << pad(fixed(s.mean_words, 2), 10, false) << '\n';
    j["lexical"][labels[c]] = {{"total_words", s.total_words}, {"unique_words", s.unique_words},
                               {"mean_words", s.mean_words}};
  }

  txt << "\nJaccard similarity of top-" << o.top_n << " words\n" << pad("", 8);
  for (const auto& l : labels) txt << pad(l, 8, false);
  txt << '\n';
  for (std::size_t a = 0; a < labels.size(); ++a) {
    txt << pad(labels[a], 8);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      if (by_class[a].empty() || by_class[b].empty()) {
        txt << pad("-", 8, false);
        continue;
      }
      const double js = jaccard_top_words(by_class[a], by_class[b], o.top_n, strip);
      txt << pad(fixed(js, 3), 8, false);
      if (a < b) j["jaccard"].push_back({{"a", labels[a]}, {"b", labels[b]}, {"similarity", js}});
    }
    txt << '\n';
  }

  txt << "\nCaption length histogram (bin width " << o.bin_width << " words)\n";
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const auto h = length_histogram(by_class[c], o.bin_width, strip);
    txt << pad(labels[c], 8);
    nlohmann::ordered_json hj = nlohmann::ordered_json::object();
    for (const auto& [bin, n] : h) {
      const auto lo = bin * o.bin_width;
      const auto range = std::to_string(lo) + "-" + std::to_string(lo + o.bin_width - 1);
      txt << ' ' << range << ':' << n;
      hj[range] = n;
    }
    txt << '\n';
    j["length_histogram"][labels[c]] = hj;
  }

  write_json(dir / "stats.json", j);
  write_text(dir / "stats.txt", txt.str());
  std::cout << txt.str();
  return 0;
}

// --- kappa -----------------------------------------------------------------

struct KappaOptions {
  std::string annotations, labels, title, out = "dora_out";
};

int cmd_kappa(const KappaOptions& o) {
  if (o.annotations.empty()) throw InputError("--annotations is required");
  const auto pair = read_annotations(o.annotations);
  if (pair.ids.empty()) throw InputError("annotation file '" + o.annotations + "' has no items");
  std::vector<std::string> label_set;
  if (!o.labels.empty()) {
    std::stringstream ss(o.labels);
    std::string l;
    while (std::getline(ss, l, ',')) label_set.push_back(trim_copy(l));
  } else {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < pair.ids.size(); ++i)
      for (const auto* l : {&pair.labels_a[i], &pair.labels_b[i]})
        if (seen.insert(*l).second) label_set.push_back(*l);
  }
  const double overall = cohens_kappa(pair.labels_a, pair.labels_b, label_set);
  const auto report = per_label_kappa(pair.labels_a, pair.labels_b, label_set);
  const fs::path dir = prepare_out(o.out);
  snapshot(dir, "kappa", {}, {{"annotations", o.annotations}, {"labels", o.labels}});
  auto j = to_json(report);
  j["overall"] = overall;
  j["items"] = pair.ids.size();
  const auto table = format_agreement_table(report, o.title) + "overall kappa = " + fixed(overall, 4) + "\n";
  write_json(dir / "kappa.json", j);
  write_text(dir / "kappa.txt", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dora: dual co-attention classifier for multimodal hateful-meme detection"};
  app.require_subcommand(1);

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "validate a manifest, optionally assign splits");
  c_ingest->add_option("--manifest", ingest.manifest, "JSON-lines manifest")->required();
  c_ingest->add_option("--out", ingest.out, "output directory");
  c_ingest->add_option("--split", ingest.split, "assign stratified splits with ratios train,valid,test");
  c_ingest->add_option("--seed", ingest.seed, "seed for --split");

  CommonOptions train_opts;
  auto* c_train = app.add_subcommand("train", "train one model and keep the best validation checkpoint");
  add_common(c_train, train_opts, true);
  c_train->add_option("--manifest", train_opts.manifest, "manifest with train/valid splits")->required();

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a split, or a predictions file");
  add_common(c_eval, eval.common, false);
  c_eval->add_option("--manifest", eval.common.manifest, "manifest to score");
  c_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint written by train");
  c_eval->add_option("--predictions", eval.predictions, "TSV: id, predicted label, gold label");
  c_eval->add_option("--split", eval.split, "split to score (default test)");

  AblateOptions ablate;
  auto* c_ablate = app.add_subcommand("ablate", "train and score every fusion variant");
  add_common(c_ablate, ablate.common, true);
  c_ablate->add_option("--manifest", ablate.common.manifest, "manifest with train/valid/test splits")->required();
  c_ablate->add_option("--variants", ablate.variants, "subset of variants (default: all seven)");
  c_ablate->add_option("--split", ablate.split, "split to score (default test)");

  TransferOptions transfer;
  auto* c_transfer = app.add_subcommand("transfer", "cross-dataset weighted-F1 matrix");
  add_common(c_transfer, transfer.common, false);
  c_transfer->add_option("--model", transfer.models, "NAME=CHECKPOINT (repeatable)")->required();
  c_transfer->add_option("--test", transfer.tests, "NAME=MANIFEST (repeatable)")->required();
  c_transfer->add_option("--split", transfer.split, "split of each test manifest (default test)");

  StatsOptions stats;
  auto* c_stats = app.add_subcommand("stats", "class distribution, lexical statistics, Jaccard overlap");
  add_common(c_stats, stats.common, false);
  c_stats->add_option("--manifest", stats.common.manifest, "manifest")->required();
  c_stats->add_option("--top-n", stats.top_n, "number of top words for Jaccard similarity")
      ->required()
      ->check(CLI::PositiveNumber);
  c_stats->add_option("--bin-width", stats.bin_width, "caption-length histogram bin width")->check(CLI::PositiveNumber);
  c_stats->add_flag("--keep-punct", stats.keep_punct, "do not strip punctuation from word edges");

  KappaOptions kappa;
  auto* c_kappa = app.add_subcommand("kappa", "Cohen's kappa between two annotators");
  c_kappa->add_option("--annotations", kappa.annotations, "TSV: id, annotator A label, annotator B label")->required();
  c_kappa->add_option("--labels", kappa.labels, "comma-separated label set (default: labels in order of appearance)");
  c_kappa->add_option("--title", kappa.title, "table title");
  c_kappa->add_option("--out", kappa.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* scope = &app;
    for (const auto* sub : app.get_subcommands()) scope = sub;
    std::cerr << scope->help();
    return kExitUsage;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_train) return cmd_train(train_opts);
    if (*c_eval) return cmd_eval(eval);
    if (*c_ablate) return cmd_ablate(ablate);
    if (*c_transfer) return cmd_transfer(transfer);
    if (*c_stats) return cmd_stats(stats);
    if (*c_kappa) return cmd_kappa(kappa);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericError& e) {
    std::cerr << "computation failed: " << e.what() << '\n';
    return kExitCompute;
  } catch (const std::exception& e) {
    std::cerr << "computation failed: " << e.what() << '\n';
    return kExitCompute;
  }
  return kExitUsage;
}
