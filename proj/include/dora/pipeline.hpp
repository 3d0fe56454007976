#pragma once

// Turns manifest samples into model inputs: images are loaded from
// image_ref (relative to the manifest directory), captions tokenized, and
// adapter-backed modalities fetched from a FeatureAdapter.

#include "dora/data_model.hpp"
#include "dora/encoders.hpp"
#include "dora/training.hpp"

#include <filesystem>
#include <memory>
#include <vector>

namespace dora {

template <typename T>
struct InputSources {
  std::filesystem::path base_dir;
  std::shared_ptr<const FeatureAdapter<T>> visual_adapter;
  std::shared_ptr<const FeatureAdapter<T>> text_adapter;
};

template <typename T>
ModelInput<T> build_input(const MemeSample& s, const ModelConfig& cfg, const Tokenizer& tokenizer,
                          const InputSources<T>& sources) {
  ModelInput<T> in;
  if (cfg.visual.backend == EncoderBackend::lightweight) {
    std::filesystem::path p = s.image_ref;
    if (p.is_relative()) p = sources.base_dir / p;
    in.visual = load_image<T>(p, cfg.visual.image_side, cfg.visual.channels);
  } else {
    if (!sources.visual_adapter) throw InputError("visual encoder is adapter-backed but no adapter was given");
    std::filesystem::path p = s.image_ref;
    if (p.is_relative()) p = sources.base_dir / p;
    in.visual = sources.visual_adapter->encode(s.id, p.string());
  }
  if (cfg.textual.backend == EncoderBackend::lightweight) {
    auto ids = tokenizer.encode(s.caption, static_cast<std::size_t>(cfg.textual.max_length));
    if (ids.empty()) throw InputError("caption of sample '" + s.id + "' produced no tokens");
    in.textual = std::move(ids);
  } else {
    if (!sources.text_adapter) throw InputError("text encoder is adapter-backed but no adapter was given");
    in.textual = sources.text_adapter->encode(s.id, s.caption);
  }
  return in;
}

/// Examples of one split that carry a label for `task`.
template <typename T>
std::vector<Example<T>> build_examples(const DatasetManifest& manifest, Task task, Split split, const ModelConfig& cfg,
                                       const Tokenizer& tokenizer, const InputSources<T>& sources) {
  std::vector<Example<T>> out;
  for (const auto& s : manifest.samples) {
    if (s.split != split) continue;
    const auto label = label_index(s, task);
    if (!label) continue;
    out.push_back({s.id, build_input(s, cfg, tokenizer, sources), *label, s.split});
  }
  return out;
}

}  // namespace dora
