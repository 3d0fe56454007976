#pragma once

// Full classifier: encoders -> width projection -> dual co-attention -> fusion
// -> dense softmax head, with a hand-written backward pass.

#include "dora/co_attention.hpp"
#include "dora/encoders.hpp"

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dora {

struct ModelConfig {
  EncoderConfig visual{.modality = Modality::visual};
  EncoderConfig textual{.modality = Modality::textual};
  int d_model = 64;
  int d_head = 32;
  int heads = 2;
  AblationVariant variant = AblationVariant::FULL;
  int class_count = 2;

  int fused_width() const { return dora::fused_width(variant, d_model, d_model, d_model); }

  void validate() const {
    visual.validate();
    textual.validate();
    if (visual.modality != Modality::visual || textual.modality != Modality::textual)
      throw InputError("encoder modalities are swapped");
    if (d_model < 1 || d_head < 1 || heads < 1) throw InputError("d_model, d_head and heads must be >= 1");
    if (class_count < 2) throw InputError("class_count must be >= 2");
  }
};

/// Raw pixels / token ids for lightweight encoders, or precomputed
/// sequences for adapter-backed encoders.
template <typename T>
struct ModelInput {
  std::variant<Image<T>, FeatureSequence<T>> visual;
  std::variant<std::vector<int>, FeatureSequence<T>> textual;
};

template <typename T>
struct ForwardCache {
  EncoderCache<T> visual_encoder, text_encoder;
  FeatureSequence<T> visual_encoded, text_encoded;
  FeatureSequence<T> visual, textual;  // projected to d_model
  CoAttentionCache<T> co_attention;
  CoAttentionOutput<T> attended;
  FusedRepresentation<T> fused;
  Vec<T> probabilities;
};

template <typename T>
struct NamedParam {
  std::string name;
  Mat<T>* value;
  bool trainable;
};

template <typename T>
struct DoraModel {
  ModelConfig config;
  std::optional<VisualEncoder<T>> visual_encoder;
  std::optional<TextEncoder<T>> text_encoder;
  Mat<T> visual_projection;  // encoder width x d_model
  Mat<T> text_projection;
  CoAttentionParams<T> co_attention;
  ClassifierHead<T> head;

  static DoraModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    DoraModel m;
    m.config = cfg;
    if (cfg.visual.backend == EncoderBackend::lightweight) m.visual_encoder = VisualEncoder<T>::init(cfg.visual, rng);
    if (cfg.textual.backend == EncoderBackend::lightweight) m.text_encoder = TextEncoder<T>::init(cfg.textual, rng);
    m.visual_projection = fan_in_init<T>(cfg.visual.output_width, cfg.d_model, rng);
    m.text_projection = fan_in_init<T>(cfg.textual.output_width, cfg.d_model, rng);
    m.co_attention = CoAttentionParams<T>::init(cfg.d_model, cfg.d_model, cfg.heads, cfg.d_head, cfg.d_model, rng);
    m.head = ClassifierHead<T>::init(cfg.fused_width(), cfg.class_count, rng);
    return m;
  }

  /// Visits every parameter matrix in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    if (visual_encoder) visual_encoder->for_each_param("visual_encoder", f);
    if (text_encoder) text_encoder->for_each_param("text_encoder", f);
    f(std::string("visual_projection"), visual_projection);
    f(std::string("text_projection"), text_projection);
    co_attention.for_each_param("co_attention", f);
    head.for_each_param("classifier", f);
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    for_each_param([&](const std::string& name, Mat<T>& m) {
      bool trainable = true;
      if (name.rfind("visual_encoder.", 0) == 0) trainable = config.visual.trainable;
      if (name.rfind("text_encoder.", 0) == 0) trainable = config.textual.trainable;
      out.push_back({name, &m, trainable});
    });
    return out;
  }

  DoraModel zeros_like() const {
    DoraModel z = *this;
    z.for_each_param([](const std::string&, Mat<T>& m) { m.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<DoraModel*>(this)->for_each_param([&](const std::string&, Mat<T>& m) { n += m.size(); });
    return n;
  }

  FeatureSequence<T> encode_visual(const ModelInput<T>& input, EncoderCache<T>* cache) const {
    if (visual_encoder) {
      const auto* img = std::get_if<Image<T>>(&input.visual);
      if (!img) throw InputError("lightweight visual encoder expects an image");
      return visual_encoder->forward(*img, cache);
    }
    const auto* f = std::get_if<FeatureSequence<T>>(&input.visual);
    if (!f) throw InputError("adapter visual encoder expects precomputed features");
    f->validate();
    if (f->width() != config.visual.output_width)
      throw ShapeError("visual features have width " + std::to_string(f->width()) + ", expected " +
                       std::to_string(config.visual.output_width));
    return *f;
  }

  FeatureSequence<T> encode_textual(const ModelInput<T>& input, EncoderCache<T>* cache) const {
    if (text_encoder) {
      const auto* toks = std::get_if<std::vector<int>>(&input.textual);
      if (!toks) throw InputError("lightweight text encoder expects token ids");
      return text_encoder->forward(*toks, cache);
    }
    const auto* f = std::get_if<FeatureSequence<T>>(&input.textual);
    if (!f) throw InputError("adapter text encoder expects precomputed features");
    f->validate();
    if (f->width() != config.textual.output_width)
      throw ShapeError("textual features have width " + std::to_string(f->width()) + ", expected " +
                       std::to_string(config.textual.output_width));
    return *f;
  }

  Vec<T> forward(const ModelInput<T>& input, ForwardCache<T>* cache = nullptr) const {
    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c.visual_encoded = encode_visual(input, &c.visual_encoder);
    c.text_encoded = encode_textual(input, &c.text_encoder);
    c.visual = project_features(c.visual_encoded, config.d_model, visual_projection);
    c.textual = project_features(c.text_encoded, config.d_model, text_projection);
    c.attended = multi_head_co_attention(c.visual, c.textual, co_attention, &c.co_attention);
    c.fused = fuse(c.attended.vgar, c.attended.tgar, c.visual, c.textual, config.variant);
    c.probabilities = classify(c.fused, head);
    return c.probabilities;
  }

  /// Backpropagates dL/dlogits through a cached forward pass, accumulating
  /// into `grads` (a model of the same shape).
  void backward(const ForwardCache<T>& c, const Vec<T>& grad_logits, DoraModel& grads) const {
    grads.head.weight += c.fused.values * grad_logits.transpose();
    grads.head.bias += grad_logits.transpose();
    const Vec<T> grad_fused = head.weight * grad_logits;

    const std::array<Eigen::Index, 4> lengths{c.attended.vgar.rows(), c.attended.tgar.rows(), c.visual.length(),
                                              c.textual.length()};
    const std::array<Eigen::Index, 4> widths{c.attended.vgar.cols(), c.attended.tgar.cols(), c.visual.width(),
                                             c.textual.width()};
    auto parts = fuse_backward(c.fused, grad_fused, lengths, widths);

    auto [grad_visual, grad_text] = multi_head_co_attention_backward(
        c.visual, c.textual, co_attention, c.co_attention, parts[0], parts[1], grads.co_attention);
    grad_visual += parts[2];
    grad_text += parts[3];

    grads.visual_projection += c.visual_encoded.values.transpose() * grad_visual;
    grads.text_projection += c.text_encoded.values.transpose() * grad_text;
    if (visual_encoder && config.visual.trainable)
      visual_encoder->backward(c.visual_encoder, grad_visual * visual_projection.transpose(), *grads.visual_encoder);
    if (text_encoder && config.textual.trainable)
      text_encoder->backward(c.text_encoder, grad_text * text_projection.transpose(), *grads.text_encoder);
  }
};

/// Copies all parameters into one flat vector (for_each_param order, column-major per matrix).
template <typename T>
std::vector<T> flatten_params(DoraModel<T>& model) {
  std::vector<T> out;
  model.for_each_param([&](const std::string&, Mat<T>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

template <typename T>
void assign_params(DoraModel<T>& model, std::span<const T> flat) {
  std::size_t pos = 0;
  model.for_each_param([&](const std::string&, Mat<T>& m) {
    if (pos + m.size() > flat.size()) throw ShapeError("flat parameter vector too short");
    std::copy(flat.begin() + pos, flat.begin() + pos + m.size(), m.data());
    pos += m.size();
  });
  if (pos != flat.size()) throw ShapeError("flat parameter vector too long");
}

}  // namespace dora
