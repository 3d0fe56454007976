#pragma once

// Dual co-attention: visual queries attend over textual keys. The score
// matrix S (L_v x L_t) is normalised twice: over the visual axis to weight
// visual tokens (VGAR) and over the textual axis to weight textual tokens
// (TGAR). Each token's weight is the mean of its normalised scores against
// every token of the other modality, so the weights of each modality sum to 1.

#include "dora/encoders.hpp"
#include "dora/tensor.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dora {

template <typename T>
struct ScoreMatrix {
  Mat<T> values;  // L_v x L_t
};

template <typename T>
struct AttentionHead {
  Mat<T> w_q;   // d_v x d_head
  Mat<T> w_k;   // d_t x d_head
  Mat<T> w_vv;  // d_v x d_head
  Mat<T> w_vt;  // d_t x d_head
};

template <typename T>
struct CoAttentionParams {
  std::vector<AttentionHead<T>> heads;
  Mat<T> out_v;  // H*d_head x d_model
  Mat<T> out_t;  // H*d_head x d_model

  int head_count() const { return static_cast<int>(heads.size()); }
  int head_width() const { return heads.empty() ? 0 : static_cast<int>(heads.front().w_q.cols()); }
  int model_width() const { return static_cast<int>(out_v.cols()); }

  static CoAttentionParams init(int visual_width, int text_width, int head_count, int head_width,
                                int model_width, Rng& rng) {
    if (head_count < 1 || head_width < 1 || model_width < 1)
      throw InputError("co-attention needs heads >= 1, d_head >= 1, d_model >= 1");
    CoAttentionParams p;
    for (int h = 0; h < head_count; ++h)
      p.heads.push_back({fan_in_init<T>(visual_width, head_width, rng), fan_in_init<T>(text_width, head_width, rng),
                         fan_in_init<T>(visual_width, head_width, rng), fan_in_init<T>(text_width, head_width, rng)});
    p.out_v = fan_in_init<T>(head_count * head_width, model_width, rng);
    p.out_t = fan_in_init<T>(head_count * head_width, model_width, rng);
    return p;
  }

  void validate(Eigen::Index visual_width, Eigen::Index text_width) const {
    if (heads.empty()) throw ShapeError("co-attention has no heads");
    const Eigen::Index dh = heads.front().w_q.cols();
    if (dh < 1) throw ShapeError("d_head must be >= 1");
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto tag = "head " + std::to_string(h);
      require_shape(heads[h].w_q, visual_width, dh, tag + " w_q");
      require_shape(heads[h].w_k, text_width, dh, tag + " w_k");
      require_shape(heads[h].w_vv, visual_width, dh, tag + " w_vv");
      require_shape(heads[h].w_vt, text_width, dh, tag + " w_vt");
    }
    const Eigen::Index cat = static_cast<Eigen::Index>(heads.size()) * dh;
    if (out_v.rows() != cat || out_t.rows() != cat || out_v.cols() != out_t.cols())
      throw ShapeError("output projections must be " + std::to_string(cat) + " x d_model");
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto p = prefix + ".head" + std::to_string(h);
      f(p + ".w_q", heads[h].w_q);
      f(p + ".w_k", heads[h].w_k);
      f(p + ".w_vv", heads[h].w_vv);
      f(p + ".w_vt", heads[h].w_vt);
    }
    f(prefix + ".out_v", out_v);
    f(prefix + ".out_t", out_t);
  }
};

/// S = (X_v W_Q)(X_t W_K)^T / sqrt(d_head).
template <typename T>
ScoreMatrix<T> cross_attention_scores(const FeatureSequence<T>& visual, const FeatureSequence<T>& textual,
                                      const Mat<T>& w_q, const Mat<T>& w_k) {
  if (w_q.rows() != visual.width() || w_k.rows() != textual.width() || w_q.cols() != w_k.cols())
    throw ShapeError("W_Q " + shape_str(w_q.rows(), w_q.cols()) + " / W_K " + shape_str(w_k.rows(), w_k.cols()) +
                     " incompatible with feature widths " + std::to_string(visual.width()) + ", " +
                     std::to_string(textual.width()));
  const T scale = T(1) / std::sqrt(static_cast<T>(w_q.cols()));
  ScoreMatrix<T> s{((visual.values * w_q) * (textual.values * w_k).transpose()) * scale};
  if (!s.values.allFinite()) throw NumericError("attention scores are not finite");
  return s;
}

/// Per-visual-token weights: column-wise softmax of S, averaged across text tokens.
template <typename T>
Vec<T> visual_token_weights(const ScoreMatrix<T>& scores) {
  if (scores.values.rows() == 0 || scores.values.cols() == 0) throw ShapeError("score matrix has a zero-length axis");
  return row_means<T>(softmax_cols<T>(scores.values));
}

/// Per-text-token weights: row-wise softmax of S, averaged across visual tokens.
template <typename T>
Vec<T> text_token_weights(const ScoreMatrix<T>& scores) {
  if (scores.values.rows() == 0 || scores.values.cols() == 0) throw ShapeError("score matrix has a zero-length axis");
  return col_means<T>(softmax_rows<T>(scores.values));
}

/// VGAR: visual value rows scaled by their co-attention weight.
template <typename T>
Mat<T> vision_guided_repr(const ScoreMatrix<T>& scores, const Mat<T>& visual_values) {
  if (visual_values.rows() != scores.values.rows())
    throw ShapeError("visual values have " + std::to_string(visual_values.rows()) + " rows, scores have " +
                     std::to_string(scores.values.rows()));
  return visual_token_weights(scores).asDiagonal() * visual_values;
}

/// TGAR: textual value rows scaled by their co-attention weight.
template <typename T>
Mat<T> text_guided_repr(const ScoreMatrix<T>& scores, const Mat<T>& text_values) {
  if (text_values.rows() != scores.values.cols())
    throw ShapeError("textual values have " + std::to_string(text_values.rows()) + " rows, scores have " +
                     std::to_string(scores.values.cols()) + " columns");
  return text_token_weights(scores).asDiagonal() * text_values;
}

template <typename T>
struct CoAttentionHeadCache {
  Mat<T> q, k, v_visual, v_text;
  Mat<T> attn_visual;  // column-normalised
  Mat<T> attn_text;    // row-normalised
  Vec<T> w_visual, w_text;
};

template <typename T>
struct CoAttentionCache {
  std::vector<CoAttentionHeadCache<T>> heads;
  Mat<T> concat_visual;  // L_v x H*d_head, before out_v
  Mat<T> concat_text;
};

template <typename T>
struct CoAttentionOutput {
  Mat<T> vgar;  // L_v x d_model
  Mat<T> tgar;  // L_t x d_model
};

template <typename T>
CoAttentionOutput<T> multi_head_co_attention(const FeatureSequence<T>& visual, const FeatureSequence<T>& textual,
                                             const CoAttentionParams<T>& params,
                                             CoAttentionCache<T>* cache = nullptr) {
  params.validate(visual.width(), textual.width());
  const Eigen::Index dh = params.head_width();
  const Eigen::Index lv = visual.length();
  const Eigen::Index lt = textual.length();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> cat_v(lv, dh * params.head_count());
  Mat<T> cat_t(lt, dh * params.head_count());
  if (cache) cache->heads.resize(params.heads.size());
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    const auto& head = params.heads[h];
    CoAttentionHeadCache<T> hc;
    hc.q = visual.values * head.w_q;
    hc.k = textual.values * head.w_k;
    hc.v_visual = visual.values * head.w_vv;
    hc.v_text = textual.values * head.w_vt;
    const Mat<T> s = (hc.q * hc.k.transpose()) * scale;
    if (!s.allFinite()) throw NumericError("attention scores are not finite");
    hc.attn_visual = softmax_cols<T>(s);
    hc.attn_text = softmax_rows<T>(s);
    hc.w_visual = row_means<T>(hc.attn_visual);
    hc.w_text = col_means<T>(hc.attn_text);
    cat_v.middleCols(h * dh, dh) = hc.w_visual.asDiagonal() * hc.v_visual;
    cat_t.middleCols(h * dh, dh) = hc.w_text.asDiagonal() * hc.v_text;
    if (cache) cache->heads[h] = std::move(hc);
  }
  CoAttentionOutput<T> out{cat_v * params.out_v, cat_t * params.out_t};
  if (cache) {
    cache->concat_visual = std::move(cat_v);
    cache->concat_text = std::move(cat_t);
  }
  return out;
}

/// Accumulates parameter gradients into `grads`; returns gradients w.r.t. the
/// visual and textual input features.
template <typename T>
std::pair<Mat<T>, Mat<T>> multi_head_co_attention_backward(const FeatureSequence<T>& visual,
                                                           const FeatureSequence<T>& textual,
                                                           const CoAttentionParams<T>& params,
                                                           const CoAttentionCache<T>& cache,
                                                           const Mat<T>& grad_vgar, const Mat<T>& grad_tgar,
                                                           CoAttentionParams<T>& grads) {
  const Eigen::Index dh = params.head_width();
  const Eigen::Index lv = visual.length();
  const Eigen::Index lt = textual.length();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  grads.out_v += cache.concat_visual.transpose() * grad_vgar;
  grads.out_t += cache.concat_text.transpose() * grad_tgar;
  const Mat<T> grad_cat_v = grad_vgar * params.out_v.transpose();
  const Mat<T> grad_cat_t = grad_tgar * params.out_t.transpose();

  Mat<T> grad_visual = Mat<T>::Zero(lv, visual.width());
  Mat<T> grad_text = Mat<T>::Zero(lt, textual.width());
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    const auto& head = params.heads[h];
    const auto& hc = cache.heads[h];
    auto& g = grads.heads[h];
    const Mat<T> grad_rep_v = grad_cat_v.middleCols(h * dh, dh);
    const Mat<T> grad_rep_t = grad_cat_t.middleCols(h * dh, dh);

    const Mat<T> grad_v_visual = hc.w_visual.asDiagonal() * grad_rep_v;
    const Mat<T> grad_v_text = hc.w_text.asDiagonal() * grad_rep_t;
    const Vec<T> grad_w_visual = (grad_rep_v.array() * hc.v_visual.array()).rowwise().sum();
    const Vec<T> grad_w_text = (grad_rep_t.array() * hc.v_text.array()).rowwise().sum();

    // w_visual[i] = mean_j A_v[i,j]; w_text[j] = mean_i A_t[i,j]
    const Mat<T> grad_attn_v = (grad_w_visual / static_cast<T>(lt)).replicate(1, lt);
    const Mat<T> grad_attn_t = (grad_w_text.transpose() / static_cast<T>(lv)).replicate(lv, 1);
    const Mat<T> grad_s = softmax_cols_backward<T>(hc.attn_visual, grad_attn_v) +
                          softmax_rows_backward<T>(hc.attn_text, grad_attn_t);
    const Mat<T> grad_q = (grad_s * hc.k) * scale;
    const Mat<T> grad_k = (grad_s.transpose() * hc.q) * scale;

    g.w_q += visual.values.transpose() * grad_q;
    g.w_k += textual.values.transpose() * grad_k;
    g.w_vv += visual.values.transpose() * grad_v_visual;
    g.w_vt += textual.values.transpose() * grad_v_text;
    grad_visual += grad_q * head.w_q.transpose() + grad_v_visual * head.w_vv.transpose();
    grad_text += grad_k * head.w_k.transpose() + grad_v_text * head.w_vt.transpose();
  }
  return {std::move(grad_visual), std::move(grad_text)};
}

// ---------------------------------------------------------------------------
// Fusion and ablation variants.

enum class FusionComponent { VGAR = 0, TGAR = 1, VF = 2, TF = 3 };
inline constexpr std::array<std::string_view, 4> kComponentNames{"VGAR", "TGAR", "VF", "TF"};

enum class AblationVariant { FULL, NO_VF, NO_TF, NO_VF_TF, NO_VGAR, NO_TGAR, NO_VGAR_TGAR };

inline constexpr std::array<AblationVariant, 7> kAllVariants{
    AblationVariant::NO_VF,   AblationVariant::NO_TF,   AblationVariant::NO_VF_TF,    AblationVariant::NO_VGAR,
    AblationVariant::NO_TGAR, AblationVariant::NO_VGAR_TGAR, AblationVariant::FULL};

inline std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::FULL: return "FULL";
    case AblationVariant::NO_VF: return "NO_VF";
    case AblationVariant::NO_TF: return "NO_TF";
    case AblationVariant::NO_VF_TF: return "NO_VF_TF";
    case AblationVariant::NO_VGAR: return "NO_VGAR";
    case AblationVariant::NO_TGAR: return "NO_TGAR";
    case AblationVariant::NO_VGAR_TGAR: return "NO_VGAR_TGAR";
  }
  return "?";
}

/// Row label used in ablation tables.
inline std::string display_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::FULL: return "DORA";
    case AblationVariant::NO_VF: return "DORA w/o VF";
    case AblationVariant::NO_TF: return "DORA w/o TF";
    case AblationVariant::NO_VF_TF: return "DORA w/o VF+TF";
    case AblationVariant::NO_VGAR: return "DORA w/o VGAR";
    case AblationVariant::NO_TGAR: return "DORA w/o TGAR";
    case AblationVariant::NO_VGAR_TGAR: return "DORA w/o VGAR + TGAR";
  }
  return "?";
}

inline AblationVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw InputError("unknown ablation variant '" + std::string(s) + "'");
}

/// Components in concatenation order [VGAR, TGAR, VF, TF].
inline std::array<bool, 4> included_components(AblationVariant v) {
  std::array<bool, 4> inc{true, true, true, true};
  auto drop = [&](FusionComponent c) { inc[static_cast<int>(c)] = false; };
  switch (v) {
    case AblationVariant::FULL: break;
    case AblationVariant::NO_VF: drop(FusionComponent::VF); break;
    case AblationVariant::NO_TF: drop(FusionComponent::TF); break;
    case AblationVariant::NO_VF_TF: drop(FusionComponent::VF); drop(FusionComponent::TF); break;
    case AblationVariant::NO_VGAR: drop(FusionComponent::VGAR); break;
    case AblationVariant::NO_TGAR: drop(FusionComponent::TGAR); break;
    case AblationVariant::NO_VGAR_TGAR: drop(FusionComponent::VGAR); drop(FusionComponent::TGAR); break;
  }
  return inc;
}

inline int fused_width(AblationVariant v, int d_model, int d_visual, int d_text) {
  const auto inc = included_components(v);
  const std::array<int, 4> widths{d_model, d_model, d_visual, d_text};
  int w = 0;
  for (int c = 0; c < 4; ++c) w += inc[c] ? widths[c] : 0;
  return w;
}

template <typename T>
struct FusedRepresentation {
  Vec<T> values;
  std::vector<FusionComponent> components;  // in concatenation order
  std::vector<int> widths;

  Eigen::Index width() const { return values.size(); }
};

/// Mean-pools each included sequence over its length and concatenates them.
template <typename T>
FusedRepresentation<T> fuse(const Mat<T>& vgar, const Mat<T>& tgar, const FeatureSequence<T>& visual,
                            const FeatureSequence<T>& textual, AblationVariant variant) {
  const auto inc = included_components(variant);
  const std::array<const Mat<T>*, 4> parts{&vgar, &tgar, &visual.values, &textual.values};
  FusedRepresentation<T> out;
  Eigen::Index total = 0;
  for (int c = 0; c < 4; ++c) {
    if (!inc[c]) continue;
    if (parts[c]->rows() < 1) throw ShapeError(std::string(kComponentNames[c]) + " sequence is empty");
    if (!parts[c]->allFinite()) throw NumericError(std::string(kComponentNames[c]) + " has non-finite entries");
    out.components.push_back(static_cast<FusionComponent>(c));
    out.widths.push_back(static_cast<int>(parts[c]->cols()));
    total += parts[c]->cols();
  }
  if (out.components.empty()) throw InputError("ablation variant excludes every fusion component");
  out.values.resize(total);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < out.components.size(); ++k) {
    const auto& m = *parts[static_cast<int>(out.components[k])];
    out.values.segment(offset, m.cols()) = col_means<T>(m);
    offset += m.cols();
  }
  return out;
}

/// Gradients of the four fused sequences given dL/d(fused); excluded
/// components get exact zeros.
template <typename T>
std::array<Mat<T>, 4> fuse_backward(const FusedRepresentation<T>& fused, const Vec<T>& grad_fused,
                                    const std::array<Eigen::Index, 4>& lengths,
                                    const std::array<Eigen::Index, 4>& widths) {
  std::array<Mat<T>, 4> grads;
  for (int c = 0; c < 4; ++c) grads[c] = Mat<T>::Zero(lengths[c], widths[c]);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < fused.components.size(); ++k) {
    const int c = static_cast<int>(fused.components[k]);
    const RowVec<T> g = grad_fused.segment(offset, fused.widths[k]).transpose() / static_cast<T>(lengths[c]);
    grads[c] = g.replicate(lengths[c], 1);
    offset += fused.widths[k];
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Dense + softmax classifier head.

template <typename T>
struct ClassifierHead {
  Mat<T> weight;  // fused width x classes
  Mat<T> bias;    // 1 x classes

  static ClassifierHead init(int input_width, int class_count, Rng& rng) {
    if (class_count < 2) throw InputError("classifier needs at least 2 classes");
    return {fan_in_init<T>(input_width, class_count, rng), Mat<T>::Zero(1, class_count)};
  }

  Vec<T> logits(const FusedRepresentation<T>& fused) const {
    if (fused.width() != weight.rows())
      throw ShapeError("classifier expects fused width " + std::to_string(weight.rows()) + ", got " +
                       std::to_string(fused.width()));
    return weight.transpose() * fused.values + bias.transpose();
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
Vec<T> classify(const FusedRepresentation<T>& fused, const ClassifierHead<T>& head) {
  return softmax<T>(head.logits(fused));
}

}  // namespace dora
