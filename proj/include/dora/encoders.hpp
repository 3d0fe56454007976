#pragma once

// Per-modality feature extraction. Both lightweight encoders emit token-level
// feature sequences (L x d); pretrained encoders plug in through FeatureAdapter
// and the binary feature-file format.

#include "dora/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dora {

enum class Modality { visual, textual };

inline std::string to_string(Modality m) { return m == Modality::visual ? "visual" : "textual"; }

template <typename T>
struct FeatureSequence {
  Mat<T> values;
  Modality modality = Modality::visual;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index width() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1)
      throw ShapeError(to_string(modality) + " feature sequence must be at least 1x1");
    if (!values.allFinite())
      throw NumericError(to_string(modality) + " feature sequence has non-finite entries");
  }
};

enum class EncoderBackend { lightweight, adapter };

struct EncoderConfig {
  Modality modality = Modality::visual;
  EncoderBackend backend = EncoderBackend::lightweight;
  int output_width = 64;
  // visual
  int image_side = 224;
  int patch_size = 16;
  int channels = 3;
  // textual
  int vocab_size = 0;
  int max_length = 64;

  int depth = 1;
  bool trainable = true;
  bool positional = true;

  int patch_dim() const { return patch_size * patch_size * channels; }

  /// Maximum sequence length the encoder can emit.
  int sequence_length() const {
    if (modality == Modality::visual) {
      const int per_side = image_side / patch_size;
      return per_side * per_side;
    }
    return max_length;
  }

  void validate() const {
    if (output_width < 1) throw InputError("encoder output_width must be >= 1");
    if (depth < 0) throw InputError("encoder depth must be >= 0");
    if (backend == EncoderBackend::adapter) return;
    if (modality == Modality::visual) {
      if (patch_size < 1 || image_side < 1 || channels < 1)
        throw InputError("image_side, patch_size and channels must be >= 1");
      if (image_side % patch_size != 0)
        throw InputError("image_side " + std::to_string(image_side) +
                         " is not divisible by patch_size " + std::to_string(patch_size));
    } else {
      if (max_length < 1) throw InputError("max_length must be >= 1");
      if (vocab_size < 1) throw InputError("vocab_size must be >= 1");
    }
  }
};

/// Pixel array in height x width x channel order, values in [0, 1].
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> pixels;

  T& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  T at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Non-overlapping patches in raster order, each flattened as (y, x, c).
template <typename T>
Mat<T> patchify(const Image<T>& image, int patch_size) {
  const int per_side = image.width / patch_size;
  Mat<T> out(per_side * (image.height / patch_size), patch_size * patch_size * image.channels);
  for (int py = 0; py < image.height / patch_size; ++py)
    for (int px = 0; px < per_side; ++px) {
      const Eigen::Index row = py * per_side + px;
      Eigen::Index col = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int c = 0; c < image.channels; ++c)
            out(row, col++) = image.at(py * patch_size + y, px * patch_size + x, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Self-attention layer: Y = X + softmax(X Wq (X Wk)^T / sqrt(d)) X Wv Wo

template <typename T>
struct SelfAttentionCache {
  Mat<T> x, q, k, v, attn, context;
};

template <typename T>
struct SelfAttentionLayer {
  Mat<T> wq, wk, wv, wo;

  static SelfAttentionLayer init(int width, Rng& rng) {
    return {fan_in_init<T>(width, width, rng), fan_in_init<T>(width, width, rng),
            fan_in_init<T>(width, width, rng), fan_in_init<T>(width, width, rng)};
  }

  Mat<T> forward(const Mat<T>& x, SelfAttentionCache<T>* cache) const {
    const T scale = T(1) / std::sqrt(static_cast<T>(wq.cols()));
    Mat<T> q = x * wq;
    Mat<T> k = x * wk;
    Mat<T> v = x * wv;
    Mat<T> scores = (q * k.transpose()) * scale;
    Mat<T> attn = softmax_rows<T>(scores);
    Mat<T> context = attn * v;
    Mat<T> y = x + context * wo;
    if (cache) *cache = {x, std::move(q), std::move(k), std::move(v), std::move(attn), std::move(context)};
    return y;
  }

  Mat<T> backward(const SelfAttentionCache<T>& c, const Mat<T>& grad_y, SelfAttentionLayer& grads) const {
    const T scale = T(1) / std::sqrt(static_cast<T>(wq.cols()));
    grads.wo += c.context.transpose() * grad_y;
    const Mat<T> grad_context = grad_y * wo.transpose();
    const Mat<T> grad_attn = grad_context * c.v.transpose();
    const Mat<T> grad_v = c.attn.transpose() * grad_context;
    const Mat<T> grad_scores = softmax_rows_backward<T>(c.attn, grad_attn) * scale;
    const Mat<T> grad_q = grad_scores * c.k;
    const Mat<T> grad_k = grad_scores.transpose() * c.q;
    grads.wq += c.x.transpose() * grad_q;
    grads.wk += c.x.transpose() * grad_k;
    grads.wv += c.x.transpose() * grad_v;
    return grad_y + grad_q * wq.transpose() + grad_k * wk.transpose() + grad_v * wv.transpose();
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
  }
};

template <typename T>
struct EncoderCache {
  Mat<T> embedded_input;  // patches (visual) or unused (textual)
  std::vector<int> tokens;
  std::vector<SelfAttentionCache<T>> layers;
};

template <typename T>
Mat<T> run_layers(const std::vector<SelfAttentionLayer<T>>& layers, Mat<T> h, EncoderCache<T>* cache) {
  if (cache) cache->layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l)
    h = layers[l].forward(h, cache ? &cache->layers[l] : nullptr);
  return h;
}

template <typename T>
Mat<T> backprop_layers(const std::vector<SelfAttentionLayer<T>>& layers, const EncoderCache<T>& cache,
                       Mat<T> grad, std::vector<SelfAttentionLayer<T>>& grads) {
  for (std::size_t l = layers.size(); l-- > 0;)
    grad = layers[l].backward(cache.layers[l], grad, grads[l]);
  return grad;
}

/// Linear patch embedding + learned positional embedding + self-attention stack.
template <typename T>
struct VisualEncoder {
  EncoderConfig config;
  Mat<T> patch_embedding;  // patch_dim x d
  Mat<T> positional;       // L x d
  std::vector<SelfAttentionLayer<T>> layers;

  static VisualEncoder init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    VisualEncoder e;
    e.config = cfg;
    e.patch_embedding = fan_in_init<T>(cfg.patch_dim(), cfg.output_width, rng);
    e.positional = uniform_init<T>(cfg.sequence_length(), cfg.output_width, 0.1, rng);
    for (int l = 0; l < cfg.depth; ++l) e.layers.push_back(SelfAttentionLayer<T>::init(cfg.output_width, rng));
    return e;
  }

  FeatureSequence<T> forward(const Image<T>& image, EncoderCache<T>* cache = nullptr) const {
    if (image.height != config.image_side || image.width != config.image_side ||
        image.channels != config.channels)
      throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       "x" + std::to_string(image.channels) + ", encoder expects " +
                       std::to_string(config.image_side) + "x" + std::to_string(config.image_side) +
                       "x" + std::to_string(config.channels));
    for (T p : image.pixels)
      if (!std::isfinite(static_cast<double>(p))) throw NumericError("image has non-finite pixels");
    Mat<T> patches = patchify(image, config.patch_size);
    Mat<T> h = patches * patch_embedding;
    if (config.positional) h += positional;
    if (cache) cache->embedded_input = std::move(patches);
    return {run_layers(layers, std::move(h), cache), Modality::visual};
  }

  void backward(const EncoderCache<T>& cache, const Mat<T>& grad_out, VisualEncoder& grads) const {
    const Mat<T> grad_h = backprop_layers(layers, cache, grad_out, grads.layers);
    grads.patch_embedding += cache.embedded_input.transpose() * grad_h;
    if (config.positional) grads.positional += grad_h;
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".patch_embedding", patch_embedding);
    f(prefix + ".positional", positional);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].for_each_param(prefix + ".layer" + std::to_string(l), f);
  }
};

/// Token embedding + learned positional embedding + self-attention stack.
template <typename T>
struct TextEncoder {
  EncoderConfig config;
  Mat<T> token_embedding;  // vocab x d
  Mat<T> positional;       // max_length x d
  std::vector<SelfAttentionLayer<T>> layers;

  static TextEncoder init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    TextEncoder e;
    e.config = cfg;
    e.token_embedding = uniform_init<T>(cfg.vocab_size, cfg.output_width, 1.0, rng);
    e.positional = uniform_init<T>(cfg.max_length, cfg.output_width, 0.1, rng);
    for (int l = 0; l < cfg.depth; ++l) e.layers.push_back(SelfAttentionLayer<T>::init(cfg.output_width, rng));
    return e;
  }

  FeatureSequence<T> forward(const std::vector<int>& tokens, EncoderCache<T>* cache = nullptr) const {
    if (tokens.empty()) throw InputError("token sequence is empty");
    if (tokens.size() > static_cast<std::size_t>(config.max_length))
      throw ShapeError("token sequence of length " + std::to_string(tokens.size()) +
                       " exceeds max_length " + std::to_string(config.max_length));
    Mat<T> h(static_cast<Eigen::Index>(tokens.size()), config.output_width);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int t = tokens[i];
      if (t < 0 || t >= token_embedding.rows())
        throw InputError("token id " + std::to_string(t) + " outside vocabulary of size " +
                         std::to_string(token_embedding.rows()));
      h.row(i) = token_embedding.row(t);
      if (config.positional) h.row(i) += positional.row(i);
    }
    if (cache) cache->tokens = tokens;
    return {run_layers(layers, std::move(h), cache), Modality::textual};
  }

  void backward(const EncoderCache<T>& cache, const Mat<T>& grad_out, TextEncoder& grads) const {
    const Mat<T> grad_h = backprop_layers(layers, cache, grad_out, grads.layers);
    for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
      grads.token_embedding.row(cache.tokens[i]) += grad_h.row(i);
      if (config.positional) grads.positional.row(i) += grad_h.row(i);
    }
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".token_embedding", token_embedding);
    f(prefix + ".positional", positional);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].for_each_param(prefix + ".layer" + std::to_string(l), f);
  }
};

template <typename T>
FeatureSequence<T> encode_image(const Image<T>& image, const VisualEncoder<T>& encoder) {
  return encoder.forward(image);
}

template <typename T>
FeatureSequence<T> encode_text(const std::vector<int>& tokens, const TextEncoder<T>& encoder) {
  return encoder.forward(tokens);
}

/// Linear, bias-free width change: values * projection.
template <typename T>
FeatureSequence<T> project_features(const FeatureSequence<T>& features, int target_width,
                                    const Mat<T>& projection) {
  require_shape(projection, features.width(), target_width, "projection");
  return {features.values * projection, features.modality};
}

// ---------------------------------------------------------------------------
// Tokenizer: whitespace words, unknown words fall back to their UTF-8 bytes.

class Tokenizer {
 public:
  static constexpr int kByteTokens = 256;

  Tokenizer() { add_byte_tokens(); }

  /// Byte tokens followed by the `max_words` most frequent words of the
  /// corpus (ties: first occurrence).
  static Tokenizer build(const std::vector<std::string>& corpus, std::size_t max_words) {
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first seen
    std::size_t order = 0;
    for (const auto& text : corpus)
      for (auto& w : split_words(text)) {
        auto [it, inserted] = stats.try_emplace(w, 0, order++);
        ++it->second.first;
      }
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second.first != b.second.first) return a.second.first > b.second.first;
      return a.second.second < b.second.second;
    });
    Tokenizer tok;
    for (const auto& [word, s] : ranked) {
      if (tok.tokens_.size() >= kByteTokens + max_words) break;
      tok.add(word);
    }
    return tok;
  }

  static Tokenizer from_tokens(const std::vector<std::string>& tokens) {
    Tokenizer tok;
    tok.tokens_.clear();
    tok.index_.clear();
    for (const auto& t : tokens) tok.add(t);
    for (int b = 0; b < kByteTokens; ++b)
      if (!tok.index_.count(byte_token(static_cast<unsigned char>(b))))
        throw InputError("vocabulary is missing byte token " + byte_token(static_cast<unsigned char>(b)));
    return tok;
  }

  static Tokenizer load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open vocabulary '" + path.string() + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return from_tokens(tokens);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vocabulary '" + path.string() + "'");
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::vector<int> encode(std::string_view text, std::size_t max_length) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) {
      if (auto it = index_.find(w); it != index_.end()) {
        ids.push_back(it->second);
      } else {
        for (unsigned char b : w) ids.push_back(index_.at(byte_token(b)));
      }
      if (ids.size() >= max_length) break;
    }
    if (ids.size() > max_length) ids.resize(max_length);
    return ids;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
  }

  static std::string byte_token(unsigned char b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", b);
    return buf;
  }

 private:
  void add_byte_tokens() {
    for (int b = 0; b < kByteTokens; ++b) add(byte_token(static_cast<unsigned char>(b)));
  }
  void add(const std::string& t) {
    if (index_.try_emplace(t, static_cast<int>(tokens_.size())).second) tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Feature files: uint32 L, uint32 d, then L*d float32 values, row-major,
// little-endian.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw InputError("unexpected end of binary data");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace detail

template <typename T>
void write_features(std::ostream& out, const FeatureSequence<T>& f) {
  detail::put_u32(out, static_cast<std::uint32_t>(f.length()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.width()));
  for (Eigen::Index i = 0; i < f.length(); ++i)
    for (Eigen::Index j = 0; j < f.width(); ++j) detail::put_f32(out, static_cast<float>(f.values(i, j)));
}

template <typename T>
FeatureSequence<T> read_features(std::istream& in, Modality modality) {
  const auto rows = detail::get_u32(in);
  const auto cols = detail::get_u32(in);
  if (rows == 0 || cols == 0) throw InputError("feature data declares an empty sequence");
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) throw InputError("feature data too large");
  FeatureSequence<T> f{Mat<T>(rows, cols), modality};
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) f.values(i, j) = static_cast<T>(detail::get_f32(in));
  f.validate();
  return f;
}

template <typename T>
FeatureSequence<T> load_features(const std::filesystem::path& path, Modality modality) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open feature file '" + path.string() + "'");
  return read_features<T>(in, modality);
}

template <typename T>
void save_features(const std::filesystem::path& path, const FeatureSequence<T>& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write feature file '" + path.string() + "'");
  write_features(out, f);
}

/// Source of precomputed features from a heavyweight encoder. `input` is an
/// image path for visual adapters and caption text for textual adapters.
template <typename T>
class FeatureAdapter {
 public:
  virtual ~FeatureAdapter() = default;
  virtual Modality modality() const = 0;
  virtual FeatureSequence<T> encode(const std::string& sample_id, const std::string& input) const = 0;
};

/// Reads `<dir>/<sample_id>.feat`, written ahead of time by an external encoder.
template <typename T>
class FeatureDirectoryAdapter : public FeatureAdapter<T> {
 public:
  FeatureDirectoryAdapter(std::filesystem::path dir, Modality modality)
      : dir_(std::move(dir)), modality_(modality) {}

  Modality modality() const override { return modality_; }

  FeatureSequence<T> encode(const std::string& sample_id, const std::string&) const override {
    return load_features<T>(dir_ / (sample_id + ".feat"), modality_);
  }

 private:
  std::filesystem::path dir_;
  Modality modality_;
};

/// Runs an external command once per input and reads the feature binary from
/// its standard output. The command receives a single path argument: the
/// image path, or a temporary file holding the caption text.
template <typename T>
class CommandAdapter : public FeatureAdapter<T> {
 public:
  CommandAdapter(std::string command, Modality modality) : command_(std::move(command)), modality_(modality) {}

  Modality modality() const override { return modality_; }

  FeatureSequence<T> encode(const std::string& sample_id, const std::string& input) const override {
    std::filesystem::path arg = input;
    std::filesystem::path tmp;
    if (modality_ == Modality::textual) {
      tmp = std::filesystem::temp_directory_path() / ("dora_caption_" + sample_id + ".txt");
      std::ofstream(tmp, std::ios::binary) << input;
      arg = tmp;
    }
    const std::string cmd = command_ + " " + shell_quote(arg.string());
    std::string output;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw InputError("cannot run adapter command '" + command_ + "'");
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
    const int status = ::pclose(pipe);
    if (!tmp.empty()) std::filesystem::remove(tmp);
    if (status != 0) throw InputError("adapter command failed for sample '" + sample_id + "'");
    std::istringstream in(output);
    return read_features<T>(in, modality_);
  }

 private:
  static std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
  }

  std::string command_;
  Modality modality_;
};

// ---------------------------------------------------------------------------
// Netpbm (P2/P3/P5/P6) image loading with nearest-neighbour resize.

template <typename T>
Image<T> load_image(const std::filesystem::path& path, int side, int channels = 3) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image '" + path.string() + "'");
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += c;
    }
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw InputError("'" + path.string() + "' is not a PGM/PPM image");
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw InputError("'" + path.string() + "' has a malformed header");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw InputError("'" + path.string() + "' has unsupported dimensions or depth");
  const int src_c = color ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * src_c);
  if (binary) {
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw InputError("'" + path.string() + "' is truncated");
  } else {
    for (auto& v : raw) {
      const auto tok = next_token();
      if (tok.empty()) throw InputError("'" + path.string() + "' is truncated");
      v = static_cast<unsigned char>(std::stoi(tok));
    }
  }
  Image<T> img{side, side, channels, std::vector<T>(static_cast<std::size_t>(side) * side * channels)};
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int sy = y * h / side;
      const int sx = x * w / side;
      for (int c = 0; c < channels; ++c) {
        const int sc = src_c == 1 ? 0 : std::min(c, src_c - 1);
        img.at(y, x, c) = static_cast<T>(raw[(static_cast<std::size_t>(sy) * w + sx) * src_c + sc]) /
                          static_cast<T>(maxval);
      }
    }
  return img;
}

/// Writes an 8-bit binary PPM (values clamped to [0, 1]).
template <typename T>
void save_ppm(const std::filesystem::path& path, const Image<T>& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = static_cast<double>(img.at(y, x, img.channels == 1 ? 0 : c));
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
      }
}

}  // namespace dora
