#pragma once

// Binary checkpoint format (little-endian):
//   "DORACKPT" | u32 version | u32 heads | u32 d_head | u32 d_model
//   | u32 len + variant name | u32 len + JSON metadata (model config + extras)
//   | u32 block count | blocks...
// Each block: u32 len + name | u32 rows | u32 cols | rows*cols float32, row-major.

#include "dora/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace dora {

inline constexpr char kCheckpointMagic[8] = {'D', 'O', 'R', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["modality"] = to_string(c.modality);
  j["backend"] = c.backend == EncoderBackend::lightweight ? "lightweight" : "adapter";
  j["output_width"] = c.output_width;
  j["image_side"] = c.image_side;
  j["patch_size"] = c.patch_size;
  j["channels"] = c.channels;
  j["vocab_size"] = c.vocab_size;
  j["max_length"] = c.max_length;
  j["depth"] = c.depth;
  j["trainable"] = c.trainable;
  j["positional"] = c.positional;
  return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.modality = j.at("modality").get<std::string>() == "visual" ? Modality::visual : Modality::textual;
  c.backend = j.at("backend").get<std::string>() == "adapter" ? EncoderBackend::adapter : EncoderBackend::lightweight;
  c.output_width = j.at("output_width").get<int>();
  c.image_side = j.at("image_side").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_length = j.at("max_length").get<int>();
  c.depth = j.at("depth").get<int>();
  c.trainable = j.at("trainable").get<bool>();
  c.positional = j.at("positional").get<bool>();
  return c;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["visual"] = to_json(c.visual);
  j["textual"] = to_json(c.textual);
  j["d_model"] = c.d_model;
  j["d_head"] = c.d_head;
  j["heads"] = c.heads;
  j["variant"] = to_string(c.variant);
  j["class_count"] = c.class_count;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.visual = encoder_config_from_json(j.at("visual"));
  c.textual = encoder_config_from_json(j.at("textual"));
  c.d_model = j.at("d_model").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.heads = j.at("heads").get<int>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.class_count = j.at("class_count").get<int>();
  return c;
}

namespace detail {

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint32_t limit = 1u << 30) {
  const auto n = get_u32(in);
  if (n > limit) throw InputError("checkpoint string length out of range");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw InputError("unexpected end of checkpoint");
  return s;
}

}  // namespace detail

/// `extra` is stored alongside the model config (task, labels, vocabulary...).
template <typename T>
void write_checkpoint(std::ostream& out, const DoraModel<T>& model, const nlohmann::json& extra = nlohmann::json::object()) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(model.config.heads));
  detail::put_u32(out, static_cast<std::uint32_t>(model.config.d_head));
  detail::put_u32(out, static_cast<std::uint32_t>(model.config.d_model));
  detail::put_string(out, to_string(model.config.variant));
  nlohmann::ordered_json meta;
  meta["model"] = to_json(model.config);
  meta["extra"] = extra;
  detail::put_string(out, meta.dump());

  auto& m = const_cast<DoraModel<T>&>(model);
  std::uint32_t blocks = 0;
  m.for_each_param([&](const std::string&, Mat<T>&) { ++blocks; });
  detail::put_u32(out, blocks);
  m.for_each_param([&](const std::string& name, Mat<T>& p) {
    detail::put_string(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(p.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.cols()));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) detail::put_f32(out, static_cast<float>(p(r, c)));
  });
}

template <typename T>
struct LoadedCheckpoint {
  DoraModel<T> model;
  nlohmann::json extra;
};

template <typename T>
LoadedCheckpoint<T> read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw InputError("not a checkpoint file (bad magic)");
  const auto version = detail::get_u32(in);
  if (version != kCheckpointVersion)
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  const auto heads = detail::get_u32(in);
  const auto d_head = detail::get_u32(in);
  const auto d_model = detail::get_u32(in);
  const auto variant = parse_variant(detail::get_string(in, 64));
  const auto meta = nlohmann::json::parse(detail::get_string(in), nullptr, false);
  if (meta.is_discarded() || !meta.contains("model")) throw InputError("checkpoint metadata is malformed");

  LoadedCheckpoint<T> out;
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(meta["model"]);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint model config is malformed: ") + e.what());
  }
  if (static_cast<std::uint32_t>(cfg.heads) != heads || static_cast<std::uint32_t>(cfg.d_head) != d_head ||
      static_cast<std::uint32_t>(cfg.d_model) != d_model || cfg.variant != variant)
    throw InputError("checkpoint header disagrees with its model config");
  out.model = DoraModel<T>::init(cfg, 0);
  out.extra = meta.value("extra", nlohmann::json::object());

  std::map<std::string, Mat<T>*> slots;
  out.model.for_each_param([&](const std::string& name, Mat<T>& p) { slots[name] = &p; });
  const auto blocks = detail::get_u32(in);
  if (blocks != slots.size())
    throw InputError("checkpoint has " + std::to_string(blocks) + " parameter blocks, model needs " +
                     std::to_string(slots.size()));
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const auto name = detail::get_string(in, 4096);
    auto it = slots.find(name);
    if (it == slots.end()) throw InputError("unexpected parameter block '" + name + "'");
    const auto rows = detail::get_u32(in);
    const auto cols = detail::get_u32(in);
    Mat<T>& p = *it->second;
    if (rows != p.rows() || cols != p.cols())
      throw InputError("parameter block '" + name + "' has shape " + shape_str(rows, cols) + ", expected " +
                       shape_str(p.rows(), p.cols()));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = static_cast<T>(detail::get_f32(in));
    slots.erase(it);
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DoraModel<T>& model,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, model, extra);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint<T>(in);
}

/// The model as it reads back from a checkpoint: parameters rounded to float32.
template <typename T>
DoraModel<T> storage_rounded(const DoraModel<T>& model) {
  DoraModel<T> out = model;
  out.for_each_param([](const std::string&, Mat<T>& m) { m = m.template cast<float>().template cast<T>(); });
  return out;
}

}  // namespace dora
