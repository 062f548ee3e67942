#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detective/model.hpp"

namespace detective {

/// Unreadable checkpoint, or one whose tensors do not fit its configuration.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointMagic = "detective-checkpoint";

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"image_height", c.image_height},
       {"image_width", c.image_width},
       {"in_channels", c.in_channels},
       {"stage_channels", c.stage_channels},
       {"kernel", c.kernel}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("image_height").get_to(c.image_height);
  j.at("image_width").get_to(c.image_width);
  j.at("in_channels").get_to(c.in_channels);
  j.at("stage_channels").get_to(c.stage_channels);
  j.at("kernel").get_to(c.kernel);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"hidden_channels", c.hidden_channels},
       {"kernel", c.kernel},
       {"num_classes", c.num_classes},
       {"attention", c.attention},
       {"positional", c.positional},
       {"background_class", c.background_class}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("hidden_channels").get_to(c.hidden_channels);
  j.at("kernel").get_to(c.kernel);
  j.at("num_classes").get_to(c.num_classes);
  j.at("attention").get_to(c.attention);
  j.at("positional").get_to(c.positional);
  j.at("background_class").get_to(c.background_class);
}

namespace detail {

inline void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Layout: one line "detective-checkpoint <header bytes>", a JSON header
/// (format version, model config, tensor index with shapes and payload byte
/// offsets, free-form metadata), then little-endian float64 payloads in index
/// order.
inline void save_checkpoint(const std::filesystem::path& path, const Detective& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json index = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : model.named_parameters()) {
    index.push_back({{"name", name}, {"shape", t->shape()}, {"offset", payload.size()}});
    for (double v : t->data()) detail::append_le(payload, v);
  }
  const nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                              {"config", model.config()},
                              {"tensors", index},
                              {"payload_bytes", payload.size()},
                              {"metadata", metadata}};
  const std::string text = header.dump(2) + "\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << ' ' << text.size() << '\n' << text;
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

struct LoadedCheckpoint {
  Detective model;
  nlohmann::json metadata;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string magic;
  std::size_t header_bytes = 0;
  in >> magic >> header_bytes;
  if (magic != kCheckpointMagic || !in) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  in.get();
  std::string text(header_bytes, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_bytes))) {
    throw CheckpointError(path.string() + ": truncated header");
  }
  nlohmann::json header;
  ModelConfig config;
  try {
    header = nlohmann::json::parse(text);
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw CheckpointError(path.string() + ": unsupported format version");
    }
    config = header.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header (" + e.what() + ")");
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string payload = rest.str();

  Detective model = [&] {
    try {
      return Detective(config, 0);
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(path.string() + ": invalid model config (" + e.what() + ")");
    }
  }();
  auto params = model.named_parameters();
  const auto& index = header.at("tensors");
  if (index.size() != params.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(params.size()) +
                          " tensors for this configuration, found " +
                          std::to_string(index.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = index[i];
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    Tensor& t = *params[i].second;
    if (name != params[i].first || shape != t.shape()) {
      throw CheckpointError(path.string() + ": tensor " + name + " " + shape_string(shape) +
                            " does not match expected " + params[i].first + " " +
                            shape_string(t.shape()));
    }
    if (offset + t.size() * 8 > payload.size()) {
      throw CheckpointError(path.string() + ": payload truncated at tensor " + name);
    }
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = detail::read_le(payload.data() + offset + 8 * k);
  }
  return LoadedCheckpoint{std::move(model), header.value("metadata", nlohmann::json::object())};
}

}  // namespace detective
