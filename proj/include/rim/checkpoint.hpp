// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rim/config.hpp"
#include "rim/model.hpp"

namespace rim {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swaps");

// File layout: 8-byte magic, u32 manifest length, manifest JSON, then raw
// float32 parameter payloads in manifest order. The manifest pins the
// architecture and a config hash so mismatched loads fail loudly.
inline constexpr char kCheckpointMagic[8] = {'R', 'I', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  ModelConfig arch;
  long training_step = 0;
  int trained_steps = 0;  // unroll length used in training
  std::string hash;
};

namespace detail {

inline std::string manifest_json(const ModelConfig& cfg, long training_step, int trained_steps,
                                 const std::vector<std::pair<std::string, Shape>>& params) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["arch"] = nlohmann::json::parse(model_config_to_json(cfg));
  j["config_hash"] = config_hash(cfg);
  j["dtype"] = "f32";
  j["training_step"] = training_step;
  j["trained_steps"] = trained_steps;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, shape] : params) plist.push_back({{"name", name}, {"shape", shape}});
  j["params"] = plist;
  return j.dump();
}

}  // namespace detail

// Atomic write: the file appears complete or not at all.
template <typename T>
void save_checkpoint(const std::string& path, const RimParams<T>& params, long training_step,
                     int trained_steps) {
  std::vector<std::pair<std::string, Shape>> names;
  params.visit([&](const std::string& n, const Tensor<T>& t) { names.emplace_back(n, t.shape); });
  const std::string manifest =
      detail::manifest_json(params.config, training_step, trained_steps, names);

  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint '" + path + "': cannot write");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const uint32_t len = static_cast<uint32_t>(manifest.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    params.visit([&](const std::string&, const Tensor<T>& t) {
      for (long i = 0; i < t.size(); ++i) {
        const float v = static_cast<float>((*t.data)[static_cast<size_t>(i)]);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    });
    if (!out) throw std::runtime_error("checkpoint '" + path + "': write failed");
  }
  fs::rename(tmp, target);
}

inline CheckpointInfo read_checkpoint_info(const std::string& path, std::string* manifest_out = nullptr,
                                           std::streamoff* payload_at = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint '" + path + "': cannot open");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint '" + path + "': bad magic");
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string manifest(len, '\0');
  in.read(manifest.data(), len);
  if (!in) throw std::runtime_error("checkpoint '" + path + "': truncated manifest");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint '" + path + "': manifest is not valid JSON");
  }
  if (j.at("format_version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint '" + path + "': unsupported format version");
  CheckpointInfo info;
  info.arch = model_config_from_json(j.at("arch").dump());
  info.training_step = j.at("training_step").get<long>();
  info.trained_steps = j.at("trained_steps").get<int>();
  info.hash = j.at("config_hash").get<std::string>();
  if (info.hash != config_hash(info.arch))
    throw std::runtime_error("checkpoint '" + path + "': config hash does not match architecture");
  if (manifest_out) *manifest_out = manifest;
  if (payload_at) *payload_at = static_cast<std::streamoff>(sizeof(kCheckpointMagic) + sizeof(len) + len);
  return info;
}

// Loads parameters; when `expected` is given, any architecture difference is
// an error rather than a silent reinterpretation.
template <typename T>
RimParams<T> load_checkpoint(const std::string& path, CheckpointInfo* info_out = nullptr,
                             const std::optional<ModelConfig>& expected = std::nullopt) {
  std::string manifest;
  std::streamoff payload_at = 0;
  CheckpointInfo info = read_checkpoint_info(path, &manifest, &payload_at);
  if (expected && !(*expected == info.arch))
    throw std::runtime_error("checkpoint '" + path + "': architecture mismatch (expected " +
                             model_config_to_json(*expected) + ", found " +
                             model_config_to_json(info.arch) + ")");

  RimParams<T> params = rim_init<T>(info.arch, 0);
  const auto j = nlohmann::json::parse(manifest);
  std::ifstream in(path, std::ios::binary);
  in.seekg(payload_at);
  size_t idx = 0;
  const auto& plist = j.at("params");
  params.visit([&](const std::string& name, Tensor<T>& t) {
    if (idx >= plist.size())
      throw std::runtime_error("checkpoint '" + path + "': missing parameter " + name);
    const auto& entry = plist.at(idx++);
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<Shape>() != t.shape)
      throw std::runtime_error("checkpoint '" + path + "': parameter layout mismatch at " + name);
    for (long i = 0; i < t.size(); ++i) {
      float v = 0.0f;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      (*t.data)[static_cast<size_t>(i)] = static_cast<T>(v);
    }
  });
  if (!in || idx != plist.size())
    throw std::runtime_error("checkpoint '" + path + "': truncated payload");
  if (info_out) *info_out = info;
  return params;
}

}  // namespace rim
