#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "rain/toynet.hpp"

namespace rain {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  long step = 0;
  AttentionMaskMode mask = AttentionMaskMode::full;
  std::string kind = "toynet";  // "toynet" or "consistency"
};

struct Checkpoint {
  ToyNetParams params;
  CheckpointInfo info;
};

inline std::string manifest_path(const std::string& weights) { return weights + ".json"; }

inline nlohmann::ordered_json checkpoint_manifest(const ToyNetParams& p, const CheckpointInfo& info) {
  nlohmann::ordered_json m;
  m["format"] = "rain-toynet";
  m["version"] = 1;
  m["dtype"] = "float32-le";
  m["kind"] = info.kind;
  m["d"] = p.d();
  m["c"] = p.c();
  m["h"] = p.h();
  m["mask"] = std::string(to_string(info.mask));
  m["seed"] = info.seed;
  m["step"] = info.step;
  m["count"] = p.size();
  auto& blocks = m["blocks"] = nlohmann::ordered_json::array();
  for (int b = 0; b < static_cast<int>(Block::count); ++b) {
    const auto view = p[static_cast<Block>(b)];
    blocks.push_back({{"name", kBlockNames[static_cast<std::size_t>(b)]}, {"rows", view.rows()}, {"cols", view.cols()}});
  }
  return m;
}

/// Writes `path` (raw float32 little-endian, flat parameter order) and the
/// manifest `path`.json. Values are rounded to float32.
inline void save_checkpoint(const std::string& path, const ToyNetParams& p, const CheckpointInfo& info) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  if (!p.flat().allFinite()) throw NumericError("save_checkpoint: parameters are not finite");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const float v = static_cast<float>(p.flat()[i]);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  if (!out) throw Error("write failed: " + path);
  std::ofstream man(manifest_path(path));
  if (!man) throw Error("cannot open " + manifest_path(path) + " for writing");
  man << checkpoint_manifest(p, info).dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream man(manifest_path(path));
  if (!man) throw ConfigError("checkpoint manifest not found: " + manifest_path(path));
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(man);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest_path(path) + ": " + e.what());
  }
  if (m.value("format", "") != "rain-toynet" || m.value("dtype", "") != "float32-le")
    throw ConfigError(manifest_path(path) + ": not a rain-toynet float32 checkpoint");
  Checkpoint ck{ToyNetParams(m.at("d").get<Eigen::Index>(), m.at("c").get<Eigen::Index>(), m.at("h").get<Eigen::Index>()),
                {m.value("seed", std::uint64_t{0}), m.value("step", 0L), parse_mask_mode(m.value("mask", "full")),
                 m.value("kind", "toynet")}};
  if (m.at("count").get<Eigen::Index>() != ck.params.size())
    throw ConfigError(manifest_path(path) + ": parameter count does not match d, c, h");
  const auto& blocks = m.at("blocks");
  if (blocks.size() != static_cast<std::size_t>(Block::count)) throw ConfigError(manifest_path(path) + ": block list mismatch");
  for (int b = 0; b < static_cast<int>(Block::count); ++b) {
    const auto view = ck.params[static_cast<Block>(b)];
    const auto& e = blocks[static_cast<std::size_t>(b)];
    if (e.at("name").get<std::string>() != kBlockNames[static_cast<std::size_t>(b)] ||
        e.at("rows").get<Eigen::Index>() != view.rows() || e.at("cols").get<Eigen::Index>() != view.cols())
      throw ConfigError(manifest_path(path) + ": block " + std::string(kBlockNames[static_cast<std::size_t>(b)]) +
                        " shape mismatch");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint weights not found: " + path);
  std::vector<float> buf(static_cast<std::size_t>(ck.params.size()));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)) || in.peek() != EOF)
    throw ConfigError(path + ": size does not match manifest");
  for (std::size_t i = 0; i < buf.size(); ++i) ck.params.flat()[static_cast<Eigen::Index>(i)] = buf[i];
  return ck;
}

/// Parameters as they come back from a checkpoint.
inline ToyNetParams round_to_float(ToyNetParams p) {
  for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()[i] = static_cast<float>(p.flat()[i]);
  return p;
}

}  // namespace rain
