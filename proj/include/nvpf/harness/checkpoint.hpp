#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nvpf/core/blob.hpp"
#include "nvpf/core/params.hpp"

namespace nvpf::harness {

inline constexpr const char* kCheckpointFormat = "nvpf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + p.string());
}

// Writes manifest.json plus one blob per tensor into a sibling temporary
// directory, then renames it over `dir`.
inline void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                            const nlohmann::json& config, const ParamList& params) {
  namespace fs = std::filesystem;
  if (dir.empty()) throw IoError("checkpoint path is empty");
  const fs::path target = fs::absolute(dir).lexically_normal();
  const fs::path parent = target.parent_path();
  const fs::path tmp = parent / (target.filename().string() + ".tmp");
  std::error_code ec;
  fs::remove_all(tmp, ec);
  try {
    fs::create_directories(tmp);
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string bytes = blob::encode(params[i].tensor);
      char name[32];
      std::snprintf(name, sizeof name, "t%04zu.bin", i);
      write_file(tmp / name, bytes);
      entries.push_back({{"name", params[i].name},
                         {"file", name},
                         {"shape", params[i].tensor.shape()},
                         {"crc32", blob::crc32_of(bytes)}});
    }
    const nlohmann::json manifest = {{"format", kCheckpointFormat},
                                     {"version", kCheckpointVersion},
                                     {"kind", kind},
                                     {"config", config},
                                     {"tensors", entries}};
    write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(target, ec);
    fs::rename(tmp, target);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(tmp, ec);
    throw IoError(e.what());
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (dir.empty()) throw IoError("checkpoint path is empty");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat)
      throw FormatError("not an nvpf checkpoint");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    Checkpoint ck;
    ck.kind = manifest.at("kind").get<std::string>();
    ck.config = manifest.at("config");
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const std::string bytes = read_file(dir / e.at("file").get<std::string>());
      if (blob::crc32_of(bytes) != e.at("crc32").get<std::uint32_t>())
        throw ChecksumError("checksum mismatch for tensor '" + name + "'");
      Tensor t = blob::decode(bytes);
      if (t.shape() != e.at("shape").get<Shape>())
        throw FormatError("tensor '" + name + "' shape disagrees with manifest");
      ck.tensors.emplace(name, std::move(t));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

// Copies checkpoint values into live parameters, matched by name.
inline void load_into(const ParamList& params, const Checkpoint& ck) {
  if (params.size() != ck.tensors.size())
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  for (const auto& p : params) {
    const auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second.shape() != p.tensor.shape())
      throw ShapeError("tensor '" + p.name + "' is " + shape_string(it->second.shape()) + ", model expects " +
                       shape_string(p.tensor.shape()));
    Tensor live = p.tensor;
    auto dst = live.mutable_data();
    const auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace nvpf::harness
