#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace petsgan {

inline constexpr const char* kCheckpointVersion = "petsgan-ckpt-1";

// Versioned container: an 8-byte magic, a u64 manifest length, a JSON manifest
// and the raw little-endian tensor blobs. Parameters are stored as float32;
// RNG states as uint8. The manifest carries an FNV-1a checksum of the payload.
struct Archive {
  std::string version = kCheckpointVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> blobs;

  const torch::Tensor& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
std::string serialize_archive(const Archive& archive);

// Throws CorruptArchive on truncation, bad magic, bad manifest or checksum
// mismatch; VersionMismatch when the version tag differs from kCheckpointVersion.
Archive read_archive(const std::filesystem::path& path);
Archive deserialize_archive(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace petsgan
