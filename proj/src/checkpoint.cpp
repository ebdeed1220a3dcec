#include "petsgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'T', 'S', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string dtype_name(const torch::Tensor& t) {
  if (t.scalar_type() == torch::kUInt8) return "u8";
  return "f32";
}

}  // namespace

const torch::Tensor& Archive::blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return t;
  }
  throw CorruptArchive("checkpoint is missing tensor '" + name + "'");
}

bool Archive::has_blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return true;
  }
  return false;
}

std::string serialize_archive(const Archive& archive) {
  std::string payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, tensor] : archive.blobs) {
    auto t = tensor.detach().cpu();
    t = t.scalar_type() == torch::kUInt8 ? t.contiguous() : t.to(torch::kFloat32).contiguous();
    const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name},
                       {"dtype", dtype_name(t)},
                       {"shape", t.sizes().vec()},
                       {"offset", payload.size()},
                       {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  nlohmann::json manifest = {{"version", archive.version},
                             {"meta", archive.meta},
                             {"blobs", entries},
                             {"payload_bytes", payload.size()},
                             {"payload_fnv1a", fnv1a(payload.data(), payload.size())}};
  const auto text = manifest.dump();
  const std::uint64_t len = text.size();
  std::string out(kMagic, sizeof kMagic);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += text;
  out += payload;
  return out;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  const auto bytes = serialize_archive(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive deserialize_archive(const std::string& bytes, const std::string& origin) {
  constexpr std::size_t kHeader = sizeof kMagic + sizeof(std::uint64_t);
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CorruptArchive("not a checkpoint archive: " + origin);
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof kMagic, sizeof len);
  if (len > bytes.size() - kHeader) throw CorruptArchive("truncated checkpoint manifest: " + origin);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kHeader, len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchive("unreadable checkpoint manifest in " + origin + ": " + e.what());
  }
  Archive archive;
  try {
    archive.version = manifest.at("version").get<std::string>();
    if (archive.version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint " + origin + " has version '" + archive.version + "', expected '" +
                            kCheckpointVersion + "'");
    }
    archive.meta = manifest.at("meta");
    const auto payload_start = kHeader + len;
    const auto payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - payload_start != payload_bytes) {
      throw CorruptArchive("checkpoint payload size mismatch (truncated?): " + origin);
    }
    const char* payload = bytes.data() + payload_start;
    if (fnv1a(payload, payload_bytes) != manifest.at("payload_fnv1a").get<std::uint64_t>()) {
      throw CorruptArchive("checkpoint checksum mismatch: " + origin);
    }
    for (const auto& e : manifest.at("blobs")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (offset > payload_bytes || nbytes > payload_bytes - offset) {
        throw CorruptArchive("checkpoint blob out of bounds: " + origin);
      }
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto dtype = e.at("dtype").get<std::string>();
      auto scalar = dtype == "u8" ? torch::kUInt8 : torch::kFloat32;
      if (dtype != "u8" && dtype != "f32") throw CorruptArchive("unknown blob dtype '" + dtype + "'");
      auto t = torch::empty(shape, scalar);
      if (static_cast<std::size_t>(t.numel()) * t.element_size() != nbytes) {
        throw CorruptArchive("checkpoint blob size does not match its shape: " + origin);
      }
      std::memcpy(t.data_ptr(), payload + offset, nbytes);
      archive.blobs.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchive("malformed checkpoint manifest in " + origin + ": " + e.what());
  }
  return archive;
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_archive(ss.str(), path.string());
}

}  // namespace petsgan
