#include "lsn/checkpoint.hpp"

#include "lsn/error.hpp"
#include "lsn/io.hpp"
#include "lsn/version.hpp"

namespace lsn {

const Blob& Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return b;
  }
  throw NotFoundError("checkpoint has no blob named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return true;
  }
  return false;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& blob : checkpoint.blobs) {
    std::size_t count = 1;
    for (auto d : blob.shape) count *= d;
    if (count != blob.values.size()) throw ShapeError("blob " + blob.name + " does not match its shape");
    const auto bytes = io::encode_f32(blob.values);
    const std::string file = blob.name + ".f32";
    io::write_bytes(dir / file, bytes);
    entries.push_back({{"name", blob.name},
                       {"shape", blob.shape},
                       {"file", file},
                       {"dtype", "float32-le"},
                       {"crc32", io::hex32(io::crc32(bytes))}});
  }
  const nlohmann::json manifest = {{"version", Checkpoint::kVersion},
                                   {"tool_version", kToolVersion},
                                   {"metadata", checkpoint.metadata},
                                   {"blobs", entries}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw NotFoundError("no checkpoint manifest at " + manifest_path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDatasetError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.contains("version") || manifest["version"] != Checkpoint::kVersion) {
    throw CorruptDatasetError("unsupported checkpoint version");
  }
  Checkpoint out;
  out.metadata = manifest.value("metadata", nlohmann::json::object());
  try {
    for (const auto& entry : manifest.at("blobs")) {
      Blob blob;
      blob.name = entry.at("name").get<std::string>();
      blob.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto bytes = io::read_bytes(dir / entry.at("file").get<std::string>());
      if (io::hex32(io::crc32(bytes)) != entry.at("crc32").get<std::string>()) {
        throw CorruptDatasetError("checksum mismatch for blob " + blob.name);
      }
      blob.values = io::decode_f32(bytes);
      std::size_t count = 1;
      for (auto d : blob.shape) count *= d;
      if (count != blob.values.size()) {
        throw CorruptDatasetError("blob " + blob.name + " has the wrong length");
      }
      out.blobs.push_back(std::move(blob));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDatasetError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  return out;
}

void append_model(Checkpoint& checkpoint, const nn::DigitalModel& model) {
  const auto names = nn::DigitalModel::parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    checkpoint.blobs.push_back({names[i], params[i]->shape, params[i]->data});
  }
  checkpoint.metadata["model_input_n"] = model.input_n();
}

void restore_model(const Checkpoint& checkpoint, nn::DigitalModel& model) {
  const auto names = nn::DigitalModel::parameter_names();
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Blob& blob = checkpoint.find(names[i]);
    if (blob.shape != params[i]->shape) throw ShapeError("checkpoint shape mismatch for " + names[i]);
    params[i]->data = blob.values;
  }
}

}  // namespace lsn
