#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsn/nn.hpp"

namespace lsn {

struct Blob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

// A directory holding manifest.json and one float32 little-endian file per blob.
struct Checkpoint {
  static constexpr int kVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();
  std::vector<Blob> blobs;

  const Blob& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
// Throws NotFoundError for a missing manifest, CorruptDatasetError for a bad
// version, size or checksum.
Checkpoint read_checkpoint(const std::filesystem::path& dir);

void append_model(Checkpoint& checkpoint, const nn::DigitalModel& model);
// Restores parameters in place; shapes must match the model.
void restore_model(const Checkpoint& checkpoint, nn::DigitalModel& model);

}  // namespace lsn
