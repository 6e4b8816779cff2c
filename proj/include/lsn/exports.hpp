#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "lsn/array2d.hpp"
#include "lsn/optics.hpp"

namespace lsn {

// Provenance written into every exported file.
struct ArtifactStamp {
  std::string config_hash;

  // "config_hash=<hash> tool_version=<version>"
  std::string line() const;
};

// 8-bit binary PGM (P5).  Values map linearly from [lo, hi] to [0, 255] and
// are clamped; the stamp goes into a header comment.
void write_pgm(const std::filesystem::path& path, const RealImage& image, double lo, double hi,
               const ArtifactStamp& stamp);
// Same, scaled from min(0, min image) to max image (all zero if flat at 0).
void write_pgm(const std::filesystem::path& path, const RealImage& image, const ArtifactStamp& stamp);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;
  std::vector<std::string> comments;
};
PgmImage read_pgm(const std::filesystem::path& path);

// "# <stamp>" line, then index,ring,azimuth_deg,polar_deg,field_kind,weight.
std::string led_csv(std::span<const Led> leds, std::span<const double> weights, const ArtifactStamp& stamp);

// Row-major float32 little-endian data plus a <path>.json sidecar holding
// rows, cols, dtype, the stamp fields and any extra metadata.
void write_raw_f32(const std::filesystem::path& path, const RealImage& image, const ArtifactStamp& stamp,
                   const nlohmann::json& extra = nlohmann::json::object());
RealImage read_raw_f32(const std::filesystem::path& path);

}  // namespace lsn
