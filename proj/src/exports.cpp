#include "lsn/exports.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "lsn/error.hpp"
#include "lsn/io.hpp"
#include "lsn/version.hpp"

namespace lsn {

std::string ArtifactStamp::line() const {
  return "config_hash=" + config_hash + " tool_version=" + std::string(kToolVersion);
}

void write_pgm(const std::filesystem::path& path, const RealImage& image, double lo, double hi,
               const ArtifactStamp& stamp) {
  if (image.size() == 0) throw ShapeError("cannot write an empty PGM");
  const std::string header = "P5\n# " + stamp.line() + "\n" + std::to_string(image.cols()) + " " +
                             std::to_string(image.rows()) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  const double span = hi - lo;
  for (double v : image) {
    double level = span > 0.0 ? (v - lo) / span * 255.0 : 0.0;
    if (!std::isfinite(level)) throw NumericError("non-finite pixel in PGM export");
    level = std::clamp(std::round(level), 0.0, 255.0);
    bytes.push_back(static_cast<unsigned char>(level));
  }
  io::write_bytes(path, bytes);
}

void write_pgm(const std::filesystem::path& path, const RealImage& image, const ArtifactStamp& stamp) {
  double lo = 0.0, hi = 0.0;
  for (double v : image) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  write_pgm(path, image, lo, hi, stamp);
}

PgmImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  std::size_t pos = 0;
  PgmImage out;
  // Header tokens separated by whitespace; comments run to end of line.
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        const std::size_t start = pos + 1;
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        std::string c(bytes.begin() + static_cast<long>(start), bytes.begin() + static_cast<long>(pos));
        if (!c.empty() && c.front() == ' ') c.erase(0, 1);
        out.comments.push_back(c);
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw CorruptDatasetError(path.string() + " is not a binary PGM");
  try {
    out.width = std::stoul(token());
    out.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw CorruptDatasetError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw CorruptDatasetError(path.string() + ": malformed PGM header");
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != out.width * out.height) {
    throw CorruptDatasetError(path.string() + ": PGM raster has the wrong length");
  }
  out.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return out;
}

std::string led_csv(std::span<const Led> leds, std::span<const double> weights, const ArtifactStamp& stamp) {
  if (leds.size() != weights.size()) throw ShapeError("LED and weight counts differ");
  std::ostringstream out;
  out << "# " << stamp.line() << '\n';
  out << "index,ring,azimuth_deg,polar_deg,field_kind,weight\n";
  char buf[160];
  for (std::size_t i = 0; i < leds.size(); ++i) {
    const Led& l = leds[i];
    std::snprintf(buf, sizeof buf, "%d,%d,%.4f,%.4f,%s,%.9g\n", l.index, l.ring, l.azimuth_deg, l.polar_deg,
                  std::string(to_string(l.field_kind)).c_str(), weights[i]);
    out << buf;
  }
  return out.str();
}

void write_raw_f32(const std::filesystem::path& path, const RealImage& image, const ArtifactStamp& stamp,
                   const nlohmann::json& extra) {
  io::write_bytes(path, io::encode_f32(image.flat()));
  nlohmann::json side = extra;
  side["rows"] = image.rows();
  side["cols"] = image.cols();
  side["dtype"] = "float32";
  side["byte_order"] = "little";
  side["layout"] = "row-major";
  side["config_hash"] = stamp.config_hash;
  side["tool_version"] = kToolVersion;
  io::write_text(path.string() + ".json", side.dump(2) + "\n");
}

RealImage read_raw_f32(const std::filesystem::path& path) {
  const auto side = nlohmann::json::parse(io::read_text(path.string() + ".json"));
  const std::size_t rows = side.at("rows"), cols = side.at("cols");
  const auto values = io::decode_f32(io::read_bytes(path));
  if (values.size() != rows * cols) throw CorruptDatasetError(path.string() + " does not match its sidecar shape");
  RealImage out(rows, cols);
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

}  // namespace lsn
