#include "lsn/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <map>
#include <sstream>

#include "lsn/error.hpp"
#include "lsn/io.hpp"
#include "lsn/version.hpp"

namespace lsn {

namespace {

struct Point {
  double x;
  double y;
};

constexpr double kPi = std::numbers::pi;

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// True when the polygon turns the same way at every vertex.
bool strictly_convex(const std::vector<Point>& poly) {
  int sign = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
    const int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
    if (s == 0) return false;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

bool inside_convex(const std::vector<Point>& poly, double x, double y) {
  bool pos = false, neg = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cross(poly[i], poly[(i + 1) % n], {x, y});
    pos = pos || c > 0;
    neg = neg || c < 0;
  }
  return !(pos && neg);
}

double interior_angle_deg(const Point& prev, const Point& at, const Point& next) {
  const double ax = prev.x - at.x, ay = prev.y - at.y;
  const double bx = next.x - at.x, by = next.y - at.y;
  const double c = (ax * bx + ay * by) / (std::hypot(ax, ay) * std::hypot(bx, by));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / kPi;
}

std::vector<Point> raw_polygon(ShapeKind kind, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> poly;
  if (kind == ShapeKind::Rectangle) {
    const double aspect = 0.4 + 0.6 * unit(rng);
    poly = {{-1.0, -aspect}, {1.0, -aspect}, {1.0, aspect}, {-1.0, aspect}};
  } else {
    // Interior angles of at least 30 degrees.
    double a, b;
    do {
      a = 30.0 + 120.0 * unit(rng);
      b = 30.0 + 120.0 * unit(rng);
    } while (180.0 - a - b < 30.0);
    const double ar = a * kPi / 180.0, br = b * kPi / 180.0;
    // Base from (0,0) to (1,0); apex from the law of sines.
    const double side = std::sin(br) / std::sin(ar + br);
    poly = {{0.0, 0.0}, {1.0, 0.0}, {side * std::cos(ar), side * std::sin(ar)}};
  }
  // Hand-drawn wobble on each vertex.
  std::normal_distribution<double> wobble(0.0, 0.03);
  for (auto& p : poly) {
    p.x += wobble(rng);
    p.y += wobble(rng);
  }
  const double theta = 2.0 * kPi * unit(rng);
  const double c = std::cos(theta), s = std::sin(theta);
  for (auto& p : poly) p = {c * p.x - s * p.y, s * p.x + c * p.y};
  return poly;
}

RealImage box_blur3(const RealImage& in) {
  RealImage out(in.rows(), in.cols(), 0.0);
  const auto rows = static_cast<long>(in.rows()), cols = static_cast<long>(in.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double s = 0.0;
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < rows && cc >= 0 && cc < cols) {
            s += in(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          }
        }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = s / 9.0;
    }
  }
  return out;
}

ObjectPatch phase_object(const RealImage& amplitude) {
  ObjectPatch patch(amplitude.rows(), amplitude.cols());
  for (std::size_t i = 0; i < amplitude.size(); ++i) {
    patch[i] = std::polar(amplitude[i], 2.0 * amplitude[i]);
  }
  return patch;
}

Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

RealImage generate_shape(ShapeKind kind, std::size_t canvas_n, Rng& rng) {
  if (canvas_n < 32) throw ValidationError("shape canvas must be at least 32 pixels");
  std::uniform_real_distribution<double> extent_frac(0.2, 0.6);
  const double canvas = static_cast<double>(canvas_n);
  for (;;) {
    auto poly = raw_polygon(kind, rng);
    if (!strictly_convex(poly)) continue;
    if (kind == ShapeKind::Triangle) {
      bool ok = true;
      for (std::size_t i = 0; i < 3; ++i) {
        ok = ok && interior_angle_deg(poly[(i + 2) % 3], poly[i], poly[(i + 1) % 3]) >= 30.0;
      }
      if (!ok) continue;
    }
    double x0 = poly[0].x, x1 = x0, y0 = poly[0].y, y1 = y0;
    for (const auto& p : poly) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    const double scale = extent_frac(rng) * canvas / std::max(x1 - x0, y1 - y0);
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    for (auto& p : poly) p = {(p.x - cx) * scale + 0.5 * canvas, (p.y - cy) * scale + 0.5 * canvas};

    RealImage mask(canvas_n, canvas_n, 0.0);
    std::size_t filled = 0;
    for (std::size_t r = 0; r < canvas_n; ++r) {
      for (std::size_t c = 0; c < canvas_n; ++c) {
        if (inside_convex(poly, static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5)) {
          mask(r, c) = 1.0;
          ++filled;
        }
      }
    }
    if (static_cast<double>(filled) < 0.01 * canvas * canvas) continue;
    return box_blur3(mask);
  }
}

ComplexField object_from_amplitude(const RealImage& amplitude, std::size_t pad_to) {
  if (amplitude.rows() > pad_to || amplitude.cols() > pad_to) {
    throw ShapeError("amplitude is larger than the padded field");
  }
  for (double a : amplitude) {
    if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("amplitude must lie in [0, 1]");
  }
  Array2D<Complex> field(pad_to, pad_to);
  const std::size_t r0 = (pad_to - amplitude.rows()) / 2;
  const std::size_t c0 = (pad_to - amplitude.cols()) / 2;
  for (std::size_t r = 0; r < amplitude.rows(); ++r) {
    for (std::size_t c = 0; c < amplitude.cols(); ++c) {
      const double a = amplitude(r, c);
      field(r0 + r, c0 + c) = std::polar(a, 2.0 * a);
    }
  }
  return ComplexField(std::move(field), Plane::Object);
}

ComplexField SampleRecord::object(std::size_t grid_n) const {
  if (!patch) throw ValidationError("sample " + sample_id + " has no object data");
  if (origin_row + patch->rows() > grid_n || origin_col + patch->cols() > grid_n) {
    throw ShapeError("sample " + sample_id + " does not fit a " + std::to_string(grid_n) + " grid");
  }
  Array2D<Complex> field(grid_n, grid_n);
  for (std::size_t r = 0; r < patch->rows(); ++r) {
    std::copy_n(patch->row(r).data(), patch->cols(), field.row(origin_row + r).data() + origin_col);
  }
  return ComplexField(std::move(field), Plane::Object);
}

std::array<std::size_t, 2> Dataset::class_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.label));
  return counts;
}

Dataset build_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.n_per_class < 10) throw ValidationError("need at least 10 shapes per class");
  if (spec.augment_translations < 1) throw ValidationError("need at least one translation per shape");
  if (spec.canvas_n > spec.grid_n) throw ValidationError("shape canvas exceeds the object grid");
  Dataset ds;
  ds.grid_n = spec.grid_n;
  ds.seed = spec.seed;
  ds.generator = {{"kind", "synthetic-shapes"},
                  {"n_per_class", spec.n_per_class},
                  {"augment_translations", spec.augment_translations},
                  {"canvas_n", spec.canvas_n},
                  {"seed", spec.seed}};

  const long grid = static_cast<long>(spec.grid_n);
  const long canvas = static_cast<long>(spec.canvas_n);
  const long centre = (grid - canvas) / 2;
  const long reach = grid / 8;
  for (ShapeKind kind : {ShapeKind::Rectangle, ShapeKind::Triangle}) {
    const int label = label_of(kind);
    const std::string stem = kind == ShapeKind::Rectangle ? "rect" : "tri";
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      Rng rng = derived_rng(spec.seed, static_cast<std::uint64_t>(label), i);
      const RealImage amplitude = generate_shape(kind, spec.canvas_n, rng);
      // Shape bounding box within the canvas.
      long top = canvas, bottom = -1, left = canvas, right = -1;
      for (long r = 0; r < canvas; ++r)
        for (long c = 0; c < canvas; ++c)
          if (amplitude(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) > 0.0) {
            top = std::min(top, r);
            bottom = std::max(bottom, r);
            left = std::min(left, c);
            right = std::max(right, c);
          }
      const std::size_t patch_index = ds.patches.size();
      auto patch = std::make_shared<const ObjectPatch>(phase_object(amplitude));
      ds.patches.push_back(patch);
      const std::string base_id = stem + "-" + padded(i, 4);
      std::uniform_int_distribution<long> shift(-reach, reach);
      for (std::size_t t = 0; t < spec.augment_translations; ++t) {
        long row = 0, col = 0;
        for (int attempt = 0;; ++attempt) {
          if (attempt > 1000) throw ValidationError("no in-bounds translation for " + base_id);
          row = centre + shift(rng);
          col = centre + shift(rng);
          // The shape must stay inside, and so must the stored patch.
          const bool shape_in = row + top >= 0 && row + bottom < grid && col + left >= 0 &&
                                col + right < grid;
          const bool patch_in = row >= 0 && row + canvas <= grid && col >= 0 && col + canvas <= grid;
          if (shape_in && patch_in) break;
        }
        SampleRecord rec;
        rec.sample_id = base_id + "-t" + std::to_string(t);
        rec.base_id = base_id;
        rec.label = label;
        rec.patch = patch;
        rec.patch_index = patch_index;
        rec.origin_row = static_cast<std::size_t>(row);
        rec.origin_col = static_cast<std::size_t>(col);
        ds.samples.push_back(std::move(rec));
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> crcs;
  for (const auto& patch : dataset.patches) {
    std::vector<double> interleaved;
    interleaved.reserve(patch->size() * 2);
    for (const auto& v : *patch) {
      interleaved.push_back(v.real());
      interleaved.push_back(v.imag());
    }
    const auto bytes = io::encode_f32(interleaved);
    offsets.push_back(blob.size() / 4);
    crcs.push_back(io::crc32(bytes));
    blob.insert(blob.end(), bytes.begin(), bytes.end());
  }
  io::write_bytes(dir / "objects.f32", blob);

  nlohmann::json entries = nlohmann::json::array();
  std::ostringstream labels;
  labels << "sample_id,label,base_id\n";
  for (const auto& s : dataset.samples) {
    if (s.patch_index >= dataset.patches.size() || dataset.patches[s.patch_index] != s.patch) {
      throw ValidationError("sample " + s.sample_id + " does not reference a dataset patch");
    }
    entries.push_back({{"id", s.sample_id},
                       {"base_id", s.base_id},
                       {"label", s.label},
                       {"offset", offsets[s.patch_index]},
                       {"rows", s.patch->rows()},
                       {"cols", s.patch->cols()},
                       {"origin", {s.origin_row, s.origin_col}},
                       {"crc32", io::hex32(crcs[s.patch_index])}});
    labels << s.sample_id << ',' << s.label << ',' << s.base_id << '\n';
  }
  const auto counts = dataset.class_counts();
  const nlohmann::json manifest = {{"version", Dataset::kVersion},
                                   {"tool_version", kToolVersion},
                                   {"grid_n", dataset.grid_n},
                                   {"seed", dataset.seed},
                                   {"amplitude_scale", dataset.amplitude_scale},
                                   {"class_counts", {counts[0], counts[1]}},
                                   {"generator", dataset.generator},
                                   {"objects_file", "objects.f32"},
                                   {"samples", entries}};
  io::write_text(dir / "labels.csv", labels.str());
  io::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset load_object_stack(const std::filesystem::path& manifest_path) {
  auto path = manifest_path;
  if (std::filesystem::is_directory(path)) path /= "manifest.json";
  if (!std::filesystem::exists(path)) throw NotFoundError("no dataset manifest at " + path.string());
  const auto dir = path.parent_path();

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDatasetError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  Dataset ds;
  std::vector<double> values;
  try {
    if (manifest.at("version") != Dataset::kVersion) {
      throw CorruptDatasetError("unsupported dataset version " + manifest.at("version").dump());
    }
    ds.grid_n = manifest.at("grid_n").get<std::size_t>();
    ds.seed = manifest.value("seed", std::uint64_t{0});
    ds.generator = manifest.value("generator", nlohmann::json::object());
    const auto& entries = manifest.at("samples");
    const auto declared = manifest.at("class_counts").get<std::vector<std::size_t>>();
    if (declared.size() != 2 || declared[0] + declared[1] != entries.size()) {
      throw CorruptDatasetError("class counts do not match the number of samples");
    }
    if (entries.empty()) return ds;

    const auto bytes = io::read_bytes(dir / manifest.value("objects_file", std::string("objects.f32")));
    if (bytes.size() % 8 != 0) throw CorruptDatasetError("objects.f32 is truncated");
    std::map<std::size_t, std::size_t> patch_by_offset;
    std::array<std::size_t, 2> seen{0, 0};
    for (const auto& e : entries) {
      SampleRecord rec;
      rec.sample_id = e.at("id").get<std::string>();
      rec.base_id = e.value("base_id", rec.sample_id);
      rec.label = e.at("label").get<int>();
      if (rec.label != 0 && rec.label != 1) {
        throw CorruptDatasetError("entry " + rec.sample_id + " has an invalid label");
      }
      ++seen[static_cast<std::size_t>(rec.label)];
      const auto offset = e.at("offset").get<std::size_t>();
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      const auto origin = e.at("origin").get<std::array<std::size_t, 2>>();
      rec.origin_row = origin[0];
      rec.origin_col = origin[1];
      if (rows == 0 || cols == 0 || origin[0] + rows > ds.grid_n || origin[1] + cols > ds.grid_n) {
        throw CorruptDatasetError("entry " + rec.sample_id + " does not fit the object grid");
      }
      auto found = patch_by_offset.find(offset);
      if (found == patch_by_offset.end()) {
        const std::size_t count = rows * cols * 2;
        if ((offset + count) * 4 > bytes.size()) {
          throw CorruptDatasetError("entry " + rec.sample_id + " points past the end of objects.f32");
        }
        const std::span<const unsigned char> chunk(bytes.data() + offset * 4, count * 4);
        if (io::hex32(io::crc32(chunk)) != e.at("crc32").get<std::string>()) {
          throw CorruptDatasetError("checksum mismatch for entry " + rec.sample_id);
        }
        const auto floats = io::decode_f32(chunk);
        ObjectPatch patch(rows, cols);
        for (std::size_t i = 0; i < patch.size(); ++i) patch[i] = {floats[2 * i], floats[2 * i + 1]};
        found = patch_by_offset.emplace(offset, ds.patches.size()).first;
        ds.patches.push_back(std::make_shared<const ObjectPatch>(std::move(patch)));
      }
      rec.patch_index = found->second;
      rec.patch = ds.patches[rec.patch_index];
      if (rec.patch->rows() != rows || rec.patch->cols() != cols) {
        throw CorruptDatasetError("entry " + rec.sample_id + " disagrees with a shared patch size");
      }
      ds.samples.push_back(std::move(rec));
    }
    if (seen[0] != declared[0] || seen[1] != declared[1]) {
      throw CorruptDatasetError("per-class counts do not match the manifest");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDatasetError("malformed dataset manifest: " + std::string(e.what()));
  }

  double peak = 0.0;
  for (const auto& p : ds.patches)
    for (const auto& v : *p) peak = std::max(peak, std::abs(v));
  if (!std::isfinite(peak)) throw CorruptDatasetError("objects contain non-finite values");
  const double stored_scale = manifest.value("amplitude_scale", 1.0);
  ds.amplitude_scale = stored_scale;
  if (peak > 1.0) {
    for (auto& p : ds.patches) {
      auto scaled = std::make_shared<ObjectPatch>(*p);
      for (auto& v : *scaled) v /= peak;
      p = scaled;
    }
    for (auto& s : ds.samples) s.patch = ds.patches[s.patch_index];
    ds.amplitude_scale = stored_scale * peak;
  }
  return ds;
}

void assign_splits(Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v > 0.0)) throw ValidationError("split ratios must all be positive");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

  // Base groups per class, in first-seen order.
  std::array<std::vector<std::string>, 2> groups;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    auto& list = members[s.base_id];
    if (list.empty()) groups.at(static_cast<std::size_t>(s.label)).push_back(s.base_id);
    list.push_back(i);
  }

  // Largest-remainder allocation of groups, first per split overall, then
  // per class, so overall split sizes track the ratios as closely as the
  // grouping allows.
  const std::size_t total = groups[0].size() + groups[1].size();
  auto apportion = [&r](std::size_t n) {
    std::array<std::size_t, 3> out{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = r[s] * static_cast<double>(n);
      out[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[s] = exact - static_cast<double>(out[s]);
      used += out[s];
    }
    while (used < n) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < 3; ++s) {
        if (rem[s] > rem[best] + 1e-12) best = s;
      }
      ++out[best];
      rem[best] = -1.0;
      ++used;
    }
    return out;
  };
  const auto target = apportion(total);
  std::array<std::array<std::size_t, 3>, 2> alloc{};
  std::array<std::size_t, 3> deficit = target;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      alloc[c][s] = static_cast<std::size_t>(std::floor(r[s] * static_cast<double>(groups[c].size()) + 1e-9));
      deficit[s] -= std::min(deficit[s], alloc[c][s]);
    }
  }
  for (std::size_t c = 0; c < 2; ++c) {
    std::size_t left = groups[c].size() - (alloc[c][0] + alloc[c][1] + alloc[c][2]);
    while (left > 0) {
      std::size_t best = 3;
      double best_rem = -1.0;
      for (std::size_t s = 0; s < 3; ++s) {
        if (deficit[s] == 0) continue;
        const double rem = r[s] * static_cast<double>(groups[c].size()) - static_cast<double>(alloc[c][s]);
        if (rem > best_rem + 1e-12) {
          best = s;
          best_rem = rem;
        }
      }
      if (best == 3) {
        // No overall deficit left; fall back to this class's own remainder.
        for (std::size_t s = 0; s < 3; ++s) {
          const double rem = r[s] * static_cast<double>(groups[c].size()) - static_cast<double>(alloc[c][s]);
          if (rem > best_rem + 1e-12) {
            best = s;
            best_rem = rem;
          }
        }
      } else {
        --deficit[best];
      }
      ++alloc[c][best];
      --left;
    }
  }
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      if (alloc[c][s] == 0) {
        throw ValidationError("split " + to_string(static_cast<Split>(s + 1)) +
                              " would receive no samples of class " + std::to_string(c));
      }
    }
  }

  Rng rng(seed);
  const Split order[3] = {Split::Train, Split::Val, Split::Test};
  for (std::size_t c = 0; c < 2; ++c) {
    auto shuffled = groups[c];
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::size_t g = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < alloc[c][s]; ++k, ++g) {
        for (std::size_t i : members[shuffled[g]]) dataset.samples[i].split = order[s];
      }
    }
  }
}

std::vector<const SampleRecord*> samples_in(const Dataset& dataset, Split split) {
  std::vector<const SampleRecord*> out;
  for (const auto& s : dataset.samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

}  // namespace lsn
