#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "lsn/data.hpp"
#include "lsn/error.hpp"
#include "lsn/io.hpp"

using namespace lsn;

namespace {

struct P {
  double x, y;
};

double cross(const P& o, const P& a, const P& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain over the corners of every pixel above 0.5.
std::vector<P> mask_hull(const RealImage& img) {
  std::vector<P> pts;
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c)
      if (img(r, c) > 0.5)
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) pts.push_back({double(c) + dx, double(r) + dy});
  std::sort(pts.begin(), pts.end(), [](const P& a, const P& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end(), [](const P& a, const P& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  std::vector<P> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Corners of the hull: runs of hull vertices closer than 8% of the hull
// diameter are merged and their exterior turning angles summed; a run that
// turns by more than 35 degrees is a corner.  Digitised straight edges only
// produce small, spread-out turns, and a blurred tip is a short run.
std::size_t corner_count(const RealImage& img) {
  const auto hull = mask_hull(img);
  const std::size_t n = hull.size();
  double far = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      far = std::max(far, std::hypot(hull[i].x - hull[j].x, hull[i].y - hull[j].y));
  const double merge = 0.08 * far;
  std::vector<double> turn(n);
  for (std::size_t i = 0; i < n; ++i) {
    const P& a = hull[(i + n - 1) % n];
    const P& b = hull[i];
    const P& c = hull[(i + 1) % n];
    const double t0 = std::atan2(b.y - a.y, b.x - a.x);
    const double t1 = std::atan2(c.y - b.y, c.x - b.x);
    double d = t1 - t0;
    while (d <= -M_PI) d += 2 * M_PI;
    while (d > M_PI) d -= 2 * M_PI;
    turn[i] = std::abs(d) * 180.0 / M_PI;
  }
  // Start right after the longest hull edge so no run is split.
  std::size_t start = 0;
  double longest = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double len = std::hypot(hull[(i + 1) % n].x - hull[i].x, hull[(i + 1) % n].y - hull[i].y);
    if (len > longest) {
      longest = len;
      start = (i + 1) % n;
    }
  }
  std::size_t corners = 0;
  double run = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = (start + k) % n;
    run += turn[i];
    const P& next = hull[(i + 1) % n];
    if (std::hypot(next.x - hull[i].x, next.y - hull[i].y) > merge || k + 1 == n) {
      if (run > 35.0) ++corners;
      run = 0.0;
    }
  }
  return corners;
}

Dataset small_dataset(std::uint64_t seed = 5) {
  SyntheticSpec spec;
  spec.n_per_class = 10;
  spec.augment_translations = 8;
  spec.grid_n = 64;
  spec.canvas_n = 32;
  spec.seed = seed;
  return build_synthetic_dataset(spec);
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lsn_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("shapes") {
  // A large canvas keeps pixel staircase turns well below corner turns.
  TEST_CASE("hull oracle counts corners") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(seed);
      const auto rect = generate_shape(ShapeKind::Rectangle, 256, rng);
      const auto tri = generate_shape(ShapeKind::Triangle, 256, rng);
      INFO("seed " << seed);
      CHECK(corner_count(rect) == 4);
      CHECK(corner_count(tri) == 3);
    }
  }

  TEST_CASE("values, extent and centring") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      const auto kind = i % 2 ? ShapeKind::Triangle : ShapeKind::Rectangle;
      const auto img = generate_shape(kind, 64, rng);
      double lo = 1.0, hi = 0.0, area = 0.0;
      std::size_t top = 64, bottom = 0, left = 64, right = 0;
      for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) {
          const double v = img(r, c);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
          area += v;
          if (v > 0.5) {
            top = std::min(top, r);
            bottom = std::max(bottom, r);
            left = std::min(left, c);
            right = std::max(right, c);
          }
        }
      CHECK(lo >= 0.0);
      CHECK(hi <= 1.0);
      CHECK(area >= 0.01 * 64 * 64);
      const double extent = double(std::max(bottom - top, right - left) + 1);
      CHECK(extent >= 0.2 * 64 - 2);
      CHECK(extent <= 0.6 * 64 + 2);
      // Border pixels stay empty so the shape never touches the canvas edge.
      for (std::size_t k = 0; k < 64; ++k) {
        CHECK(img(0, k) == 0.0);
        CHECK(img(63, k) == 0.0);
      }
    }
  }

  TEST_CASE("seeded") {
    Rng a(9), b(9);
    CHECK(generate_shape(ShapeKind::Triangle, 32, a) == generate_shape(ShapeKind::Triangle, 32, b));
  }

  TEST_CASE("canvas too small") {
    Rng rng(0);
    CHECK_THROWS_AS(generate_shape(ShapeKind::Rectangle, 31, rng), ValidationError);
  }
}

TEST_SUITE("complex objects") {
  TEST_CASE("zero amplitude is a zero field") {
    const auto f = object_from_amplitude(RealImage(4, 4, 0.0), 8);
    for (const auto& v : f.values()) CHECK(v == Complex(0.0, 0.0));
  }

  TEST_CASE("unit amplitude gives exp(2i)") {
    RealImage a(1, 1, 1.0);
    const auto f = object_from_amplitude(a, 8);
    const Complex v = f(3, 3);
    CHECK(v.real() == doctest::Approx(-0.4161468365).epsilon(1e-9));
    CHECK(v.imag() == doctest::Approx(0.9092974268).epsilon(1e-9));
  }

  TEST_CASE("padding is centred") {
    const auto f = object_from_amplitude(RealImage(4, 4, 0.5), 8);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) {
        const bool inside = r >= 2 && r < 6 && c >= 2 && c < 6;
        CHECK((std::abs(f(r, c)) > 0) == inside);
      }
  }

  TEST_CASE("phase rule and range on generated objects") {
    Rng rng(4);
    const auto amp = generate_shape(ShapeKind::Triangle, 32, rng);
    const auto f = object_from_amplitude(amp, 64);
    for (const auto& v : f.values()) {
      const double m = std::abs(v);
      CHECK(m <= 1.0);
      if (m > 0) CHECK(std::abs(std::arg(v) - 2.0 * m) < 1e-9);
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(object_from_amplitude(RealImage(4, 4, 1.5), 8), ValidationError);
    CHECK_THROWS_AS(object_from_amplitude(RealImage(4, 4, -0.1), 8), ValidationError);
    CHECK_THROWS_AS(object_from_amplitude(RealImage(4, 4, std::nan("")), 8), ValidationError);
    CHECK_THROWS_AS(object_from_amplitude(RealImage(16, 16, 0.1), 8), ShapeError);
  }
}

TEST_SUITE("synthetic dataset") {
  TEST_CASE("counts, ids and placement") {
    const auto ds = small_dataset();
    CHECK(ds.samples.size() == 160);
    CHECK(ds.class_counts() == std::array<std::size_t, 2>{80, 80});
    CHECK(ds.patches.size() == 20);
    std::set<std::string> ids;
    std::map<std::string, int> copies;
    for (const auto& s : ds.samples) {
      ids.insert(s.sample_id);
      ++copies[s.base_id];
      const auto field = s.object(64);
      // Shape fully inside and within +-grid/8 of centre.
      CHECK(std::abs(long(s.origin_row) - 16) <= 8);
      CHECK(std::abs(long(s.origin_col) - 16) <= 8);
      double energy = 0.0;
      for (const auto& v : s.patch->flat()) energy += std::norm(v);
      CHECK(field.energy() == doctest::Approx(energy));
    }
    CHECK(ids.size() == 160);
    for (const auto& [base, n] : copies) CHECK(n == 8);
  }

  TEST_CASE("phase rule holds for every object") {
    const auto ds = small_dataset();
    for (const auto& p : ds.patches)
      for (const auto& v : *p) {
        const double m = std::abs(v);
        CHECK(m <= 1.0);
        if (m > 0) CHECK(std::abs(std::arg(v) - 2.0 * m) < 1e-9);
      }
  }

  TEST_CASE("byte-identical for a fixed seed") {
    const auto a = fresh_dir("ds_a"), b = fresh_dir("ds_b");
    save_dataset(small_dataset(3), a);
    save_dataset(small_dataset(3), b);
    for (const char* f : {"manifest.json", "objects.f32", "labels.csv"}) {
      CHECK(io::read_bytes(a / f) == io::read_bytes(b / f));
    }
    save_dataset(small_dataset(4), b);
    CHECK(io::read_bytes(a / "objects.f32") != io::read_bytes(b / "objects.f32"));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
  }

  TEST_CASE("too few shapes") {
    SyntheticSpec spec;
    spec.n_per_class = 9;
    spec.grid_n = 64;
    CHECK_THROWS_AS(build_synthetic_dataset(spec), ValidationError);
  }
}

TEST_SUITE("dataset files") {
  TEST_CASE("round trip at float32 precision") {
    const auto dir = fresh_dir("ds_round");
    const auto ds = small_dataset();
    save_dataset(ds, dir);
    const auto back = load_object_stack(dir / "manifest.json");
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.grid_n == 64);
    CHECK(back.amplitude_scale == 1.0);
    CHECK(back.patches.size() == ds.patches.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& s = ds.samples[i];
      const auto& t = back.samples[i];
      CHECK(s.sample_id == t.sample_id);
      CHECK(s.label == t.label);
      CHECK(s.base_id == t.base_id);
      const auto a = s.object(64), b = t.object(64);
      double worst = 0.0;
      for (std::size_t k = 0; k < a.values().size(); ++k)
        worst = std::max(worst, std::abs(a.values()[k] - b.values()[k]));
      CHECK(worst <= 1e-7);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("labels.csv lists every sample") {
    const auto dir = fresh_dir("ds_labels");
    save_dataset(small_dataset(), dir);
    const auto text = io::read_text(dir / "labels.csv");
    CHECK(text.rfind("sample_id,label,base_id\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 161);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("corruption is reported") {
    const auto dir = fresh_dir("ds_corrupt");
    save_dataset(small_dataset(), dir);
    auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));

    auto bad = manifest;
    bad["class_counts"] = {80, 79};
    io::write_text(dir / "manifest.json", bad.dump());
    CHECK_THROWS_AS(load_object_stack(dir), CorruptDatasetError);

    bad = manifest;
    bad["version"] = 7;
    io::write_text(dir / "manifest.json", bad.dump());
    CHECK_THROWS_AS(load_object_stack(dir), CorruptDatasetError);

    io::write_text(dir / "manifest.json", manifest.dump());
    auto bytes = io::read_bytes(dir / "objects.f32");
    bytes[100] ^= 0x40;
    io::write_bytes(dir / "objects.f32", bytes);
    try {
      load_object_stack(dir);
      FAIL("expected CorruptDatasetError");
    } catch (const CorruptDatasetError& e) {
      CHECK(std::string(e.what()).find("rect-0000") != std::string::npos);
    }
    bytes.resize(bytes.size() / 2);
    io::write_bytes(dir / "objects.f32", bytes);
    CHECK_THROWS_AS(load_object_stack(dir), CorruptDatasetError);

    io::write_text(dir / "manifest.json", "{not json");
    CHECK_THROWS_AS(load_object_stack(dir), CorruptDatasetError);
    CHECK_THROWS_AS(load_object_stack(dir / "nowhere"), NotFoundError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("empty manifest is an empty dataset") {
    const auto dir = fresh_dir("ds_empty");
    Dataset empty;
    empty.grid_n = 64;
    save_dataset(empty, dir);
    const auto back = load_object_stack(dir);
    CHECK(back.samples.empty());
    CHECK(back.grid_n == 64);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("external stacks are rescaled to unit amplitude") {
    const auto dir = fresh_dir("ds_scale");
    Dataset ds;
    ds.grid_n = 16;
    for (int label = 0; label < 2; ++label) {
      ObjectPatch p(4, 4, Complex(0.0, 0.0));
      p(1, 1) = Complex(3.0, 4.0);  // modulus 5
      p(2, 2) = Complex(0.0, 2.5 * (label + 1));
      auto shared = std::make_shared<const ObjectPatch>(p);
      ds.patches.push_back(shared);
      SampleRecord rec;
      rec.sample_id = "cell-" + std::to_string(label);
      rec.base_id = rec.sample_id;
      rec.label = label;
      rec.patch = shared;
      rec.patch_index = static_cast<std::size_t>(label);
      rec.origin_row = 6;
      rec.origin_col = 6;
      ds.samples.push_back(rec);
    }
    save_dataset(ds, dir);
    const auto back = load_object_stack(dir);
    CHECK(back.amplitude_scale == doctest::Approx(5.0));
    CHECK(std::abs((*back.samples[0].patch)(1, 1) - Complex(0.6, 0.8)) < 1e-7);
    CHECK(std::abs((*back.samples[1].patch)(2, 2) - Complex(0.0, 1.0)) < 1e-7);
    CHECK(back.samples[1].label == 1);
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("splits") {
  TEST_CASE("160 samples split 112/24/24 without leakage") {
    auto ds = small_dataset();
    assign_splits(ds, {0.7, 0.15, 0.15}, 11);
    std::map<Split, std::array<std::size_t, 2>> counts;
    std::map<std::string, std::set<Split>> by_base;
    for (const auto& s : ds.samples) {
      CHECK(s.split != Split::Unassigned);
      ++counts[s.split][static_cast<std::size_t>(s.label)];
      by_base[s.base_id].insert(s.split);
    }
    CHECK(counts[Split::Train][0] + counts[Split::Train][1] == 112);
    CHECK(counts[Split::Val][0] + counts[Split::Val][1] == 24);
    CHECK(counts[Split::Test][0] + counts[Split::Test][1] == 24);
    // Per class, the group counts differ by at most one group.
    for (auto split : {Split::Train, Split::Val, Split::Test}) {
      const long diff = long(counts[split][0]) - long(counts[split][1]);
      CHECK(std::abs(diff) <= 8);
      CHECK(counts[split][0] > 0);
      CHECK(counts[split][1] > 0);
    }
    for (const auto& [base, splits] : by_base) CHECK(splits.size() == 1);
  }

  TEST_CASE("deterministic per seed") {
    auto a = small_dataset(), b = small_dataset(), c = small_dataset();
    assign_splits(a, {}, 3);
    assign_splits(b, {}, 3);
    assign_splits(c, {}, 4);
    bool differs = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].split == b.samples[i].split);
      differs = differs || a.samples[i].split != c.samples[i].split;
    }
    CHECK(differs);
  }

  TEST_CASE("invalid ratios") {
    auto ds = small_dataset();
    CHECK_THROWS_AS(assign_splits(ds, {1.0, 0.0, 0.0}, 0), ValidationError);
    CHECK_THROWS_AS(assign_splits(ds, {0.5, 0.2, 0.2}, 0), ValidationError);
    CHECK_THROWS_AS(assign_splits(ds, {0.98, 0.01, 0.01}, 0), ValidationError);
  }

  TEST_CASE("desk-scale proportions") {
    SyntheticSpec spec;
    spec.n_per_class = 300;
    spec.augment_translations = 1;
    spec.grid_n = 64;
    spec.canvas_n = 32;
    auto ds = build_synthetic_dataset(spec);
    assign_splits(ds, {}, 0);
    CHECK(samples_in(ds, Split::Train).size() == 420);
    CHECK(samples_in(ds, Split::Val).size() == 90);
    CHECK(samples_in(ds, Split::Test).size() == 90);
  }
}
