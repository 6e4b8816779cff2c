#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsn/array2d.hpp"
#include "lsn/field.hpp"
#include "lsn/optics.hpp"

namespace lsn {

enum class ShapeKind { Rectangle, Triangle };

// Class ids: 0 rectangle (or uninfected), 1 triangle (or infected).
inline int label_of(ShapeKind kind) { return kind == ShapeKind::Triangle ? 1 : 0; }

enum class Split { Unassigned, Train, Val, Test };
std::string to_string(Split split);

// Filled convex polygon, 3x3 box-blurred, values in [0, 1].  The bounding
// box spans 20-60% of the canvas and is centred on it.
RealImage generate_shape(ShapeKind kind, std::size_t canvas_n, Rng& rng);

// Modulus A, phase 2A, zero-padded to pad_to x pad_to with A centred.
ComplexField object_from_amplitude(const RealImage& amplitude, std::size_t pad_to);

using ObjectPatch = Array2D<Complex>;

// One object: a (possibly shared) patch placed at an origin inside a
// grid_n x grid_n field; everything outside the patch is zero.
struct SampleRecord {
  std::string sample_id;
  std::string base_id;
  int label = 0;
  Split split = Split::Unassigned;
  std::shared_ptr<const ObjectPatch> patch;
  std::size_t patch_index = 0;
  std::size_t origin_row = 0;
  std::size_t origin_col = 0;

  ComplexField object(std::size_t grid_n) const;
};

struct Dataset {
  static constexpr int kVersion = 1;

  std::size_t grid_n = 0;
  std::uint64_t seed = 0;
  // Stored amplitudes were divided by this on ingestion.
  double amplitude_scale = 1.0;
  nlohmann::json generator = nlohmann::json::object();
  std::vector<std::shared_ptr<const ObjectPatch>> patches;
  std::vector<SampleRecord> samples;

  std::array<std::size_t, 2> class_counts() const;
};

struct SyntheticSpec {
  std::size_t n_per_class = 300;
  std::size_t augment_translations = 8;
  std::size_t grid_n = 256;
  std::size_t canvas_n = 64;
  std::uint64_t seed = 0;
};

// n_per_class base shapes per class, each placed at augment_translations
// random integer offsets within +-grid_n/8 of centre.
Dataset build_synthetic_dataset(const SyntheticSpec& spec);

// Directory with manifest.json, objects.f32 (interleaved re/im float32 LE
// patches) and labels.csv.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
// Reads a dataset directory or manifest path.  Amplitudes above 1 are
// rescaled by the global maximum modulus.
Dataset load_object_stack(const std::filesystem::path& manifest_path);

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

// Stratified by class, grouped by base_id; deterministic per seed.
void assign_splits(Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

std::vector<const SampleRecord*> samples_in(const Dataset& dataset, Split split);

}  // namespace lsn
