#include "lsn/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "lsn/error.hpp"
#include "lsn/io.hpp"
#include "lsn/version.hpp"

namespace lsn {

namespace {

// One TOML table; every lookup marks the key as known so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  const toml::node* node(const std::string& key) {
    known_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  void real(const std::string& key, double& out) {
    if (const auto* n = node(key)) {
      if (auto v = n->value<double>(); v && (n->is_floating_point() || n->is_integer())) {
        out = *v;
      } else {
        fail(key, "must be a number");
      }
    }
  }

  template <typename T>
  void count(const std::string& key, T& out) {
    if (const auto* n = node(key)) {
      const auto v = n->value<std::int64_t>();
      if (!n->is_integer() || !v || *v < 0) fail(key, "must be a non-negative integer");
      out = static_cast<T>(*v);
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const auto* n = node(key)) {
      if (!n->is_string()) fail(key, "must be a string");
      out = *n->value<std::string>();
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + path(key) + "' " + what);
  }

  // Throws on the first key that was never looked up.
  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!known_.contains(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const toml::table* table_;
  std::string name_;
  std::set<std::string> known_;
};

const toml::table* subtable(Section& parent, const std::string& key) {
  const auto* n = parent.node(key);
  if (!n) return nullptr;
  if (!n->is_table()) parent.fail(key, "must be a table");
  return n->as_table();
}

nlohmann::json rings_json(const std::vector<LedRing>& rings) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rings) {
    out.push_back({{"polar_deg", r.polar_angle_deg}, {"count", r.count}, {"azimuth_offset_deg", r.azimuth_offset_deg}});
  }
  return out;
}

}  // namespace

std::string to_string(CaptureMode mode) {
  return mode == CaptureMode::TwoCaptures ? "two-captures" : "single-capture";
}

CaptureMode parse_capture_mode(const std::string& name) {
  if (name == "two-captures") return CaptureMode::TwoCaptures;
  if (name == "single-capture") return CaptureMode::SingleCapture;
  throw ConfigError("unknown capture mode '" + name + "' (expected two-captures or single-capture)");
}

nlohmann::json RunConfig::canonical() const {
  const auto& m = microscope;
  std::vector<std::string> regime_names;
  for (Regime r : sweep.regimes) regime_names.push_back(to_string(r));
  return {{"microscope",
           {{"wavelength", m.wavelength},
            {"na", m.na},
            {"grid_n", m.grid_n},
            {"dx", m.dx},
            {"sensor_n", m.sensor_n},
            {"capture_mode", to_string(m.capture_mode)},
            {"led_rings", rings_json(m.led_rings)}}},
          {"data",
           {{"n_per_class", data.n_per_class},
            {"augment_translations", data.augment_translations},
            {"canvas_n", data.canvas_n},
            {"seed", data.seed},
            {"split", {splits.train, splits.val, splits.test}},
            {"split_seed", split_seed}}},
          {"train",
           {{"digital_lr", hyper.digital_lr},
            {"physical_lr", hyper.physical_lr},
            {"batch_size", hyper.batch_size},
            {"epochs", hyper.epochs},
            {"noise_sigma_frac", hyper.noise_sigma_frac},
            {"seed", hyper.seed},
            {"init_jitter", hyper.init_jitter},
            {"eval_noise_seed", hyper.eval_noise_seed}}},
          {"sweep", {{"regimes", regime_names}, {"n_seeds", sweep.n_seeds}, {"base_seed", sweep.base_seed}}}};
}

std::string RunConfig::hash() const {
  return io::hex32(io::crc32(canonical().dump() + "\n" + std::string(kToolVersion)));
}

std::string RunConfig::data_hash() const {
  const nlohmann::json j = {{"grid_n", microscope.grid_n},
                            {"n_per_class", data.n_per_class},
                            {"augment_translations", data.augment_translations},
                            {"canvas_n", data.canvas_n},
                            {"seed", data.seed}};
  return io::hex32(io::crc32(j.dump()));
}

void RunConfig::validate() const {
  try {
    microscope.validate();
    build_led_array(microscope);  // LED shifts must keep the pupil on the grid
    hyper.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const UnsupportedSizeError& e) {
    throw ConfigError(e.what());
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (microscope.sensor_n % 4 != 0) throw ConfigError("microscope.sensor_n must be a multiple of 4");
  if (data.grid_n != microscope.grid_n) throw ConfigError("data grid does not match microscope.grid_n");
  if (data.n_per_class < 10) throw ConfigError("data.n_per_class must be at least 10");
  if (data.augment_translations < 1) throw ConfigError("data.augment_translations must be at least 1");
  if (data.canvas_n < 32 || data.canvas_n > microscope.grid_n) {
    throw ConfigError("data.canvas_n must lie in [32, microscope.grid_n]");
  }
  const double total = splits.train + splits.val + splits.test;
  if (!(splits.train > 0 && splits.val > 0 && splits.test > 0) || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("data.split must be three positive fractions summing to 1");
  }
  if (sweep.regimes.empty()) throw ConfigError("sweep.regimes must not be empty");
  std::set<Regime> seen(sweep.regimes.begin(), sweep.regimes.end());
  if (seen.size() != sweep.regimes.size()) throw ConfigError("sweep.regimes lists a regime twice");
  if (sweep.n_seeds < 2) throw ConfigError("sweep.n_seeds must be at least 2");
  if (sweep.workers < 1) throw ConfigError("sweep.workers must be at least 1");
}

RunConfig parse_config(const std::string& toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
        << e.description();
    throw ConfigError(msg.str());
  }

  RunConfig c;
  Section top(&root, "");

  Section mic(subtable(top, "microscope"), "microscope");
  mic.real("wavelength", c.microscope.wavelength);
  mic.real("na", c.microscope.na);
  mic.count("grid_n", c.microscope.grid_n);
  mic.real("dx", c.microscope.dx);
  mic.count("sensor_n", c.microscope.sensor_n);
  std::string mode = to_string(c.microscope.capture_mode);
  mic.text("capture_mode", mode);
  c.microscope.capture_mode = parse_capture_mode(mode);
  if (const auto* rings = mic.node("led_rings")) {
    const auto* arr = rings->as_array();
    if (!arr || arr->empty()) mic.fail("led_rings", "must be a non-empty array of tables");
    c.microscope.led_rings.clear();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto* t = arr->get(i)->as_table();
      const std::string name = "microscope.led_rings[" + std::to_string(i) + "]";
      if (!t) throw ConfigError("config key '" + name + "' must be a table");
      Section ring(t, name);
      LedRing r;
      ring.real("polar_deg", r.polar_angle_deg);
      ring.count("count", r.count);
      ring.real("azimuth_offset_deg", r.azimuth_offset_deg);
      ring.finish();
      c.microscope.led_rings.push_back(r);
    }
  }
  mic.finish();
  c.data.grid_n = c.microscope.grid_n;

  Section data(subtable(top, "data"), "data");
  data.count("n_per_class", c.data.n_per_class);
  data.count("augment_translations", c.data.augment_translations);
  data.count("canvas_n", c.data.canvas_n);
  data.count("seed", c.data.seed);
  data.count("split_seed", c.split_seed);
  if (const auto* split = data.node("split")) {
    const auto* arr = split->as_array();
    if (!arr || arr->size() != 3) data.fail("split", "must be [train, val, test] fractions");
    double* dst[3] = {&c.splits.train, &c.splits.val, &c.splits.test};
    for (std::size_t i = 0; i < 3; ++i) {
      const auto v = arr->get(i)->value<double>();
      if (!v) data.fail("split", "must contain numbers");
      *dst[i] = *v;
    }
  }
  data.finish();

  Section train(subtable(top, "train"), "train");
  train.real("digital_lr", c.hyper.digital_lr);
  train.real("physical_lr", c.hyper.physical_lr);
  train.count("batch_size", c.hyper.batch_size);
  train.count("epochs", c.hyper.epochs);
  train.real("noise_sigma_frac", c.hyper.noise_sigma_frac);
  train.count("seed", c.hyper.seed);
  train.real("init_jitter", c.hyper.init_jitter);
  train.count("eval_noise_seed", c.hyper.eval_noise_seed);
  train.finish();

  Section sweep(subtable(top, "sweep"), "sweep");
  if (const auto* regimes = sweep.node("regimes")) {
    const auto* arr = regimes->as_array();
    if (!arr) sweep.fail("regimes", "must be an array of regime names");
    c.sweep.regimes.clear();
    for (const auto& item : *arr) {
      const auto name = item.value<std::string>();
      if (!name) sweep.fail("regimes", "must be an array of regime names");
      try {
        c.sweep.regimes.push_back(parse_regime(*name));
      } catch (const ValidationError& e) {
        throw ConfigError(std::string("config key 'sweep.regimes': ") + e.what());
      }
    }
  }
  sweep.count("n_seeds", c.sweep.n_seeds);
  sweep.count("base_seed", c.sweep.base_seed);
  sweep.count("workers", c.sweep.workers);
  sweep.finish();

  Section paths(subtable(top, "paths"), "paths");
  std::string dataset = c.paths.dataset.string(), output = c.paths.output.string();
  paths.text("dataset", dataset);
  paths.text("output", output);
  c.paths.dataset = dataset;
  c.paths.output = output;
  paths.finish();

  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("config file not found: " + path.string());
  return parse_config(io::read_text(path), path.string());
}

}  // namespace lsn
