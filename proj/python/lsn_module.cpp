#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lsn/config.hpp"
#include "lsn/data.hpp"
#include "lsn/error.hpp"
#include "lsn/gradcheck.hpp"
#include "lsn/optics.hpp"
#include "lsn/train.hpp"
#include "lsn/version.hpp"

namespace py = pybind11;
using namespace lsn;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ComplexArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(const Array2D<T>& a) {
  py::array_t<T> out({a.rows(), a.cols()});
  std::copy(a.begin(), a.end(), out.mutable_data());
  return out;
}

template <typename A>
auto from_numpy(const A& arr, const char* what) {
  using T = typename A::value_type;
  if (arr.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-D array");
  Array2D<T> out(arr.shape(0), arr.shape(1));
  std::copy(arr.data(), arr.data() + arr.size(), out.begin());
  return out;
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict metrics_dict(const Metrics& m) { return json_to_py(m.to_json()); }

PhysicalParams make_params(const MicroscopeConfig& config, const std::vector<double>& weights,
                           const RealArray& pupil) {
  PhysicalParams p;
  p.led_weights = weights;
  p.pupil = from_numpy(pupil, "pupil");
  p.pupil_support = pupil_support(config);
  if (p.pupil.rows() != p.pupil_support.rows() || p.pupil.cols() != p.pupil_support.cols()) throw ShapeError("pupil must be grid_n x grid_n");
  return p;
}

py::dict physical_dict(const PhysicalParams& p) {
  py::dict d;
  d["led_weights"] = p.led_weights;
  d["pupil"] = to_numpy(p.pupil);
  return d;
}

// Dataset plus its split assignment, shared with training calls.
struct PyDataset {
  Dataset ds;
};

}  // namespace

PYBIND11_MODULE(lsn, m) {
  m.doc() = "Learned sensing: jointly optimised LED weights, amplitude pupil and a small CNN.";
  m.attr("__version__") = kToolVersion;

  // Translators run newest first, so derived types are registered after their bases.
  auto& error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  auto& validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<GeometryError>(m, "GeometryError", validation.ptr());
  py::register_exception<UnsupportedSizeError>(m, "UnsupportedSizeError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<CorruptDatasetError>(m, "CorruptDatasetError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_FileNotFoundError);
  py::register_exception<TrainingError>(m, "TrainingError", error.ptr());

  py::enum_<CaptureMode>(m, "CaptureMode")
      .value("TWO_CAPTURES", CaptureMode::TwoCaptures)
      .value("SINGLE_CAPTURE", CaptureMode::SingleCapture);

  py::class_<MicroscopeConfig>(m, "Microscope")
      .def(py::init<>())
      .def_readwrite("wavelength", &MicroscopeConfig::wavelength)
      .def_readwrite("na", &MicroscopeConfig::na)
      .def_readwrite("grid_n", &MicroscopeConfig::grid_n)
      .def_readwrite("dx", &MicroscopeConfig::dx)
      .def_readwrite("sensor_n", &MicroscopeConfig::sensor_n)
      .def_readwrite("capture_mode", &MicroscopeConfig::capture_mode)
      .def_property(
          "led_rings",
          [](const MicroscopeConfig& c) {
            std::vector<std::tuple<double, int, double>> out;
            for (const auto& r : c.led_rings) out.emplace_back(r.polar_angle_deg, r.count, r.azimuth_offset_deg);
            return out;
          },
          [](MicroscopeConfig& c, const std::vector<std::tuple<double, int, double>>& rings) {
            c.led_rings.clear();
            for (const auto& [polar, count, offset] : rings) c.led_rings.push_back({polar, count, offset});
          },
          "(polar_deg, count, azimuth_offset_deg) per ring")
      .def_property_readonly("pupil_radius_px", &MicroscopeConfig::pupil_radius_px)
      .def_property_readonly("block", &MicroscopeConfig::block)
      .def("validate", &MicroscopeConfig::validate);

  m.def("micro_microscope", &micro_microscope, "16x16 grid, 8x8 sensor, five LEDs.");

  m.def(
      "led_array",
      [](const MicroscopeConfig& c) {
        py::list out;
        for (const auto& led : build_led_array(c)) {
          py::dict d;
          d["index"] = led.index;
          d["ring"] = led.ring;
          d["polar_deg"] = led.polar_deg;
          d["azimuth_deg"] = led.azimuth_deg;
          d["shift"] = py::make_tuple(led.shift.x, led.shift.y);
          d["field_kind"] = std::string(to_string(led.field_kind));
          out.append(d);
        }
        return out;
      },
      py::arg("microscope"));

  m.def(
      "pupil_support",
      [](const MicroscopeConfig& c) { return to_numpy(pupil_support(c)).attr("astype")("bool"); },
      py::arg("microscope"));

  m.def(
      "forward_capture",
      [](const ComplexArray& object, const std::vector<double>& led_weights, const RealArray& pupil,
         const MicroscopeConfig& c, double noise_sigma_frac, std::uint64_t seed) {
        const ComplexField field(from_numpy(object, "object"), Plane::Object);
        const PhysicalParams p = make_params(c, led_weights, pupil);
        Rng rng(seed);
        RealImage image;
        {
          py::gil_scoped_release release;
          image = forward_capture(field, p, c, noise_sigma_frac, rng);
        }
        return to_numpy(image);
      },
      py::arg("object"), py::arg("led_weights"), py::arg("pupil"), py::arg("microscope"),
      py::arg("noise_sigma_frac") = 0.0, py::arg("seed") = 0,
      "Sensor image of a centred complex object under signed LED weights and an amplitude pupil.");

  m.def(
      "init_physical",
      [](const std::string& regime, const MicroscopeConfig& c, std::uint64_t seed, double jitter) {
        Rng rng(seed);
        return physical_dict(init_physical(parse_regime(regime), c, rng, jitter));
      },
      py::arg("regime"), py::arg("microscope"), py::arg("seed") = 0, py::arg("jitter") = 0.01);

  m.def(
      "generate_shape",
      [](const std::string& kind, std::size_t canvas_n, std::uint64_t seed) {
        ShapeKind k;
        if (kind == "triangle") {
          k = ShapeKind::Triangle;
        } else if (kind == "rectangle") {
          k = ShapeKind::Rectangle;
        } else {
          throw ValidationError("shape kind must be 'triangle' or 'rectangle', got '" + kind + "'");
        }
        Rng rng(seed);
        return to_numpy(generate_shape(k, canvas_n, rng));
      },
      py::arg("kind"), py::arg("canvas_n"), py::arg("seed") = 0);

  py::class_<Hyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("digital_lr", &Hyperparams::digital_lr)
      .def_readwrite("physical_lr", &Hyperparams::physical_lr)
      .def_readwrite("batch_size", &Hyperparams::batch_size)
      .def_readwrite("epochs", &Hyperparams::epochs)
      .def_readwrite("noise_sigma_frac", &Hyperparams::noise_sigma_frac)
      .def_readwrite("seed", &Hyperparams::seed)
      .def_readwrite("init_jitter", &Hyperparams::init_jitter)
      .def_readwrite("eval_noise_seed", &Hyperparams::eval_noise_seed)
      .def("validate", &Hyperparams::validate);

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("load", &load_config, py::arg("path"))
      .def_static("parse", &parse_config, py::arg("text"), py::arg("source") = "<config>")
      .def_readwrite("microscope", &RunConfig::microscope)
      .def_readwrite("hyper", &RunConfig::hyper)
      .def_property_readonly("n_per_class", [](const RunConfig& c) { return c.data.n_per_class; })
      .def_property_readonly("canvas_n", [](const RunConfig& c) { return c.data.canvas_n; })
      .def_property_readonly("regimes",
                             [](const RunConfig& c) {
                               std::vector<std::string> out;
                               for (Regime r : c.sweep.regimes) out.push_back(to_string(r));
                               return out;
                             })
      .def_property_readonly("n_seeds", [](const RunConfig& c) { return c.sweep.n_seeds; })
      .def_property_readonly("dataset_path", [](const RunConfig& c) { return c.paths.dataset; })
      .def_property_readonly("output_path", [](const RunConfig& c) { return c.paths.output; })
      .def("canonical", [](const RunConfig& c) { return json_to_py(c.canonical()); })
      .def("hash", &RunConfig::hash)
      .def("data_hash", &RunConfig::data_hash)
      .def("validate", &RunConfig::validate);

  py::class_<PyDataset>(m, "Dataset")
      .def_static(
          "synthetic",
          [](std::size_t n_per_class, std::size_t augment_translations, std::size_t grid_n, std::size_t canvas_n,
             std::uint64_t seed) {
            SyntheticSpec spec{n_per_class, augment_translations, grid_n, canvas_n, seed};
            PyDataset d;
            py::gil_scoped_release release;
            d.ds = build_synthetic_dataset(spec);
            return d;
          },
          py::arg("n_per_class"), py::arg("augment_translations"), py::arg("grid_n"), py::arg("canvas_n"),
          py::arg("seed") = 0)
      .def_static("from_config",
                  [](const RunConfig& c) {
                    PyDataset d;
                    {
                      py::gil_scoped_release release;
                      d.ds = build_synthetic_dataset(c.data);
                    }
                    d.ds.generator["data_hash"] = c.data_hash();
                    assign_splits(d.ds, c.splits, c.split_seed);
                    return d;
                  })
      .def_static("load", [](const std::filesystem::path& path) { return PyDataset{load_object_stack(path)}; })
      .def("save", [](const PyDataset& d, const std::filesystem::path& dir) { save_dataset(d.ds, dir); })
      .def("__len__", [](const PyDataset& d) { return d.ds.samples.size(); })
      .def_property_readonly("grid_n", [](const PyDataset& d) { return d.ds.grid_n; })
      .def_property_readonly("labels",
                             [](const PyDataset& d) {
                               py::array_t<int> out(d.ds.samples.size());
                               auto* p = out.mutable_data();
                               for (const auto& s : d.ds.samples) *p++ = s.label;
                               return out;
                             })
      .def_property_readonly("sample_ids",
                             [](const PyDataset& d) {
                               std::vector<std::string> out;
                               for (const auto& s : d.ds.samples) out.push_back(s.sample_id);
                               return out;
                             })
      .def_property_readonly("splits",
                             [](const PyDataset& d) {
                               std::vector<std::string> out;
                               for (const auto& s : d.ds.samples) out.push_back(to_string(s.split));
                               return out;
                             })
      .def("class_counts", [](const PyDataset& d) { return d.ds.class_counts(); })
      .def(
          "object",
          [](const PyDataset& d, std::size_t i) {
            if (i >= d.ds.samples.size()) throw py::index_error("sample index out of range");
            return to_numpy(d.ds.samples[i].object(d.ds.grid_n).values());
          },
          py::arg("index"), "Complex object field on the full grid.")
      .def(
          "assign_splits",
          [](PyDataset& d, double train, double val, double test, std::uint64_t seed) {
            assign_splits(d.ds, {train, val, test}, seed);
          },
          py::arg("train") = 0.7, py::arg("val") = 0.15, py::arg("test") = 0.15, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& regime, const PyDataset& d, const MicroscopeConfig& c, const Hyperparams& hyper) {
        const Regime r = parse_regime(regime);
        hyper.validate();
        TrainResult result;
        {
          py::gil_scoped_release release;
          const ImagingPipeline pipeline(c, d.ds);
          result = train_regime(r, d.ds, pipeline, hyper);
        }
        py::dict out;
        out["regime"] = to_string(result.regime);
        out["best_epoch"] = result.best_epoch;
        out["train"] = metrics_dict(result.train);
        out["val"] = metrics_dict(result.val);
        out["test"] = metrics_dict(result.test);
        out["initial"] = physical_dict(result.initial_params);
        out["final"] = physical_dict(result.params);
        py::list history;
        for (const auto& e : result.history) {
          py::dict h;
          h["epoch"] = e.epoch;
          h["train_loss"] = e.train_loss;
          h["val_accuracy"] = e.val_accuracy;
          history.append(h);
        }
        out["history"] = history;
        return out;
      },
      py::arg("regime"), py::arg("dataset"), py::arg("microscope"), py::arg("hyper"),
      "Train one regime on the dataset's train split; metrics use the best validation epoch.");

  m.def(
      "gradcheck",
      [](std::size_t instances, std::size_t chain_instances, std::uint64_t seed, double fault_scale) {
        GradcheckOptions o;
        o.instances = instances;
        o.chain_instances = chain_instances;
        o.seed = seed;
        o.fault_scale = fault_scale;
        GradcheckReport report;
        {
          py::gil_scoped_release release;
          report = run_gradcheck(o);
        }
        py::list out;
        for (const auto& g : report.groups) {
          py::dict d;
          d["group"] = g.name;
          d["instances"] = g.instances;
          d["coordinates"] = g.coordinates;
          d["max_rel_error"] = g.max_rel_error;
          d["tolerance"] = g.tolerance;
          d["worst_instance"] = g.worst_instance;
          d["worst_coordinate"] = g.worst_coordinate;
          d["passed"] = g.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("instances") = 20, py::arg("chain_instances") = 5, py::arg("seed") = 0, py::arg("fault_scale") = 1.0);

  m.def("regimes", [] {
    std::vector<std::string> out;
    for (Regime r : all_regimes()) out.push_back(to_string(r));
    return out;
  });
}
