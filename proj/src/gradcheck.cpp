#include "lsn/gradcheck.hpp"

#include <cstdio>
#include <sstream>

#include "lsn/fft.hpp"
#include "lsn/grad.hpp"
#include "lsn/train.hpp"

namespace lsn {

MicroscopeConfig micro_microscope() {
  MicroscopeConfig c;
  c.wavelength = 0.5e-6;
  c.na = 0.25;
  c.grid_n = 16;
  c.dx = 0.4375e-6;
  c.sensor_n = 8;
  c.led_rings = {{0.0, 1, 0.0}, {8.0, 2, 0.0}, {16.6, 2, 90.0}};
  return c;
}

namespace {

struct Instance {
  ComplexField object;
  ComplexField spectrum;
  PhysicalParams params;
  RealImage upstream;
};

Instance random_instance(const MicroscopeConfig& config, std::size_t led_count, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pupil(0.2, 1.0);
  const std::size_t n = config.grid_n;
  Array2D<Complex> field(n, n);
  for (auto& v : field) v = Complex(u(rng), u(rng));
  Instance inst{ComplexField(std::move(field), Plane::Object), {}, {}, RealImage(config.sensor_n, config.sensor_n)};
  inst.spectrum = fft::fft2(inst.object);
  inst.params.pupil_support = pupil_support(config);
  inst.params.pupil = RealImage(n, n, 0.0);
  for (std::size_t i = 0; i < inst.params.pupil.size(); ++i) {
    if (inst.params.pupil_support[i]) inst.params.pupil[i] = pupil(rng);
  }
  for (std::size_t i = 0; i < led_count; ++i) inst.params.led_weights.push_back(u(rng));
  for (double& v : inst.upstream) v = u(rng);
  return inst;
}

std::vector<std::size_t> support_of(const PhysicalParams& p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.pupil_support.size(); ++i) {
    if (p.pupil_support[i]) out.push_back(i);
  }
  return out;
}

// Checks each listed coordinate separately so the worst one can be named.
void check_coordinates(GradcheckGroup& group, std::size_t instance, const ScalarFunction& f,
                       std::span<const double> x, std::span<const double> analytic, double eps,
                       const std::vector<std::size_t>& coords) {
  for (std::size_t c : coords) {
    const std::size_t one[1] = {c};
    const double err = finite_difference_check(f, x, analytic, eps, one);
    ++group.coordinates;
    if (err > group.max_rel_error) {
      group.max_rel_error = err;
      group.worst_instance = instance;
      group.worst_coordinate = c;
    }
  }
}

std::vector<std::size_t> all_of(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace

bool GradcheckReport::passed() const {
  for (const auto& g : groups) {
    if (!g.passed()) return false;
  }
  return true;
}

std::string GradcheckReport::csv() const {
  std::ostringstream out;
  out << "group,instances,coordinates,max_rel_error,tolerance,worst_instance,worst_coordinate,status\n";
  char buf[64];
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, "%.3e,%.0e", g.max_rel_error, g.tolerance);
    out << g.name << ',' << g.instances << ',' << g.coordinates << ',' << buf << ',' << g.worst_instance << ','
        << g.worst_coordinate << ',' << (g.passed() ? "PASS" : "FAIL") << '\n';
  }
  return out.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const MicroscopeConfig config = micro_microscope();
  const auto leds = build_led_array(config);
  Rng rng(options.seed);

  GradcheckGroup weights{"led_weights", options.instances, 0, 0.0, options.tolerance, 0, 0};
  GradcheckGroup pupil{"pupil", options.instances, 0, 0.0, options.tolerance, 0, 0};
  for (std::size_t k = 0; k < options.instances; ++k) {
    const Instance inst = random_instance(config, leds.size(), rng);
    const auto loss = [&](const PhysicalParams& p) {
      Rng none(0);
      const RealImage image = forward_capture(inst.object, p, config, 0.0, none);
      double acc = 0.0;
      for (std::size_t i = 0; i < image.size(); ++i) acc += inst.upstream[i] * image[i];
      return acc;
    };

    auto gw = grad_wrt_weights(inst.spectrum, inst.params.pupil, leds, inst.upstream);
    for (double& g : gw) g *= options.fault_scale;
    check_coordinates(
        weights, k,
        [&](std::span<const double> w) {
          PhysicalParams p = inst.params;
          p.led_weights.assign(w.begin(), w.end());
          return loss(p);
        },
        inst.params.led_weights, gw, 1e-4, all_of(leds.size()));

    const RealImage gp = grad_wrt_pupil(inst.spectrum, inst.params, leds, inst.upstream);
    std::vector<double> g(gp.begin(), gp.end());
    for (double& v : g) v *= options.fault_scale;
    const std::vector<double> x(inst.params.pupil.begin(), inst.params.pupil.end());
    check_coordinates(
        pupil, k,
        [&](std::span<const double> v) {
          PhysicalParams p = inst.params;
          std::copy(v.begin(), v.end(), p.pupil.begin());
          return loss(p);
        },
        x, g, 1e-4, support_of(inst.params));
  }

  // Full chain: imaging, standardisation, CNN and cross-entropy, noise off.
  GradcheckGroup chain_w{"chain_led_weights", options.chain_instances, 0, 0.0, options.chain_tolerance, 0, 0};
  GradcheckGroup chain_p{"chain_pupil", options.chain_instances, 0, 0.0, options.chain_tolerance, 0, 0};
  for (std::size_t k = 0; k < options.chain_instances; ++k) {
    const Instance inst = random_instance(config, leds.size(), rng);
    Dataset ds;
    ds.grid_n = config.grid_n;
    auto patch = std::make_shared<ObjectPatch>(inst.object.values());
    ds.patches.push_back(patch);
    SampleRecord sample;
    sample.sample_id = "gradcheck-" + std::to_string(k);
    sample.base_id = sample.sample_id;
    sample.label = static_cast<int>(k % 2);
    sample.patch = patch;
    ds.samples.push_back(sample);
    const ImagingPipeline pipeline(config, ds);
    auto model = nn::DigitalModel::init_params(derive_seed(options.seed, "gradcheck-model-" + std::to_string(k)),
                                               config.sensor_n);
    nn::DigitalModel::Workspace ws;
    SensorImager::Scratch scratch;

    PhysicalGradients grads;
    grads.d_weights.assign(leds.size(), 0.0);
    grads.d_pupil = RealImage(config.grid_n, config.grid_n);
    Rng none(0);
    sample_loss_and_gradients(model, pipeline, ds.samples[0], inst.params, 0.0, none, {true, true}, &grads, ws,
                              scratch);
    for (double& v : grads.d_weights) v *= options.fault_scale;
    for (double& v : grads.d_pupil) v *= options.fault_scale;

    const auto loss = [&](const PhysicalParams& p) {
      Rng r(0);
      return sample_loss_and_gradients(model, pipeline, ds.samples[0], p, 0.0, r, {}, nullptr, ws, scratch);
    };
    check_coordinates(
        chain_w, k,
        [&](std::span<const double> w) {
          PhysicalParams p = inst.params;
          p.led_weights.assign(w.begin(), w.end());
          return loss(p);
        },
        inst.params.led_weights, grads.d_weights, 1e-6, all_of(leds.size()));
    const std::vector<double> x(inst.params.pupil.begin(), inst.params.pupil.end());
    const std::vector<double> g(grads.d_pupil.begin(), grads.d_pupil.end());
    check_coordinates(
        chain_p, k,
        [&](std::span<const double> v) {
          PhysicalParams p = inst.params;
          std::copy(v.begin(), v.end(), p.pupil.begin());
          return loss(p);
        },
        x, g, 1e-6, support_of(inst.params));
  }

  GradcheckReport report;
  report.groups = {weights, pupil, chain_w, chain_p};
  return report;
}

}  // namespace lsn
