#include "lsn/train.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <atomic>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "lsn/checkpoint.hpp"
#include "lsn/error.hpp"
#include "lsn/fft.hpp"
#include "lsn/io.hpp"
#include "lsn/version.hpp"

namespace lsn {

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    io::crc32(tag)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

RegimeFlags flags_of(Regime regime) {
  switch (regime) {
    case Regime::DO: return {false, false};
    case Regime::PO: return {true, false};
    case Regime::IO: return {false, true};
    case Regime::PIO: return {true, true};
  }
  return {};
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::DO: return "DO";
    case Regime::PO: return "PO";
    case Regime::IO: return "IO";
    case Regime::PIO: return "PIO";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  std::string upper = name;
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Regime r : all_regimes()) {
    if (to_string(r) == upper) return r;
  }
  throw ValidationError("unknown regime '" + name + "' (expected DO, PO, IO or PIO)");
}

std::vector<Regime> all_regimes() { return {Regime::DO, Regime::PO, Regime::IO, Regime::PIO}; }

void Hyperparams::validate() const {
  if (!(digital_lr > 0.0)) throw ValidationError("digital_lr must be positive");
  if (!(physical_lr >= 0.0)) throw ValidationError("physical_lr must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (!(noise_sigma_frac >= 0.0)) throw ValidationError("noise_sigma_frac must be >= 0");
  if (!(init_jitter >= 0.0)) throw ValidationError("init_jitter must be >= 0");
}

Metrics Metrics::from_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and label counts differ");
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pos = predicted[i] == 1;
    if (truth[i] == 1) {
      pos ? ++m.tp : ++m.fn;
    } else {
      pos ? ++m.fp : ++m.tn;
    }
  }
  return m;
}

double Metrics::accuracy() const {
  if (total() == 0) return 0.0;
  return 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total());
}

std::optional<double> Metrics::sensitivity() const {
  if (tp + fn == 0) return std::nullopt;
  return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> Metrics::specificity() const {
  if (tn + fp == 0) return std::nullopt;
  return 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp);
}

nlohmann::json Metrics::to_json() const {
  return {{"tp", tp},
          {"tn", tn},
          {"fp", fp},
          {"fn", fn},
          {"accuracy", accuracy()},
          {"sensitivity", optional_json(sensitivity())},
          {"specificity", optional_json(specificity())}};
}

PhysicalParams init_physical(Regime regime, const MicroscopeConfig& config, Rng& rng, double jitter) {
  const auto leds = build_led_array(config);
  PhysicalParams p;
  p.led_weights.assign(leds.size(), 0.0);
  p.led_weights[center_led(leds)] = 1.0;
  p.pupil_support = pupil_support(config);
  p.pupil = RealImage(config.grid_n, config.grid_n, 0.0);
  for (std::size_t i = 0; i < p.pupil.size(); ++i) p.pupil[i] = p.pupil_support[i] ? 1.0 : 0.0;

  const auto flags = flags_of(regime);
  std::uniform_real_distribution<double> noise(-jitter, jitter);
  if (flags.train_illumination && jitter > 0.0) {
    for (double& w : p.led_weights) w += noise(rng);
  }
  if (flags.train_pupil && jitter > 0.0) {
    for (std::size_t i = 0; i < p.pupil.size(); ++i) {
      if (p.pupil_support[i]) p.pupil[i] += noise(rng);
    }
  }
  project_constraints(p);
  return p;
}

void project_constraints(PhysicalParams& params) {
  for (double& w : params.led_weights) w = std::clamp(w, -1.0, 1.0);
  const bool masked = params.pupil_support.size() == params.pupil.size();
  for (std::size_t i = 0; i < params.pupil.size(); ++i) {
    if (masked && !params.pupil_support[i]) {
      params.pupil[i] = 0.0;
    } else {
      params.pupil[i] = std::clamp(params.pupil[i], 0.0, 1.0);
    }
  }
}

bool is_feasible(const PhysicalParams& params) {
  for (double w : params.led_weights) {
    if (!(w >= -1.0 && w <= 1.0)) return false;
  }
  const bool masked = params.pupil_support.size() == params.pupil.size();
  for (std::size_t i = 0; i < params.pupil.size(); ++i) {
    const double v = params.pupil[i];
    if (masked && !params.pupil_support[i] && v != 0.0) return false;
    if (!(v >= 0.0 && v <= 1.0)) return false;
  }
  return true;
}

ImagingPipeline::ImagingPipeline(const MicroscopeConfig& config, const Dataset& dataset)
    : imager_(config, build_led_array(config)), dataset_(&dataset) {
  if (dataset.grid_n != config.grid_n) {
    throw ValidationError("dataset grid " + std::to_string(dataset.grid_n) +
                          " does not match the microscope grid " + std::to_string(config.grid_n));
  }
  // Each patch at the origin; samples apply their placement as a phase ramp.
  windows_.reserve(dataset.patches.size());
  const std::size_t n = config.grid_n;
  for (const auto& patch : dataset.patches) {
    Array2D<Complex> field(n, n);
    for (std::size_t r = 0; r < patch->rows(); ++r) {
      std::copy_n(patch->row(r).data(), patch->cols(), field.row(r).data());
    }
    windows_.push_back(imager_.window(fft::fft2(ComplexField(std::move(field), Plane::Object))));
  }
}

SpectrumWindow ImagingPipeline::window(const SampleRecord& sample) const {
  if (sample.patch_index >= windows_.size()) {
    throw ValidationError("sample " + sample.sample_id + " is not part of this pipeline's dataset");
  }
  return windows_[sample.patch_index].translated(static_cast<long>(sample.origin_row),
                                                 static_cast<long>(sample.origin_col),
                                                 config().grid_n);
}

RealImage ImagingPipeline::capture(const SampleRecord& sample, const PhysicalParams& params,
                                   double noise_sigma_frac, Rng& rng,
                                   SensorImager::Scratch& scratch, bool all_leds) const {
  RealImage pos, neg;
  imager_.forward(window(sample), params, all_leds, scratch, pos, neg);
  if (config().capture_mode == CaptureMode::SingleCapture) {
    return add_detector_noise(pos, noise_sigma_frac, rng);
  }
  pos = add_detector_noise(pos, noise_sigma_frac, rng);
  neg = add_detector_noise(neg, noise_sigma_frac, rng);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] -= neg[i];
  return pos;
}

double sample_loss_and_gradients(nn::DigitalModel& model, const ImagingPipeline& pipeline,
                                 const SampleRecord& sample, const PhysicalParams& params,
                                 double noise_sigma_frac, Rng& noise_rng,
                                 SampleGradientRequest request, PhysicalGradients* grads,
                                 nn::DigitalModel::Workspace& ws, SensorImager::Scratch& scratch) {
  const bool physical = grads != nullptr && (request.weights || request.pupil);
  const auto window = pipeline.window(sample);
  RealImage pos, neg;
  pipeline.imager().forward(window, params, request.weights, scratch, pos, neg);
  RealImage image;
  if (pipeline.config().capture_mode == CaptureMode::SingleCapture) {
    image = add_detector_noise(pos, noise_sigma_frac, noise_rng);
  } else {
    image = add_detector_noise(pos, noise_sigma_frac, noise_rng);
    const RealImage noisy_neg = add_detector_noise(neg, noise_sigma_frac, noise_rng);
    for (std::size_t i = 0; i < image.size(); ++i) image[i] -= noisy_neg[i];
  }
  // Additive noise does not depend on the physical parameters, so the
  // gradient of the noisy image equals that of the clean one.
  RealImage input_grad;
  const double loss = model.backward(image, sample.label, ws, physical ? &input_grad : nullptr);
  if (physical) {
    pipeline.imager().backward(window, params, input_grad, request.weights, request.pupil, scratch,
                               *grads);
  }
  return loss;
}

Metrics evaluate(const nn::DigitalModel& model, const PhysicalParams& params,
                 const ImagingPipeline& pipeline, std::span<const SampleRecord* const> samples,
                 double noise_sigma_frac, std::uint64_t eval_noise_seed) {
  if (samples.empty()) throw ValidationError("cannot evaluate an empty split");
  std::vector<int> predicted, truth;
  predicted.reserve(samples.size());
  truth.reserve(samples.size());
  nn::DigitalModel::Workspace ws;
  SensorImager::Scratch scratch;
  for (const SampleRecord* s : samples) {
    // Noise depends only on the sample, so every model sees the same draws.
    Rng rng(derive_seed(eval_noise_seed, s->sample_id));
    const RealImage image = pipeline.capture(*s, params, noise_sigma_frac, rng, scratch);
    const auto probs = model.forward(image, ws);
    predicted.push_back(probs[1] > probs[0] ? 1 : 0);
    truth.push_back(s->label);
  }
  return Metrics::from_predictions(predicted, truth);
}

TrainResult train_regime(Regime regime, const Dataset& dataset, const ImagingPipeline& pipeline,
                         const Hyperparams& hyper, const TrainHooks& hooks) {
  hyper.validate();
  const auto train = samples_in(dataset, Split::Train);
  const auto val = samples_in(dataset, Split::Val);
  const auto test = samples_in(dataset, Split::Test);
  if (train.empty() || val.empty() || test.empty()) {
    throw ValidationError("training needs non-empty train, val and test splits");
  }
  const MicroscopeConfig& config = pipeline.config();
  if (config.sensor_n % 4 != 0) throw ValidationError("sensor_n must be a multiple of 4");

  const auto flags = flags_of(regime);
  TrainResult result;
  result.regime = regime;
  result.model = nn::DigitalModel::init_params(derive_seed(hyper.seed, "model"), config.sensor_n);
  Rng init_rng(derive_seed(hyper.seed, "physical"));
  result.initial_params = init_physical(regime, config, init_rng, hyper.init_jitter);
  PhysicalParams params = result.initial_params;

  nn::Adam digital_opt({.lr = hyper.digital_lr});
  nn::AdamState weight_state, pupil_state;
  const bool physical_step = hyper.physical_lr > 0.0;
  const nn::AdamConfig physical_cfg{.lr = physical_step ? hyper.physical_lr : 1.0};

  Rng order_rng(derive_seed(hyper.seed, "order"));
  Rng noise_rng(derive_seed(hyper.seed, "train-noise"));
  nn::DigitalModel::Workspace ws;
  SensorImager::Scratch scratch;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  nn::DigitalModel best_model = result.model;
  PhysicalParams best_params = params;
  double best_val = -1.0;
  std::size_t step = 0;
  const SampleGradientRequest request{flags.train_illumination, flags.train_pupil};
  const bool want_physical = request.weights || request.pupil;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      result.model.zero_grad();
      PhysicalGradients grads;
      if (request.weights) grads.d_weights.assign(params.led_weights.size(), 0.0);
      if (request.pupil) grads.d_pupil = RealImage(config.grid_n, config.grid_n);
      double batch_loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          batch_loss += sample_loss_and_gradients(result.model, pipeline, *train[order[k]], params,
                                                  hyper.noise_sigma_frac, noise_rng, request,
                                                  want_physical ? &grads : nullptr, ws, scratch);
        }
      } catch (const NumericError& e) {
        throw TrainingError("non-finite values at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + ": " + e.what());
      }
      batch_loss *= inv;
      result.model.scale_grad(inv);
      for (double& g : grads.d_weights) g *= inv;
      for (double& g : grads.d_pupil) g *= inv;

      double digital_norm = 0.0;
      for (const auto* t : result.model.parameters()) {
        for (double g : t->grad) digital_norm += g * g;
      }
      digital_norm = std::sqrt(digital_norm);
      const double weight_norm = l2(grads.d_weights);
      const double pupil_norm = l2(grads.d_pupil.flat());
      if (!std::isfinite(batch_loss) || !std::isfinite(digital_norm) || !std::isfinite(weight_norm) ||
          !std::isfinite(pupil_norm)) {
        throw TrainingError("non-finite training state at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step) + ": loss " + fixed(batch_loss, 6) +
                            ", digital lr " + fixed(hyper.digital_lr, 6) + ", physical lr " +
                            fixed(hyper.physical_lr, 6) + ", grad norms digital " +
                            fixed(digital_norm, 6) + " weights " + fixed(weight_norm, 6) +
                            " pupil " + fixed(pupil_norm, 6));
      }

      digital_opt.step(result.model.parameters());
      if (physical_step) {
        if (request.weights) nn::adam_step(params.led_weights, grads.d_weights, weight_state, physical_cfg);
        if (request.pupil) nn::adam_step(params.pupil.flat(), grads.d_pupil.flat(), pupil_state, physical_cfg);
        if (want_physical) project_constraints(params);
      }
      loss_sum += batch_loss * static_cast<double>(end - start);
      if (hooks.after_step) hooks.after_step({epoch, step, batch_loss, &params});
      ++step;
    }

    EpochRecord record{epoch, loss_sum / static_cast<double>(train.size()), 0.0};
    record.val_accuracy =
        evaluate(result.model, params, pipeline, val, hyper.noise_sigma_frac, hyper.eval_noise_seed)
            .accuracy();
    result.history.push_back(record);
    if (hooks.after_epoch) hooks.after_epoch(record);
    if (record.val_accuracy > best_val) {
      best_val = record.val_accuracy;
      best_model = result.model;
      best_params = params;
      result.best_epoch = epoch;
    }
  }

  result.model = std::move(best_model);
  result.params = std::move(best_params);
  const auto eval = [&](const std::vector<const SampleRecord*>& split) {
    return evaluate(result.model, result.params, pipeline, split, hyper.noise_sigma_frac,
                    hyper.eval_noise_seed);
  };
  result.train = eval(train);
  result.val = eval(val);
  result.test = eval(test);
  return result;
}

std::size_t RunSummary::succeeded() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const SeedRun& r) { return r.ok; }));
}

namespace {

std::vector<double> collect(const RunSummary& s, const std::function<std::optional<double>(const Metrics&)>& f) {
  std::vector<double> out;
  for (const auto& r : s.runs) {
    if (!r.ok) continue;
    if (auto v = f(r.test)) out.push_back(*v);
  }
  return out;
}

}  // namespace

double RunSummary::accuracy_mean() const {
  const auto v = collect(*this, [](const Metrics& m) { return std::optional(m.accuracy()); });
  return v.empty() ? 0.0 : mean_of(v);
}

double RunSummary::accuracy_std() const {
  return sample_std(collect(*this, [](const Metrics& m) { return std::optional(m.accuracy()); }));
}

std::optional<double> RunSummary::sensitivity_mean() const {
  const auto v = collect(*this, [](const Metrics& m) { return m.sensitivity(); });
  return v.empty() ? std::nullopt : std::optional(mean_of(v));
}

std::optional<double> RunSummary::sensitivity_std() const {
  const auto v = collect(*this, [](const Metrics& m) { return m.sensitivity(); });
  return v.empty() ? std::nullopt : std::optional(sample_std(v));
}

std::optional<double> RunSummary::specificity_mean() const {
  const auto v = collect(*this, [](const Metrics& m) { return m.specificity(); });
  return v.empty() ? std::nullopt : std::optional(mean_of(v));
}

std::optional<double> RunSummary::specificity_std() const {
  const auto v = collect(*this, [](const Metrics& m) { return m.specificity(); });
  return v.empty() ? std::nullopt : std::optional(sample_std(v));
}

std::string summary_csv(const std::vector<RunSummary>& summaries, const std::string& config_hash,
                        bool complete) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << " tool_version=" << kToolVersion
      << " status=" << (complete ? "complete" : "partial") << '\n';
  out << "regime,n_seeds,n_failed,acc_mean,acc_std,sens_mean,sens_std,spec_mean,spec_std\n";
  const auto cell = [](const std::optional<double>& v) { return v ? fixed(*v, 4) : std::string("NA"); };
  for (const auto& s : summaries) {
    const std::size_t ok = s.succeeded();
    const auto failed = std::count_if(s.runs.begin(), s.runs.end(), [](const SeedRun& r) { return !r.ok && !r.error.empty(); });
    out << to_string(s.regime) << ',' << ok << ',' << failed << ','
        << (ok ? fixed(s.accuracy_mean(), 4) : "NA") << ',' << (ok ? fixed(s.accuracy_std(), 4) : "NA")
        << ',' << cell(s.sensitivity_mean()) << ',' << cell(s.sensitivity_std()) << ','
        << cell(s.specificity_mean()) << ',' << cell(s.specificity_std()) << '\n';
  }
  return out.str();
}

void append_physical(Checkpoint& checkpoint, const PhysicalParams& params) {
  checkpoint.blobs.push_back({"led_weights", {params.led_weights.size()}, params.led_weights});
  checkpoint.blobs.push_back({"pupil",
                              {params.pupil.rows(), params.pupil.cols()},
                              std::vector<double>(params.pupil.begin(), params.pupil.end())});
}

PhysicalParams restore_physical(const Checkpoint& checkpoint, const MicroscopeConfig& config) {
  PhysicalParams p;
  p.led_weights = checkpoint.find("led_weights").values;
  const auto leds = build_led_array(config);
  if (p.led_weights.size() != leds.size()) throw ShapeError("checkpoint LED count does not match the config");
  const Blob& pupil = checkpoint.find("pupil");
  if (pupil.shape != std::vector<std::size_t>{config.grid_n, config.grid_n}) {
    throw ShapeError("checkpoint pupil does not match grid_n");
  }
  p.pupil = RealImage(config.grid_n, config.grid_n);
  std::copy(pupil.values.begin(), pupil.values.end(), p.pupil.begin());
  p.pupil_support = pupil_support(config);
  return p;
}

namespace {

nlohmann::json hyper_json(const Hyperparams& h) {
  return {{"digital_lr", h.digital_lr},     {"physical_lr", h.physical_lr},
          {"batch_size", h.batch_size},     {"epochs", h.epochs},
          {"noise_sigma_frac", h.noise_sigma_frac}, {"seed", h.seed},
          {"init_jitter", h.init_jitter},   {"eval_noise_seed", h.eval_noise_seed}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.tp = j.at("tp");
  m.tn = j.at("tn");
  m.fp = j.at("fp");
  m.fn = j.at("fn");
  return m;
}

std::optional<SeedRun> load_completed(const std::filesystem::path& run_json, const std::string& hash) {
  if (!std::filesystem::exists(run_json)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(io::read_text(run_json));
    if (j.value("status", "") != "complete" || j.value("config_hash", "") != hash) return std::nullopt;
    SeedRun run;
    run.seed = j.at("seed");
    run.ok = true;
    run.val = metrics_from_json(j.at("metrics").at("val"));
    run.test = metrics_from_json(j.at("metrics").at("test"));
    run.best_epoch = j.at("best_epoch");
    run.led_weights = j.at("led_weights").get<std::vector<double>>();
    return run;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

SeedRun train_and_record(Regime regime, const Dataset& dataset, const ImagingPipeline& pipeline,
                         const Hyperparams& hyper, const std::filesystem::path& dir,
                         const std::string& config_hash, const TrainHooks& hooks) {
  SeedRun run;
  run.seed = hyper.seed;
  nlohmann::json record = {{"regime", to_string(regime)},
                           {"seed", hyper.seed},
                           {"config_hash", config_hash},
                           {"tool_version", kToolVersion},
                           {"hyperparams", hyper_json(hyper)}};
  try {
    const TrainResult result = train_regime(regime, dataset, pipeline, hyper, hooks);
    run.ok = true;
    run.val = result.val;
    run.test = result.test;
    run.best_epoch = result.best_epoch;
    run.led_weights = result.params.led_weights;

    Checkpoint ck;
    ck.metadata = {{"regime", to_string(regime)}, {"seed", hyper.seed},
                   {"config_hash", config_hash}};
    append_model(ck, result.model);
    append_physical(ck, result.params);
    write_checkpoint(ck, dir / "checkpoint");

    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : result.history) {
      history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    }
    record["status"] = "complete";
    record["best_epoch"] = result.best_epoch;
    record["metrics"] = {{"train", result.train.to_json()},
                         {"val", result.val.to_json()},
                         {"test", result.test.to_json()}};
    record["led_weights"] = result.params.led_weights;
    record["pupil_transmission"] = pupil_transmission(result.params);
    record["led_emission"] = led_emission(result.params);
    record["history"] = history;
  } catch (const Error& e) {
    run.ok = false;
    run.error = e.what();
    record["status"] = "failed";
    record["error"] = e.what();
  }
  io::write_text(dir / "run.json", record.dump(2) + "\n");
  return run;
}

std::vector<RunSummary> run_sweep(const Dataset& dataset, const MicroscopeConfig& config,
                                  const Hyperparams& hyper, const SweepOptions& options) {
  if (options.n_seeds < 2) throw ValidationError("a sweep needs at least 2 seeds");
  if (options.regimes.empty()) throw ValidationError("a sweep needs at least one regime");
  if (options.out_dir.empty()) throw ValidationError("a sweep needs an output directory");
  hyper.validate();
  const ImagingPipeline pipeline(config, dataset);
  std::filesystem::create_directories(options.out_dir / "runs");

  struct Job {
    std::size_t summary;
    std::size_t slot;
    Regime regime;
    std::uint64_t seed;
  };
  std::vector<RunSummary> summaries;
  std::vector<Job> jobs;
  for (Regime r : options.regimes) {
    RunSummary s;
    s.regime = r;
    s.runs.resize(options.n_seeds);
    for (std::size_t k = 0; k < options.n_seeds; ++k) {
      jobs.push_back({summaries.size(), k, r, options.base_seed + k});
    }
    summaries.push_back(std::move(s));
  }

  std::mutex mutex;
  std::atomic<std::size_t> started{0};
  const auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard lock(mutex);
    options.log(msg);
  };
  const auto write_summary = [&](bool complete) {
    io::write_text(options.out_dir / "summary.csv", summary_csv(summaries, options.config_hash, complete));
  };

  const auto run_job = [&](const Job& job) {
    const std::string name = to_string(job.regime) + "-seed" + std::to_string(job.seed);
    const auto dir = options.out_dir / "runs" / name;
    SeedRun run;
    run.seed = job.seed;
    if (options.resume) {
      if (auto done = load_completed(dir / "run.json", options.config_hash)) {
        log("reusing " + name);
        std::lock_guard lock(mutex);
        summaries[job.summary].runs[job.slot] = *done;
        return;
      }
    }
    if (options.max_new_runs > 0 && started.fetch_add(1) >= options.max_new_runs) return;
    log("training " + name);
    const auto t0 = std::chrono::steady_clock::now();
    Hyperparams h = hyper;
    h.seed = job.seed;
    run = train_and_record(job.regime, dataset, pipeline, h, dir, options.config_hash);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log(name + (run.ok ? " test acc " + fixed(run.test.accuracy(), 2) : " FAILED: " + run.error) + " (" +
        fixed(secs, 1) + " s)");
    std::lock_guard lock(mutex);
    summaries[job.summary].runs[job.slot] = run;
    write_summary(false);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, jobs.size()));
  if (workers == 1) {
    for (const auto& job : jobs) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(jobs[i]);
      });
    }
  }
  const bool complete = std::all_of(summaries.begin(), summaries.end(), [](const RunSummary& s) {
    return std::all_of(s.runs.begin(), s.runs.end(), [](const SeedRun& r) { return r.ok || !r.error.empty(); });
  });
  write_summary(complete);
  return summaries;
}

}  // namespace lsn
