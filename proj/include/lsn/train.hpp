#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsn/checkpoint.hpp"
#include "lsn/data.hpp"
#include "lsn/grad.hpp"
#include "lsn/nn.hpp"
#include "lsn/optics.hpp"
#include "lsn/sensor_imager.hpp"

namespace lsn {

enum class Regime { DO, PO, IO, PIO };

struct RegimeFlags {
  bool train_pupil = false;
  bool train_illumination = false;
};

RegimeFlags flags_of(Regime regime);
std::string to_string(Regime regime);
// Accepts DO/PO/IO/PIO in any case; throws ValidationError otherwise.
Regime parse_regime(const std::string& name);
std::vector<Regime> all_regimes();

struct Hyperparams {
  double digital_lr = 1e-3;
  double physical_lr = 1e-2;  // 0 keeps the physical layer at its initial value
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double noise_sigma_frac = 0.01;
  std::uint64_t seed = 0;
  double init_jitter = 0.01;
  std::uint64_t eval_noise_seed = 20201;

  void validate() const;
};

// Class 1 (triangle / infected) is the positive class.
struct Metrics {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  static Metrics from_predictions(std::span<const int> predicted, std::span<const int> truth);
  std::size_t total() const { return tp + tn + fp + fn; }
  // Percentages; sensitivity/specificity are empty when their class is absent.
  double accuracy() const;
  std::optional<double> sensitivity() const;
  std::optional<double> specificity() const;
  nlohmann::json to_json() const;
};

// DO/PO: centre LED 1, others 0.  DO/IO: clear pupil on the support.
// Trainable groups get uniform +-jitter, then projection.
PhysicalParams init_physical(Regime regime, const MicroscopeConfig& config, Rng& rng,
                             double jitter = 0.01);

// Weights clamped to [-1, 1], pupil clamped to [0, 1] and zeroed off support.
void project_constraints(PhysicalParams& params);
bool is_feasible(const PhysicalParams& params);

// Sensor images for dataset samples under given physical parameters.  Object
// spectra are computed once per stored patch; translated copies reuse them.
class ImagingPipeline {
 public:
  ImagingPipeline(const MicroscopeConfig& config, const Dataset& dataset);

  const MicroscopeConfig& config() const { return imager_.config(); }
  const SensorImager& imager() const { return imager_; }
  std::size_t led_count() const { return imager_.leds().size(); }

  SpectrumWindow window(const SampleRecord& sample) const;

  // Noisy detector image.  all_leds forces simulation of zero-weight LEDs
  // (required before a weight gradient).
  RealImage capture(const SampleRecord& sample, const PhysicalParams& params, double noise_sigma_frac,
                    Rng& rng, SensorImager::Scratch& scratch, bool all_leds = false) const;

 private:
  SensorImager imager_;
  const Dataset* dataset_;
  std::vector<SpectrumWindow> windows_;
};

// Loss of one sample through the whole pipeline and, optionally, gradients
// of the loss with respect to the physical parameters.  CNN parameter
// gradients are accumulated into the model.
struct SampleGradientRequest {
  bool weights = false;
  bool pupil = false;
};

double sample_loss_and_gradients(nn::DigitalModel& model, const ImagingPipeline& pipeline,
                                 const SampleRecord& sample, const PhysicalParams& params,
                                 double noise_sigma_frac, Rng& noise_rng,
                                 SampleGradientRequest request, PhysicalGradients* grads,
                                 nn::DigitalModel::Workspace& ws, SensorImager::Scratch& scratch);

Metrics evaluate(const nn::DigitalModel& model, const PhysicalParams& params,
                 const ImagingPipeline& pipeline, std::span<const SampleRecord* const> samples,
                 double noise_sigma_frac, std::uint64_t eval_noise_seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double batch_loss = 0.0;
  const PhysicalParams* params = nullptr;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> after_step;
  std::function<void(const EpochRecord&)> after_epoch;
};

struct TrainResult {
  Regime regime = Regime::DO;
  nn::DigitalModel model;
  PhysicalParams initial_params;
  PhysicalParams params;
  Metrics train, val, test;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

// Trains on the dataset's Train split, selects the epoch with the best
// validation accuracy (earliest on ties) and reports metrics for all splits.
// Throws TrainingError when the loss or gradients become non-finite.
TrainResult train_regime(Regime regime, const Dataset& dataset, const ImagingPipeline& pipeline,
                         const Hyperparams& hyper, const TrainHooks& hooks = {});

struct SeedRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics val, test;
  std::size_t best_epoch = 0;
  std::vector<double> led_weights;
};

struct RunSummary {
  Regime regime = Regime::DO;
  std::vector<SeedRun> runs;

  std::size_t succeeded() const;
  // Means and n-1 standard deviations over successful runs (percent).
  double accuracy_mean() const;
  double accuracy_std() const;
  std::optional<double> sensitivity_mean() const;
  std::optional<double> sensitivity_std() const;
  std::optional<double> specificity_mean() const;
  std::optional<double> specificity_std() const;
};

struct SweepOptions {
  std::vector<Regime> regimes = all_regimes();
  std::size_t n_seeds = 5;
  std::uint64_t base_seed = 0;
  std::filesystem::path out_dir;
  std::string config_hash;
  bool resume = true;
  std::size_t workers = 1;
  // Stop after this many newly trained runs, leaving a partial summary
  // (0 = no limit).  Used to exercise interruption.
  std::size_t max_new_runs = 0;
  std::function<void(const std::string&)> log;
};

// Trains one (regime, seed) and writes <dir>/run.json and <dir>/checkpoint.
// Failures are recorded in run.json and the returned SeedRun, not thrown.
SeedRun train_and_record(Regime regime, const Dataset& dataset, const ImagingPipeline& pipeline,
                         const Hyperparams& hyper, const std::filesystem::path& dir,
                         const std::string& config_hash, const TrainHooks& hooks = {});

// Runs every (regime, seed) pair, writing runs/<regime>-seed<k>/run.json,
// the trained checkpoint, and summary.csv.  Completed runs with a matching
// config hash are reused when resume is set.  Failed runs are recorded and
// excluded from the aggregates.
std::vector<RunSummary> run_sweep(const Dataset& dataset, const MicroscopeConfig& config,
                                  const Hyperparams& hyper, const SweepOptions& options);

// n_seeds counts successful runs and n_failed failed ones; runs not yet
// attempted count as neither.
std::string summary_csv(const std::vector<RunSummary>& summaries, const std::string& config_hash,
                        bool complete);

// Physical parameters to and from checkpoint blobs ("led_weights", "pupil").
void append_physical(Checkpoint& checkpoint, const PhysicalParams& params);
PhysicalParams restore_physical(const Checkpoint& checkpoint, const MicroscopeConfig& config);

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

}  // namespace lsn
