// lsn: dataset generation, training, sweeps, evaluation, pattern export and
// gradient certification for the learned sensing network.
//
// Exit codes: 0 ok, 1 usage/config, 2 check failure, 3 runtime.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lsn/checkpoint.hpp"
#include "lsn/config.hpp"
#include "lsn/data.hpp"
#include "lsn/error.hpp"
#include "lsn/exports.hpp"
#include "lsn/gradcheck.hpp"
#include "lsn/io.hpp"
#include "lsn/train.hpp"
#include "lsn/version.hpp"

namespace fs = std::filesystem;
using namespace lsn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kCheckFailed = 2, kRuntime = 3 };

// Refusal that maps to the usage exit code.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::string config_path;
  std::string dataset;
  bool force = false;
};

RunConfig load(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (!c.dataset.empty()) config.paths.dataset = c.dataset;
  return config;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

Dataset load_dataset(const RunConfig& config, bool force) {
  Dataset ds = load_object_stack(config.paths.dataset);
  if (ds.grid_n != config.microscope.grid_n) {
    throw UsageError("dataset grid " + std::to_string(ds.grid_n) + " does not match microscope.grid_n " +
                     std::to_string(config.microscope.grid_n));
  }
  const std::string stored = ds.generator.value("data_hash", "");
  if (!stored.empty() && stored != config.data_hash() && !force) {
    throw UsageError("dataset " + config.paths.dataset.string() +
                     " was generated with different [data] settings (use --force to use it anyway)");
  }
  assign_splits(ds, config.splits, config.split_seed);
  return ds;
}

std::string metrics_line(const Metrics& m) {
  char buf[160];
  const auto opt = [](const std::optional<double>& v) { return v ? *v : std::nan(""); };
  std::snprintf(buf, sizeof buf, "acc %.2f  sens %.2f  spec %.2f  (tp %zu tn %zu fp %zu fn %zu)", m.accuracy(),
                opt(m.sensitivity()), opt(m.specificity()), m.tp, m.tn, m.fp, m.fn);
  return buf;
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const Common& c, const std::string& out_override) {
  RunConfig config = load(c);
  const fs::path out = out_override.empty() ? config.paths.dataset : fs::path(out_override);
  if (non_empty_dir(out) && !c.force) {
    throw UsageError("refusing to write into non-empty " + out.string() + " (use --force)");
  }
  Dataset ds = build_synthetic_dataset(config.data);
  ds.generator["config_hash"] = config.hash();
  ds.generator["data_hash"] = config.data_hash();
  save_dataset(ds, out);
  const auto counts = ds.class_counts();
  std::cout << "wrote " << ds.samples.size() << " samples (" << ds.patches.size() << " base shapes) to "
            << out.string() << "\n"
            << "rectangle (label 0): " << counts[0] << "\n"
            << "triangle (label 1): " << counts[1] << "\n"
            << "manifest crc32 " << io::hex32(io::crc32(io::read_text(out / "manifest.json"))) << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& regime_name, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> epochs, const std::string& out_override) {
  RunConfig config = load(c);
  const Regime regime = parse_regime(regime_name);
  if (seed) config.hyper.seed = *seed;
  if (epochs) config.hyper.epochs = *epochs;
  config.validate();
  const fs::path out = out_override.empty()
                           ? config.paths.output / "train" / (to_string(regime) + "-seed" + std::to_string(config.hyper.seed))
                           : fs::path(out_override);
  if (fs::exists(out / "run.json") && !c.force) {
    throw UsageError(out.string() + " already holds a run (use --force to overwrite)");
  }
  const Dataset ds = load_dataset(config, c.force);
  const ImagingPipeline pipeline(config.microscope, ds);
  TrainHooks hooks;
  hooks.after_epoch = [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %3zu  loss %.4f  val %.2f\n", e.epoch, e.train_loss, e.val_accuracy);
  };
  std::cerr << "training " << to_string(regime) << " seed " << config.hyper.seed << " (config " << config.hash()
            << ")\n";
  const SeedRun run = train_and_record(regime, ds, pipeline, config.hyper, out, config.hash(), hooks);
  if (!run.ok) {
    std::cerr << "training failed: " << run.error << "\n";
    return kRuntime;
  }
  std::cout << "best epoch " << run.best_epoch << "\n"
            << "val  " << metrics_line(run.val) << "\n"
            << "test " << metrics_line(run.test) << "\n"
            << "artifacts in " << out.string() << "\n";
  return kOk;
}

// ---- sweep ------------------------------------------------------------------

std::optional<std::string> existing_summary_header(const fs::path& out) {
  const fs::path p = out / "summary.csv";
  if (!fs::exists(p)) return std::nullopt;
  const std::string text = io::read_text(p);
  return text.substr(0, text.find('\n'));
}

int cmd_sweep(const Common& c, const std::vector<std::string>& regimes, std::optional<std::size_t> seeds,
              std::optional<std::size_t> epochs, std::optional<std::size_t> workers,
              const std::string& out_override, std::size_t stop_after) {
  RunConfig config = load(c);
  if (!regimes.empty()) {
    config.sweep.regimes.clear();
    for (const auto& r : regimes) {
      try {
        config.sweep.regimes.push_back(parse_regime(r));
      } catch (const ValidationError& e) {
        throw UsageError(e.what());
      }
    }
  }
  if (seeds) config.sweep.n_seeds = *seeds;
  if (epochs) config.hyper.epochs = *epochs;
  if (workers) config.sweep.workers = *workers;
  config.validate();
  const fs::path out = out_override.empty() ? config.paths.output : fs::path(out_override);
  const std::string hash = config.hash();

  bool resume = true;
  if (const auto header = existing_summary_header(out)) {
    const bool same = header->find("config_hash=" + hash + " ") != std::string::npos;
    const bool complete = header->find("status=complete") != std::string::npos;
    if (c.force) {
      resume = false;
    } else if (!same) {
      throw UsageError(out.string() + " holds a sweep with a different config hash (use --force to replace it)");
    } else if (complete) {
      throw UsageError(out.string() + " already holds a complete sweep for config " + hash + " (use --force to rerun)");
    } else {
      std::cerr << "resuming partial sweep in " << out.string() << "\n";
    }
  } else if (fs::exists(out / "runs") && !c.force) {
    throw UsageError(out.string() + " holds runs without a summary (use --force to replace them)");
  }

  const Dataset ds = load_dataset(config, c.force);
  fs::create_directories(out);
  nlohmann::json cfg = {{"config_hash", hash},
                        {"tool_version", kToolVersion},
                        {"config", config.canonical()},
                        {"dataset", config.paths.dataset.string()}};
  io::write_text(out / "config.json", cfg.dump(2) + "\n");

  SweepOptions opt;
  opt.regimes = config.sweep.regimes;
  opt.n_seeds = config.sweep.n_seeds;
  opt.base_seed = config.sweep.base_seed;
  opt.out_dir = out;
  opt.config_hash = hash;
  opt.resume = resume;
  opt.workers = config.sweep.workers;
  opt.max_new_runs = stop_after;
  opt.log = [](const std::string& m) { std::cerr << m << "\n"; };
  const auto summaries = run_sweep(ds, config.microscope, config.hyper, opt);

  std::cout << io::read_text(out / "summary.csv");
  std::size_t failed = 0;
  for (const auto& s : summaries) {
    for (const auto& r : s.runs) failed += (!r.ok && !r.error.empty()) ? 1 : 0;
  }
  if (failed > 0) {
    std::cerr << failed << " run(s) failed; see runs/*/run.json\n";
    return kRuntime;
  }
  return kOk;
}

// ---- eval -------------------------------------------------------------------

fs::path checkpoint_dir(const fs::path& run) {
  if (fs::exists(run / "checkpoint" / "manifest.json")) return run / "checkpoint";
  if (fs::exists(run / "manifest.json")) return run;
  throw NotFoundError("no checkpoint found in " + run.string());
}

int cmd_eval(const Common& c, const std::string& run_dir, const std::string& split_name,
             const std::string& out_file) {
  const RunConfig config = load(c);
  const Checkpoint ck = read_checkpoint(checkpoint_dir(run_dir));
  const std::string stored = ck.metadata.value("config_hash", "");
  if (!stored.empty() && stored != config.hash() && !c.force) {
    throw UsageError("checkpoint was trained under config " + stored + " but the current config is " + config.hash() +
                     " (use --force to evaluate anyway)");
  }
  nn::DigitalModel model(config.microscope.sensor_n);
  restore_model(ck, model);
  const PhysicalParams params = restore_physical(ck, config.microscope);
  const Dataset ds = load_dataset(config, c.force);
  const ImagingPipeline pipeline(config.microscope, ds);

  std::vector<std::pair<std::string, Split>> splits;
  if (split_name == "all") {
    splits = {{"train", Split::Train}, {"val", Split::Val}, {"test", Split::Test}};
  } else {
    const std::map<std::string, Split> names = {{"train", Split::Train}, {"val", Split::Val}, {"test", Split::Test}};
    splits = {{split_name, names.at(split_name)}};
  }
  nlohmann::json report = {{"config_hash", config.hash()},
                           {"tool_version", kToolVersion},
                           {"checkpoint", fs::path(run_dir).string()},
                           {"eval_noise_seed", config.hyper.eval_noise_seed},
                           {"noise_sigma_frac", config.hyper.noise_sigma_frac}};
  for (const auto& [name, split] : splits) {
    const auto samples = samples_in(ds, split);
    const Metrics m =
        evaluate(model, params, pipeline, samples, config.hyper.noise_sigma_frac, config.hyper.eval_noise_seed);
    report["metrics"][name] = m.to_json();
    std::cerr << name << " " << metrics_line(m) << "\n";
  }
  const std::string text = report.dump(2) + "\n";
  if (!out_file.empty()) io::write_text(out_file, text);
  std::cout << text;
  return kOk;
}

// ---- export-patterns --------------------------------------------------------

struct LoadedRun {
  std::string name;
  Regime regime;
  std::uint64_t seed;
  PhysicalParams params;
};

std::vector<LoadedRun> collect_runs(const fs::path& dir, const MicroscopeConfig& microscope) {
  std::vector<fs::path> candidates;
  if (fs::is_directory(dir / "runs")) {
    for (const auto& e : fs::directory_iterator(dir / "runs")) {
      if (fs::exists(e.path() / "checkpoint" / "manifest.json")) candidates.push_back(e.path());
    }
  } else if (fs::exists(dir / "checkpoint" / "manifest.json")) {
    candidates.push_back(dir);
  }
  if (candidates.empty()) throw NotFoundError("no trained runs found in " + dir.string());
  std::sort(candidates.begin(), candidates.end());
  std::vector<LoadedRun> runs;
  for (const auto& p : candidates) {
    const Checkpoint ck = read_checkpoint(p / "checkpoint");
    runs.push_back({p.filename().string(), parse_regime(ck.metadata.at("regime").get<std::string>()),
                    ck.metadata.at("seed").get<std::uint64_t>(), restore_physical(ck, microscope)});
  }
  std::sort(runs.begin(), runs.end(), [](const LoadedRun& a, const LoadedRun& b) {
    return std::tie(a.regime, a.seed) < std::tie(b.regime, b.seed);
  });
  return runs;
}

int cmd_export(const Common& c, const std::string& run_dir, const std::string& out_override, std::size_t examples) {
  const RunConfig config = load(c);
  const fs::path out = out_override.empty() ? fs::path(run_dir) / "patterns" : fs::path(out_override);
  if (non_empty_dir(out) && !c.force) {
    throw UsageError("refusing to write into non-empty " + out.string() + " (use --force)");
  }
  const auto runs = collect_runs(run_dir, config.microscope);
  const ArtifactStamp stamp{config.hash()};
  const auto leds = build_led_array(config.microscope);

  std::optional<Dataset> ds;
  std::optional<ImagingPipeline> pipeline;
  if (examples > 0) {
    ds = load_dataset(config, c.force);
    pipeline.emplace(config.microscope, *ds);
  }

  std::map<Regime, std::vector<const LoadedRun*>> groups;
  for (const auto& r : runs) groups[r.regime].push_back(&r);
  nlohmann::json index = {{"config_hash", stamp.config_hash}, {"tool_version", kToolVersion}};
  for (const auto& [regime, members] : groups) {
    const fs::path dir = out / to_string(regime);
    fs::create_directories(dir);
    const std::size_t n = config.microscope.grid_n;
    RealImage mean(n, n, 0.0), var(n, n, 0.0);
    std::vector<double> mean_w(leds.size(), 0.0);
    for (const auto* r : members) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += r->params.pupil[i];
      for (std::size_t i = 0; i < leds.size(); ++i) mean_w[i] += r->params.led_weights[i];
      io::write_text(dir / ("leds_seed" + std::to_string(r->seed) + ".csv"),
                     led_csv(leds, r->params.led_weights, stamp));
    }
    const double k = static_cast<double>(members.size());
    for (double& v : mean) v /= k;
    for (double& v : mean_w) v /= k;
    for (const auto* r : members) {
      for (std::size_t i = 0; i < var.size(); ++i) {
        const double d = r->params.pupil[i] - mean[i];
        var[i] += d * d / k;
      }
    }
    write_pgm(dir / "pupil_mean.pgm", mean, 0.0, 1.0, stamp);
    write_pgm(dir / "pupil_var.pgm", var, stamp);
    write_raw_f32(dir / "pupil_mean.f32", mean, stamp, {{"regime", to_string(regime)}, {"runs", members.size()}});
    write_raw_f32(dir / "pupil_var.f32", var, stamp, {{"regime", to_string(regime)}, {"runs", members.size()}});
    io::write_text(dir / "leds_mean.csv", led_csv(leds, mean_w, stamp));

    nlohmann::json group = {{"runs", members.size()}};
    if (pipeline) {
      // Example detector images under the lowest-seed run's pattern.
      const auto& params = members.front()->params;
      fs::create_directories(dir / "examples");
      SensorImager::Scratch scratch;
      for (int label = 0; label < 2; ++label) {
        std::size_t written = 0;
        // Test samples first; small datasets may need val and train too.
        std::vector<const SampleRecord*> pool;
        for (Split sp : {Split::Test, Split::Val, Split::Train}) {
          const auto part = samples_in(*ds, sp);
          pool.insert(pool.end(), part.begin(), part.end());
        }
        for (const SampleRecord* s : pool) {
          if (s->label != label || written == examples) continue;
          Rng rng(derive_seed(config.hyper.eval_noise_seed, s->sample_id));
          const RealImage image = pipeline->capture(*s, params, config.hyper.noise_sigma_frac, rng, scratch);
          double lo = image[0], hi = image[0];
          for (double v : image) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          const std::string stem = std::string(label ? "triangle" : "rectangle") + "_" + std::to_string(written);
          write_pgm(dir / "examples" / (stem + ".pgm"), image, lo, hi, stamp);
          group["examples"].push_back({{"file", "examples/" + stem + ".pgm"}, {"sample_id", s->sample_id}});
          ++written;
        }
      }
      group["examples_from_seed"] = members.front()->seed;
    }
    index["regimes"][to_string(regime)] = group;
    std::cout << to_string(regime) << ": " << members.size() << " run(s) -> " << dir.string() << "\n";
  }
  io::write_text(out / "index.json", index.dump(2) + "\n");
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const Common& c, std::size_t instances, std::uint64_t seed, double fault_scale) {
  const RunConfig config = load(c);
  GradcheckOptions opt;
  opt.instances = instances;
  opt.seed = seed;
  opt.fault_scale = fault_scale;
  const auto report = run_gradcheck(opt);
  std::cout << "# " << ArtifactStamp{config.hash()}.line() << "\n" << report.csv();
  if (report.passed()) return kOk;
  const auto worst = std::max_element(report.groups.begin(), report.groups.end(), [](const auto& a, const auto& b) {
    return a.max_rel_error / a.tolerance < b.max_rel_error / b.tolerance;
  });
  std::cerr << "gradient check failed: worst offender " << worst->name << " instance " << worst->worst_instance
            << " coordinate " << worst->worst_coordinate << " (relative error " << worst->max_rel_error
            << ", tolerance " << worst->tolerance << ")\n";
  return kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned sensing network: jointly optimised illumination, pupil and classifier"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool with_dataset = true) {
    sub->add_option("-c,--config", common.config_path, "TOML config (built-in desk defaults if omitted)")
        ->check(CLI::ExistingFile);
    if (with_dataset) sub->add_option("--dataset", common.dataset, "dataset directory (overrides paths.dataset)");
    sub->add_flag("--force", common.force, "overwrite existing outputs and skip consistency guards");
  };

  std::string out;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic triangle/rectangle dataset");
  add_common(gen, false);
  gen->add_option("-o,--out", out, "output directory (default paths.dataset)");

  std::string regime;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  auto* train = app.add_subcommand("train", "train one regime with one seed");
  add_common(train);
  train->add_option("-r,--regime", regime, "DO, PO, IO or PIO")->required();
  train->add_option("--seed", seed, "seed (default train.seed)");
  train->add_option("--epochs", epochs, "override train.epochs")->check(CLI::PositiveNumber);
  train->add_option("-o,--out", out, "run directory (default <paths.output>/train/<REGIME>-seed<k>)");

  std::vector<std::string> regimes;
  std::optional<std::size_t> seeds, workers;
  std::size_t stop_after = 0;
  auto* sweep = app.add_subcommand("sweep", "train every regime over several seeds and aggregate");
  add_common(sweep);
  sweep->add_option("-r,--regimes", regimes, "regimes to run, e.g. DO,PIO (default sweep.regimes)")->delimiter(',');
  sweep->add_option("--seeds", seeds, "override sweep.n_seeds");
  sweep->add_option("--epochs", epochs, "override train.epochs")->check(CLI::PositiveNumber);
  sweep->add_option("--workers", workers, "concurrent runs (default sweep.workers)")->check(CLI::PositiveNumber);
  sweep->add_option("-o,--out", out, "output directory (default paths.output)");
  sweep->add_option("--stop-after", stop_after, "stop after N newly trained runs (testing hook)")->group("");

  std::string run_dir, split = "test", out_file;
  auto* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval);
  eval->add_option("run", run_dir, "run directory (holding checkpoint/) or checkpoint directory")->required();
  eval->add_option("--split", split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("-o,--out", out_file, "also write the JSON report here");

  std::size_t examples = 4;
  auto* exp = app.add_subcommand("export-patterns", "export pupils, LED weights and example images");
  add_common(exp);
  exp->add_option("run", run_dir, "sweep directory or single run directory")->required();
  exp->add_option("-o,--out", out, "output directory (default <run>/patterns)");
  exp->add_option("--examples", examples, "example detector images per class (0 skips the dataset)");

  std::size_t instances = 20;
  std::uint64_t gc_seed = 0;
  double fault_scale = 1.0;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  add_common(gc, false);
  gc->add_option("--instances", instances, "random micro instances")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "instance seed");
  gc->add_option("--inject-grad-scale", fault_scale, "scale analytic gradients (testing hook)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*train) return cmd_train(common, regime, seed, epochs, out);
    if (*sweep) return cmd_sweep(common, regimes, seeds, epochs, workers, out, stop_after);
    if (*eval) return cmd_eval(common, run_dir, split, out_file);
    if (*exp) return cmd_export(common, run_dir, out, examples);
    if (*gc) return cmd_gradcheck(common, instances, gc_seed, fault_scale);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
