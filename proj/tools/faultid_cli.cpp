// Command-line front end: simulate | calibrate | identify | report.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "faultid/pipeline.hpp"

namespace {

using faultid::pipeline::PipelineConfig;
namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config_path, "JSON configuration file");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Override the master seed");
  cmd->add_option("--out", c.out, "Override the output directory");
  cmd->add_option("--threads", c.threads, "Worker threads");
}

PipelineConfig load(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : faultid::pipeline::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output_dir = *c.out;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

int fail(const std::string& stage, const std::exception& e) {
  std::cerr << "[" << stage << "] error: " << e.what() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-fault identification from admittance changes"};
  app.require_subcommand(1);

  Common sim_opts, cal_opts, id_opts, rep_opts;
  bool no_truth = false;
  auto* simulate = app.add_subcommand("simulate", "Generate training data and a measurement for the configured truth");
  add_common(simulate, sim_opts);
  simulate->add_flag("--no-truth", no_truth, "Write only the training data");

  std::string training_path;
  auto* calibrate = app.add_subcommand("calibrate", "Fit one response surface per frequency");
  add_common(calibrate, cal_opts);
  calibrate->add_option("--training", training_path, "Training CSV (default: <out>/training.csv)");

  std::string surfaces_dir, measurement_path;
  auto* identify = app.add_subcommand("identify", "Run the annealer ensemble and tally votes");
  add_common(identify, id_opts);
  identify->add_option("--surfaces", surfaces_dir, "Surface directory (default: <out>/surfaces)");
  identify->add_option("--measurement", measurement_path, "Measurement CSV (default: <out>/measurement.csv)");

  std::string tallies_path;
  std::optional<std::size_t> top_k;
  auto* report = app.add_subcommand("report", "Render top-k tables and plot data");
  add_common(report, rep_opts, false);
  report->add_option("--tallies", tallies_path, "tallies.json (default: <out>/tallies/tallies.json)");
  report->add_option("-k,--top", top_k, "Rows per panel");

  CLI11_PARSE(app, argc, argv);

  namespace pl = faultid::pipeline;
  if (*simulate) {
    try {
      const auto cfg = load(sim_opts);
      const auto r = pl::cmd_simulate(cfg, !no_truth);
      std::cout << "simulate: " << r.frequencies << " frequencies x " << r.scenarios << " scenarios -> "
                << pl::Layout{cfg.output_dir}.training().string() << "\n";
      if (r.wrote_measurement) std::cout << "simulate: measurement -> " << pl::Layout{cfg.output_dir}.measurement().string() << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail("simulate", e);
    }
  }
  if (*calibrate) {
    try {
      const auto cfg = load(cal_opts);
      const fs::path training = training_path.empty() ? pl::Layout{cfg.output_dir}.training() : fs::path(training_path);
      const auto r = pl::cmd_calibrate(cfg, training);
      std::cout << "calibrate: " << r.fitted << " surfaces -> " << pl::Layout{cfg.output_dir}.surfaces().string() << "\n";
      for (const auto& f : r.failures) std::cerr << "[calibrate] fit failed: " << f << "\n";
      return r.failures.empty() ? 0 : 2;
    } catch (const std::exception& e) {
      return fail("calibrate", e);
    }
  }
  if (*identify) {
    try {
      const auto cfg = load(id_opts);
      const pl::Layout layout{cfg.output_dir};
      const auto id = pl::cmd_identify(cfg, surfaces_dir.empty() ? layout.surfaces() : fs::path(surfaces_dir),
                                       measurement_path.empty() ? layout.measurement() : fs::path(measurement_path));
      std::cout << "identify: " << id.runs.size() << " runs -> " << layout.tallies().string() << "\n";
      if (id.truth) {
        const auto& t = *id.truth;
        auto show = [](std::size_t r) { return r ? std::to_string(r) : std::string("absent"); };
        std::cout << "identify: true key " << t.key.segment << "," << t.key.severity_label() << " rank voting "
                  << show(t.voting) << ", range " << show(t.range_voting) << ", partial " << show(t.partial)
                  << ", partial range " << show(t.partial_range) << ", majority " << show(t.baseline) << "\n";
      }
      return 0;
    } catch (const std::exception& e) {
      return fail("identify", e);
    }
  }
  if (*report) {
    try {
      const auto cfg = load(rep_opts);
      const pl::Layout layout{cfg.output_dir};
      const fs::path tallies = tallies_path.empty() ? layout.tallies_json() : fs::path(tallies_path);
      const auto r = pl::cmd_report(tallies, cfg.output_dir, top_k.value_or(cfg.top_k));
      std::cout << r.markdown;
      if (!r.baseline_included) std::cerr << "[report] majority baseline missing; panel omitted\n";
      return 0;
    } catch (const std::exception& e) {
      return fail("report", e);
    }
  }
  return 0;
}
