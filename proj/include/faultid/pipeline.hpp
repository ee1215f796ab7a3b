#pragma once

// Configuration-driven workflow: simulate -> calibrate -> identify -> report.
// Each stage reads only the files written by earlier stages plus the config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "faultid/core.hpp"
#include "faultid/csv.hpp"
#include "faultid/emosa.hpp"
#include "faultid/gp.hpp"
#include "faultid/structure.hpp"
#include "faultid/training_set.hpp"
#include "faultid/voting.hpp"

namespace faultid::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct TrainingSpec {
  std::size_t scenarios = 270;
  double noise_level = 0.0015;
  double max_severity = 0.1;
  sim::ResponseChannel channel = sim::ResponseChannel::magnitude;
};

struct CalibrationSpec {
  gp::KernelKind kernel = gp::KernelKind::product_se;
  std::size_t samples = 2000;
  std::vector<double> step_sizes{};
  double prior_log_sd = 3.0;
};

struct EnsembleSpec {
  std::size_t runs = 30;
  std::size_t objectives = 10;
  double epsilon = 0.05;
  emosa::AnnealSchedule schedule{};
  double p_loc = 0.3;
  double step_fraction = 0.05;
  double f_floor = emosa::kDefaultFloor;
  int severity_digits = 4;
  int range_digits = 3;
};

struct TruthSpec {
  int segment = 13;
  double severity = 0.06;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  fs::path output_dir = "out";
  unsigned threads = 1;
  sim::StructuralModel model = sim::default_model();
  sim::BandSpec sweep{};
  TrainingSpec training{};
  CalibrationSpec calibration{};
  EnsembleSpec ensemble{};
  std::optional<TruthSpec> truth{};
  std::size_t top_k = 5;

  void validate() const {
    try {
      model.validate();
    } catch (const InputError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
    const auto n = static_cast<int>(model.n_segments());
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (sweep.points_per_band < 1 || sweep.modes.empty()) throw ConfigError("sweep needs modes and points_per_band >= 1");
    for (int m : sweep.modes) {
      if (m < 1 || m > n) throw ConfigError("sweep mode " + std::to_string(m) + " outside 1.." + std::to_string(n));
    }
    if (training.scenarios < 2) throw ConfigError("training.scenarios must be >= 2");
    if (!(training.noise_level >= 0.0)) throw ConfigError("training.noise_level must be >= 0");
    if (!(training.max_severity > 0.0 && training.max_severity <= 1.0)) {
      throw ConfigError("training.max_severity must lie in (0, 1]");
    }
    if (calibration.samples < 1) throw ConfigError("calibration.samples must be >= 1");
    if (!(calibration.prior_log_sd > 0.0)) throw ConfigError("calibration.prior_log_sd must be positive");
    for (double s : calibration.step_sizes) {
      if (!(s > 0.0)) throw ConfigError("calibration.step_sizes must be positive");
    }
    const std::size_t l = sweep.modes.size() * static_cast<std::size_t>(sweep.points_per_band);
    try {
      voting::EnsembleConfig{ensemble.runs, ensemble.objectives, seed, ensemble.severity_digits,
                             ensemble.range_digits}
          .validate(l);
      ensemble.schedule.validate();
    } catch (const InputError& e) {
      throw ConfigError(std::string("ensemble: ") + e.what());
    }
    if (ensemble.schedule.total_budget < 1) throw ConfigError("ensemble.budget must be >= 1");
    if (!(ensemble.epsilon > 0.0)) throw ConfigError("ensemble.epsilon must be positive");
    if (!(ensemble.p_loc >= 0.0 && ensemble.p_loc <= 1.0)) throw ConfigError("ensemble.p_loc must lie in [0, 1]");
    if (!(ensemble.step_fraction > 0.0)) throw ConfigError("ensemble.step_fraction must be positive");
    if (!(ensemble.f_floor > 0.0)) throw ConfigError("ensemble.f_floor must be positive");
    if (truth) {
      if (truth->segment < 1 || truth->segment > n) throw ConfigError("truth.segment outside the model");
      if (!(truth->severity >= 0.0 && truth->severity < 1.0)) throw ConfigError("truth.severity must lie in [0, 1)");
    }
    if (top_k < 1) throw ConfigError("report.top_k must be >= 1");
  }

  std::size_t frequency_count() const { return sweep.modes.size() * static_cast<std::size_t>(sweep.points_per_band); }

  emosa::AnnealOptions anneal_options() const {
    emosa::AnnealOptions o;
    o.epsilon = ensemble.epsilon;
    o.f_floor = ensemble.f_floor;
    o.domain = {static_cast<int>(model.n_segments()), training.max_severity};
    o.moves = emosa::MoveParams::for_domain(o.domain, ensemble.p_loc, ensemble.step_fraction);
    return o;
  }

  voting::EnsembleConfig ensemble_config() const {
    return {ensemble.runs, ensemble.objectives, derive_seed(seed, "ensemble"), ensemble.severity_digits,
            ensemble.range_digits};
  }

  gp::McmcConfig mcmc_config() const {
    return {calibration.samples, calibration.step_sizes, derive_seed(seed, "calibration"), calibration.prior_log_sd};
  }
};

namespace detail {

/// Rejects keys outside `allowed`; `where` prefixes the message.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + (where.empty() ? std::string(key) : where + "." + key) + "'");
  }
}

}  // namespace detail

/// Parses a config document. Relative paths resolve against `base_dir`.
inline PipelineConfig config_from_json(const json& j, const fs::path& base_dir = ".") {
  using detail::read;
  detail::check_keys(j,
                     {"seed", "output_dir", "threads", "model", "model_path", "sweep", "training", "calibration",
                      "ensemble", "truth", "report"},
                     "");
  PipelineConfig c;
  read(j, "seed", c.seed, "");
  std::string out_dir = c.output_dir.string();
  read(j, "output_dir", out_dir, "");
  c.output_dir = fs::path(out_dir).is_absolute() ? fs::path(out_dir) : base_dir / out_dir;
  read(j, "threads", c.threads, "");

  if (j.contains("model") && j.contains("model_path")) throw ConfigError("give either model or model_path, not both");
  if (j.contains("model")) {
    const auto& m = j["model"];
    if (m.is_string()) {
      if (m.get<std::string>() != "default") throw ConfigError("model must be \"default\" or an object");
    } else if (m.is_object() && m.contains("default_segments")) {
      detail::check_keys(m, {"default_segments"}, "model");
      std::size_t n = 25;
      read(m, "default_segments", n, "model");
      if (n < 1) throw ConfigError("model.default_segments must be >= 1");
      c.model = sim::default_model(n);
    } else {
      c.model = sim::model_from_json(m);
    }
  }
  if (j.contains("model_path")) {
    fs::path p = j["model_path"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    if (!fs::exists(p)) throw ConfigError("model_path does not exist: " + p.string());
    try {
      c.model = sim::model_from_json(json::parse(csv::read_text(p)));
    } catch (const json::parse_error& e) {
      throw ConfigError("cannot parse " + p.string() + ": " + e.what());
    }
  }

  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::check_keys(s, {"modes", "points_per_band", "lower_fraction", "upper_fraction"}, "sweep");
    read(s, "modes", c.sweep.modes, "sweep");
    read(s, "points_per_band", c.sweep.points_per_band, "sweep");
    read(s, "lower_fraction", c.sweep.lower_fraction, "sweep");
    read(s, "upper_fraction", c.sweep.upper_fraction, "sweep");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    detail::check_keys(t, {"scenarios", "noise_level", "max_severity", "channel"}, "training");
    read(t, "scenarios", c.training.scenarios, "training");
    read(t, "noise_level", c.training.noise_level, "training");
    read(t, "max_severity", c.training.max_severity, "training");
    if (t.contains("channel")) {
      try {
        c.training.channel = sim::parse_channel(t["channel"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("training.channel: ") + e.what());
      }
    }
  }
  if (j.contains("calibration")) {
    const auto& t = j["calibration"];
    detail::check_keys(t, {"kernel", "samples", "step_sizes", "prior_log_sd"}, "calibration");
    if (t.contains("kernel")) {
      try {
        c.calibration.kernel = gp::parse_kernel(t["kernel"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("calibration.kernel: ") + e.what());
      }
    }
    read(t, "samples", c.calibration.samples, "calibration");
    read(t, "step_sizes", c.calibration.step_sizes, "calibration");
    read(t, "prior_log_sd", c.calibration.prior_log_sd, "calibration");
  }
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    detail::check_keys(e,
                       {"runs", "objectives", "epsilon", "t_max", "t_min", "cooling_rate", "budget", "p_loc",
                        "step_fraction", "f_floor", "severity_digits", "range_digits"},
                       "ensemble");
    read(e, "runs", c.ensemble.runs, "ensemble");
    read(e, "objectives", c.ensemble.objectives, "ensemble");
    read(e, "epsilon", c.ensemble.epsilon, "ensemble");
    read(e, "t_max", c.ensemble.schedule.t_max, "ensemble");
    read(e, "t_min", c.ensemble.schedule.t_min, "ensemble");
    read(e, "cooling_rate", c.ensemble.schedule.cooling_rate, "ensemble");
    read(e, "budget", c.ensemble.schedule.total_budget, "ensemble");
    read(e, "p_loc", c.ensemble.p_loc, "ensemble");
    read(e, "step_fraction", c.ensemble.step_fraction, "ensemble");
    read(e, "f_floor", c.ensemble.f_floor, "ensemble");
    read(e, "severity_digits", c.ensemble.severity_digits, "ensemble");
    read(e, "range_digits", c.ensemble.range_digits, "ensemble");
  }
  if (j.contains("truth") && !j["truth"].is_null()) {
    const auto& t = j["truth"];
    detail::check_keys(t, {"segment", "severity"}, "truth");
    if (!t.contains("segment") || !t.contains("severity")) throw ConfigError("truth needs segment and severity");
    TruthSpec truth;
    read(t, "segment", truth.segment, "truth");
    read(t, "severity", truth.severity, "truth");
    c.truth = truth;
  }
  if (j.contains("report")) {
    const auto& r = j["report"];
    detail::check_keys(r, {"top_k"}, "report");
    read(r, "top_k", c.top_k, "report");
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(csv::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Measurement file: freq_index,omega,delta_y_measured

struct MeasurementRow {
  std::size_t frequency_index = 0;
  double omega = 0.0;
  double delta_y = 0.0;
};

struct MeasurementFile {
  std::vector<MeasurementRow> rows;

  static const std::vector<std::string>& header() {
    static const std::vector<std::string> h{"freq_index", "omega", "delta_y_measured"};
    return h;
  }

  std::string to_csv() const {
    std::ostringstream out;
    csv::write_row(out, header());
    for (const auto& r : rows) {
      csv::write_row(out, {std::to_string(r.frequency_index), format_double(r.omega), format_double(r.delta_y)});
    }
    return out.str();
  }

  static MeasurementFile read(const fs::path& path) {
    MeasurementFile m;
    for (const auto& row : csv::read_file(path, header())) {
      const auto idx = csv::to_int(row, 0);
      if (idx < 1) throw ParseError(path.string() + ": freq_index must be >= 1", row.line);
      m.rows.push_back({static_cast<std::size_t>(idx), csv::to_double(row, 1), csv::to_double(row, 2)});
    }
    std::sort(m.rows.begin(), m.rows.end(),
              [](const auto& a, const auto& b) { return a.frequency_index < b.frequency_index; });
    return m;
  }
};

/// Throws AlignmentError naming every offending frequency unless surfaces,
/// measurement rows and the configured sweep agree in count, index and omega.
inline void check_alignment(const std::vector<gp::GpSurface>& surfaces, const MeasurementFile& measurement,
                            const sim::FrequencySweep& sweep) {
  std::ostringstream problems;
  if (surfaces.size() != measurement.rows.size() || surfaces.size() != sweep.size()) {
    problems << "counts differ: " << surfaces.size() << " surfaces, " << measurement.rows.size()
             << " measurement rows, " << sweep.size() << " sweep frequencies";
  } else {
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };
    std::vector<std::string> offenders;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
      const auto& s = surfaces[i];
      const auto& m = measurement.rows[i];
      if (s.frequency_index() != i + 1 || m.frequency_index != i + 1 || !close(s.omega(), sweep.omegas[i]) ||
          !close(m.omega, sweep.omegas[i])) {
        std::ostringstream o;
        o << "freq " << i + 1 << " (surface " << s.frequency_index() << " at " << format_double(s.omega())
          << ", measurement " << m.frequency_index << " at " << format_double(m.omega) << ", sweep "
          << format_double(sweep.omegas[i]) << ")";
        offenders.push_back(o.str());
      }
    }
    for (std::size_t i = 0; i < offenders.size(); ++i) problems << (i ? "; " : "") << offenders[i];
  }
  if (!problems.str().empty()) throw AlignmentError("frequency mismatch: " + problems.str());
}

// ---------------------------------------------------------------------------
// In-memory stages

struct SimulationOutput {
  sim::FrequencySweep sweep;
  std::vector<TrainingSet> training;
  std::optional<MeasurementFile> measurement;
};

inline SimulationOutput simulate(const PipelineConfig& c, bool require_truth = true) {
  c.validate();
  if (require_truth && !c.truth) throw ConfigError("simulate needs a truth scenario in the config");
  SimulationOutput out;
  out.sweep = sim::make_sweep(c.model, c.sweep);
  out.training = sim::sample_training_data(c.model, out.sweep, c.training.scenarios, c.training.noise_level,
                                           derive_seed(c.seed, "training"),
                                           {c.training.max_severity, c.training.channel});
  if (c.truth) {
    const auto fault = sim::FaultScenario::single(c.model.n_segments(), c.truth->segment, c.truth->severity);
    const auto values = sim::measure(c.model, out.sweep, fault, c.training.noise_level,
                                     derive_seed(c.seed, "measurement"), c.training.channel);
    MeasurementFile m;
    for (std::size_t i = 0; i < values.size(); ++i) m.rows.push_back({i + 1, out.sweep.omegas[i], values[i]});
    out.measurement = std::move(m);
  }
  return out;
}

/// J_i(x) = |surface_i(x) - measured_i|, normalized by the spread of
/// |training output - measured_i| over the calibration data.
class MismatchObjectives {
 public:
  MismatchObjectives(const std::vector<gp::GpSurface>& surfaces, const MeasurementFile& measurement)
      : surfaces_(&surfaces) {
    if (surfaces.size() != measurement.rows.size()) throw AlignmentError("surface and measurement counts differ");
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
      const double m = measurement.rows[i].delta_y;
      measured_.push_back(m);
      double r = 0.0;
      for (double y : surfaces[i].training().outputs) r = std::max(r, std::abs(y - m));
      ranges_.push_back(r > 0.0 ? r : 1.0);
    }
  }

  std::size_t size() const noexcept { return measured_.size(); }

  double value(std::size_t i, const emosa::Scenario& x) const {
    return std::abs((*surfaces_)[i].predict_mean({static_cast<double>(x.segment), x.severity}) - measured_[i]);
  }

  emosa::ObjectiveSet subset(std::span<const std::size_t> indices) const {
    std::vector<emosa::ObjectiveSet::Evaluator> evals;
    std::vector<double> ranges;
    for (std::size_t i : indices) {
      if (i >= size()) throw InputError("objective index out of range");
      evals.push_back([this, i](const emosa::Scenario& x) { return value(i, x); });
      ranges.push_back(ranges_[i]);
    }
    return emosa::ObjectiveSet(std::move(evals), std::move(ranges));
  }

 private:
  const std::vector<gp::GpSurface>* surfaces_;
  std::vector<double> measured_;
  std::vector<double> ranges_;
};

struct TruthRanks {
  voting::SolutionKey key;
  voting::RangeKey range;
  std::size_t voting = 0, range_voting = 0, partial = 0, partial_range = 0, baseline = 0;  // 0 = absent
};

struct Identification {
  std::vector<voting::EnsembleRun> runs;
  voting::VotingTally<voting::SolutionKey> voting;
  voting::VotingTally<voting::RangeKey> range_voting;
  voting::VotingTally<voting::SolutionKey> partial;
  voting::VotingTally<voting::RangeKey> partial_range;
  voting::OccurrenceCounts baseline;
  std::optional<TruthRanks> truth;
};

inline Identification identify(const PipelineConfig& c, const std::vector<gp::GpSurface>& surfaces,
                               const MeasurementFile& measurement) {
  c.validate();
  check_alignment(surfaces, measurement, sim::make_sweep(c.model, c.sweep));
  const MismatchObjectives objectives(surfaces, measurement);
  Identification out;
  out.runs = voting::run_ensemble(
      objectives.size(), c.ensemble_config(), c.ensemble.schedule, c.anneal_options(),
      [&](std::span<const std::size_t> idx) { return objectives.subset(idx); }, c.threads);
  const auto keyed = voting::keyed(out.runs, c.ensemble.severity_digits);
  const auto digits = c.ensemble.range_digits;
  out.voting = voting::voting_score(keyed);
  out.range_voting = voting::range_voting_score(keyed, digits);
  out.partial = voting::partial_voting_score(keyed);
  out.partial_range = voting::partial_range_voting_score(keyed, digits);
  out.baseline = voting::majority_vote_baseline(keyed);
  if (c.truth) {
    TruthRanks t;
    t.key = voting::SolutionKey::from(c.truth->segment, c.truth->severity, c.ensemble.severity_digits);
    t.range = voting::RangeKey::from(t.key, digits);
    t.voting = voting::rank_of(out.voting, t.key);
    t.range_voting = voting::rank_of(out.range_voting, t.range);
    t.partial = voting::rank_of(out.partial, t.key);
    t.partial_range = voting::rank_of(out.partial_range, t.range);
    const auto all = voting::rank_report(out.baseline, std::max<std::size_t>(1, out.baseline.counts.size()));
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].first == t.key) t.baseline = i + 1;
    }
    out.truth = t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// File layout

struct Layout {
  fs::path root;

  fs::path training() const { return root / "training.csv"; }
  fs::path measurement() const { return root / "measurement.csv"; }
  fs::path model() const { return root / "model.json"; }
  fs::path surfaces() const { return root / "surfaces"; }
  fs::path diagnostics() const { return root / "calibration_diagnostics.csv"; }
  fs::path archives() const { return root / "archives"; }
  fs::path tallies() const { return root / "tallies"; }
  fs::path tallies_json() const { return tallies() / "tallies.json"; }
  fs::path report() const { return root / "report.md"; }
  fs::path report_csv() const { return root / "report_tables.csv"; }
  fs::path score_grid() const { return root / "score_grid.csv"; }

  static std::string surface_name(std::size_t frequency_index) {
    std::ostringstream o;
    o << "surface_" << std::setw(3) << std::setfill('0') << frequency_index << ".json";
    return o.str();
  }
  static std::string archive_name(std::size_t run) {
    std::ostringstream o;
    o << "run_" << std::setw(3) << std::setfill('0') << run << ".csv";
    return o.str();
  }
};

/// Every surface_*.json in `dir`, ordered by frequency index.
inline std::vector<gp::GpSurface> load_surfaces(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("surface directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("surface_") && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (files.empty()) throw InputError("no surfaces in " + dir.string());
  std::vector<gp::GpSurface> surfaces;
  for (const auto& f : files) surfaces.push_back(gp::load_surface(f));
  std::sort(surfaces.begin(), surfaces.end(),
            [](const auto& a, const auto& b) { return a.frequency_index() < b.frequency_index(); });
  return surfaces;
}

// ---------------------------------------------------------------------------
// Commands

struct SimulateResult {
  std::size_t frequencies = 0;
  std::size_t scenarios = 0;
  bool wrote_measurement = false;
};

inline SimulateResult cmd_simulate(const PipelineConfig& c, bool require_truth = true) {
  const auto sim_out = simulate(c, require_truth);
  const Layout out{c.output_dir};
  csv::write_file(out.training(), training_sets_to_csv(sim_out.training));
  csv::write_file(out.model(), sim::to_json(c.model).dump(2) + "\n");
  if (sim_out.measurement) csv::write_file(out.measurement(), sim_out.measurement->to_csv());
  return {sim_out.sweep.size(), c.training.scenarios, sim_out.measurement.has_value()};
}

struct CalibrateResult {
  std::size_t fitted = 0;
  std::vector<std::string> failures;
};

/// Fits and persists every surface it can; failures are listed in the result
/// and the remaining surfaces are still written.
inline CalibrateResult cmd_calibrate(const PipelineConfig& c, const fs::path& training_csv) {
  c.validate();
  const auto sets = read_training_csv(training_csv);
  if (sets.empty()) throw InputError(training_csv.string() + " holds no training rows");
  const Layout out{c.output_dir};
  auto outcomes = gp::calibrate_each(sets, c.calibration.kernel, c.mcmc_config(), c.threads);
  CalibrateResult result;
  std::vector<gp::GpSurface> fitted;
  fs::create_directories(out.surfaces());
  for (auto& o : outcomes) {
    if (o.surface) {
      gp::save_surface(*o.surface, out.surfaces() / Layout::surface_name(o.surface->frequency_index()));
      fitted.push_back(std::move(*o.surface));
    } else {
      result.failures.push_back(o.error);
    }
  }
  csv::write_file(out.diagnostics(), gp::diagnostics_csv(fitted));
  result.fitted = fitted.size();
  return result;
}

inline json tallies_document(const PipelineConfig& c, const Identification& id) {
  json runs = json::array();
  for (const auto& r : id.runs) {
    runs.push_back({{"run", r.run},
                    {"anneal_seed", r.anneal_seed},
                    {"objectives", r.objective_indices},
                    {"archive_size", r.archive.size()}});
  }
  json meta{{"master_seed", c.seed},
            {"M", c.ensemble.runs},
            {"N", c.ensemble.objectives},
            {"l", c.frequency_count()},
            {"epsilon", c.ensemble.epsilon},
            {"budget", c.ensemble.schedule.total_budget},
            {"severity_digits", c.ensemble.severity_digits},
            {"range_digits", c.ensemble.range_digits},
            {"runs", std::move(runs)}};
  json doc{{"metadata", std::move(meta)},
           {"voting", voting::to_json(id.voting)},
           {"range_voting", voting::to_json(id.range_voting)},
           {"partial_voting", voting::to_json(id.partial)},
           {"partial_range_voting", voting::to_json(id.partial_range)},
           {"majority_baseline", voting::to_json(id.baseline)}};
  if (id.truth) {
    const auto& t = *id.truth;
    doc["validation"] = {{"segment", t.key.segment},
                         {"severity", t.key.severity_label()},
                         {"range", t.range.severity_label()},
                         {"rank_voting", t.voting},
                         {"rank_range_voting", t.range_voting},
                         {"rank_partial_voting", t.partial},
                         {"rank_partial_range_voting", t.partial_range},
                         {"rank_majority_baseline", t.baseline}};
  }
  return doc;
}

inline Identification cmd_identify(const PipelineConfig& c, const fs::path& surface_dir,
                                   const fs::path& measurement_csv) {
  const auto surfaces = load_surfaces(surface_dir);
  const auto measurement = MeasurementFile::read(measurement_csv);
  auto id = identify(c, surfaces, measurement);
  const Layout out{c.output_dir};
  for (const auto& r : id.runs) {
    csv::write_file(out.archives() / Layout::archive_name(r.run), emosa::archive_csv(r.archive));
  }
  csv::write_file(out.tallies() / "voting.csv", voting::tally_csv(id.voting));
  csv::write_file(out.tallies() / "range_voting.csv", voting::tally_csv(id.range_voting));
  csv::write_file(out.tallies() / "partial_voting.csv", voting::tally_csv(id.partial));
  csv::write_file(out.tallies() / "partial_range_voting.csv", voting::tally_csv(id.partial_range));
  csv::write_file(out.tallies() / "majority_baseline.csv", voting::baseline_csv(id.baseline));
  csv::write_file(out.tallies_json(), tallies_document(c, id).dump(2) + "\n");
  return id;
}

struct ReportResult {
  std::string markdown;
  bool baseline_included = false;
};

namespace detail {

struct Panel {
  const char* key;
  const char* title;
  const char* score_name;
};

inline constexpr Panel kPanels[] = {
    {"voting", "I. Voting score", "Voting score"},
    {"range_voting", "II. Voting score for severity range", "Voting score"},
    {"partial_voting", "III. Partial voting score", "Partial voting score"},
    {"partial_range_voting", "IV. Partial voting score for severity range", "Partial voting score"},
};

}  // namespace detail

/// Renders the top-k of every tally in `tallies_doc` as markdown plus a
/// long-form CSV of the same rows and a (segment, severity, score) grid.
inline ReportResult render_report(const json& doc, std::size_t k, std::string* tables_csv = nullptr,
                                  std::string* grid_csv = nullptr) {
  if (k < 1) throw InputError("k must be >= 1");
  std::ostringstream md, tab;
  csv::write_row(tab, {"panel", "rank", "segment", "severity_or_range", "score", "percentage"});
  md << "# Fault identification report\n\n";
  if (doc.contains("metadata")) {
    const auto& m = doc["metadata"];
    md << "M = " << m.value("M", 0) << " runs, N = " << m.value("N", 0) << " of l = " << m.value("l", 0)
       << " objectives, epsilon = " << format_double(m.value("epsilon", 0.0))
       << ", master seed " << m.value("master_seed", std::uint64_t{0}) << ".\n\n";
  }
  for (const auto& p : detail::kPanels) {
    md << "## " << p.title << "\n\n";
    if (!doc.contains(p.key)) {
      md << "_Tally not available._\n\n";
      continue;
    }
    const auto& t = doc[p.key];
    const double total = t.value("total_available", 0.0);
    md << "| Rank | Segment | Severity | " << p.score_name << " | Score % of " << format_double(total)
       << " overall |\n|---:|---:|---|---:|---:|\n";
    std::size_t rank = 0;
    for (const auto& e : t.at("entries")) {
      if (++rank > k) break;
      const auto label = e.at("label").get<std::string>();
      const double score = e.at("score").get<double>();
      const double pct = e.at("percentage").get<double>();
      md << "| " << rank << " | " << e.at("segment").get<int>() << " | " << label << " | " << format_fixed(score, 4)
         << " | " << voting::format_percentage(pct) << " |\n";
      csv::write_row(tab, {p.key, std::to_string(rank), std::to_string(e.at("segment").get<int>()), label,
                           format_double(score), format_double(pct)});
    }
    md << "\n";
  }
  ReportResult result;
  md << "## Majority voting baseline\n\n";
  if (doc.contains("majority_baseline") && !doc["majority_baseline"].at("entries").empty()) {
    result.baseline_included = true;
    md << "| Rank | Segment | Severity | Occurrences |\n|---:|---:|---|---:|\n";
    std::size_t rank = 0;
    for (const auto& e : doc["majority_baseline"]["entries"]) {
      if (++rank > k) break;
      md << "| " << rank << " | " << e.at("segment").get<int>() << " | " << e.at("label").get<std::string>()
         << " | " << e.at("occurrence").get<std::size_t>() << " |\n";
      csv::write_row(tab, {"majority_baseline", std::to_string(rank), std::to_string(e.at("segment").get<int>()),
                           e.at("label").get<std::string>(), std::to_string(e.at("occurrence").get<std::size_t>()),
                           ""});
    }
    md << "\n";
  } else {
    md << "_Baseline not available; panel omitted._\n\n";
  }
  if (doc.contains("validation")) {
    const auto& v = doc["validation"];
    auto rank = [&](const char* key) {
      const auto r = v.value(key, std::size_t{0});
      return r == 0 ? std::string("absent") : std::to_string(r);
    };
    md << "## Validation\n\nTrue scenario: segment " << v.value("segment", 0) << ", severity "
       << v.value("severity", std::string()) << " (range " << v.value("range", std::string()) << ").\n\n"
       << "| Heuristic | Rank of true key |\n|---|---:|\n"
       << "| Voting | " << rank("rank_voting") << " |\n"
       << "| Range voting | " << rank("rank_range_voting") << " |\n"
       << "| Partial voting | " << rank("rank_partial_voting") << " |\n"
       << "| Partial range voting | " << rank("rank_partial_range_voting") << " |\n"
       << "| Majority baseline | " << rank("rank_majority_baseline") << " |\n\n";
  }
  if (grid_csv && doc.contains("voting")) {
    std::ostringstream grid;
    csv::write_row(grid, {"segment", "severity", "score"});
    std::vector<std::tuple<int, double, double>> cells;
    for (const auto& e : doc["voting"]["entries"]) {
      cells.emplace_back(e.at("segment").get<int>(), e.at("severity").get<double>(), e.at("score").get<double>());
    }
    std::sort(cells.begin(), cells.end());
    for (const auto& [s, sev, score] : cells) {
      csv::write_row(grid, {std::to_string(s), format_double(sev), format_double(score)});
    }
    *grid_csv = grid.str();
  }
  if (tables_csv) *tables_csv = tab.str();
  result.markdown = md.str();
  return result;
}

inline ReportResult cmd_report(const fs::path& tallies_json, const fs::path& out_dir, std::size_t k) {
  if (!fs::exists(tallies_json)) throw InputError("tallies not found: " + tallies_json.string());
  json doc;
  try {
    doc = json::parse(csv::read_text(tallies_json));
  } catch (const json::parse_error& e) {
    throw InputError("cannot parse " + tallies_json.string() + ": " + e.what());
  }
  std::string tables, grid;
  auto result = render_report(doc, k, &tables, &grid);
  const Layout out{out_dir};
  csv::write_file(out.report(), result.markdown);
  csv::write_file(out.report_csv(), tables);
  if (!grid.empty()) csv::write_file(out.score_grid(), grid);
  return result;
}

}  // namespace faultid::pipeline
