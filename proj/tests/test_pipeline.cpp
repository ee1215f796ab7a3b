#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include <unistd.h>

#include "faultid/pipeline.hpp"

using namespace faultid;
using namespace faultid::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("faultid_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// A configuration small enough to run the whole workflow in seconds.
json tiny_config(const fs::path& out) {
  return {{"seed", 5},
          {"output_dir", out.string()},
          {"model", {{"default_segments", 6}}},
          {"sweep", {{"modes", {2, 4}}, {"points_per_band", 2}, {"lower_fraction", 0.01}, {"upper_fraction", 0.005}}},
          {"training", {{"scenarios", 30}, {"noise_level", 0.0015}}},
          {"calibration", {{"samples", 40}}},
          {"ensemble", {{"runs", 3}, {"objectives", 2}, {"budget", 300}}},
          {"truth", {{"segment", 3}, {"severity", 0.05}}}};
}

void write(const fs::path& p, const std::string& s) { csv::write_file(p, s); }

}  // namespace

TEST(Config, DefaultsValidate) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.frequency_count(), 40u);
  EXPECT_EQ(c.training.scenarios, 270u);
  EXPECT_EQ(c.ensemble.runs, 30u);
  EXPECT_EQ(c.ensemble.objectives, 10u);
  EXPECT_FALSE(c.truth.has_value());
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(config_from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(config_from_json({{"ensemble", {{"runz", 3}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"training", {{"scenarios", 10}, {"noise", 0.1}}}}), ConfigError);
  try {
    config_from_json({{"sweep", {{"mode", {1}}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sweep.mode"), std::string::npos);
  }
}

TEST(Config, InvalidValuesAndMissingPaths) {
  EXPECT_THROW(config_from_json({{"ensemble", {{"runs", 0}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"ensemble", {{"objectives", 41}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"training", {{"scenarios", "many"}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"model_path", "/nonexistent/model.json"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"truth", {{"segment", 30}, {"severity", 0.05}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"truth", {{"segment", 3}}}}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ModelPathResolvesAgainstConfigDirectory) {
  const auto dir = scratch("modelpath");
  write(dir / "m.json", sim::to_json(sim::default_model(7)).dump());
  write(dir / "c.json", json{{"model_path", "m.json"}, {"sweep", {{"modes", {2, 3}}}}, {"ensemble", {{"objectives", 5}}}}.dump());
  EXPECT_EQ(load_config(dir / "c.json").model.n_segments(), 7u);
}

TEST(Simulate, NeedsTruthAndIsReproducible) {
  const auto dir = scratch("simulate");
  auto j = tiny_config(dir);
  j.erase("truth");
  EXPECT_THROW(cmd_simulate(config_from_json(j)), ConfigError);
  EXPECT_FALSE(cmd_simulate(config_from_json(j), false).wrote_measurement);

  const auto c = config_from_json(tiny_config(dir));
  const auto r = cmd_simulate(c);
  EXPECT_EQ(r.frequencies, 4u);
  const Layout l{dir};
  const auto training = csv::read_text(l.training());
  const auto meas = csv::read_text(l.measurement());
  fs::remove(l.training());
  fs::remove(l.measurement());
  cmd_simulate(c);
  EXPECT_EQ(csv::read_text(l.training()), training);
  EXPECT_EQ(csv::read_text(l.measurement()), meas);
  EXPECT_EQ(read_training_csv(l.training()).front().size(), 30u);
}

TEST(Simulate, NoiseFreeHealthyMeasurementIsZero) {
  auto j = tiny_config(scratch("zero"));
  j["training"]["noise_level"] = 0.0;
  j["truth"]["severity"] = 0.0;
  const auto out = simulate(config_from_json(j));
  ASSERT_TRUE(out.measurement);
  for (const auto& row : out.measurement->rows) EXPECT_EQ(row.delta_y, 0.0);
}

TEST(Simulate, DefaultTrainingFileShape) {
  PipelineConfig c;
  c.truth = TruthSpec{};
  const auto out = simulate(c);
  ASSERT_EQ(out.training.size(), 40u);
  for (const auto& t : out.training) EXPECT_EQ(t.size(), 270u);
}

TEST(Workflow, EndToEndOnTinyConfig) {
  const auto dir = scratch("workflow");
  const auto c = config_from_json(tiny_config(dir));
  const Layout l{dir};
  cmd_simulate(c);
  const auto cal = cmd_calibrate(c, l.training());
  EXPECT_EQ(cal.fitted, 4u);
  EXPECT_TRUE(cal.failures.empty());
  EXPECT_TRUE(fs::exists(l.surfaces() / "surface_001.json"));
  EXPECT_TRUE(fs::exists(l.diagnostics()));

  const auto surfaces = load_surfaces(l.surfaces());
  ASSERT_EQ(surfaces.size(), 4u);
  const auto again = gp::load_surface(l.surfaces() / "surface_003.json");
  for (int s = 1; s <= 6; ++s) {
    const FaultInput q{static_cast<double>(s), 0.013 * s};
    const double a = surfaces[2].predict_mean(q), b = again.predict_mean(q);
    EXPECT_LE(std::abs(a - b), 1e-12 * std::max(std::abs(a), 1e-300));
  }

  const auto id = cmd_identify(c, l.surfaces(), l.measurement());
  EXPECT_EQ(id.runs.size(), 3u);
  for (std::size_t r = 1; r <= 3; ++r) EXPECT_TRUE(fs::exists(l.archives() / Layout::archive_name(r)));
  for (const char* f : {"voting.csv", "range_voting.csv", "partial_voting.csv", "partial_range_voting.csv",
                        "majority_baseline.csv", "tallies.json"}) {
    EXPECT_TRUE(fs::exists(l.tallies() / f)) << f;
  }
  ASSERT_TRUE(id.truth);
  const auto doc = json::parse(csv::read_text(l.tallies_json()));
  EXPECT_EQ(doc["metadata"]["M"], 3);
  EXPECT_EQ(doc["metadata"]["runs"].size(), 3u);
  EXPECT_TRUE(doc.contains("validation"));

  const auto tallies = csv::read_text(l.tallies() / "voting.csv");
  fs::remove_all(l.archives());
  fs::remove_all(l.tallies());
  cmd_identify(c, l.surfaces(), l.measurement());
  EXPECT_EQ(csv::read_text(l.tallies() / "voting.csv"), tallies);

  const auto rep = cmd_report(l.tallies_json(), dir, 5);
  EXPECT_TRUE(rep.baseline_included);
  EXPECT_TRUE(fs::exists(l.report()));
  EXPECT_TRUE(fs::exists(l.score_grid()));
  // At most five rows per panel, percentages summing to at most 100.
  const auto rows = csv::read_file(l.report_csv(), {"panel", "rank", "segment", "severity_or_range", "score", "percentage"});
  std::map<std::string, std::pair<int, double>> per_panel;
  for (const auto& row : rows) {
    if (row.fields[0] == "majority_baseline") continue;
    auto& p = per_panel[row.fields[0]];
    ++p.first;
    p.second += csv::to_double(row, 5);
  }
  EXPECT_EQ(per_panel.size(), 4u);
  for (const auto& [panel, p] : per_panel) {
    EXPECT_LE(p.first, 5);
    EXPECT_LE(p.second, 100.0 + 1e-9);
  }
}

TEST(Workflow, SingleRunTallyEqualsKeyedArchive) {
  const auto dir = scratch("single");
  auto j = tiny_config(dir);
  j["ensemble"]["runs"] = 1;
  j["ensemble"]["objectives"] = 4;
  const auto c = config_from_json(j);
  const auto sim_out = simulate(c);
  const auto surfaces = gp::calibrate_all(sim_out.training, c.calibration.kernel, c.mcmc_config());
  const auto id = identify(c, surfaces, *sim_out.measurement);
  const auto keys = voting::keyed(id.runs.front().archive);
  ASSERT_EQ(id.voting.scores.size(), keys.size());
  for (const auto& k : keys) EXPECT_DOUBLE_EQ(id.voting.score(k), 1.0 / static_cast<double>(keys.size()));
}

TEST(Identify, MisalignedFrequenciesAreReported) {
  const auto dir = scratch("align");
  const auto c = config_from_json(tiny_config(dir));
  const auto sim_out = simulate(c);
  const auto surfaces = gp::calibrate_all(sim_out.training, c.calibration.kernel, c.mcmc_config());
  auto m = *sim_out.measurement;
  m.rows[2].omega *= 1.001;
  try {
    identify(c, surfaces, m);
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("freq 3"), std::string::npos);
  }
  m.rows.pop_back();
  EXPECT_THROW(identify(c, surfaces, m), AlignmentError);
}

TEST(Calibrate, ParseErrorsAndIsolatedFailures) {
  const auto dir = scratch("calibrate");
  const auto c = config_from_json(tiny_config(dir));
  write(dir / "broken.csv", "freq_index,omega,alpha_location,alpha_severity,delta_y\n1,10,1,0.01,x\n");
  try {
    cmd_calibrate(c, dir / "broken.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  auto sets = simulate(c).training;
  sets[1].outputs[0] = std::nan("");
  write(dir / "nan.csv", training_sets_to_csv(sets));
  const auto r = cmd_calibrate(c, dir / "nan.csv");
  EXPECT_EQ(r.fitted, 3u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_NE(r.failures[0].find("frequency 2"), std::string::npos);
  EXPECT_FALSE(fs::exists(Layout{dir}.surfaces() / "surface_002.json"));
}

TEST(Report, MissingBaselineIsOmittedWithNotice) {
  json entry{{"segment", 3}, {"label", "0.0500"}, {"severity", 0.05}, {"score", 1.0}, {"percentage", 50.0}};
  json tally{{"total_available", 2.0}, {"qualifying_runs", {1, 2}}, {"entries", json::array({entry})}};
  json doc{{"voting", tally}};
  std::string grid;
  const auto r = render_report(doc, 5, nullptr, &grid);
  EXPECT_FALSE(r.baseline_included);
  EXPECT_NE(r.markdown.find("Baseline not available"), std::string::npos);
  EXPECT_NE(r.markdown.find("| 1 | 3 | 0.0500 | 1.0000 | 50.000% |"), std::string::npos);
  EXPECT_NE(grid.find("3,0.05,1"), std::string::npos);
}

#ifdef FAULTID_CLI_PATH
TEST(Cli, StageTaggedFailuresAndSuccess) {
  const auto dir = scratch("cli");
  write(dir / "bad.json", json{{"bogus", 1}}.dump());
  const std::string cli = FAULTID_CLI_PATH;
  const auto log = (dir / "log.txt").string();
  auto run = [&](const std::string& args) { return std::system((cli + " " + args + " > " + log + " 2>&1").c_str()); };
  EXPECT_NE(run("simulate --config " + (dir / "bad.json").string()), 0);
  EXPECT_NE(csv::read_text(log).find("[simulate]"), std::string::npos);

  write(dir / "ok.json", tiny_config(dir / "out").dump());
  EXPECT_EQ(run("simulate --config " + (dir / "ok.json").string() + " --seed 9"), 0);
  EXPECT_EQ(run("calibrate --config " + (dir / "ok.json").string() + " --seed 9"), 0);
  EXPECT_EQ(run("identify --config " + (dir / "ok.json").string() + " --seed 9 --threads 2"), 0);
  EXPECT_EQ(run("report --config " + (dir / "ok.json").string() + " -k 3"), 0);
  EXPECT_NE(csv::read_text(log).find("I. Voting score"), std::string::npos);
  EXPECT_NE(run("identify --config " + (dir / "ok.json").string() + " --measurement /nonexistent.csv"), 0);
  EXPECT_NE(csv::read_text(log).find("[identify]"), std::string::npos);
}
#endif
