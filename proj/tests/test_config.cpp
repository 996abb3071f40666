#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prunegcrn/config.hpp"
#include "prunegcrn/errors.hpp"
#include "prunegcrn/experiment.hpp"

using namespace prunegcrn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("prunegcrn_cfg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PRUNEGCRN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.data.synthetic_nodes = 6;
  c.data.synthetic_steps = 300;
  c.data.synthetic_drivers = 2;
  c.data.window = 4;
  c.data.horizon = 2;
  c.model.embed_dim = 2;
  c.model.units = 4;
  c.model.layers = 1;
  c.training.max_epochs = 2;
  c.training.batches_per_epoch = 2;
  c.training.finetune_epochs = 1;
  c.training.mask_warmup_epochs = 0;
  return c;
}

}  // namespace

TEST(Config, IniOverlay) {
  const auto dir = scratch("ini");
  {
    std::ofstream out(dir / "c.ini");
    out << "[model]\nunits = 16\ngate_mode = literal\n[training]\nlearning_rate = 0.003\n"
        << "[pruning]\nmethod = correlation\nfraction = 0.5\n[run]\nfractions = 0,0.5\n";
  }
  const auto c = load_config(dir / "c.ini");
  EXPECT_EQ(c.model.units, 16u);
  EXPECT_EQ(c.model.gate_mode, GateMode::kLiteral);
  EXPECT_DOUBLE_EQ(c.training.optimizer.learning_rate, 0.003);
  EXPECT_EQ(c.pruning.method, PruningMethod::kCorrelation);
  EXPECT_EQ(c.run.fractions, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(c.model.embed_dim, ExperimentConfig{}.model.embed_dim);
  fs::remove_all(dir);
}

TEST(Config, UnknownFieldIsNamed) {
  ExperimentConfig c;
  try {
    set_field(c, "model", "unitz", "3");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.unitz"), std::string::npos);
  }
  EXPECT_THROW(set_field(c, "model", "units", "many"), ConfigError);
  EXPECT_THROW(set_field(c, "nosuch", "units", "3"), ConfigError);
}

TEST(Config, ValidationNamesField) {
  ExperimentConfig c;
  c.pruning.fraction = 1.0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("fraction"), std::string::npos);
  }
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.model.units = 24;
  c.training.gamma = 0.35;
  c.run.seed = 123456789012345ull;
  c.run.methods = {PruningMethod::kRandom};
  c.analysis.p_value_mode = PValueMode::kNormal;
  c.data.vary_synthetic_seed = true;
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.run.seed, 123456789012345ull);
}

TEST(Config, DeriveSeedSpreads) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(Config, ListParsing) {
  EXPECT_EQ(parse_fraction_list("0, .25,0.9"), (std::vector<double>{0.0, 0.25, 0.9}));
  EXPECT_THROW(parse_fraction_list("0,1.0"), ConfigError);
  EXPECT_EQ(parse_method_list("learned,random").size(), 2u);
  EXPECT_THROW(parse_method("magic"), ConfigError);
}

TEST(Experiment, AggregateUsesSampleStd) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto a = aggregate(v);
  EXPECT_DOUBLE_EQ(a.mean, 2.5);
  EXPECT_NEAR(a.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(aggregate(std::vector<double>{7}).stddev, 0.0);
}

TEST(Experiment, PlanSharesSeedsAcrossCells) {
  ExperimentConfig c;
  c.run.runs = 3;
  c.run.seed = 11;
  const std::vector<PruningMethod> m{PruningMethod::kLearned, PruningMethod::kRandom};
  const std::vector<double> f{0.0, 0.5};
  const auto specs = plan_runs(c, m, f);
  ASSERT_EQ(specs.size(), 12u);
  for (const auto& s : specs) {
    EXPECT_EQ(s.seed, derive_seed(11, s.index));
    EXPECT_EQ(s.data_seed, c.data.synthetic_seed);
  }
  c.data.vary_synthetic_seed = true;
  for (const auto& s : plan_runs(c, m, f)) EXPECT_EQ(s.data_seed, c.data.synthetic_seed + s.index);
}

TEST(Experiment, RunJsonRoundTripAndReproducibility) {
  auto c = tiny_experiment();
  RunSpec spec{PruningMethod::kLearned, 0.5, 0, 42, 3};
  const auto r = run_single(c, spec);
  EXPECT_EQ(r.selected.size(), 3u);
  const auto j = run_to_json(r);
  const auto back = run_from_json(j);
  EXPECT_EQ(back.test.mae, r.test.mae);
  EXPECT_EQ(back.selected, r.selected);
  EXPECT_EQ(back.spec.seed, 42u);
  EXPECT_EQ(run_to_json(back), j);

  const auto report = make_report("train", c, {r});
  const auto dir = scratch("report");
  {
    std::ofstream out(dir / "r.json");
    out << report.dump(2);
  }
  const auto c2 = load_config(dir / "r.json");
  const auto runs = runs_from_report(report);
  ASSERT_EQ(runs.size(), 1u);
  const auto again = run_single(c2, runs[0].spec);
  EXPECT_EQ(again.test.mae, r.test.mae);
  fs::remove_all(dir);
}

TEST(Experiment, GridCsvShape) {
  auto c = tiny_experiment();
  c.training.max_epochs = 1;
  c.run.runs = 2;
  const std::vector<PruningMethod> m{PruningMethod::kRandom, PruningMethod::kCorrelation};
  const std::vector<double> f{0.0, 0.5, 0.75};
  const auto runs = run_all(c, plan_runs(c, m, f), 1);
  const auto dir = scratch("grid");
  write_grid_csv(dir / "grid.csv", runs, m, f);
  std::ifstream in(dir / "grid.csv");
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::size_t cells = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) ++cells;
    EXPECT_EQ(cells, 2 + f.size()) << line;
  }
  EXPECT_EQ(rows, m.size() * 3);
  fs::remove_all(dir);
}

TEST(Experiment, ZeroFractionGivesSameMaskForEveryMethod) {
  const auto ds = load_dataset(tiny_experiment(), 0);
  for (auto m : {PruningMethod::kLearned, PruningMethod::kRandom, PruningMethod::kCorrelation}) {
    EXPECT_EQ(initial_mask(m, ds, 0.0, 5, CorrelationMode::kAbsolute).binary(), std::vector<double>(6, 1.0));
  }
}

TEST(Cli, ExitCodesAreDistinctPerErrorClass) {
  const auto dir = scratch("cli");
  const std::string out = " --out-dir " + dir.string();
  EXPECT_EQ(run_cli("gen-synthetic --nodes 5 --steps 60 --drivers 2" + out), 0);
  EXPECT_EQ(run_cli("--bogus"), 2);
  EXPECT_EQ(run_cli("train --set model.unitz=3" + out), 3);
  EXPECT_EQ(run_cli("train --set pruning.fraction=1.0" + out), 3);
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.ini").string() + out), 3);
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "a,b\n1,2\n3,x\n";
  }
  EXPECT_EQ(run_cli("train --set data.series=" + (dir / "bad.csv").string() + out), 4);
  EXPECT_EQ(run_cli("gen-synthetic --nodes 3 --drivers 4" + out), 3);
  fs::remove_all(dir);
}

TEST(Cli, GeneratedFilesRoundTrip) {
  const auto dir = scratch("gen");
  ASSERT_EQ(run_cli("gen-synthetic --nodes 5 --steps 80 --drivers 2 --seed 4 --out-dir " + dir.string()), 0);
  const auto loaded = load_csv(dir / "series.csv", dir / "coords.csv");
  const auto ref = gen_synthetic(5, 80, 2, 4);
  EXPECT_EQ(loaded.values, ref.dataset.values);
  fs::remove_all(dir);
}
