#include "etgrl/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "etgrl/config.hpp"
#include "etgrl/neural.hpp"
#include "etgrl/plot.hpp"

namespace etgrl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ReadFile(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json TinyConfig(const fs::path& out_dir) {
  return {{"schema", kRunConfigSchema},
          {"task", "flat"},
          {"seed", 4},
          {"out_dir", out_dir.string()},
          {"parallelism", 1},
          {"episode", {{"time_limit", 1.0}}},
          {"es", {{"population", 4}, {"convergence_window", 0}}},
          {"rl",
           {{"batch_size", 32},
            {"policy_hidden", {16, 16}},
            {"critic_hidden", {32, 32}}}},
          {"dual",
           {{"outer_iterations", 2},
            {"rl_steps", 100},
            {"etg_iterations", 1},
            {"warmup_steps", 64},
            {"eval_episodes", 1},
            {"metrics_every", 50}}},
          {"eval", {{"episodes", 2}}},
          {"calibrate",
           {{"excitation_traces", 1}, {"excitation_steps", 50}, {"budget", 12}}}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("etgrl_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path WriteConfig(const json& j, const std::string& name = "run.json") {
    const fs::path file = dir_ / name;
    std::ofstream(file) << j.dump(2);
    return file;
  }

  CommandOptions Options(const fs::path& config) {
    CommandOptions o;
    o.config = config;
    o.out_stream = &out_;
    o.err_stream = &err_;
    return o;
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

TEST_F(CliTest, UnknownKeyIsUsageError) {
  json j = TinyConfig(dir_ / "run");
  j["dual"]["outer_iters"] = 3;
  const fs::path cfg = WriteConfig(j);
  EXPECT_EQ(CmdTrain(Options(cfg)), kExitUsage);
  EXPECT_NE(err_.str().find("outer_iters"), std::string::npos) << err_.str();
  EXPECT_FALSE(fs::exists(dir_ / "run" / "metrics.csv"));
}

TEST_F(CliTest, WrongSchemaAndBadValuesAreUsageErrors) {
  json j = TinyConfig(dir_ / "run");
  j["schema"] = "etgrl.run_config/0";
  EXPECT_EQ(CmdTrain(Options(WriteConfig(j, "a.json"))), kExitUsage);
  json k = TinyConfig(dir_ / "run");
  k["variant"] = "ppo";
  EXPECT_EQ(CmdTrain(Options(WriteConfig(k, "b.json"))), kExitUsage);
  json m = TinyConfig(dir_ / "run");
  m["sim"] = {{"kp", "stiff"}};
  EXPECT_EQ(CmdTrain(Options(WriteConfig(m, "c.json"))), kExitUsage);
}

TEST_F(CliTest, MissingConfigNamesThePath) {
  const fs::path missing = dir_ / "nowhere" / "config.json";
  EXPECT_EQ(CmdTrain(Options(missing)), kExitUsage);
  EXPECT_NE(err_.str().find(missing.string()), std::string::npos) << err_.str();
}

TEST_F(CliTest, BinaryReportsMissingConfig) {
  const fs::path missing = dir_ / "absent.json";
  const fs::path log = dir_ / "stderr.txt";
  const std::string cmd = std::string("\"") + ETGRL_BINARY + "\" train --config \"" +
                          missing.string() + "\" 2> \"" + log.string() + "\"";
  const int status = std::system(cmd.c_str());
  ASSERT_NE(status, -1);
  EXPECT_EQ(WEXITSTATUS(status), kExitUsage);
  EXPECT_NE(ReadFile(log).find(missing.string()), std::string::npos);

  const std::string bad_flag = std::string("\"") + ETGRL_BINARY +
                               "\" train --bogus 2> /dev/null";
  EXPECT_EQ(WEXITSTATUS(std::system(bad_flag.c_str())), kExitUsage);
}

TEST_F(CliTest, TrainWritesMetricsAndIsReproducible) {
  const fs::path run_a = dir_ / "a";
  const fs::path run_b = dir_ / "b";
  ASSERT_EQ(CmdTrain(Options(WriteConfig(TinyConfig(run_a), "a.json"))), kExitOk)
      << err_.str();
  ASSERT_EQ(CmdTrain(Options(WriteConfig(TinyConfig(run_b), "b.json"))), kExitOk)
      << err_.str();
  std::ifstream csv(run_a / "metrics.csv");
  const auto rows = plot::ReadMetricsCsv(csv);
  int outer = 0;
  for (const auto& r : rows) outer += r.record == "outer";
  EXPECT_EQ(outer, 2);
  EXPECT_EQ(ReadFile(run_a / "metrics.csv"), ReadFile(run_b / "metrics.csv"));
  EXPECT_TRUE(fs::exists(run_a / "config.json"));
  EXPECT_TRUE(fs::exists(run_a / "checkpoints" / "best.json"));
  // The snapshot reloads as the same configuration.
  const RunConfig snap = RunConfigFromJson(json::parse(ReadFile(run_a / "config.json")));
  EXPECT_EQ(snap.dual.outer_iterations, 2);
  EXPECT_EQ(snap.seed, 4u);
}

TEST_F(CliTest, SeedFlagOverridesConfig) {
  CommandOptions o = Options(WriteConfig(TinyConfig(dir_ / "run")));
  o.seed = 99;
  o.variant = "tg-rl";
  o.out = (dir_ / "flagged").string();
  const RunConfig cfg = ResolveConfig(o);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.variant, train::Variant::kTgRl);
  EXPECT_EQ(cfg.out_dir, (dir_ / "flagged").string());
}

// Rewrites a checkpoint so the policy outputs exactly zero.
fs::path ZeroPolicyCheckpoint(const fs::path& from, const fs::path& to,
                              bool uses_policy) {
  json ck = json::parse(ReadFile(from));
  nn::Mlp net = nn::MlpFromJson(ck["policy"]);
  for (auto& layer : net.mutable_layers()) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  json pol = nn::ToJson(net);
  pol["residual_bound"] = ck["policy"]["residual_bound"];
  pol["input_scale"] = ck["policy"]["input_scale"];
  ck["policy"] = pol;
  ck["uses_policy"] = uses_policy;
  std::ofstream(to) << ck.dump();
  return to;
}

TEST_F(CliTest, EvalOfZeroResidualEqualsGeneratorOnly) {
  const fs::path run = dir_ / "run";
  const fs::path cfg = WriteConfig(TinyConfig(run));
  ASSERT_EQ(CmdTrain(Options(cfg)), kExitOk) << err_.str();
  const fs::path best = run / "checkpoints" / "best.json";
  CommandOptions o = Options(cfg);
  o.checkpoint = ZeroPolicyCheckpoint(best, dir_ / "zero.json", true).string();
  ASSERT_EQ(CmdEval(o), kExitOk) << err_.str();
  const json with_zero = json::parse(ReadFile(run / "eval.json"));
  o.checkpoint = ZeroPolicyCheckpoint(best, dir_ / "none.json", false).string();
  ASSERT_EQ(CmdEval(o), kExitOk) << err_.str();
  const json gen_only = json::parse(ReadFile(run / "eval.json"));
  EXPECT_EQ(with_zero["returns"], gen_only["returns"]);
  EXPECT_EQ(with_zero["returns"].size(), 2u);

  o.checkpoint = (dir_ / "missing.json").string();
  EXPECT_EQ(CmdEval(o), kExitUsage);
}

TEST_F(CliTest, CalibrateOnOwnTracesFindsZeroObjective) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(CmdCalibrate(Options(WriteConfig(TinyConfig(run)))), kExitOk)
      << err_.str();
  const json report = json::parse(ReadFile(run / "calibration" / "report.json"));
  EXPECT_LT(report.at("objective").get<double>(), 1e-6);
  EXPECT_TRUE(fs::exists(run / "calibration" / "sim_params.json"));
}

TEST_F(CliTest, EvolveWithoutIterationsKeepsParams) {
  json j = TinyConfig(dir_ / "run");
  j["es"]["max_iters"] = 0;
  ASSERT_EQ(CmdEvolve(Options(WriteConfig(j))), kExitOk) << err_.str();
  const fs::path evo = dir_ / "run" / "evolve";
  EXPECT_EQ(json::parse(ReadFile(evo / "params.json")),
            json::parse(ReadFile(evo / "initial_params.json")));

  j["es"]["max_iters"] = 2;
  j["out_dir"] = (dir_ / "run2").string();
  ASSERT_EQ(CmdEvolve(Options(WriteConfig(j, "two.json"))), kExitOk);
  const fs::path evo2 = dir_ / "run2" / "evolve";
  EXPECT_NE(json::parse(ReadFile(evo2 / "params.json")),
            json::parse(ReadFile(evo2 / "initial_params.json")));
  std::ifstream hist(evo2 / "evolution.csv");
  EXPECT_EQ(plot::ReadHistoryCsv(hist).size(), 2u);
}

double Attribute(const std::string& svg, const std::string& name) {
  const std::regex re(name + "=\"([^\"]+)\"");
  std::smatch m;
  if (!std::regex_search(svg, m, re)) return std::nan("");
  return std::stod(m[1].str());
}

TEST_F(CliTest, PlotsAreDeterministicAndCoverTheTrajectory) {
  const fs::path run = dir_ / "run";
  const fs::path cfg = WriteConfig(TinyConfig(run));
  ASSERT_EQ(CmdTrain(Options(cfg)), kExitOk) << err_.str();
  ASSERT_EQ(CmdPlot(Options(cfg)), kExitOk) << err_.str();
  const std::string training = ReadFile(run / "plots" / "training.svg");
  const std::string trajectory = ReadFile(run / "plots" / "trajectory.svg");
  const std::string evolution = ReadFile(run / "plots" / "evolution.svg");
  ASSERT_FALSE(training.empty());
  ASSERT_FALSE(trajectory.empty());
  ASSERT_EQ(CmdPlot(Options(cfg)), kExitOk);
  EXPECT_EQ(ReadFile(run / "plots" / "training.svg"), training);
  EXPECT_EQ(ReadFile(run / "plots" / "trajectory.svg"), trajectory);
  EXPECT_EQ(ReadFile(run / "plots" / "evolution.svg"), evolution);

  std::ifstream trace_in(run / "traces" / "best_eval.jsonl");
  const auto trace = plot::ReadTrace(trace_in);
  ASSERT_FALSE(trace.empty());
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : trace) {
    lo = std::min(lo, r.position.x());
    hi = std::max(hi, r.position.x());
  }
  EXPECT_LE(Attribute(trajectory, "data-x-min"), lo + 1e-3);
  EXPECT_GE(Attribute(trajectory, "data-x-max"), hi - 1e-3);
}

TEST_F(CliTest, PlotWithoutTracesWarns) {
  const fs::path run = dir_ / "run";
  const fs::path cfg = WriteConfig(TinyConfig(run));
  ASSERT_EQ(CmdTrain(Options(cfg)), kExitOk) << err_.str();
  fs::remove_all(run / "traces");
  ASSERT_EQ(CmdPlot(Options(cfg)), kExitOk) << err_.str();
  EXPECT_NE(err_.str().find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(run / "plots" / "training.svg"));
  EXPECT_FALSE(fs::exists(run / "plots" / "trajectory.svg"));
}

TEST(ConfigFilesTest, ShippedConfigsLoad) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(ETGRL_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(LoadRunConfig(e.path())) << e.path();
    ++count;
  }
  EXPECT_GE(count, 4);
}

TEST(PlotTest, SkipsNonFinitePoints) {
  plot::Chart c;
  c.series.push_back({"a", "#000", {0, 1, 2}, {1.0, std::nan(""), 3.0}});
  const std::string svg = plot::RenderSvg(c);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
  EXPECT_DOUBLE_EQ(Attribute(svg, "data-y-max"), 3.0);
  EXPECT_EQ(svg, plot::RenderSvg(c));
}

TEST(PlotTest, MetricsCsvHeaderChecked) {
  std::istringstream bad("record,outer,step\n");
  EXPECT_THROW(plot::ReadMetricsCsv(bad), ArgumentError);
}

}  // namespace
}  // namespace etgrl::cli
