#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tfh/cli.hpp"

using namespace tfh;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = TFH_SCENARIO_DIR;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tfh_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Thermostat scenario with a JSON merge patch applied.
fs::path thermostat_variant(const std::string& name, const std::string& patch) {
  auto doc = nlohmann::ordered_json::parse(read_file(kScenarios / "thermostat.json"));
  doc.merge_patch(nlohmann::ordered_json::parse(patch));
  const fs::path dir = fs::temp_directory_path() / "tfh_test_cli_scenarios";
  fs::create_directories(dir);
  const fs::path p = dir / (name + ".json");
  std::ofstream(p) << doc.dump(2);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::string& cmd, const std::vector<fs::path>& files, const fs::path& out_dir) {
  cli::RunOptions o;
  o.out_dir = out_dir;
  o.verbosity = 0;
  std::ostringstream so, se;
  const int code = cli::run(cmd, files, o, so, se);
  return {code, so.str(), se.str()};
}

std::string error_path(const std::string& text) {
  try {
    cli::parse_scenario(text);
  } catch (const cli::ScenarioError& e) {
    return e.path();
  }
  return "<accepted>";
}

const std::string kModel =
    R"j("model": {"n_x": 1, "n_u": 0, "states": ["x"], "f_A": ["-0.2*x + 5"], "f_B": ["-0.2*x"], "psi": "0.5*(x - 18)"})j";

}  // namespace

TEST(Scenario, BundledFilesParse) {
  const auto th = cli::load_scenario(kScenarios / "thermostat.json");
  EXPECT_EQ(th.name, "thermostat");
  ASSERT_TRUE(th.simulation.has_value());
  EXPECT_EQ(th.simulation->horizon, 20.0);
  EXPECT_EQ(th.simulation->verify.grid_points, 2000u);
  EXPECT_FALSE(th.ocp.has_value());

  const auto car = cli::load_scenario(kScenarios / "turbo_car.json");
  ASSERT_TRUE(car.ocp.has_value());
  EXPECT_EQ(car.ocp->spec.N, 10u);
  EXPECT_EQ(car.ocp->spec.N_fe, 3u);
  EXPECT_EQ(car.ocp->spec.terminal.size(), 2u);
  EXPECT_EQ(car.ocp->spec.terminal[0].first, 0u);
  EXPECT_EQ(car.ocp->spec.terminal[1].first, 1u);
  EXPECT_EQ(car.model.x_lb[0], -std::numeric_limits<double>::infinity());
  EXPECT_EQ(car.model.x_ub[1], 25.0);
}

TEST(Scenario, UnknownKeysAreRejectedWithTheirPath) {
  EXPECT_EQ(error_path("{" + kModel + R"(, "colour": 1})"), "/colour");
  EXPECT_EQ(error_path(R"({"model": {"n_x": 1, "n_u": 0, "states": ["x"], "f_A": ["x"], "f_B": ["x"],
                          "psi": "x", "fA": ["x"]}})"),
            "/model/fA");
  EXPECT_EQ(error_path("{" + kModel + R"(, "simulation": {"x0": [15], "horizon": 1, "verify": {"grid": 3}}})"),
            "/simulation/verify/grid");
}

TEST(Scenario, TypeAndArityErrors) {
  EXPECT_EQ(error_path("{" + kModel + R"(, "simulation": {"x0": [15, 1], "horizon": 1}})"), "/simulation/x0");
  EXPECT_EQ(error_path("{" + kModel + R"(, "simulation": {"x0": [15], "horizon": "long"}})"), "/simulation/horizon");
  EXPECT_EQ(error_path("{" + kModel + R"(, "simulation": {"x0": [15], "horizon": -1}})"), "/simulation/horizon");
  EXPECT_EQ(error_path(R"({"model": {"n_x": 1, "n_u": 0, "states": ["x"], "f_A": ["x +"], "f_B": ["x"],
                          "psi": "x"}})"),
            "/model");
  EXPECT_EQ(error_path("{" + kModel + R"(, "timefreezing": {"a": 0}})"), "/timefreezing/a");
  EXPECT_EQ(error_path("[1, 2]"), "/");
  EXPECT_EQ(error_path("{not json"), "/");
}

TEST(Scenario, OcpSectionChecks) {
  const std::string car =
      R"("model": {"n_x": 2, "n_u": 1, "states": ["q", "v"], "controls": ["u"], "f_A": ["v", "u"],
                   "f_B": ["v", "3*u"], "psi": "(v - 10)/5", "u_lb": [-5], "u_ub": [5]})";
  EXPECT_EQ(error_path("{" + car + R"(, "ocp": {"x0": [0, 0], "terminal": {"speed": 1}}})"), "/ocp/terminal/speed");
  EXPECT_EQ(error_path("{" + car + R"(, "ocp": {"x0": [0, 0], "objective": "t +"}})"), "/ocp");
  EXPECT_EQ(error_path("{" + car + R"(, "ocp": {"x0": [0, 0], "homotopy": {"kappa": 2}}})"), "/ocp/homotopy");
  const auto sc = cli::parse_scenario("{" + car + R"(, "ocp": {"x0": [0, 0], "terminal": {"t": 3, "q": 1}}})");
  EXPECT_EQ(sc.ocp->spec.terminal[0].first, 3u);  // y = (q, v, w, t)
  EXPECT_EQ(sc.ocp->spec.terminal[1].first, 0u);
}

TEST(Run, ExitCodesForBadInput) {
  const auto out = fresh_dir("bad");
  EXPECT_EQ(run("simulate-oracle", {out / "missing.json"}, out).code, cli::kInputError);
  EXPECT_EQ(run("fly", {kScenarios / "thermostat.json"}, out).code, cli::kInputError);
  EXPECT_EQ(run("simulate-oracle", {}, out).code, cli::kInputError);
  const auto half = thermostat_variant("half", R"({"simulation": {"w0": 0.5}})");
  for (const char* cmd : {"simulate-oracle", "simulate-tf", "verify-equivalence"}) {
    const auto r = run(cmd, {half}, out);
    EXPECT_EQ(r.code, cli::kInputError) << cmd;
    EXPECT_NE(r.err.find("/simulation/w0"), std::string::npos) << r.err;
  }
  EXPECT_EQ(run("solve-ocp", {kScenarios / "thermostat.json"}, out).code, cli::kInputError);
}

TEST(Run, EventCapIsANumericalFailure) {
  const auto capped = thermostat_variant("capped", R"({"simulation": {"max_events": 2}})");
  const auto out = fresh_dir("capped");
  EXPECT_EQ(run("simulate-oracle", {capped}, out).code, cli::kNumericalFailure);
  EXPECT_EQ(run("simulate-tf", {capped}, out).code, cli::kNumericalFailure);
}

TEST(Run, SimulateOracleWritesArtifacts) {
  const auto out = fresh_dir("oracle");
  const auto r = run("simulate-oracle", {kScenarios / "thermostat.json"}, out);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto traj = read_file(out / "oracle_trajectory.csv");
  EXPECT_EQ(traj.substr(0, traj.find('\n')), "t,x,w,event");
  const auto stats = nlohmann::json::parse(read_file(out / "stats.json"));
  EXPECT_EQ(stats.at("t_end").get<double>(), 20.0);
  EXPECT_GE(stats.at("jumps").get<int>(), 5);
  EXPECT_TRUE(fs::exists(out / "oracle_events.csv"));
}

TEST(Run, SimulateTfWritesArtifacts) {
  const auto out = fresh_dir("tf");
  const auto r = run("simulate-tf", {kScenarios / "thermostat.json"}, out);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  for (const char* f : {"tf_numerical.csv", "tf_physical.csv", "frozen_phases.csv", "region_grid.csv", "stats.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto num = read_file(out / "tf_numerical.csv");
  EXPECT_EQ(num.substr(0, num.find('\n')), "tau,t,x,w,mode,theta_1,theta_2,theta_3,theta_4");
  const auto stats = nlohmann::json::parse(read_file(out / "stats.json"));
  // Every jump costs 2/a of numerical time on top of the horizon.
  const auto jumps = stats.at("jumps").get<double>();
  EXPECT_NEAR(stats.at("tau_end").get<double>(), 20.0 + 2.0 * jumps, 1e-8);
  EXPECT_EQ(stats.at("frozen_phases").size(), stats.at("jumps").get<std::size_t>());
}

TEST(Run, RerunIsByteIdentical) {
  const auto a = fresh_dir("rerun_a");
  const auto b = fresh_dir("rerun_b");
  for (const char* cmd : {"simulate-oracle", "simulate-tf", "verify-equivalence"}) {
    ASSERT_EQ(run(cmd, {kScenarios / "thermostat.json"}, a).code, cli::kSuccess) << cmd;
    ASSERT_EQ(run(cmd, {kScenarios / "thermostat.json"}, b).code, cli::kSuccess) << cmd;
  }
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".csv") continue;
    EXPECT_EQ(read_file(e.path()), read_file(b / e.path().filename())) << e.path();
    ++csvs;
  }
  EXPECT_EQ(csvs, 7u);
}

TEST(Run, ZeroHorizonGivesEmptyTrajectories) {
  const auto zero = thermostat_variant("zero", R"({"simulation": {"horizon": 0}})");
  const auto out = fresh_dir("zero");
  ASSERT_EQ(run("simulate-oracle", {zero}, out).code, cli::kSuccess);
  const auto traj = read_file(out / "oracle_trajectory.csv");
  EXPECT_EQ(traj, "t,x,w,event\n");
  ASSERT_EQ(run("simulate-tf", {zero}, out).code, cli::kSuccess);
  EXPECT_EQ(read_file(out / "tf_numerical.csv"), "tau,t,x,w,mode,theta_1,theta_2,theta_3,theta_4\n");
}

TEST(Run, VerifyEquivalencePassesAndFails) {
  const auto out = fresh_dir("verify");
  const auto ok = run("verify-equivalence", {kScenarios / "thermostat.json"}, out);
  ASSERT_EQ(ok.code, cli::kSuccess) << ok.err;
  auto rep = nlohmann::json::parse(read_file(out / "report.json"));
  EXPECT_TRUE(rep.at("pass").get<bool>());
  EXPECT_LE(rep.at("max_error").get<double>(), 1e-5);

  // Same run against an impossible threshold reports the worst points.
  const auto strict = thermostat_variant("strict", R"({"simulation": {"verify": {"threshold": 1e-15}}})");
  const auto bad = run("verify-equivalence", {strict}, out);
  EXPECT_EQ(bad.code, cli::kCheckFailure);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_NE(bad.out.find("  t = "), std::string::npos);
  rep = nlohmann::json::parse(read_file(out / "report.json"));
  EXPECT_FALSE(rep.at("pass").get<bool>());
}

TEST(Run, ToleranceOptionChangesTheResult) {
  const auto a = fresh_dir("tol_a");
  const auto b = fresh_dir("tol_b");
  cli::RunOptions o;
  o.verbosity = 0;
  std::ostringstream so, se;
  o.out_dir = a;
  o.tol = 1e-4;
  ASSERT_EQ(cli::run("simulate-oracle", {kScenarios / "thermostat.json"}, o, so, se), cli::kSuccess);
  o.out_dir = b;
  o.tol = 1e-10;
  ASSERT_EQ(cli::run("simulate-oracle", {kScenarios / "thermostat.json"}, o, so, se), cli::kSuccess);
  EXPECT_NE(read_file(a / "oracle_trajectory.csv"), read_file(b / "oracle_trajectory.csv"));
  o.tol = -1.0;
  EXPECT_EQ(cli::run("simulate-oracle", {kScenarios / "thermostat.json"}, o, so, se), cli::kInputError);
}

TEST(Run, BenchRunsEveryCommandPerScenario) {
  const auto out = fresh_dir("bench");
  const auto other = thermostat_variant("thermostat_fast", R"({"name": "fast", "timefreezing": {"a": 2}})");
  const auto r = run("bench", {kScenarios / "thermostat.json", other}, out);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto bench = nlohmann::json::parse(read_file(out / "bench.json"));
  EXPECT_EQ(bench.at("runs").size(), 6u);
  for (const auto& run : bench.at("runs")) EXPECT_EQ(run.at("exit_code").get<int>(), 0);
  EXPECT_TRUE(fs::exists(out / "fast" / "simulate-tf" / "stats.json"));
  EXPECT_TRUE(fs::exists(out / "thermostat" / "verify-equivalence" / "report.json"));
}

TEST(Env, LogLevel) {
  ::setenv("TFH_LOG_LEVEL", "debug", 1);
  EXPECT_EQ(cli::verbosity_from_env(), 2);
  ::setenv("TFH_LOG_LEVEL", "0", 1);
  EXPECT_EQ(cli::verbosity_from_env(), 0);
  ::unsetenv("TFH_LOG_LEVEL");
  EXPECT_EQ(cli::verbosity_from_env(), 1);
}

TEST(Run, IdenticalFieldsAgreeWhateverTheBranch) {
  // f_A = f_B: the state does not depend on w, so both simulators agree to
  // integrator accuracy even though jumps still happen.
  const auto same = thermostat_variant("same", R"j({"model": {"f_A": ["-0.2*x + 5"], "f_B": ["-0.2*x + 5"]},
                                                    "simulation": {"x0": [17]}})j");
  const auto out = fresh_dir("same");
  const auto r = run("verify-equivalence", {same}, out);
  ASSERT_EQ(r.code, cli::kSuccess) << r.out << r.err;
  const auto rep = nlohmann::json::parse(read_file(out / "report.json"));
  EXPECT_LE(rep.at("max_error").get<double>(), 1e-6);
  EXPECT_GE(rep.at("oracle_jumps").get<int>(), 1);
}

TEST(Run, CoincidingVoronoiPointsAreAnInputError) {
  const auto bad = thermostat_variant(
      "coincide", R"({"timefreezing": {"voronoi_points": [[0.25, -0.25], [0.5, 0.5], [0.5, 0.5], [0.75, 1.25]]}})");
  const auto out = fresh_dir("coincide");
  const auto r = run("simulate-tf", {bad}, out);
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find("/timefreezing/voronoi_points"), std::string::npos) << r.err;
}
