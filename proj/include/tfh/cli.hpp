#pragma once

// Scenario files and the commands of the tfh executable. Every command reads
// one JSON scenario, writes its artifacts into an output directory and
// returns a process exit code.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfh/automaton.hpp"
#include "tfh/ocp.hpp"
#include "tfh/timefreeze.hpp"

namespace tfh::cli {

enum ExitCode : int { kSuccess = 0, kCheckFailure = 1, kInputError = 2, kNumericalFailure = 3 };

/// Schema or consistency problem in a scenario; `path` is a JSON pointer.
class ScenarioError : public std::invalid_argument {
 public:
  ScenarioError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct VerifySettings {
  std::size_t grid_points = 2000;
  double jump_exclusion = 1e-6;
  double threshold = 1e-5;
};

struct SimulationSection {
  std::vector<double> x0;
  double w0 = 0.0;
  double horizon = 0.0;
  double rtol = 1e-8;
  double atol = 1e-10;
  double tol_event = 1e-10;
  std::size_t max_events = 10000;
  ControlSchedule controls;  // physical time
  VerifySettings verify;
};

struct OcpSection {
  ocp::OcpSpec spec;
  ocp::HomotopyOptions homotopy;
};

struct Scenario {
  std::string name;
  std::optional<long long> seed;  // recorded only; no command draws random numbers
  HysteresisAutomaton model;
  double a = 1.0;
  VoronoiPartition points;
  std::optional<SimulationSection> simulation;
  std::optional<OcpSection> ocp;
};

/// Parses and validates a scenario document. Unknown keys are rejected.
Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path out_dir = "out";
  bool fixed_h = false;
  std::optional<double> tol;  // integrator rtol (atol = tol / 100); NLP tolerance for solve-ocp
  int verbosity = 1;          // 0 quiet, 1 info, 2 debug
};

/// Reads TFH_LOG_LEVEL (quiet|info|debug or 0|1|2); info when unset.
int verbosity_from_env();

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"simulate-oracle", "simulate-tf", "verify-equivalence", "solve-ocp",
                                              "bench"};
  return names;
}

/// Runs one command on one scenario file. `bench` accepts several files.
/// Summary lines go to `out`, diagnostics to `err`.
int run(const std::string& command, const std::vector<std::filesystem::path>& scenarios, const RunOptions& opts,
        std::ostream& out, std::ostream& err);

}  // namespace tfh::cli
