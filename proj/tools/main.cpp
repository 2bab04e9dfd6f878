#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfh/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Time-freezing reformulation of hysteresis systems: simulation, verification and optimal control"};
  std::string command;
  std::vector<std::string> files;
  std::string out_dir = "out";
  bool fixed_h = false;
  double tol = 0.0;

  app.add_option("command", command, "simulate-oracle | simulate-tf | verify-equivalence | solve-ocp | bench")
      ->required()
      ->check(CLI::IsMember(tfh::cli::commands()));
  app.add_option("scenarios", files, "scenario JSON file(s); bench accepts several")->required();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_flag("--fixed-h", fixed_h, "solve-ocp: fixed element lengths, no switch detection");
  auto* tol_opt = app.add_option("--tol", tol, "integrator rtol (atol = tol/100); NLP tolerance for solve-ocp");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tfh::cli::kInputError;
  }

  tfh::cli::RunOptions opts;
  opts.out_dir = out_dir;
  opts.fixed_h = fixed_h;
  if (tol_opt->count() > 0) opts.tol = tol;
  opts.verbosity = tfh::cli::verbosity_from_env();
  std::vector<std::filesystem::path> paths(files.begin(), files.end());
  return tfh::cli::run(command, paths, opts, std::cout, std::cerr);
}
