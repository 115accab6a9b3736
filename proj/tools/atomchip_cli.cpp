#include <array>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "atomchip/runner.hpp"

using namespace atomchip;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kNumeric = 3;

struct RegionArgs {
  std::vector<double> min_um, max_um;
  std::vector<int> seeds{3, 3, 3};

  void add(CLI::App* app) {
    app->add_option("--min-um", min_um, "Region lower corner (x y z, um)")->expected(3)->required();
    app->add_option("--max-um", max_um, "Region upper corner (x y z, um)")->expected(3)->required();
    app->add_option("--seeds", seeds, "Seed lattice per axis")->expected(3);
  }

  nlohmann::json json() const { return {{"min_um", min_um}, {"max_um", max_um}, {"seeds", seeds}}; }
};

// Parses the scenario, lets `adjust` replace its directives, then runs.
template <class Adjust>
int run(const std::string& path, const RunOptions& options, Adjust&& adjust) {
  try {
    const std::string text = read_file(path);
    Scenario scenario = parse_scenario(text);
    adjust(scenario);
    const auto report = run_scenario(scenario, text, options);
    for (const auto& d : report.directives) {
      std::printf("%-10s %8.3f s", d.type.c_str(), d.seconds);
      for (const auto& o : d.outputs) std::printf("  %s", o.c_str());
      std::printf("\n");
    }
    std::printf("manifest %s\n", report.manifest.string().c_str());
    return kOk;
  } catch (const DirectiveError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numeric() ? kNumeric : kValidation;
  } catch (const SpecificationError& e) {
    std::cerr << "invalid scenario: " << e.what() << "\n";
    return kValidation;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// Single directive built from command-line values and parsed with the
// scenario rules, so units and checks match a document.
Directive directive_from(const nlohmann::json& j) {
  nlohmann::json doc = {{"directives", {j}}};
  return scenario_from_json(doc).directives.at(0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permanent-magnet atom chip fields, traps and MOT simulation"};
  app.require_subcommand(1);

  RunOptions options;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out_dir = ".";
  app.add_option("--threads", options.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Master random seed (overrides the scenario)");
  app.add_option("--backend", backend, "Field backend")->check(CLI::IsMember({"edge", "sheet", "spectral"}));
  app.add_option("--out-dir", out_dir, "Directory for artifacts and the manifest");

  std::string scenario_path;

  auto* run_cmd = app.add_subcommand("run", "Run every directive of a scenario");
  run_cmd->add_option("scenario", scenario_path)->required();

  auto* validate_cmd = app.add_subcommand("validate", "Parse and check a scenario");
  validate_cmd->add_option("scenario", scenario_path)->required();

  auto* grid_cmd = app.add_subcommand("grid", "Field on a plane");
  grid_cmd->add_option("scenario", scenario_path)->required();
  double z_um = 200.0, time_s = 0.0;
  std::vector<double> x_um, y_um;
  int nx = 100, ny = 100;
  std::string format = "csv", output;
  grid_cmd->add_option("--z-um", z_um, "Plane height");
  grid_cmd->add_option("--x-um", x_um, "x range")->expected(2)->required();
  grid_cmd->add_option("--y-um", y_um, "y range")->expected(2)->required();
  grid_cmd->add_option("--nx", nx);
  grid_cmd->add_option("--ny", ny);
  grid_cmd->add_option("--format", format)->check(CLI::IsMember({"csv", "pgm"}));
  grid_cmd->add_option("--time-s", time_s);
  grid_cmd->add_option("-o,--output", output)->required();

  auto* traps_cmd = app.add_subcommand("traps", "Find field zeros");
  traps_cmd->add_option("scenario", scenario_path)->required();
  RegionArgs traps_region;
  traps_region.add(traps_cmd);
  traps_cmd->add_option("--time-s", time_s);
  traps_cmd->add_option("-o,--output", output)->required();

  auto* transport_cmd = app.add_subcommand("transport", "Follow the trap over one modulation period");
  transport_cmd->add_option("scenario", scenario_path)->required();
  RegionArgs transport_region;
  transport_region.add(transport_cmd);
  int samples = 16;
  transport_cmd->add_option("--samples", samples);
  transport_cmd->add_option("-o,--output", output)->required();

  auto* mot_cmd = app.add_subcommand("mot", "Simulate an atom cloud in the MOT");
  mot_cmd->add_option("scenario", scenario_path)->required();
  RegionArgs mot_region;
  mot_region.add(mot_cmd);
  int atoms = 100;
  std::vector<double> position_um, sigma_um{0, 0, 0}, velocity_sigma{0, 0, 0};
  double duration_ms = 20.0;
  bool stochastic = false;
  std::string summary;
  mot_cmd->add_option("--atoms", atoms);
  mot_cmd->add_option("--position-um", position_um, "Cloud centre")->expected(3)->required();
  mot_cmd->add_option("--sigma-um", sigma_um, "Cloud size per axis")->expected(3);
  mot_cmd->add_option("--velocity-sigma-mps", velocity_sigma)->expected(3);
  mot_cmd->add_option("--duration-ms", duration_ms);
  mot_cmd->add_flag("--stochastic", stochastic, "Random recoil kicks");
  mot_cmd->add_option("-o,--output", output)->required();
  mot_cmd->add_option("--summary", summary)->required();

  CLI11_PARSE(app, argc, argv);

  options.out_dir = out_dir;
  options.seed = seed;
  if (!backend.empty()) options.backend = backend_from_string(backend);

  if (*validate_cmd) {
    try {
      Scenario s = parse_scenario(read_file(scenario_path));
      s = apply_overrides(std::move(s), options);
      std::printf("ok: %zu edits, %zu directives\n", s.edits.size(), s.directives.size());
      return kOk;
    } catch (const SpecificationError& e) {
      std::cerr << "invalid scenario: " << e.what() << "\n";
      return kValidation;
    }
  }
  if (*run_cmd) return run(scenario_path, options, [](Scenario&) {});

  nlohmann::json task;
  if (*grid_cmd) {
    task = {{"type", "field-grid"}, {"z_um", z_um}, {"x_um", x_um}, {"y_um", y_um}, {"nx", nx}, {"ny", ny},
            {"format", format},     {"time_s", time_s}, {"output", output}};
  } else if (*traps_cmd) {
    task = {{"type", "traps"}, {"region", traps_region.json()}, {"time_s", time_s}, {"output", output}};
  } else if (*transport_cmd) {
    task = {{"type", "transport"}, {"region", transport_region.json()}, {"samples", samples}, {"output", output}};
  } else {
    task = {{"type", "mot-run"},
            {"region", mot_region.json()},
            {"ensemble",
             {{"count", atoms},
              {"position_mean_um", position_um},
              {"position_sigma_um", sigma_um},
              {"velocity_sigma_mps", velocity_sigma}}},
            {"duration_ms", duration_ms},
            {"stochastic", stochastic},
            {"output", output},
            {"summary", summary}};
  }
  return run(scenario_path, options, [&](Scenario& s) { s.directives = {directive_from(task)}; });
}
