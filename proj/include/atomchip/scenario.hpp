#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "atomchip/field.hpp"
#include "atomchip/mot.hpp"
#include "atomchip/pattern.hpp"
#include "atomchip/spectral.hpp"
#include "atomchip/trap.hpp"

namespace atomchip {

// Scenario documents are JSON with the unit in every numeric key
// (thickness_um, static_uT, power_mW, ...). In memory everything is SI.

// Problem in a scenario document. `field()` is a JSON path such as
// "edits[1].shape.radius_um"; line is set for syntax errors.
class ScenarioError : public SpecificationError {
 public:
  ScenarioError(std::string path, const std::string& what, std::optional<int> line = std::nullopt)
      : SpecificationError(std::move(path), line ? "line " + std::to_string(*line) + ": " + what : what), line_(line) {}
  std::optional<int> line() const { return line_; }

 private:
  std::optional<int> line_;
};

struct FieldGridTask {
  GridSpec grid;
  double z = 0.0;
  double time = 0.0;
  std::string format = "csv";  // csv | pgm
  std::optional<Backend> backend;
  std::string output;
  bool operator==(const FieldGridTask&) const = default;
};

// Straight-line scan, e.g. along the disk axis.
struct FieldLineTask {
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  int points = 2;
  double time = 0.0;
  std::optional<Backend> backend;
  std::string output;
  bool operator==(const FieldLineTask&) const = default;
};

struct DepthBox {
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Zero();
  double spacing = 5e-6;
  bool operator==(const DepthBox&) const = default;
};

struct TrapsTask {
  SearchRegion region;
  double time = 0.0;
  std::optional<DepthBox> depth;
  std::string output;
  bool operator==(const TrapsTask&) const = default;
};

struct RingTask {
  SearchRegion region;
  double time = 0.0;
  RingOptions options;
  std::string output;
  bool operator==(const RingTask&) const = default;
};

struct TransportTask {
  SearchRegion region;
  int samples = 16;
  std::string output;
  bool operator==(const TransportTask&) const = default;
};

struct MotRunTask {
  SearchRegion region;
  EnsembleSpec ensemble;
  SimulationOptions options;  // seed and threads come from the run
  std::string output;         // trajectory CSV
  std::string summary;        // text summary

  bool operator==(const MotRunTask&) const = default;
};

struct CaptureTask {
  SearchRegion region;
  CaptureOptions options;  // threads come from the run
  std::string output;
  bool operator==(const CaptureTask&) const = default;
};

struct FaradayTask {
  std::string output;
  bool operator==(const FaradayTask&) const = default;
};

using Directive = std::variant<FieldGridTask, FieldLineTask, TrapsTask, RingTask, TransportTask, MotRunTask,
                               CaptureTask, FaradayTask>;

std::string directive_type(const Directive& d);
std::vector<std::string> directive_outputs(const Directive& d);

struct MotSection {
  MOTConfig config;
  AtomSpecies species;
  bool operator==(const MotSection&) const = default;
};

struct Scenario {
  std::string name;
  FilmSpec film;
  int initial_polarity = 1;
  std::vector<EditOp> edits;
  BiasField bias;
  std::optional<AuxQuadrupole> aux_quadrupole;
  FieldOptions field;
  Backend backend = Backend::edge;
  std::optional<MotSection> mot;
  std::vector<Directive> directives;
  std::size_t max_grid_points = 2048 * 2048;
  std::uint64_t seed = 1;
  bool operator==(const Scenario&) const = default;
};

Scenario parse_scenario(const std::string& text);
Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Scenario& scenario);
std::string serialize_scenario(const Scenario& scenario);

// Pieces of a document reused by the service API.
EditOp edit_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json to_json(const EditOp& op);
BiasField bias_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json to_json(const BiasField& bias);
SearchRegion region_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json to_json(const SearchRegion& region);
GridSpec plane_from_json(const nlohmann::json& j, const std::string& path, double& z);
EnsembleSpec ensemble_from_json(const nlohmann::json& j, const std::string& path);

// Cross-checks beyond the per-field ones done while parsing: directive
// prerequisites, distinct outputs, grid size cap, spectral-only-for-planes.
// Throws ScenarioError.
void validate(const Scenario& scenario);

MagnetizationPattern build_pattern(const Scenario& scenario);
FieldSource build_source(const Scenario& scenario, const MagnetizationPattern& pattern);

}  // namespace atomchip
