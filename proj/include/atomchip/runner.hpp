#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atomchip/scenario.hpp"

namespace atomchip {

struct RunOptions {
  std::filesystem::path out_dir = ".";
  int threads = 1;
  std::optional<std::uint64_t> seed;
  std::optional<Backend> backend;
};

// Failure inside one directive. `numeric` separates domain/numeric failures
// from late validation failures.
class DirectiveError : public std::runtime_error {
 public:
  DirectiveError(std::size_t index, const std::string& type, const std::string& what, bool numeric)
      : std::runtime_error("directive " + std::to_string(index) + " (" + type + "): " + what),
        index_(index),
        numeric_(numeric) {}
  std::size_t index() const { return index_; }
  bool numeric() const { return numeric_; }

 private:
  std::size_t index_;
  bool numeric_;
};

struct Artifact {
  std::string path;  // as written in the scenario
  std::string contents;
};

// Seed and backend flags replace the document values; the result is
// validated again.
Scenario apply_overrides(Scenario scenario, const RunOptions& options);

// Field on a plane with the directive's backend (or the scenario's). The
// spectral backend adds bias and auxiliary quadrupole pointwise.
FieldGrid compute_grid(const Scenario& scenario, const MagnetizationPattern& pattern, const FieldSource& source,
                       const GridSpec& grid, double z, double time, std::optional<Backend> backend, int threads);

// Zeros in the region, with depths filled when a box is given.
std::vector<TrapCandidate> compute_traps(const FieldSource& source, const SearchRegion& region, double time,
                                         const std::optional<DepthBox>& depth, int threads);

std::vector<Artifact> execute_directive(const Scenario& scenario, const MagnetizationPattern& pattern,
                                        const FieldSource& source, const Directive& directive, int threads);

struct DirectiveRecord {
  std::string type;
  std::vector<std::string> outputs;
  double seconds = 0.0;
};

struct RunReport {
  std::vector<DirectiveRecord> directives;
  std::filesystem::path manifest;
};

// Runs the directives in order, writing each artifact atomically under
// out_dir, then writes manifest.json. `document` is the source text that
// was parsed; its hash goes into the manifest.
RunReport run_scenario(const Scenario& scenario, const std::string& document, const RunOptions& options);

std::string read_file(const std::filesystem::path& path);

// Library and dependency versions recorded in manifests.
nlohmann::json version_info();

}  // namespace atomchip
