#include "atomchip/runner.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <fftw3.h>
#include <openssl/crypto.h>

#include "atomchip/export.hpp"
#include "atomchip/parallel.hpp"

#ifndef ATOMCHIP_VERSION
#define ATOMCHIP_VERSION "0.0.0"
#endif

namespace atomchip {

using nlohmann::json;

Scenario apply_overrides(Scenario scenario, const RunOptions& options) {
  if (options.seed) scenario.seed = *options.seed;
  if (options.backend) scenario.backend = *options.backend;
  if (options.threads < 1) throw ScenarioError("--threads", "must be >= 1");
  validate(scenario);
  return scenario;
}

FieldGrid compute_grid(const Scenario& scenario, const MagnetizationPattern& pattern, const FieldSource& source,
                       const GridSpec& grid, double z, double time, std::optional<Backend> backend, int threads) {
  const Backend b = backend.value_or(scenario.backend);
  if (b == Backend::spectral) {
    FieldGrid g = field_spectral_grid(pattern, z, grid, SpectralOptions{scenario.field});
    const Vec3 bias = scenario.bias.at(time);
    for (int j = 0; j < grid.ny; ++j) {
      for (int i = 0; i < grid.nx; ++i) {
        Vec3& v = g.B[static_cast<std::size_t>(j) * grid.nx + i];
        v += bias;
        if (scenario.aux_quadrupole) v += scenario.aux_quadrupole->field(Vec3(grid.x(i), grid.y(j), z));
      }
    }
    return g;
  }
  if (b == source.backend) return field_grid(source, z, grid, time, threads);
  const FieldSource other = make_source(pattern, scenario.bias, scenario.aux_quadrupole, scenario.field, b);
  return field_grid(other, z, grid, time, threads);
}

std::vector<TrapCandidate> compute_traps(const FieldSource& source, const SearchRegion& region, double time,
                                         const std::optional<DepthBox>& depth, int threads) {
  auto traps = find_zeros(source, region, time, threads);
  if (depth) {
    for (auto& t : traps) {
      if (t.classification == TrapClass::quadrupole_3d)
        t.depth = trap_depth(source, t, depth->box_min, depth->box_max, depth->spacing);
    }
  }
  return traps;
}

std::vector<Artifact> execute_directive(const Scenario& scenario, const MagnetizationPattern& pattern,
                                        const FieldSource& source, const Directive& directive, int threads) {
  return std::visit(
      [&](const auto& t) -> std::vector<Artifact> {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, FieldGridTask>) {
          const FieldGrid g = compute_grid(scenario, pattern, source, t.grid, t.z, t.time, t.backend, threads);
          if (t.format == "pgm") {
            auto h = field_magnitude_pgm(g);
            return {{t.output, std::move(h.pgm)}, {t.output + ".txt", std::move(h.scale)}};
          }
          return {{t.output, field_grid_csv(g)}};
        } else if constexpr (std::is_same_v<T, FieldLineTask>) {
          const Backend b = t.backend.value_or(scenario.backend);
          const FieldSource other =
              b == source.backend ? source : make_source(pattern, scenario.bias, scenario.aux_quadrupole, scenario.field, b);
          std::vector<Vec3> points(static_cast<std::size_t>(t.points));
          std::vector<Vec3> fields(points.size());
          for (int k = 0; k < t.points; ++k) points[k] = t.start + (t.end - t.start) * (double(k) / (t.points - 1));
          parallel_for(points.size(), threads, [&](std::size_t k) { fields[k] = other.field(points[k], t.time); });
          return {{t.output, field_line_csv(points, fields)}};
        } else if constexpr (std::is_same_v<T, TrapsTask>) {
          return {{t.output, trap_csv(compute_traps(source, t.region, t.time, t.depth, threads))}};
        } else if constexpr (std::is_same_v<T, RingTask>) {
          return {{t.output, ring_csv(ring_locus(source, t.region, t.time, t.options, threads))}};
        } else if constexpr (std::is_same_v<T, TransportTask>) {
          const Vec2 axis = 0.5 * (t.region.box_min + t.region.box_max).template head<2>();
          return {{t.output, transport_csv(transport_trajectory(source, t.region, t.samples), axis)}};
        } else if constexpr (std::is_same_v<T, MotRunTask>) {
          SimulationOptions o = t.options;
          o.seed = scenario.seed;
          o.threads = threads;
          const auto cloud =
              simulate_cloud(scenario.mot->config, scenario.mot->species, source, t.ensemble, t.region, o);
          return {{t.output, trajectory_csv(cloud)}, {t.summary, cloud_summary(cloud)}};
        } else if constexpr (std::is_same_v<T, CaptureTask>) {
          CaptureOptions o = t.options;
          o.threads = threads;
          return {{t.output,
                   capture_summary(capture_metric(scenario.mot->config, scenario.mot->species, source, t.region, o))}};
        } else {
          return {{t.output, faraday_pgm(pattern)}};
        }
      },
      directive);
}

RunReport run_scenario(const Scenario& input, const std::string& document, const RunOptions& options) {
  const Scenario scenario = apply_overrides(input, options);
  for (std::size_t i = 0; i < scenario.directives.size(); ++i) {
    for (const auto& out : directive_outputs(scenario.directives[i])) {
      if (std::filesystem::path(out).lexically_normal() == "manifest.json")
        throw ScenarioError("directives[" + std::to_string(i) + "].output", "manifest.json is reserved");
    }
  }

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const MagnetizationPattern pattern = build_pattern(scenario);
  const FieldSource source = build_source(scenario, pattern);

  RunReport report;
  json records = json::array();
  for (std::size_t i = 0; i < scenario.directives.size(); ++i) {
    const auto& d = scenario.directives[i];
    const auto t0 = clock::now();
    std::vector<Artifact> artifacts;
    try {
      artifacts = execute_directive(scenario, pattern, source, d, options.threads);
    } catch (const SpecificationError& e) {
      throw DirectiveError(i, directive_type(d), e.what(), false);
    } catch (const DomainError& e) {
      throw DirectiveError(i, directive_type(d), e.what(), true);
    } catch (const NumericError& e) {
      throw DirectiveError(i, directive_type(d), e.what(), true);
    }
    DirectiveRecord rec{directive_type(d), {}, 0.0};
    json files = json::array();
    for (const auto& a : artifacts) {
      write_atomic(options.out_dir / a.path, a.contents);
      rec.outputs.push_back(a.path);
      files.push_back({{"path", a.path}, {"bytes", a.contents.size()}, {"sha256", sha256_hex(a.contents)}});
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    records.push_back({{"type", rec.type}, {"outputs", files}, {"seconds", rec.seconds}});
    report.directives.push_back(std::move(rec));
  }

  const json manifest = {
      {"scenario", scenario.name},
      {"document_sha256", sha256_hex(document)},
      {"effective_scenario_sha256", sha256_hex(serialize_scenario(scenario))},
      {"versions", version_info()},
      {"seed", scenario.seed},
      {"threads", options.threads},
      {"backend", to_string(scenario.backend)},
      {"directives", records},
      {"total_seconds", std::chrono::duration<double>(clock::now() - start).count()}};
  report.manifest = options.out_dir / "manifest.json";
  write_atomic(report.manifest, manifest.dump(2) + "\n");
  return report;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ScenarioError(path.string(), "cannot open file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json version_info() {
  return {{"atomchip", ATOMCHIP_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"openssl", std::string(OpenSSL_version(OPENSSL_VERSION))},
          {"compiler", std::string(__VERSION__)}};
}

}  // namespace atomchip
