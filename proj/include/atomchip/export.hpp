#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "atomchip/mot.hpp"
#include "atomchip/spectral.hpp"
#include "atomchip/trap.hpp"

namespace atomchip {

// All writers produce the full file contents as a string so callers can hash
// and write atomically. Numbers use %.12g.

std::string field_grid_csv(const FieldGrid& grid);

std::string field_line_csv(const std::vector<Vec3>& points, const std::vector<Vec3>& fields);

// |B| mapped linearly from [b_min, b_max] to 0..255, top row = largest y.
struct Heatmap {
  std::string pgm;
  std::string scale;  // sidecar text
};
Heatmap field_magnitude_pgm(const FieldGrid& grid);

std::string trap_csv(const std::vector<TrapCandidate>& traps);
std::string ring_csv(const RingLocus& ring);
std::string transport_csv(const TransportPath& path, const Vec2& axis);
std::string trajectory_csv(const CloudResult& cloud);
std::string cloud_summary(const CloudResult& cloud);
std::string capture_summary(const CaptureMetric& metric);

// One JSON header line, then Bx, By, Bz per point as little-endian float64,
// row-major with x fastest.
std::string grid_binary(const FieldGrid& grid, double time);

// Writes to a temporary file in the same directory, then renames.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

std::string sha256_hex(const std::string& bytes);

}  // namespace atomchip
