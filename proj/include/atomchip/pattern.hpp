#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "atomchip/common.hpp"
#include "atomchip/geometry.hpp"

namespace atomchip {

// Hard ferrite-garnet film. All quantities SI.
struct FilmSpec {
  double thickness = 1.8e-6;       // m
  double remanence = 20e-3;        // T, out-of-plane remanent flux density
  double coercive_field = 10e-3;   // T
  Vec2 extent_center{0.0, 0.0};    // m
  Vec2 extent_size{4e-3, 4e-3};    // m
  double cell_size = 2e-6;         // m

  Box2 extent() const { return {extent_center - 0.5 * extent_size, extent_center + 0.5 * extent_size}; }
  bool operator==(const FilmSpec&) const = default;
};

// Throws SpecificationError with the offending field name.
void validate(const FilmSpec& film);

enum class EditKind { stamp, scan };

struct EditOp {
  EditKind kind = EditKind::stamp;
  Shape shape = Disk{};
  int write_field_sign = -1;   // -1, 0 (optical-only write), +1
  double beam_power = 0.0;     // W
  double spot_diameter = 0.0;  // m

  bool operator==(const EditOp&) const = default;
};

void validate(const EditOp& op);

// Minimum beam power that records a line of the given width:
// 10 mW per 10 um, linear in width.
inline constexpr double kThresholdPowerPerWidth = 10e-3 / 10e-6;  // W / m
double power_threshold(double linewidth);

// Linewidth the threshold is judged against: stroke width for scans,
// spot diameter otherwise.
double write_linewidth(const EditOp& op);

enum class WriteStatus { written, no_write };

struct EditOutcome;
class MagnetizationPattern;
MagnetizationPattern create_uniform(const FilmSpec& film, int polarity);
EditOutcome apply_edit_checked(const MagnetizationPattern& pattern, const EditOp& op);

// Immutable raster of normalized out-of-plane magnetization m in {-1, 0, +1}
// on a regular grid of square cells, plus the edit history that produced it.
// Copies share the raster.
class MagnetizationPattern {
 public:
  const FilmSpec& film() const { return film_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int initial_polarity() const { return initial_polarity_; }
  int8_t at(int i, int j) const { return (*cells_)[static_cast<std::size_t>(j) * nx_ + i]; }
  std::span<const int8_t> cells() const { return *cells_; }
  const std::vector<EditOp>& edit_log() const { return edit_log_; }

  double pitch() const { return film_.cell_size; }
  // Lower-left corner of the raster (grid is centred on the extent).
  Vec2 origin() const;
  Vec2 cell_center(int i, int j) const;

  friend MagnetizationPattern create_uniform(const FilmSpec& film, int polarity);
  friend EditOutcome apply_edit_checked(const MagnetizationPattern& pattern, const EditOp& op);

 private:
  FilmSpec film_;
  int nx_ = 0;
  int ny_ = 0;
  int initial_polarity_ = 1;
  std::shared_ptr<const std::vector<int8_t>> cells_;
  std::vector<EditOp> edit_log_;
};

struct EditOutcome {
  MagnetizationPattern pattern;
  WriteStatus status = WriteStatus::written;
  std::size_t cells_changed = 0;
};

// Sets every cell whose centre lies in the shape to write_field_sign when the
// beam is above threshold; otherwise leaves the raster alone. Either way the
// op is appended to the log.
MagnetizationPattern apply_edit(const MagnetizationPattern& pattern, const EditOp& op);

EditOutcome scan_stroke(const MagnetizationPattern& pattern, std::vector<Vec2> polyline, double width,
                        double power, int write_field_sign);

// Rebuilds a pattern from the film, initial polarity and an edit log.
MagnetizationPattern replay(const FilmSpec& film, int polarity, const std::vector<EditOp>& log);

// Gray level in [0, 1] per cell, same layout as the raster (row j = y index).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> gray;
  double at(int i, int j) const { return gray[static_cast<std::size_t>(j) * width + i]; }
};

GrayImage faraday_image(const MagnetizationPattern& pattern);

// Binary P5 dump, gray = round(127.5 * (m + 1)), top row is the largest y.
std::string faraday_pgm(const MagnetizationPattern& pattern);

}  // namespace atomchip
