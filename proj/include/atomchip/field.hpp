#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "atomchip/common.hpp"
#include "atomchip/pattern.hpp"

namespace atomchip {

// Sinusoidal modulation added to the static bias:
// B_i(t) += amplitude_i * sin(angular_frequency * t + phase_i).
struct BiasModulation {
  Vec3 amplitude = Vec3::Zero();  // T, each >= 0
  double angular_frequency = 0.0;  // rad/s
  Vec3 phase = Vec3::Zero();       // rad

  bool operator==(const BiasModulation&) const = default;
};

struct BiasField {
  Vec3 static_field = Vec3::Zero();  // T
  std::optional<BiasModulation> modulation;

  Vec3 at(double time) const;
  bool operator==(const BiasField&) const = default;
};

void validate(const BiasField& bias);

// Large-scale anti-Helmholtz field g * (-(x-x0)/2, -(y-y0)/2, z-z0).
struct AuxQuadrupole {
  Vec3 center = Vec3::Zero();
  double axial_gradient = 0.0;  // T/m

  Vec3 field(const Vec3& p) const {
    const Vec3 d = p - center;
    return axial_gradient * Vec3(-0.5 * d.x(), -0.5 * d.y(), d.z());
  }

  bool operator==(const AuxQuadrupole&) const = default;
};

enum class Backend { edge, sheet, spectral };
std::string to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct FieldOptions {
  // false: treat the film as embedded in an infinite background magnetized
  // at the initial polarity, so the outer film edge carries no current.
  bool include_extent_boundary = true;
  bool operator==(const FieldOptions&) const = default;
};

// Closed boundary loop on the raster. The loop carries a sheet current
// weight * remanence * thickness / mu0 counter-clockwise seen from +z,
// i.e. weight is the magnetization jump (inside minus outside).
struct CurrentLoop {
  std::vector<Vec2> vertices;  // closing edge implied
  int weight = 0;
};

std::vector<CurrentLoop> boundary_loops(const MagnetizationPattern& pattern, const FieldOptions& options = {});

// Precomputed sources for repeated evaluation of one pattern's field.
// Immutable after construction and safe to share between threads.
class PatternFieldModel {
 public:
  explicit PatternFieldModel(const MagnetizationPattern& pattern, const FieldOptions& options = {});

  const MagnetizationPattern& pattern() const { return pattern_; }
  const FieldOptions& options() const { return options_; }
  double thickness() const { return pattern_.film().thickness; }
  std::size_t segment_count() const { return seg_ax_.size(); }
  std::size_t patch_count() const { return run_x0_.size(); }

  // Biot-Savart over the boundary ribbons. Far from a ribbon its current is
  // collapsed onto mid-thickness; close to it the ribbon height is integrated
  // with Gauss-Legendre nodes.
  Vec3 edge_current(const Vec3& p) const;
  // Two charged sheets (z = 0 and z = -thickness) integrated with the exact
  // uniformly-charged-rectangle kernel over row runs of equal magnetization.
  Vec3 charge_sheet(const Vec3& p) const;
  Vec3 evaluate(const Vec3& p, Backend backend) const;

  void check_outside(const Vec3& p) const;

 private:
  MagnetizationPattern pattern_;
  FieldOptions options_;
  // Segments of all loops, current already folded into seg_i_ (A).
  std::vector<double> seg_ax_, seg_ay_, seg_bx_, seg_by_, seg_i_;
  // Row runs of constant (m - background): [x0, x1] x [y0, y1], value in T.
  std::vector<double> run_x0_, run_x1_, run_y0_, run_y1_, run_sigma_;
};

Vec3 field_edge_current(const MagnetizationPattern& pattern, const Vec3& position, const FieldOptions& options = {});
Vec3 field_charge_sheet(const MagnetizationPattern& pattern, const Vec3& position, const FieldOptions& options = {});

// Straight-segment Biot-Savart kernel: field (T) at p of current I (A)
// flowing from a to b.
Vec3 segment_field(const Vec3& a, const Vec3& b, double current, const Vec3& p);

// Integral over the rectangle [x0,x1]x[y0,y1] in the plane z = z0 of
// (p - r') / |p - r'|^3 dA'. Multiply by sigma / (4 pi) for the field.
Vec3 rectangle_charge_kernel(double x0, double x1, double y0, double y1, double z0, const Vec3& p);

// Everything that contributes to B at a point and time.
struct FieldSource {
  std::shared_ptr<const PatternFieldModel> pattern;  // may be null
  BiasField bias;
  std::optional<AuxQuadrupole> aux_quadrupole;
  Backend backend = Backend::edge;

  Vec3 pattern_field(const Vec3& p) const;
  Vec3 field(const Vec3& p, double time) const;
  // z-range occupied by the film, empty when there is no pattern.
  bool inside_film(const Vec3& p) const;
  double film_thickness() const { return pattern ? pattern->thickness() : 0.0; }
};

FieldSource make_source(const MagnetizationPattern& pattern, BiasField bias = {},
                        std::optional<AuxQuadrupole> aux = std::nullopt, const FieldOptions& options = {},
                        Backend backend = Backend::edge);

Vec3 total_field(const FieldSource& source, const Vec3& position, double time);

// On-axis B_z of a uniformly magnetized disk of contrast delta_bs, radius R
// and thickness t, at height z above its top face.
double on_axis_disk_oracle(double delta_bs, double radius, double thickness, double z);

// Radius for which on_axis_disk_oracle(delta_bs, R, t, 0) equals b_center.
double calibrate_disk_radius(double delta_bs, double thickness, double b_center);

}  // namespace atomchip
