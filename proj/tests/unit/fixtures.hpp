#pragma once

#include <random>

#include "atomchip/field.hpp"
#include "atomchip/pattern.hpp"
#include "atomchip/trap.hpp"

namespace atomchip::testing {

inline double calibrated_radius() {
  const FilmSpec film;
  return calibrate_disk_radius(2.0 * film.remanence, film.thickness, 130e-6);
}

inline EditOp stamp(Shape shape, int sign = -1, double power = 20e-3, double spot = 10e-6) {
  EditOp op;
  op.kind = EditKind::stamp;
  op.shape = std::move(shape);
  op.write_field_sign = sign;
  op.beam_power = power;
  op.spot_diameter = spot;
  return op;
}

inline MagnetizationPattern uniform(int polarity = 1) { return create_uniform(FilmSpec{}, polarity); }

inline MagnetizationPattern disk_pattern(const Vec2& center = Vec2::Zero()) {
  return apply_edit(uniform(), stamp(Disk{center, calibrated_radius()}));
}

inline MagnetizationPattern two_disk_pattern() {
  const double r = calibrated_radius();
  auto p = apply_edit(uniform(), stamp(Disk{{-1.5e-3, 0.0}, r}));
  return apply_edit(p, stamp(Disk{{1.5e-3, 0.0}, r}));
}

inline MagnetizationPattern square_pattern() {
  return apply_edit(uniform(), stamp(Rectangle{{-250e-6, -250e-6}, {500e-6, 500e-6}}));
}

inline MagnetizationPattern annulus_pattern() {
  return apply_edit(uniform(), stamp(Annulus{{0.0, 0.0}, 700e-6, 1000e-6}));
}

inline FieldSource fig3h_source() { return make_source(disk_pattern(), BiasField{{0.0, 0.0, 60e-6}, {}}); }

inline SearchRegion box(const Vec3& lo, const Vec3& hi, std::array<int, 3> seeds = {3, 3, 3}) {
  SearchRegion r;
  r.box_min = lo;
  r.box_max = hi;
  r.seeds = seeds;
  return r;
}

// Annulus in an infinite background with the opposing bias that puts a
// closed ring of zeros above its midline.
inline FieldSource ring_source(std::optional<BiasModulation> modulation = std::nullopt) {
  BiasField bias{{0.0, 0.0, 40e-6}, modulation};
  return make_source(annulus_pattern(), bias, std::nullopt, FieldOptions{false});
}

inline BiasModulation circular_modulation(double phase_y = constants::pi / 2) {
  return BiasModulation{{27e-6, 27e-6, 0.0}, 2.0 * constants::pi, {0.0, phase_y, 0.0}};
}

inline double relative(const Vec3& a, const Vec3& b) { return (a - b).norm() / b.norm(); }

}  // namespace atomchip::testing
