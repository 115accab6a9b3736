#include "atomchip/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace atomchip {

namespace {
constexpr double kMaxCells = 64e6;

int raster_count(double length, double cell) { return static_cast<int>(std::lround(length / cell)); }
}  // namespace

void validate(const FilmSpec& film) {
  if (!(film.thickness > 0.0) || !std::isfinite(film.thickness))
    throw SpecificationError("thickness", "must be > 0");
  if (!(film.remanence > 0.0) || !std::isfinite(film.remanence))
    throw SpecificationError("remanence", "must be > 0");
  if (!(film.coercive_field > 0.0) || !std::isfinite(film.coercive_field))
    throw SpecificationError("coercive_field", "must be > 0");
  if (!(film.cell_size > 0.0) || !std::isfinite(film.cell_size))
    throw SpecificationError("cell_size", "must be > 0");
  if (!std::isfinite(film.extent_center.x()) || !std::isfinite(film.extent_center.y()))
    throw SpecificationError("extent", "centre must be finite");
  if (!(film.extent_size.x() >= 10.0 * film.cell_size) || !(film.extent_size.y() >= 10.0 * film.cell_size))
    throw SpecificationError("extent", "each side must be at least 10 cells");
  const double cells = std::round(film.extent_size.x() / film.cell_size) *
                       std::round(film.extent_size.y() / film.cell_size);
  if (cells > kMaxCells) throw SpecificationError("cell_size", "raster exceeds 64e6 cells");
}

void validate(const EditOp& op) {
  validate_shape(op.shape);
  if (op.write_field_sign < -1 || op.write_field_sign > 1)
    throw SpecificationError("write_field_sign", "must be -1, 0 or +1");
  if (!std::isfinite(op.beam_power) || op.beam_power < 0.0)
    throw SpecificationError("beam_power", "must be >= 0");
  if (!(op.spot_diameter > 0.0) || !std::isfinite(op.spot_diameter))
    throw SpecificationError("spot_diameter", "must be > 0");
}

double power_threshold(double linewidth) { return kThresholdPowerPerWidth * linewidth; }

double write_linewidth(const EditOp& op) {
  if (op.kind == EditKind::scan) {
    if (const auto* stroke = std::get_if<Stroke>(&op.shape)) return stroke->width;
  }
  return op.spot_diameter;
}

Vec2 MagnetizationPattern::origin() const {
  return film_.extent_center - 0.5 * film_.cell_size * Vec2(nx_, ny_);
}

Vec2 MagnetizationPattern::cell_center(int i, int j) const {
  return origin() + film_.cell_size * Vec2(i + 0.5, j + 0.5);
}

MagnetizationPattern create_uniform(const FilmSpec& film, int polarity) {
  validate(film);
  if (polarity != 1 && polarity != -1) throw SpecificationError("polarity", "must be -1 or +1");
  MagnetizationPattern p;
  p.film_ = film;
  p.nx_ = raster_count(film.extent_size.x(), film.cell_size);
  p.ny_ = raster_count(film.extent_size.y(), film.cell_size);
  p.initial_polarity_ = polarity;
  p.cells_ = std::make_shared<const std::vector<int8_t>>(static_cast<std::size_t>(p.nx_) * p.ny_,
                                                         static_cast<int8_t>(polarity));
  return p;
}

EditOutcome apply_edit_checked(const MagnetizationPattern& pattern, const EditOp& op) {
  validate(op);
  const Box2 extent = pattern.film().extent();
  const Box2 bbox = bounding_box(op.shape);
  if (!bbox.intersects(extent)) throw SpecificationError("shape", "lies entirely outside the film extent");
  if (const auto* stroke = std::get_if<Stroke>(&op.shape)) {
    const auto inside = std::count_if(stroke->polyline.begin(), stroke->polyline.end(),
                                      [&](const Vec2& v) { return extent.contains(v); });
    if (inside < 2) throw SpecificationError("stroke.polyline", "needs at least 2 vertices inside the extent");
  }

  EditOutcome out{pattern, WriteStatus::written, 0};
  out.pattern.edit_log_.push_back(op);
  if (op.beam_power < power_threshold(write_linewidth(op))) {
    out.status = WriteStatus::no_write;
    return out;
  }

  const double h = pattern.pitch();
  const Vec2 o = pattern.origin();
  // Cells whose centres can fall inside the bbox.
  const int i0 = std::max(0, static_cast<int>(std::floor((bbox.min.x() - o.x()) / h - 0.5)));
  const int i1 = std::min(pattern.nx() - 1, static_cast<int>(std::ceil((bbox.max.x() - o.x()) / h - 0.5)));
  const int j0 = std::max(0, static_cast<int>(std::floor((bbox.min.y() - o.y()) / h - 0.5)));
  const int j1 = std::min(pattern.ny() - 1, static_cast<int>(std::ceil((bbox.max.y() - o.y()) / h - 0.5)));

  auto cells = std::make_shared<std::vector<int8_t>>(*pattern.cells_);
  const auto value = static_cast<int8_t>(op.write_field_sign);
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      if (!contains(op.shape, pattern.cell_center(i, j))) continue;
      auto& c = (*cells)[static_cast<std::size_t>(j) * pattern.nx() + i];
      if (c != value) {
        c = value;
        ++out.cells_changed;
      }
    }
  }
  out.pattern.cells_ = std::move(cells);
  return out;
}

MagnetizationPattern apply_edit(const MagnetizationPattern& pattern, const EditOp& op) {
  return apply_edit_checked(pattern, op).pattern;
}

EditOutcome scan_stroke(const MagnetizationPattern& pattern, std::vector<Vec2> polyline, double width,
                        double power, int write_field_sign) {
  EditOp op;
  op.kind = EditKind::scan;
  op.shape = Stroke{std::move(polyline), width};
  op.write_field_sign = write_field_sign;
  op.beam_power = power;
  op.spot_diameter = width;
  return apply_edit_checked(pattern, op);
}

MagnetizationPattern replay(const FilmSpec& film, int polarity, const std::vector<EditOp>& log) {
  auto p = create_uniform(film, polarity);
  for (const auto& op : log) p = apply_edit(p, op);
  return p;
}

GrayImage faraday_image(const MagnetizationPattern& pattern) {
  GrayImage img{pattern.nx(), pattern.ny(), {}};
  img.gray.reserve(pattern.cells().size());
  for (int8_t m : pattern.cells()) img.gray.push_back(0.5 * (m + 1));
  return img;
}

std::string faraday_pgm(const MagnetizationPattern& pattern) {
  std::ostringstream header;
  header << "P5\n" << pattern.nx() << ' ' << pattern.ny() << "\n255\n";
  std::string out = header.str();
  out.reserve(out.size() + pattern.cells().size());
  for (int j = pattern.ny() - 1; j >= 0; --j) {
    for (int i = 0; i < pattern.nx(); ++i) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(127.5 * (pattern.at(i, j) + 1)))));
    }
  }
  return out;
}

}  // namespace atomchip
