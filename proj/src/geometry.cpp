#include "atomchip/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace atomchip {

namespace {
template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;
}  // namespace

double distance_to_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double s = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

bool contains(const Shape& shape, const Vec2& p) {
  return std::visit(
      Overloaded{
          [&](const Disk& d) { return (p - d.center).squaredNorm() <= d.radius * d.radius; },
          [&](const Rectangle& r) {
            return p.x() >= r.corner.x() && p.x() <= r.corner.x() + r.size.x() &&
                   p.y() >= r.corner.y() && p.y() <= r.corner.y() + r.size.y();
          },
          [&](const Annulus& a) {
            const double r2 = (p - a.center).squaredNorm();
            return r2 >= a.r_inner * a.r_inner && r2 <= a.r_outer * a.r_outer;
          },
          [&](const Stroke& s) {
            const double half = 0.5 * s.width;
            for (std::size_t k = 1; k < s.polyline.size(); ++k) {
              if (distance_to_segment(p, s.polyline[k - 1], s.polyline[k]) <= half) return true;
            }
            return false;
          },
      },
      shape);
}

Box2 bounding_box(const Shape& shape) {
  return std::visit(
      Overloaded{
          [](const Disk& d) {
            const Vec2 r{d.radius, d.radius};
            return Box2{d.center - r, d.center + r};
          },
          [](const Rectangle& r) { return Box2{r.corner, r.corner + r.size}; },
          [](const Annulus& a) {
            const Vec2 r{a.r_outer, a.r_outer};
            return Box2{a.center - r, a.center + r};
          },
          [](const Stroke& s) {
            constexpr double inf = std::numeric_limits<double>::infinity();
            Box2 box{{inf, inf}, {-inf, -inf}};
            for (const auto& v : s.polyline) {
              box.min = box.min.cwiseMin(v);
              box.max = box.max.cwiseMax(v);
            }
            const Vec2 h{0.5 * s.width, 0.5 * s.width};
            box.min -= h;
            box.max += h;
            return box;
          },
      },
      shape);
}

std::string shape_name(const Shape& shape) {
  return std::visit(Overloaded{
                        [](const Disk&) { return std::string("disk"); },
                        [](const Rectangle&) { return std::string("rectangle"); },
                        [](const Annulus&) { return std::string("annulus"); },
                        [](const Stroke&) { return std::string("stroke"); },
                    },
                    shape);
}

void validate_shape(const Shape& shape) {
  auto finite2 = [](const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); };
  std::visit(Overloaded{
                 [&](const Disk& d) {
                   if (!finite2(d.center)) throw SpecificationError("disk.center", "must be finite");
                   if (!(d.radius > 0.0)) throw SpecificationError("disk.radius", "must be > 0");
                 },
                 [&](const Rectangle& r) {
                   if (!finite2(r.corner)) throw SpecificationError("rectangle.corner", "must be finite");
                   if (!(r.size.x() > 0.0 && r.size.y() > 0.0))
                     throw SpecificationError("rectangle.size", "sides must be > 0");
                 },
                 [&](const Annulus& a) {
                   if (!finite2(a.center)) throw SpecificationError("annulus.center", "must be finite");
                   if (!(a.r_inner > 0.0)) throw SpecificationError("annulus.r_inner", "must be > 0");
                   if (!(a.r_outer > a.r_inner))
                     throw SpecificationError("annulus.r_outer", "must exceed r_inner");
                 },
                 [&](const Stroke& s) {
                   if (s.polyline.size() < 2)
                     throw SpecificationError("stroke.polyline", "needs at least 2 vertices");
                   for (const auto& v : s.polyline) {
                     if (!finite2(v)) throw SpecificationError("stroke.polyline", "vertices must be finite");
                   }
                   if (!(s.width > 0.0)) throw SpecificationError("stroke.width", "must be > 0");
                 },
             },
             shape);
}

}  // namespace atomchip
