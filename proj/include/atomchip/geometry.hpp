#pragma once

#include <string>
#include <variant>
#include <vector>

#include "atomchip/common.hpp"

namespace atomchip {

struct Disk {
  Vec2 center{0.0, 0.0};
  double radius = 0.0;
  bool operator==(const Disk&) const = default;
};

struct Rectangle {
  Vec2 corner{0.0, 0.0};  // lower-left
  Vec2 size{0.0, 0.0};
  bool operator==(const Rectangle&) const = default;
};

struct Annulus {
  Vec2 center{0.0, 0.0};
  double r_inner = 0.0;
  double r_outer = 0.0;
  bool operator==(const Annulus&) const = default;
};

// Polyline swept by a beam of the given linewidth.
struct Stroke {
  std::vector<Vec2> polyline;
  double width = 0.0;
  bool operator==(const Stroke&) const = default;
};

using Shape = std::variant<Disk, Rectangle, Annulus, Stroke>;

// Axis-aligned box in the film plane.
struct Box2 {
  Vec2 min{0.0, 0.0};
  Vec2 max{0.0, 0.0};

  bool intersects(const Box2& other) const {
    return min.x() <= other.max.x() && other.min.x() <= max.x() &&
           min.y() <= other.max.y() && other.min.y() <= max.y();
  }
  bool contains(const Vec2& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
  }
};

bool contains(const Shape& shape, const Vec2& p);
Box2 bounding_box(const Shape& shape);
std::string shape_name(const Shape& shape);

// Throws SpecificationError naming the bad parameter.
void validate_shape(const Shape& shape);

// Shortest distance from p to the segment [a, b].
double distance_to_segment(const Vec2& p, const Vec2& a, const Vec2& b);

}  // namespace atomchip
