#include "atomchip/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

namespace atomchip {

using constants::mu0;
using constants::pi;

// ---------------------------------------------------------------------------
// Bias and auxiliary fields

Vec3 BiasField::at(double time) const {
  Vec3 b = static_field;
  if (modulation) {
    const auto& m = *modulation;
    for (int c = 0; c < 3; ++c) b[c] += m.amplitude[c] * std::sin(m.angular_frequency * time + m.phase[c]);
  }
  return b;
}

void validate(const BiasField& bias) {
  if (!bias.static_field.allFinite()) throw SpecificationError("bias.static", "must be finite");
  if (bias.modulation) {
    const auto& m = *bias.modulation;
    if (!m.amplitude.allFinite() || (m.amplitude.array() < 0.0).any())
      throw SpecificationError("bias.modulation.amplitude", "must be finite and >= 0");
    if (!std::isfinite(m.angular_frequency)) throw SpecificationError("bias.modulation.angular_frequency", "must be finite");
    if (!m.phase.allFinite()) throw SpecificationError("bias.modulation.phase", "must be finite");
  }
}

std::string to_string(Backend b) {
  switch (b) {
    case Backend::edge: return "edge";
    case Backend::sheet: return "sheet";
    case Backend::spectral: return "spectral";
  }
  return "edge";
}

Backend backend_from_string(const std::string& s) {
  if (s == "edge") return Backend::edge;
  if (s == "sheet") return Backend::sheet;
  if (s == "spectral") return Backend::spectral;
  throw SpecificationError("backend", "unknown backend '" + s + "'");
}

// ---------------------------------------------------------------------------
// Boundary extraction

namespace {

using Corner = std::pair<int, int>;  // (i, j) lattice corner

// Directed unit edges with the set on their left, chained into closed loops.
std::vector<std::vector<Corner>> trace_set(int nx, int ny, const std::vector<uint8_t>& in_set) {
  auto inside = [&](int i, int j) {
    return i >= 0 && j >= 0 && i < nx && j < ny && in_set[static_cast<std::size_t>(j) * nx + i];
  };
  // dir: 0 +x, 1 +y, 2 -x, 3 -y
  struct Edge {
    int64_t from;
    int dir;
  };
  const int64_t stride = nx + 1;
  auto vid = [&](int i, int j) { return static_cast<int64_t>(j) * stride + i; };

  std::vector<Edge> edges;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (!inside(i, j)) continue;
      if (!inside(i, j - 1)) edges.push_back({vid(i, j), 0});
      if (!inside(i + 1, j)) edges.push_back({vid(i + 1, j), 1});
      if (!inside(i, j + 1)) edges.push_back({vid(i + 1, j + 1), 2});
      if (!inside(i - 1, j)) edges.push_back({vid(i, j + 1), 3});
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.from != b.from ? a.from < b.from : a.dir < b.dir; });
  std::vector<uint8_t> used(edges.size(), 0);

  constexpr int di[4] = {1, 0, -1, 0};
  constexpr int dj[4] = {0, 1, 0, -1};

  auto find_out = [&](int64_t v, int incoming) -> std::ptrdiff_t {
    auto lo = std::lower_bound(edges.begin(), edges.end(), v,
                               [](const Edge& e, int64_t key) { return e.from < key; });
    std::ptrdiff_t best = -1;
    int best_rank = 4;
    for (auto it = lo; it != edges.end() && it->from == v; ++it) {
      const auto idx = it - edges.begin();
      if (used[idx]) continue;
      // Left turn, straight, right turn: keeps diagonal-touching cells apart.
      const int rank = incoming < 0 ? 0 : (((incoming - it->dir) % 4 + 4 + 1) % 4);
      if (rank < best_rank) {
        best_rank = rank;
        best = idx;
      }
    }
    return best;
  };

  std::vector<std::vector<Corner>> loops;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (used[start]) continue;
    std::vector<Corner> verts;
    std::vector<int> dirs;
    std::ptrdiff_t e = static_cast<std::ptrdiff_t>(start);
    const int64_t v0 = edges[start].from;
    while (e >= 0) {
      used[e] = 1;
      const int64_t v = edges[e].from;
      verts.emplace_back(static_cast<int>(v % stride), static_cast<int>(v / stride));
      dirs.push_back(edges[e].dir);
      const int ni = verts.back().first + di[edges[e].dir];
      const int nj = verts.back().second + dj[edges[e].dir];
      const int64_t next = vid(ni, nj);
      if (next == v0) break;
      e = find_out(next, edges[e].dir);
    }
    // Keep only corners where the direction changes.
    std::vector<Corner> compact;
    const std::size_t n = verts.size();
    for (std::size_t k = 0; k < n; ++k) {
      const int prev_dir = dirs[(k + n - 1) % n];
      if (dirs[k] != prev_dir) compact.push_back(verts[k]);
    }
    if (compact.size() >= 4) loops.push_back(std::move(compact));
  }
  return loops;
}

long long twice_area(const std::vector<Corner>& v) {
  long long a = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto& p = v[k];
    const auto& q = v[(k + 1) % v.size()];
    a += static_cast<long long>(p.first) * q.second - static_cast<long long>(q.first) * p.second;
  }
  return a;
}

// Counter-clockwise, starting at the smallest (j, i) corner.
std::vector<Corner> canonical(std::vector<Corner> v, int& weight) {
  if (twice_area(v) < 0) {
    std::reverse(v.begin(), v.end());
    weight = -weight;
  }
  auto it = std::min_element(v.begin(), v.end(), [](const Corner& a, const Corner& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::rotate(v.begin(), it, v.end());
  return v;
}

int background_of(const MagnetizationPattern& pattern, const FieldOptions& options) {
  return options.include_extent_boundary ? 0 : pattern.initial_polarity();
}

}  // namespace

std::vector<CurrentLoop> boundary_loops(const MagnetizationPattern& pattern, const FieldOptions& options) {
  const int nx = pattern.nx();
  const int ny = pattern.ny();
  const int bg = background_of(pattern, options);
  const auto cells = pattern.cells();

  // f = m - background is a sum of indicator sets {f >= k} minus {f <= -k}.
  std::map<std::vector<Corner>, int> merged;
  std::vector<uint8_t> mask(cells.size());
  for (int k = 1; k <= 2; ++k) {
    for (int sign : {+1, -1}) {
      bool any = false;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const int f = cells[c] - bg;
        mask[c] = sign > 0 ? (f >= k) : (f <= -k);
        any = any || mask[c];
      }
      if (!any) continue;
      for (auto& loop : trace_set(nx, ny, mask)) {
        int w = sign;
        auto key = canonical(std::move(loop), w);
        merged[std::move(key)] += w;
      }
    }
  }

  const Vec2 o = pattern.origin();
  const double h = pattern.pitch();
  std::vector<CurrentLoop> out;
  for (const auto& [verts, weight] : merged) {
    if (weight == 0) continue;
    CurrentLoop loop;
    loop.weight = weight;
    loop.vertices.reserve(verts.size());
    for (const auto& [i, j] : verts) loop.vertices.emplace_back(o.x() + i * h, o.y() + j * h);
    out.push_back(std::move(loop));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

Vec3 segment_field(const Vec3& a, const Vec3& b, double current, const Vec3& p) {
  const Vec3 r1 = p - a;
  const Vec3 r2 = p - b;
  const double n1 = r1.norm();
  const double n2 = r2.norm();
  const Vec3 cross = r1.cross(r2);
  const double dot = r1.dot(r2);
  double denom;
  if (dot >= 0.0) {
    denom = n1 * n2 + dot;
  } else {
    // n1 n2 + dot = |r1 x r2|^2 / (n1 n2 - dot), avoids cancellation next to the wire.
    denom = cross.squaredNorm() / (n1 * n2 - dot);
  }
  if (denom <= 0.0) return Vec3::Zero();
  return (mu0 * current / (4.0 * pi)) * (n1 + n2) / (n1 * n2 * denom) * cross;
}

namespace {

// ln(v + sqrt(v^2 + rest2)) without cancellation for v < 0.
inline double log_v_plus_r(double v, double r, double rest2) {
  if (v >= 0.0) return std::log(v + r);
  return std::log(rest2) - std::log(r - v);
}

}  // namespace

Vec3 rectangle_charge_kernel(double x0, double x1, double y0, double y1, double z0, const Vec3& p) {
  const double zz = p.z() - z0;
  const double z2 = zz * zz;
  const double us[2] = {p.x() - x1, p.x() - x0};
  const double vs[2] = {p.y() - y1, p.y() - y0};
  Vec3 acc = Vec3::Zero();
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double sign = (a == b) ? 1.0 : -1.0;
      const double u = us[a];
      const double v = vs[b];
      const double r = std::sqrt(u * u + v * v + z2);
      acc.x() -= sign * log_v_plus_r(v, r, u * u + z2);
      acc.y() -= sign * log_v_plus_r(u, r, v * v + z2);
      acc.z() += sign * std::atan(u * v / (zz * r));
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// PatternFieldModel

namespace {

constexpr std::array<double, 8> kGaussNodes = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                               -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                               0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGaussWeights = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                 0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                 0.2223810344533745, 0.1012285362903763};
// Beyond this many thicknesses from a ribbon, the midplane line is used.
constexpr double kCollapseDistance = 20.0;

}  // namespace

PatternFieldModel::PatternFieldModel(const MagnetizationPattern& pattern, const FieldOptions& options)
    : pattern_(pattern), options_(options) {
  const auto& film = pattern.film();
  const double unit_current = film.remanence * film.thickness / mu0;
  for (const auto& loop : boundary_loops(pattern, options)) {
    const std::size_t n = loop.vertices.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec2& a = loop.vertices[k];
      const Vec2& b = loop.vertices[(k + 1) % n];
      seg_ax_.push_back(a.x());
      seg_ay_.push_back(a.y());
      seg_bx_.push_back(b.x());
      seg_by_.push_back(b.y());
      seg_i_.push_back(loop.weight * unit_current);
    }
  }

  // Row runs, merged vertically when identical runs stack.
  const int nx = pattern.nx();
  const int ny = pattern.ny();
  const int bg = background_of(pattern, options);
  const Vec2 o = pattern.origin();
  const double h = pattern.pitch();
  struct Open {
    int i0, i1, f;
    std::size_t index;
  };
  std::vector<Open> open_prev, open_cur;
  for (int j = 0; j < ny; ++j) {
    open_cur.clear();
    int i = 0;
    while (i < nx) {
      const int f = pattern.at(i, j) - bg;
      int e = i;
      while (e + 1 < nx && pattern.at(e + 1, j) - bg == f) ++e;
      if (f != 0) {
        auto it = std::find_if(open_prev.begin(), open_prev.end(),
                               [&](const Open& r) { return r.i0 == i && r.i1 == e && r.f == f; });
        if (it != open_prev.end()) {
          run_y1_[it->index] = o.y() + (j + 1) * h;
          open_cur.push_back(*it);
        } else {
          run_x0_.push_back(o.x() + i * h);
          run_x1_.push_back(o.x() + (e + 1) * h);
          run_y0_.push_back(o.y() + j * h);
          run_y1_.push_back(o.y() + (j + 1) * h);
          run_sigma_.push_back(f * film.remanence);
          open_cur.push_back({i, e, f, run_x0_.size() - 1});
        }
      }
      i = e + 1;
    }
    std::swap(open_prev, open_cur);
  }
}

void PatternFieldModel::check_outside(const Vec3& p) const {
  if (!p.allFinite()) throw DomainError("field position must be finite");
  const double t = thickness();
  if (p.z() <= 0.0 && p.z() >= -t) throw DomainError("field position lies inside the film slab");
}

Vec3 PatternFieldModel::edge_current(const Vec3& p) const {
  check_outside(p);
  const double t = thickness();
  const double zmid = -0.5 * t;
  const double collapse2 = (kCollapseDistance * t) * (kCollapseDistance * t);
  const bool near_film = std::abs(p.z() - zmid) < kCollapseDistance * t;
  Vec3 acc = Vec3::Zero();
  const std::size_t n = seg_ax_.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 a{seg_ax_[k], seg_ay_[k], zmid};
    const Vec3 b{seg_bx_[k], seg_by_[k], zmid};
    if (near_film) {
      const double dxy = distance_to_segment(Vec2(p.x(), p.y()), Vec2(a.x(), a.y()), Vec2(b.x(), b.y()));
      const double dz = p.z() - zmid;
      if (dxy * dxy + dz * dz < collapse2) {
        Vec3 sub = Vec3::Zero();
        for (std::size_t g = 0; g < kGaussNodes.size(); ++g) {
          const double z = zmid + 0.5 * t * kGaussNodes[g];
          sub += 0.5 * kGaussWeights[g] *
                 segment_field(Vec3(a.x(), a.y(), z), Vec3(b.x(), b.y(), z), seg_i_[k], p);
        }
        acc += sub;
        continue;
      }
    }
    acc += segment_field(a, b, seg_i_[k], p);
  }
  return acc;
}

Vec3 PatternFieldModel::charge_sheet(const Vec3& p) const {
  check_outside(p);
  const double t = thickness();
  Vec3 acc = Vec3::Zero();
  const std::size_t n = run_x0_.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 top = rectangle_charge_kernel(run_x0_[k], run_x1_[k], run_y0_[k], run_y1_[k], 0.0, p);
    const Vec3 bottom = rectangle_charge_kernel(run_x0_[k], run_x1_[k], run_y0_[k], run_y1_[k], -t, p);
    acc += run_sigma_[k] * (top - bottom);
  }
  return acc / (4.0 * pi);
}

Vec3 PatternFieldModel::evaluate(const Vec3& p, Backend backend) const {
  switch (backend) {
    case Backend::sheet: return charge_sheet(p);
    case Backend::spectral:
      throw SpecificationError("backend", "spectral backend evaluates planar grids only");
    case Backend::edge: break;
  }
  return edge_current(p);
}

Vec3 field_edge_current(const MagnetizationPattern& pattern, const Vec3& position, const FieldOptions& options) {
  return PatternFieldModel(pattern, options).edge_current(position);
}

Vec3 field_charge_sheet(const MagnetizationPattern& pattern, const Vec3& position, const FieldOptions& options) {
  return PatternFieldModel(pattern, options).charge_sheet(position);
}

// ---------------------------------------------------------------------------
// FieldSource

Vec3 FieldSource::pattern_field(const Vec3& p) const {
  if (!pattern) return Vec3::Zero();
  return pattern->evaluate(p, backend);
}

Vec3 FieldSource::field(const Vec3& p, double time) const {
  Vec3 b = pattern_field(p) + bias.at(time);
  if (aux_quadrupole) b += aux_quadrupole->field(p);
  return b;
}

bool FieldSource::inside_film(const Vec3& p) const {
  if (!pattern) return false;
  return p.z() <= 0.0 && p.z() >= -pattern->thickness();
}

FieldSource make_source(const MagnetizationPattern& pattern, BiasField bias, std::optional<AuxQuadrupole> aux,
                        const FieldOptions& options, Backend backend) {
  if (backend == Backend::spectral)
    throw SpecificationError("backend", "spectral backend evaluates planar grids only");
  validate(bias);
  if (aux && !std::isfinite(aux->axial_gradient))
    throw SpecificationError("aux_quadrupole.axial_gradient", "must be finite");
  FieldSource s;
  s.pattern = std::make_shared<const PatternFieldModel>(pattern, options);
  s.bias = std::move(bias);
  s.aux_quadrupole = aux;
  s.backend = backend;
  return s;
}

Vec3 total_field(const FieldSource& source, const Vec3& position, double time) {
  return source.field(position, time);
}

// ---------------------------------------------------------------------------
// Calibration disk

double on_axis_disk_oracle(double delta_bs, double radius, double thickness, double z) {
  if (!(radius > 0.0)) throw SpecificationError("radius", "must be > 0");
  if (!(thickness > 0.0)) throw SpecificationError("thickness", "must be > 0");
  if (z < 0.0) throw SpecificationError("z", "must be >= 0");
  const double zt = z + thickness;
  const double r2 = radius * radius;
  return 0.5 * delta_bs * (zt / std::sqrt(zt * zt + r2) - z / std::sqrt(z * z + r2));
}

double calibrate_disk_radius(double delta_bs, double thickness, double b_center) {
  if (!(thickness > 0.0)) throw SpecificationError("thickness", "must be > 0");
  if (!(b_center > 0.0) || !(delta_bs > 0.0))
    throw SpecificationError("b_center", "contrast and target field must be > 0");
  const double q = delta_bs * thickness / (2.0 * b_center);
  if (q <= thickness) throw SpecificationError("b_center", "target exceeds half the contrast");
  return std::sqrt(q * q - thickness * thickness);
}

}  // namespace atomchip
