#include "atomchip/trap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <Eigen/SVD>

#include "atomchip/parallel.hpp"

namespace atomchip {

std::string to_string(TrapClass c) {
  switch (c) {
    case TrapClass::quadrupole_3d: return "quadrupole_3d";
    case TrapClass::degenerate_line: return "degenerate_line";
    case TrapClass::not_a_trap: return "not_a_trap";
  }
  return "not_a_trap";
}

std::string to_string(RingTopology t) {
  switch (t) {
    case RingTopology::closed_ring: return "closed_ring";
    case RingTopology::disconnected: return "disconnected";
    case RingTopology::isolated_points: return "isolated_points";
  }
  return "isolated_points";
}

void validate(const SearchRegion& region, const FieldSource& source) {
  if (!region.box_min.allFinite() || !region.box_max.allFinite())
    throw SpecificationError("region.box", "must be finite");
  if ((region.box_max.array() <= region.box_min.array()).any())
    throw SpecificationError("region.box", "max must exceed min on every axis");
  for (int a = 0; a < 3; ++a) {
    if (region.seeds[a] < 2) throw SpecificationError("region.seeds", "need at least 2 seeds per axis");
  }
  if (!(region.zero_tolerance > 0.0)) throw SpecificationError("region.zero_tolerance", "must be > 0");
  if (region.max_iterations < 1) throw SpecificationError("region.max_iterations", "must be >= 1");
  if (!(region.merge_radius > 0.0)) throw SpecificationError("region.merge_radius", "must be > 0");
  if (source.pattern && region.box_min.z() < 0.5 * source.film_thickness())
    throw SpecificationError("region.box", "intersects the film; z_min must be >= thickness / 2");
}

namespace {

bool crosses_film(const FieldSource& source, const Vec3& p, double h) {
  if (!source.pattern) return false;
  const double t = source.film_thickness();
  const double lo = p.z() - h;
  const double hi = p.z() + h;
  return !(lo > 0.0 || hi < -t);
}

Mat3 central_difference(const FieldSource& source, const Vec3& p, double time, double h) {
  Mat3 j;
  for (int a = 0; a < 3; ++a) {
    Vec3 step = Vec3::Zero();
    step[a] = h;
    j.col(a) = (source.field(p + step, time) - source.field(p - step, time)) / (2.0 * h);
  }
  return j;
}

double usable_step(const FieldSource& source, const Vec3& p, double h) {
  while (crosses_film(source, p, h)) {
    h *= 0.5;
    if (h < 1e-9) throw NumericError("jacobian step fell below 1 nm next to the film");
  }
  return h;
}

void classify(TrapCandidate& c, double tolerance) {
  const Mat3 sym = 0.5 * (c.gradient_tensor + c.gradient_tensor.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(sym, Eigen::EigenvaluesOnly);
  c.principal_gradients = eig.eigenvalues();
  const Vec3 mags = c.principal_gradients.cwiseAbs();
  if (c.residual_B > tolerance) {
    c.classification = TrapClass::not_a_trap;
  } else if (mags.maxCoeff() == 0.0 || mags.minCoeff() < 0.02 * mags.maxCoeff()) {
    c.classification = TrapClass::degenerate_line;
  } else {
    c.classification = TrapClass::quadrupole_3d;
  }
}

struct NewtonResult {
  Vec3 position;
  Vec3 field;
  bool converged = false;
};

NewtonResult newton(const FieldSource& source, const SearchRegion& region, const Vec3& start, double time) {
  constexpr double kInitialRadius = 50e-6;
  constexpr double kMaxRadius = 500e-6;
  const Vec3 margin = 0.25 * (region.box_max - region.box_min);
  const double polish = 1e-3 * region.zero_tolerance;

  Vec3 x = start;
  Vec3 b = source.field(x, time);
  double f = b.squaredNorm();
  double radius = kInitialRadius;
  for (int it = 0; it < region.max_iterations && std::sqrt(f) > polish; ++it) {
    const double h = usable_step(source, x, 1e-6);
    const Mat3 j = central_difference(source, x, time, h);
    Eigen::JacobiSVD<Mat3> svd(j, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-6);
    Vec3 d = -svd.solve(b);
    if (!d.allFinite()) break;
    const double len = d.norm();
    const bool clipped = len > radius;
    if (clipped) d *= radius / len;
    const Vec3 xn = x + d;
    if (source.pattern && xn.z() < 0.5 * source.film_thickness()) {
      radius *= 0.25;
      continue;
    }
    const Vec3 bn = source.field(xn, time);
    const double fn = bn.squaredNorm();
    if (fn < f) {
      x = xn;
      b = bn;
      f = fn;
      if (clipped) radius = std::min(2.0 * radius, kMaxRadius);
    } else {
      radius = 0.25 * std::min(radius, len);
      if (radius < 1e-13) break;
    }
    if ((x.array() < (region.box_min - margin).array()).any() || (x.array() > (region.box_max + margin).array()).any())
      return {x, b, false};
  }
  return {x, b, std::sqrt(f) <= region.zero_tolerance && region.contains(x)};
}

TrapCandidate characterize(const FieldSource& source, const Vec3& x, const Vec3& b, double time,
                           double tolerance) {
  TrapCandidate c;
  c.position = x;
  c.time = time;
  c.residual_B = b.norm();
  c.gradient_tensor = jacobian(source, x, time);
  classify(c, tolerance);
  return c;
}

}  // namespace

Mat3 jacobian(const FieldSource& source, const Vec3& position, double time, double h) {
  if (source.inside_film(position)) throw DomainError("jacobian position lies inside the film slab");
  h = usable_step(source, position, h);
  const Mat3 coarse = central_difference(source, position, time, h);
  const Mat3 fine = central_difference(source, position, time, 0.5 * h);
  return (4.0 * fine - coarse) / 3.0;
}

std::optional<TrapCandidate> refine_zero(const FieldSource& source, const SearchRegion& region, const Vec3& start,
                                         double time) {
  const auto r = newton(source, region, start, time);
  if (!r.converged) return std::nullopt;
  return characterize(source, r.position, r.field, time, region.zero_tolerance);
}

std::vector<TrapCandidate> find_zeros(const FieldSource& source, const SearchRegion& region, double time,
                                      int threads) {
  validate(region, source);
  const auto& n = region.seeds;
  const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
  const Vec3 size = region.box_max - region.box_min;
  std::vector<NewtonResult> results(total);
  parallel_for(total, threads, [&](std::size_t k) {
    const int i = static_cast<int>(k % n[0]);
    const int j = static_cast<int>((k / n[0]) % n[1]);
    const int l = static_cast<int>(k / (static_cast<std::size_t>(n[0]) * n[1]));
    const Vec3 seed = region.box_min + Vec3((i + 0.5) / n[0] * size.x(), (j + 0.5) / n[1] * size.y(),
                                            (l + 0.5) / n[2] * size.z());
    results[k] = newton(source, region, seed, time);
  });

  struct Merged {
    Vec3 position;
    Vec3 field;
  };
  std::vector<Merged> merged;
  for (const auto& r : results) {
    if (!r.converged) continue;
    auto it = std::find_if(merged.begin(), merged.end(), [&](const Merged& m) {
      return (m.position - r.position).norm() <= region.merge_radius;
    });
    if (it == merged.end()) {
      merged.push_back({r.position, r.field});
    } else if (r.field.norm() < it->field.norm()) {
      *it = {r.position, r.field};
    }
  }

  std::vector<TrapCandidate> out;
  out.reserve(merged.size());
  for (const auto& m : merged) out.push_back(characterize(source, m.position, m.field, time, region.zero_tolerance));
  return out;
}

double trap_depth(const FieldSource& source, const TrapCandidate& trap, const Vec3& box_min, const Vec3& box_max,
                  double spacing) {
  if (!(spacing > 0.0)) throw SpecificationError("spacing", "must be > 0");
  if ((box_max.array() <= box_min.array()).any()) throw SpecificationError("box", "max must exceed min");
  if (source.pattern && box_min.z() <= 0.0 && box_max.z() >= -source.film_thickness())
    throw SpecificationError("box", "intersects the film");
  std::array<int, 3> n{};
  Vec3 step;
  for (int a = 0; a < 3; ++a) {
    n[a] = std::max(2, static_cast<int>(std::lround((box_max[a] - box_min[a]) / spacing)) + 1);
    step[a] = (box_max[a] - box_min[a]) / (n[a] - 1);
  }
  const Vec3 rel = (trap.position - box_min).cwiseQuotient(step);
  std::array<int, 3> s{};
  for (int a = 0; a < 3; ++a) {
    s[a] = static_cast<int>(std::lround(rel[a]));
    if (s[a] < 0 || s[a] >= n[a]) return 0.0;
  }
  auto on_boundary = [&](const std::array<int, 3>& c) {
    for (int a = 0; a < 3; ++a) {
      if (c[a] == 0 || c[a] == n[a] - 1) return true;
    }
    return false;
  };
  if (on_boundary(s)) return 0.0;

  const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
  auto index = [&](const std::array<int, 3>& c) {
    return (static_cast<std::size_t>(c[2]) * n[1] + c[1]) * n[0] + c[0];
  };
  std::vector<uint8_t> seen(total, 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  auto value_at = [&](const std::array<int, 3>& c) {
    const Vec3 p = box_min + Vec3(c[0] * step.x(), c[1] * step.y(), c[2] * step.z());
    return source.field(p, trap.time).norm();
  };
  auto coords = [&](std::size_t idx) {
    std::array<int, 3> c{};
    c[0] = static_cast<int>(idx % n[0]);
    c[1] = static_cast<int>((idx / n[0]) % n[1]);
    c[2] = static_cast<int>(idx / (static_cast<std::size_t>(n[0]) * n[1]));
    return c;
  };

  const std::size_t start = index(s);
  seen[start] = 1;
  queue.emplace(value_at(s), start);
  double level = 0.0;
  while (!queue.empty()) {
    const auto [value, idx] = queue.top();
    queue.pop();
    level = std::max(level, value);
    const auto c = coords(idx);
    if (on_boundary(c)) return std::max(0.0, level - trap.residual_B);
    for (int a = 0; a < 3; ++a) {
      for (int d : {-1, 1}) {
        auto nb = c;
        nb[a] += d;
        const std::size_t ni = index(nb);
        if (seen[ni]) continue;
        seen[ni] = 1;
        queue.emplace(value_at(nb), ni);
      }
    }
  }
  return 0.0;
}

namespace {

// Algebraic least-squares circle through the xy projections.
Vec2 fit_circle_center(const std::vector<Vec3>& pts) {
  Eigen::MatrixXd a(pts.size(), 3);
  Eigen::VectorXd rhs(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    a(k, 0) = pts[k].x();
    a(k, 1) = pts[k].y();
    a(k, 2) = 1.0;
    rhs(k) = -(pts[k].x() * pts[k].x() + pts[k].y() * pts[k].y());
  }
  const Eigen::Vector3d sol = a.colPivHouseholderQr().solve(rhs);
  return {-0.5 * sol(0), -0.5 * sol(1)};
}

}  // namespace

RingLocus ring_locus(const FieldSource& source, const SearchRegion& region, double time, const RingOptions& options,
                     int threads) {
  const auto zeros = find_zeros(source, region, time, threads);
  RingLocus ring;
  if (zeros.empty()) return ring;

  std::vector<Vec3> pts;
  for (const auto& z : zeros) pts.push_back(z.position);
  if (pts.size() < 3) {
    ring.topology = RingTopology::isolated_points;
    ring.vertices = pts;
    for (const auto& z : zeros) {
      ring.transverse_gradients.emplace_back(z.principal_gradients[0], z.principal_gradients[2]);
      ring.components.push_back({z.position});
    }
    Vec2 c = Vec2::Zero();
    for (const auto& p : pts) c += p.head<2>();
    ring.center = c / static_cast<double>(pts.size());
    return ring;
  }

  ring.center = fit_circle_center(pts);
  std::vector<std::size_t> order(zeros.size());
  std::vector<double> phi(zeros.size());
  for (std::size_t k = 0; k < zeros.size(); ++k) {
    order[k] = k;
    const Vec2 d = zeros[k].position.head<2>() - ring.center;
    phi[k] = std::atan2(d.y(), d.x());
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return phi[a] < phi[b]; });

  double radius_sum = 0.0;
  double height_sum = 0.0;
  for (std::size_t k : order) {
    const auto& z = zeros[k];
    ring.vertices.push_back(z.position);
    Vec3 g = z.principal_gradients;
    std::sort(g.data(), g.data() + 3, [](double a, double b) { return std::abs(a) > std::abs(b); });
    ring.transverse_gradients.emplace_back(g[0], g[1]);
    radius_sum += (z.position.head<2>() - ring.center).norm();
    height_sum += z.position.z();
  }
  ring.mean_radius = radius_sum / zeros.size();
  ring.mean_height = height_sum / zeros.size();

  const double max_gap = options.max_gap_deg * constants::pi / 180.0;
  std::vector<std::size_t> breaks;  // index after which a gap exceeds max_gap
  double largest_gap = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double a = phi[order[k]];
    const double b = (k + 1 < order.size()) ? phi[order[k + 1]] : phi[order[0]] + 2.0 * constants::pi;
    const double gap = b - a;
    largest_gap = std::max(largest_gap, gap);
    if (gap > max_gap) breaks.push_back(k);
  }
  const bool lines = std::all_of(zeros.begin(), zeros.end(),
                                 [](const TrapCandidate& z) { return z.classification == TrapClass::degenerate_line; });
  if (breaks.empty() && static_cast<int>(zeros.size()) >= options.min_vertices && lines) {
    ring.topology = RingTopology::closed_ring;
    ring.components.push_back(ring.vertices);
    return ring;
  }

  // Split into azimuthally contiguous components, starting after a gap.
  const std::size_t n = ring.vertices.size();
  const std::size_t first = breaks.empty() ? 0 : (breaks.front() + 1) % n;
  std::vector<Vec3> current;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = (first + s) % n;
    current.push_back(ring.vertices[k]);
    if (std::find(breaks.begin(), breaks.end(), k) != breaks.end()) {
      ring.components.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) ring.components.push_back(std::move(current));
  const bool all_single = std::all_of(ring.components.begin(), ring.components.end(),
                                      [](const auto& c) { return c.size() == 1; });
  ring.topology = all_single ? RingTopology::isolated_points : RingTopology::disconnected;
  return ring;
}

TransportPath transport_trajectory(const FieldSource& source, const SearchRegion& region, int samples,
                                   const TransportOptions& options) {
  if (!source.bias.modulation) throw SpecificationError("bias.modulation", "transport requires a modulated bias");
  const double omega = source.bias.modulation->angular_frequency;
  if (!(omega > 0.0)) throw SpecificationError("bias.modulation.angular_frequency", "must be > 0");
  if (samples < 1) throw SpecificationError("samples", "must be >= 1");
  validate(region, source);

  TransportPath path;
  path.period = 2.0 * constants::pi / omega;
  const auto initial = find_zeros(source, region, 0.0);
  if (initial.empty()) {
    path.lost_at = 0;
    return path;
  }
  path.samples.push_back(initial.front());
  const int sub = std::max(1, (options.substeps_per_period + samples - 1) / samples);
  Vec3 current = initial.front().position;
  for (int k = 1; k < samples; ++k) {
    const double t0 = path.period * (k - 1) / samples;
    const double t1 = path.period * k / samples;
    for (int s = 1; s <= sub; ++s) {
      const double t = t0 + (t1 - t0) * s / sub;
      const auto r = newton(source, region, current, t);
      if (!r.converged || (r.position - current).norm() > options.max_jump) {
        path.lost_at = static_cast<std::size_t>(k);
        return path;
      }
      current = r.position;
      if (s == sub) path.samples.push_back(characterize(source, r.position, r.field, t1, region.zero_tolerance));
    }
  }
  return path;
}

std::vector<double> unwrapped_azimuths(const std::vector<Vec3>& points, const Vec2& center) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const double a = std::atan2(p.y() - center.y(), p.x() - center.x());
    if (out.empty()) {
      out.push_back(a);
      continue;
    }
    double d = a - std::remainder(out.back(), 2.0 * constants::pi);
    d = std::remainder(d, 2.0 * constants::pi);
    out.push_back(out.back() + d);
  }
  return out;
}

}  // namespace atomchip
