#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "atomchip/common.hpp"
#include "atomchip/field.hpp"

namespace atomchip {

enum class TrapClass { quadrupole_3d, degenerate_line, not_a_trap };
std::string to_string(TrapClass c);

struct TrapCandidate {
  Vec3 position = Vec3::Zero();
  double time = 0.0;
  double residual_B = 0.0;                 // |B| at position, T
  Mat3 gradient_tensor = Mat3::Zero();     // J(i, j) = dB_i / dx_j, T/m
  Vec3 principal_gradients = Vec3::Zero(); // eigenvalues of the symmetric part, ascending
  TrapClass classification = TrapClass::not_a_trap;
  std::optional<double> depth;             // T, filled by trap_depth
};

struct SearchRegion {
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Zero();
  std::array<int, 3> seeds{3, 3, 3};
  double zero_tolerance = 10e-9;  // T
  int max_iterations = 100;
  double merge_radius = 5e-6;     // m

  bool contains(const Vec3& p) const {
    return (p.array() >= box_min.array()).all() && (p.array() <= box_max.array()).all();
  }

  bool operator==(const SearchRegion&) const = default;
};

// Throws SpecificationError when malformed or when the box reaches into the
// film (z_min below half a thickness above the top face).
void validate(const SearchRegion& region, const FieldSource& source);

// Central differences with step h, extrapolated once (Richardson). The step
// is halved while it would cross the film; below 1 nm this throws.
Mat3 jacobian(const FieldSource& source, const Vec3& position, double time, double h = 1e-6);

// Multi-start damped Newton on B(x) = 0 (trust region on |B|^2, initial
// radius 50 um) from a regular seed lattice. Converged points with
// |B| <= zero_tolerance are merged within merge_radius, in seed order.
std::vector<TrapCandidate> find_zeros(const FieldSource& source, const SearchRegion& region, double time,
                                      int threads = 1);

// Single Newton solve from `start`; nullopt when it does not reach the
// tolerance inside the region.
std::optional<TrapCandidate> refine_zero(const FieldSource& source, const SearchRegion& region, const Vec3& start,
                                         double time);

// Barrier height in |B| between the trap and the box boundary, from a
// minimax flood fill over a lattice of the given spacing (|B| sampled lazily).
double trap_depth(const FieldSource& source, const TrapCandidate& trap, const Vec3& box_min, const Vec3& box_max,
                  double spacing = 5e-6);

// Trap depth in kelvin for a weak-field seeker with magnetic moment mu.
inline double depth_to_kelvin(double depth_tesla, double moment = constants::bohr_magneton) {
  return depth_tesla * moment / constants::k_boltzmann;
}

enum class RingTopology { closed_ring, disconnected, isolated_points };
std::string to_string(RingTopology t);

struct RingLocus {
  RingTopology topology = RingTopology::isolated_points;
  Vec2 center = Vec2::Zero();
  double mean_radius = 0.0;
  double mean_height = 0.0;
  std::vector<Vec3> vertices;                 // ordered by azimuth about center
  std::vector<Vec2> transverse_gradients;     // two largest-magnitude principal gradients per vertex
  std::vector<std::vector<Vec3>> components;  // azimuthally contiguous pieces
};

struct RingOptions {
  double max_gap_deg = 30.0;  // largest azimuth gap still counted as contiguous
  int min_vertices = 8;
  bool operator==(const RingOptions&) const = default;
};

RingLocus ring_locus(const FieldSource& source, const SearchRegion& region, double time,
                     const RingOptions& options = {}, int threads = 1);

struct TransportPath {
  std::vector<TrapCandidate> samples;  // at t_k = k T / N
  std::optional<std::size_t> lost_at;  // first sample index that could not be followed
  double period = 0.0;
};

struct TransportOptions {
  int substeps_per_period = 256;  // continuation steps between solves
  double max_jump = 200e-6;       // m, per continuation step
};

// Quasi-static trap path over one modulation period. The first trap found at
// t = 0 is followed by Newton continuation through intermediate times.
TransportPath transport_trajectory(const FieldSource& source, const SearchRegion& region, int samples,
                                   const TransportOptions& options = {});

// Azimuths (rad) of the points about `center`, unwrapped to be continuous.
std::vector<double> unwrapped_azimuths(const std::vector<Vec3>& points, const Vec2& center);

}  // namespace atomchip
