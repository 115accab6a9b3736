#pragma once

#include <complex>
#include <vector>

#include "atomchip/common.hpp"
#include "atomchip/field.hpp"
#include "atomchip/pattern.hpp"

namespace atomchip {

// Regular nx x ny lattice of points in a plane z = const, row-major with x
// fastest. A single point per axis is allowed (min == max).
struct GridSpec {
  double x_min = 0.0, x_max = 0.0;
  int nx = 1;
  double y_min = 0.0, y_max = 0.0;
  int ny = 1;

  double x(int i) const { return nx == 1 ? x_min : x_min + (x_max - x_min) * i / (nx - 1); }
  double y(int j) const { return ny == 1 ? y_min : y_min + (y_max - y_min) * j / (ny - 1); }
  std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }

  bool operator==(const GridSpec&) const = default;
};

void validate(const GridSpec& grid);

struct FieldGrid {
  GridSpec grid;
  double z = 0.0;
  std::vector<Vec3> B;  // T
  // Sum of B_z^2 over the padded lattice and the same energy summed over the
  // spectrum (spectral backend only; equal up to rounding).
  double energy_spatial = 0.0;
  double energy_spectral = 0.0;

  const Vec3& at(int i, int j) const { return B[static_cast<std::size_t>(j) * grid.nx + i]; }
};

struct SpectralOptions {
  FieldOptions field;
  int padding = 2;  // padded lattice >= padding * raster on each axis
  int coarsen = 1;  // block-average the raster by this factor first
};

// Planar field of a pattern by 2-D FFT of its raster. For wavevector k:
//   Bz(k, z) = 1/2 Bs(k) (1 - exp(-|k| t)) exp(-|k| z),
//   B{x,y}(k, z) = -i k{x,y} / |k| Bz(k, z)   (FFTW sign convention),
// with the k = 0 term dropped. The forward transform is cached; each
// evaluation is three inverse transforms.
class SpectralFieldModel {
 public:
  explicit SpectralFieldModel(const MagnetizationPattern& pattern, const SpectralOptions& options = {});

  // Field at grid points in the plane z. `shift` translates the whole
  // evaluation lattice (exact, via a phase ramp), used for derivatives.
  FieldGrid sample(double z, const GridSpec& grid, const Vec2& shift = Vec2::Zero()) const;

  // Central-difference Jacobians (step h, one Richardson extrapolation) at
  // points of a single plane.
  std::vector<Mat3> jacobian(double z, const GridSpec& grid, double h = 1e-6) const;

  int lattice_nx() const { return big_nx_; }
  int lattice_ny() const { return big_ny_; }
  double lattice_pitch() const { return pitch_; }
  double validity_floor() const { return 0.5 * thickness_; }

 private:
  void check_request(double z, const GridSpec& grid) const;

  Box2 extent_;
  Vec2 lattice_origin_;  // centre of lattice node (0, 0)
  double pitch_ = 0.0;
  double thickness_ = 0.0;
  int nx_ = 0, ny_ = 0;          // raster after coarsening
  int big_nx_ = 0, big_ny_ = 0;  // padded
  std::vector<std::complex<double>> spectrum_;  // big_ny_ x (big_nx_/2 + 1)
};

FieldGrid field_spectral_grid(const MagnetizationPattern& pattern, double z, const GridSpec& grid,
                              const SpectralOptions& options = {});

// Point-by-point grid with the edge-current or charge-sheet backend.
FieldGrid field_grid(const FieldSource& source, double z, const GridSpec& grid, double time, int threads = 1);

// Smallest size >= n whose only prime factors are 2, 3, 5, 7.
int fft_friendly_size(int n);

}  // namespace atomchip
