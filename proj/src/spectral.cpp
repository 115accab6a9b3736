#include "atomchip/spectral.hpp"

#include <cmath>
#include <memory>
#include <mutex>

#include <fftw3.h>

#include "atomchip/parallel.hpp"

namespace atomchip {

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw NumericError("fftw_malloc failed");
  return std::unique_ptr<T[], FftwFree>(p);
}

double wavenumber(int index, int n, double pitch) {
  const int signed_index = index <= n / 2 ? index : index - n;
  return 2.0 * constants::pi * signed_index / (n * pitch);
}

}  // namespace

void validate(const GridSpec& grid) {
  if (grid.nx < 1 || grid.ny < 1) throw SpecificationError("grid", "nx and ny must be >= 1");
  if (!std::isfinite(grid.x_min) || !std::isfinite(grid.x_max) || !std::isfinite(grid.y_min) ||
      !std::isfinite(grid.y_max))
    throw SpecificationError("grid", "bounds must be finite");
  if (grid.x_max < grid.x_min || grid.y_max < grid.y_min) throw SpecificationError("grid", "max must be >= min");
}

int fft_friendly_size(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int f : {2, 3, 5, 7}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return m;
  }
}

SpectralFieldModel::SpectralFieldModel(const MagnetizationPattern& pattern, const SpectralOptions& options) {
  if (options.padding < 2) throw SpecificationError("padding", "zero-padding factor must be >= 2");
  if (options.coarsen < 1) throw SpecificationError("coarsen", "must be >= 1");
  const auto& film = pattern.film();
  const int c = options.coarsen;
  extent_ = film.extent();
  thickness_ = film.thickness;
  pitch_ = film.cell_size * c;
  nx_ = (pattern.nx() + c - 1) / c;
  ny_ = (pattern.ny() + c - 1) / c;
  big_nx_ = fft_friendly_size(options.padding * nx_);
  big_ny_ = fft_friendly_size(options.padding * ny_);
  lattice_origin_ = pattern.origin() + Vec2(0.5 * pitch_, 0.5 * pitch_);

  const int bg = options.field.include_extent_boundary ? 0 : pattern.initial_polarity();
  const std::size_t n_real = static_cast<std::size_t>(big_nx_) * big_ny_;
  const std::size_t n_half = static_cast<std::size_t>(big_nx_ / 2 + 1) * big_ny_;
  auto in = fftw_buffer<double>(n_real);
  auto out = fftw_buffer<fftw_complex>(n_half);
  std::fill(in.get(), in.get() + n_real, 0.0);
  const double scale = film.remanence / (static_cast<double>(c) * c);
  for (int j = 0; j < pattern.ny(); ++j) {
    for (int i = 0; i < pattern.nx(); ++i) {
      in[static_cast<std::size_t>(j / c) * big_nx_ + i / c] += scale * (pattern.at(i, j) - bg);
    }
  }
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_2d(big_ny_, big_nx_, in.get(), out.get(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  spectrum_.resize(n_half);
  for (std::size_t k = 0; k < n_half; ++k) spectrum_[k] = {out[k][0], out[k][1]};
}

void SpectralFieldModel::check_request(double z, const GridSpec& grid) const {
  validate(grid);
  if (!(z >= validity_floor())) throw DomainError("spectral backend requires z >= thickness / 2");
  const double tol = 1e-9;
  if (grid.x_min < extent_.min.x() - tol || grid.x_max > extent_.max.x() + tol ||
      grid.y_min < extent_.min.y() - tol || grid.y_max > extent_.max.y() + tol)
    throw SpecificationError("grid", "must lie within the film extent");
}

FieldGrid SpectralFieldModel::sample(double z, const GridSpec& grid, const Vec2& shift) const {
  check_request(z, grid);
  const int half_nx = big_nx_ / 2 + 1;
  const std::size_t n_real = static_cast<std::size_t>(big_nx_) * big_ny_;
  const std::size_t n_half = static_cast<std::size_t>(half_nx) * big_ny_;
  const double norm = 1.0 / static_cast<double>(n_real);

  auto work = fftw_buffer<fftw_complex>(n_half);
  auto real = fftw_buffer<double>(n_real);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_2d(big_ny_, big_nx_, work.get(), real.get(), FFTW_ESTIMATE);
  }

  FieldGrid result;
  result.grid = grid;
  result.z = z;
  result.B.assign(grid.size(), Vec3::Zero());

  for (int comp = 0; comp < 3; ++comp) {
    double spectral_energy = 0.0;
    for (int j = 0; j < big_ny_; ++j) {
      const double ky = wavenumber(j, big_ny_, pitch_);
      for (int i = 0; i < half_nx; ++i) {
        const double kx = 2.0 * constants::pi * i / (big_nx_ * pitch_);
        const double k = std::hypot(kx, ky);
        const std::size_t idx = static_cast<std::size_t>(j) * half_nx + i;
        std::complex<double> g{0.0, 0.0};
        if (k > 0.0) {
          const double transfer = 0.5 * (-std::expm1(-k * thickness_)) * std::exp(-k * z);
          g = spectrum_[idx] * transfer;
          if (shift.x() != 0.0 || shift.y() != 0.0) g *= std::polar(1.0, kx * shift.x() + ky * shift.y());
          if (comp == 0) g *= std::complex<double>(0.0, -kx / k);
          if (comp == 1) g *= std::complex<double>(0.0, -ky / k);
        }
        if (comp == 2) {
          const double w = (i == 0 || (big_nx_ % 2 == 0 && i == big_nx_ / 2)) ? 1.0 : 2.0;
          spectral_energy += w * std::norm(g);
        }
        g *= norm;
        work[idx][0] = g.real();
        work[idx][1] = g.imag();
      }
    }
    fftw_execute(plan);

    if (comp == 2) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_real; ++k) e += real[k] * real[k];
      result.energy_spatial = e;
      result.energy_spectral = spectral_energy * norm;
    }

    for (int gj = 0; gj < grid.ny; ++gj) {
      for (int gi = 0; gi < grid.nx; ++gi) {
        const double u = (grid.x(gi) - lattice_origin_.x()) / pitch_;
        const double v = (grid.y(gj) - lattice_origin_.y()) / pitch_;
        const double fu = std::floor(u);
        const double fv = std::floor(v);
        const double au = u - fu;
        const double av = v - fv;
        auto wrap = [](long long a, int n) { return static_cast<std::size_t>(((a % n) + n) % n); };
        const std::size_t i0 = wrap(static_cast<long long>(fu), big_nx_);
        const std::size_t i1 = wrap(static_cast<long long>(fu) + 1, big_nx_);
        const std::size_t j0 = wrap(static_cast<long long>(fv), big_ny_);
        const std::size_t j1 = wrap(static_cast<long long>(fv) + 1, big_ny_);
        const double value = (1 - au) * (1 - av) * real[j0 * big_nx_ + i0] + au * (1 - av) * real[j0 * big_nx_ + i1] +
                             (1 - au) * av * real[j1 * big_nx_ + i0] + au * av * real[j1 * big_nx_ + i1];
        result.B[static_cast<std::size_t>(gj) * grid.nx + gi][comp] = value;
      }
    }
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return result;
}

std::vector<Mat3> SpectralFieldModel::jacobian(double z, const GridSpec& grid, double h) const {
  check_request(z, grid);
  if (z - h < validity_floor()) throw DomainError("jacobian step reaches below the spectral validity floor");
  auto central = [&](double step) {
    std::vector<Mat3> d(grid.size(), Mat3::Zero());
    for (int axis = 0; axis < 3; ++axis) {
      FieldGrid plus, minus;
      if (axis < 2) {
        Vec2 s = Vec2::Zero();
        s[axis] = step;
        plus = sample(z, grid, s);
        minus = sample(z, grid, -s);
      } else {
        plus = sample(z + step, grid);
        minus = sample(z - step, grid);
      }
      for (std::size_t k = 0; k < grid.size(); ++k) d[k].col(axis) = (plus.B[k] - minus.B[k]) / (2.0 * step);
    }
    return d;
  };
  const auto coarse = central(h);
  const auto fine = central(0.5 * h);
  std::vector<Mat3> out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) out[k] = (4.0 * fine[k] - coarse[k]) / 3.0;
  return out;
}

FieldGrid field_spectral_grid(const MagnetizationPattern& pattern, double z, const GridSpec& grid,
                              const SpectralOptions& options) {
  return SpectralFieldModel(pattern, options).sample(z, grid);
}

FieldGrid field_grid(const FieldSource& source, double z, const GridSpec& grid, double time, int threads) {
  validate(grid);
  FieldGrid result;
  result.grid = grid;
  result.z = z;
  result.B.assign(grid.size(), Vec3::Zero());
  parallel_for(grid.size(), threads, [&](std::size_t k) {
    const int i = static_cast<int>(k % grid.nx);
    const int j = static_cast<int>(k / grid.nx);
    result.B[k] = source.field(Vec3(grid.x(i), grid.y(j), z), time);
  });
  return result;
}

}  // namespace atomchip
