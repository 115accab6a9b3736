#include <gtest/gtest.h>

#include <cmath>

#include "atomchip/spectral.hpp"
#include "fixtures.hpp"

using namespace atomchip;
using namespace atomchip::testing;

namespace {

GridSpec square_grid(double half, int n) { return GridSpec{-half, half, n, -half, half, n}; }

// Largest deviation from the charge-sheet backend relative to the largest
// sheet field on the grid.
double worst_deviation(const MagnetizationPattern& p, const FieldOptions& fo, double z, const GridSpec& g) {
  SpectralOptions so;
  so.field = fo;
  const FieldGrid spectral = field_spectral_grid(p, z, g, so);
  PatternFieldModel model(p, fo);
  double worst = 0.0, peak = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const Vec3 ref = model.charge_sheet({g.x(i), g.y(j), z});
      peak = std::max(peak, ref.norm());
      worst = std::max(worst, (spectral.at(i, j) - ref).norm());
    }
  }
  return worst / peak;
}

}  // namespace

TEST(Spectral, FftFriendlySizes) {
  EXPECT_EQ(fft_friendly_size(4000), 4000);
  EXPECT_EQ(fft_friendly_size(4001), 4032);
  EXPECT_EQ(fft_friendly_size(11), 12);
  EXPECT_EQ(fft_friendly_size(1), 1);
}

TEST(Spectral, DiskAgreesWithChargeSheet) {
  EXPECT_LT(worst_deviation(disk_pattern(), FieldOptions{false}, 100e-6, square_grid(600e-6, 13)), 0.03);
  EXPECT_LT(worst_deviation(disk_pattern(), FieldOptions{true}, 200e-6, square_grid(1e-3, 11)), 0.03);
}

TEST(Spectral, AnnulusAgreesWithChargeSheet) {
  EXPECT_LT(worst_deviation(annulus_pattern(), FieldOptions{false}, 250e-6, square_grid(1.2e-3, 13)), 0.03);
}

TEST(Spectral, UniformBackgroundGivesNoField) {
  SpectralOptions so;
  so.field = FieldOptions{false};
  const auto g = field_spectral_grid(uniform(), 200e-6, square_grid(1e-3, 5), so);
  for (const auto& b : g.B) EXPECT_LT(b.norm(), 1e-15);
}

TEST(Spectral, ParsevalEnergyBalance) {
  const auto g = field_spectral_grid(square_pattern(), 50e-6, square_grid(100e-6, 3));
  ASSERT_GT(g.energy_spatial, 0.0);
  EXPECT_NEAR(g.energy_spectral / g.energy_spatial, 1.0, 1e-6);
}

TEST(Spectral, ShiftedSamplingMatchesTranslatedGrid) {
  SpectralFieldModel model(disk_pattern());
  const GridSpec g = square_grid(200e-6, 5);
  const auto shifted = model.sample(150e-6, g, Vec2(2e-6, -4e-6));
  GridSpec moved = g;
  moved.x_min += 2e-6, moved.x_max += 2e-6, moved.y_min -= 4e-6, moved.y_max -= 4e-6;
  const auto direct = model.sample(150e-6, moved);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_LT((shifted.B[k] - direct.B[k]).norm(), 1e-12);
}

TEST(Spectral, JacobianIsTracelessAndSymmetric) {
  SpectralFieldModel model(disk_pattern());
  const auto js = model.jacobian(120e-6, square_grid(300e-6, 3));
  for (const Mat3& j : js) {
    const double scale = j.cwiseAbs().maxCoeff();
    EXPECT_LT(std::abs(j.trace()), 1e-3 * scale);
    EXPECT_LT((j - j.transpose()).norm(), 1e-3 * j.norm());
  }
}

TEST(Spectral, RejectsPlanesInsideValidityFloor) {
  SpectralFieldModel model(disk_pattern());
  EXPECT_THROW(model.sample(0.5e-6, square_grid(1e-4, 3)), DomainError);
  EXPECT_THROW(model.sample(100e-6, square_grid(3e-3, 3)), SpecificationError);
  EXPECT_THROW(SpectralFieldModel(disk_pattern(), SpectralOptions{{}, 1, 1}), SpecificationError);
}
