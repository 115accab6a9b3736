#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace atomchip;
using namespace atomchip::testing;

namespace {

constexpr double pi = constants::pi;

FieldSource quadrupole_only(double g, const Vec3& center) {
  FieldSource s;
  s.aux_quadrupole = AuxQuadrupole{center, g};
  return s;
}

double wrap(double a) { return std::remainder(a, 2.0 * pi); }

}  // namespace

TEST(Trap, AnalyticQuadrupoleZeroAndGradients) {
  const Vec3 c{30e-6, -20e-6, 1e-3};
  const auto src = quadrupole_only(0.5, c);
  const auto traps = find_zeros(src, box({-1e-4, -1e-4, 0.9e-3}, {1e-4, 1e-4, 1.1e-3}), 0.0);
  ASSERT_EQ(traps.size(), 1u);
  const auto& t = traps[0];
  EXPECT_LT((t.position - c).norm(), 1e-9);
  EXPECT_EQ(t.classification, TrapClass::quadrupole_3d);
  EXPECT_NEAR(t.principal_gradients[0], -0.25, 1e-6);
  EXPECT_NEAR(t.principal_gradients[1], -0.25, 1e-6);
  EXPECT_NEAR(t.principal_gradients[2], 0.5, 1e-6);
  EXPECT_NEAR(t.gradient_tensor.trace(), 0.0, 1e-9);
}

TEST(Trap, AnalyticQuadrupoleDepthIsWeakestFaceField) {
  const double g = 0.4, w = 200e-6;
  const Vec3 c{0, 0, 1e-3};
  const auto src = quadrupole_only(g, c);
  const auto traps = find_zeros(src, box(c - Vec3::Constant(w), c + Vec3::Constant(w)), 0.0);
  ASSERT_EQ(traps.size(), 1u);
  const double depth = trap_depth(src, traps[0], c - Vec3::Constant(w), c + Vec3::Constant(w), 10e-6);
  EXPECT_NEAR(depth, 0.5 * g * w, 0.03 * 0.5 * g * w);
}

TEST(Trap, ReversedDiskWithOpposingBias) {
  const auto src = fig3h_source();
  const auto traps = find_zeros(src, box({-400e-6, -400e-6, 50e-6}, {400e-6, 400e-6, 500e-6}), 0.0);
  ASSERT_EQ(traps.size(), 1u);
  const auto& t = traps[0];
  EXPECT_NEAR(t.position.z(), 200e-6, 10e-6);
  EXPECT_LT(std::hypot(t.position.x(), t.position.y()), 1e-6);
  EXPECT_LT(t.residual_B, 10e-9);
  EXPECT_EQ(t.classification, TrapClass::quadrupole_3d);
  EXPECT_LT(t.principal_gradients[0], 0.0);
  EXPECT_LT(t.principal_gradients[1], 0.0);
  EXPECT_GT(t.principal_gradients[2], 0.0);
  EXPECT_NEAR(t.principal_gradients[0], t.principal_gradients[1], 1e-3 * t.principal_gradients[2]);
  EXPECT_NEAR(t.principal_gradients[2], -2.0 * t.principal_gradients[0], 1e-3 * t.principal_gradients[2]);
  EXPECT_NEAR(t.gradient_tensor.trace(), 0.0, 1e-4 * t.gradient_tensor.cwiseAbs().maxCoeff());
  EXPECT_LT((t.gradient_tensor - t.gradient_tensor.transpose()).norm(), 1e-3 * t.gradient_tensor.norm());
}

TEST(Trap, DepthOfDiskTrapIsPositiveAndBelowBias) {
  const auto src = fig3h_source();
  const Vec3 lo{-400e-6, -400e-6, 20e-6}, hi{400e-6, 400e-6, 800e-6};
  const auto traps = find_zeros(src, box(lo, hi), 0.0);
  ASSERT_FALSE(traps.empty());
  const double d = trap_depth(src, traps[0], lo, hi, 20e-6);
  EXPECT_GT(d, 1e-6);
  EXPECT_LT(d, 130e-6);
  EXPECT_GT(depth_to_kelvin(d), 0.0);
}

TEST(Trap, TwoDisksGiveTwoSymmetricTraps) {
  const auto src = make_source(two_disk_pattern(), BiasField{{0.0, 0.0, 60e-6}, {}});
  const auto traps = find_zeros(src, box({-2e-3, -0.5e-3, 50e-6}, {2e-3, 0.5e-3, 500e-6}, {8, 3, 3}), 0.0);
  ASSERT_EQ(traps.size(), 2u);
  const Vec3& a = traps[0].position.x() < 0 ? traps[0].position : traps[1].position;
  const Vec3& b = traps[0].position.x() < 0 ? traps[1].position : traps[0].position;
  EXPECT_NEAR(a.x(), -b.x(), 1e-6);
  EXPECT_NEAR(a.z(), b.z(), 1e-6);
  EXPECT_NEAR(std::abs(a.x()), 1.5e-3, 50e-6);
  for (const auto& t : traps) EXPECT_EQ(t.classification, TrapClass::quadrupole_3d);
}

TEST(Trap, FindZerosIsDeterministicAcrossThreads) {
  const auto src = fig3h_source();
  const auto r = box({-400e-6, -400e-6, 50e-6}, {400e-6, 400e-6, 500e-6}, {4, 4, 4});
  const auto a = find_zeros(src, r, 0.0, 1);
  const auto b = find_zeros(src, r, 0.0, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].position, b[k].position);
}

TEST(Trap, RegionReachingIntoFilmRejected) {
  const auto src = fig3h_source();
  EXPECT_THROW(find_zeros(src, box({-1e-4, -1e-4, 0.5e-6}, {1e-4, 1e-4, 1e-4}), 0.0), SpecificationError);
  EXPECT_THROW(find_zeros(src, box({1e-4, -1e-4, 50e-6}, {-1e-4, 1e-4, 1e-4}), 0.0), SpecificationError);
}

TEST(Trap, JacobianMatchesAnalyticQuadrupole) {
  const auto src = quadrupole_only(0.2, {0, 0, 1e-3});
  const Mat3 j = jacobian(src, {1e-4, 2e-4, 1.1e-3}, 0.0);
  Mat3 expected = Mat3::Zero();
  expected.diagonal() << -0.1, -0.1, 0.2;
  EXPECT_LT((j - expected).norm(), 1e-9);
}

TEST(Ring, AnnulusGivesClosedRingAboveMidline) {
  const auto src = ring_source();
  const auto ring = ring_locus(src, box({-1.2e-3, -1.2e-3, 50e-6}, {1.2e-3, 1.2e-3, 500e-6}, {10, 10, 2}), 0.0);
  EXPECT_EQ(ring.topology, RingTopology::closed_ring);
  EXPECT_GE(ring.vertices.size(), 8u);
  EXPECT_LT(ring.center.norm(), 20e-6);
  EXPECT_GT(ring.mean_radius, 700e-6);
  EXPECT_LT(ring.mean_radius, 1000e-6);
  EXPECT_GT(ring.mean_height, 50e-6);
  for (const auto& v : ring.vertices) {
    EXPECT_LT(total_field(src, v, 0.0).norm(), 10e-9);
    EXPECT_NEAR(std::hypot(v.x(), v.y()), ring.mean_radius, 20e-6);
  }
  ASSERT_EQ(ring.transverse_gradients.size(), ring.vertices.size());
  for (const auto& g : ring.transverse_gradients) {
    EXPECT_GT(std::abs(g[0]), 1e-3);
    EXPECT_GT(std::abs(g[1]), 1e-3);
  }
}

TEST(Ring, NoBiasGivesNoRing) {
  const auto src = make_source(annulus_pattern(), BiasField{}, std::nullopt, FieldOptions{false});
  const auto ring = ring_locus(src, box({-1.2e-3, -1.2e-3, 50e-6}, {1.2e-3, 1.2e-3, 500e-6}, {6, 6, 2}), 0.0);
  EXPECT_NE(ring.topology, RingTopology::closed_ring);
}

namespace {

SearchRegion transport_region() { return box({-1.5e-3, -1.5e-3, 20e-6}, {1.5e-3, 1.5e-3, 800e-6}, {6, 6, 3}); }

}  // namespace

TEST(Transport, CircularModulationGivesOneTurnInQuarterSteps) {
  const auto src = ring_source(circular_modulation());
  const auto path = transport_trajectory(src, transport_region(), 16);
  ASSERT_FALSE(path.lost_at.has_value());
  ASSERT_EQ(path.samples.size(), 16u);
  EXPECT_DOUBLE_EQ(path.period, 1.0);
  std::vector<Vec3> pts;
  for (const auto& s : path.samples) pts.push_back(s.position);
  pts.push_back(pts.front());
  const auto az = unwrapped_azimuths(pts, Vec2::Zero());
  EXPECT_NEAR(std::abs(az.back() - az.front()), 2.0 * pi, 0.05);
  for (int q = 0; q < 4; ++q) {
    const double step = az[4 * (q + 1)] - az[4 * q];
    EXPECT_NEAR(std::abs(step), pi / 2, 5.0 * pi / 180.0) << q;
  }
  for (const auto& s : path.samples) EXPECT_EQ(s.classification, TrapClass::quadrupole_3d);
}

TEST(Transport, InPhaseModulationHasNoNetWinding) {
  const auto src = ring_source(circular_modulation(0.0));
  const auto path = transport_trajectory(src, transport_region(), 16);
  ASSERT_FALSE(path.lost_at.has_value());
  std::vector<Vec3> pts;
  for (const auto& s : path.samples) pts.push_back(s.position);
  pts.push_back(pts.front());
  const auto az = unwrapped_azimuths(pts, Vec2::Zero());
  EXPECT_LT(std::abs(az.back() - az.front()), 0.05);
}

TEST(Transport, RefinedSamplingAgreesAtSharedTimes) {
  const auto src = ring_source(circular_modulation());
  const auto coarse = transport_trajectory(src, transport_region(), 8);
  const auto fine = transport_trajectory(src, transport_region(), 16);
  ASSERT_EQ(coarse.samples.size(), 8u);
  ASSERT_EQ(fine.samples.size(), 16u);
  for (int k = 0; k < 8; ++k) {
    EXPECT_LT((coarse.samples[k].position - fine.samples[2 * k].position).norm(), 1e-6) << k;
    EXPECT_DOUBLE_EQ(coarse.samples[k].time, fine.samples[2 * k].time);
  }
}

TEST(Transport, RequiresModulation) {
  EXPECT_THROW(transport_trajectory(ring_source(), transport_region(), 16), SpecificationError);
}

TEST(Transport, UnwrappedAzimuthsAreContinuous) {
  std::vector<Vec3> pts;
  for (int k = 0; k <= 40; ++k) pts.emplace_back(std::cos(-0.3 * k), std::sin(-0.3 * k), 0.0);
  const auto az = unwrapped_azimuths(pts, Vec2::Zero());
  for (int k = 1; k <= 40; ++k) EXPECT_NEAR(az[k] - az[k - 1], -0.3, 1e-12);
  EXPECT_NEAR(wrap(az[40] - az[0] + 12.0), 0.0, 1e-9);
}

TEST(Transport, ZeroAmplitudeKeepsTrapFixed) {
  const auto src = ring_source(BiasModulation{Vec3::Zero(), 2.0 * pi, {0.0, pi / 2, 0.0}});
  const auto path = transport_trajectory(src, transport_region(), 8);
  ASSERT_FALSE(path.lost_at.has_value());
  ASSERT_EQ(path.samples.size(), 8u);
  for (const auto& s : path.samples) EXPECT_EQ(s.position, path.samples.front().position);
}

TEST(Ring, PlainDiskGivesIsolatedPoints) {
  const auto ring = ring_locus(fig3h_source(), box({-400e-6, -400e-6, 50e-6}, {400e-6, 400e-6, 500e-6}), 0.0);
  EXPECT_EQ(ring.topology, RingTopology::isolated_points);
}

TEST(Trap, BiasPushingZeroOutOfBoxGivesZeroDepth) {
  // Raising the bias lowers the zero; follow it and measure the depth in a
  // fixed box until the zero has left through the bottom face.
  const Vec3 lo{-100e-6, -100e-6, 150e-6}, hi{100e-6, 100e-6, 300e-6};
  const auto wide = box({-300e-6, -300e-6, 5e-6}, {300e-6, 300e-6, 500e-6});
  auto src = fig3h_source();
  Vec3 at = find_zeros(src, wide, 0.0).at(0).position;
  bool saw_positive = false, left = false;
  for (double b = 60e-6; b <= 120e-6 && !left; b += 10e-6) {
    src.bias.static_field = {0, 0, b};
    const auto trap = refine_zero(src, wide, at, 0.0);
    ASSERT_TRUE(trap.has_value()) << b;
    at = trap->position;
    const double d = trap_depth(src, *trap, lo, hi, 10e-6);
    if (at.z() > lo.z() + 10e-6) {
      EXPECT_GT(d, 0.0) << b;
      saw_positive = true;
    } else if (at.z() < lo.z()) {
      EXPECT_EQ(d, 0.0) << b;
      left = true;
    }
  }
  EXPECT_TRUE(saw_positive);
  EXPECT_TRUE(left);
}
