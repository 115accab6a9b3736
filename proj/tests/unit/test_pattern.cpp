#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"

using namespace atomchip;
using namespace atomchip::testing;

namespace {

// Independent cell-centre count for a disk on the default film.
std::size_t cells_in_disk(const FilmSpec& film, const Vec2& c, double r) {
  const int n = static_cast<int>(std::lround(film.extent_size.x() / film.cell_size));
  const double x0 = film.extent_center.x() - 0.5 * film.extent_size.x();
  const double y0 = film.extent_center.y() - 0.5 * film.extent_size.y();
  std::size_t count = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = x0 + (i + 0.5) * film.cell_size - c.x();
      const double y = y0 + (j + 0.5) * film.cell_size - c.y();
      if (x * x + y * y <= r * r) ++count;
    }
  }
  return count;
}

std::size_t count_value(const MagnetizationPattern& p, int v) {
  return static_cast<std::size_t>(std::count(p.cells().begin(), p.cells().end(), static_cast<int8_t>(v)));
}

}  // namespace

TEST(Pattern, UniformFilmHasFullRaster) {
  const auto p = uniform(1);
  EXPECT_EQ(p.nx(), 2000);
  EXPECT_EQ(p.ny(), 2000);
  EXPECT_EQ(count_value(p, 1), 2000u * 2000u);
  EXPECT_EQ(count_value(uniform(-1), -1), 2000u * 2000u);
}

TEST(Pattern, InvalidFilmNamesField) {
  FilmSpec f;
  f.cell_size = 0.0;
  try {
    create_uniform(f, 1);
    FAIL() << "expected SpecificationError";
  } catch (const SpecificationError& e) {
    EXPECT_EQ(e.field(), "cell_size");
  }
  f = FilmSpec{};
  f.thickness = -1.0;
  EXPECT_THROW(create_uniform(f, 1), SpecificationError);
  EXPECT_THROW(create_uniform(FilmSpec{}, 0), SpecificationError);
}

TEST(Pattern, ReversedDiskMatchesCellCentreCount) {
  const double r = calibrated_radius();
  const auto p = disk_pattern();
  const std::size_t expected = cells_in_disk(FilmSpec{}, Vec2::Zero(), r);
  EXPECT_EQ(count_value(p, -1), expected);
  EXPECT_EQ(count_value(p, 1), 2000u * 2000u - expected);
  EXPECT_EQ(p.edit_log().size(), 1u);
}

TEST(Pattern, WriteThenEraseRestoresRasterExactly) {
  const auto base = uniform();
  const Disk d{{123e-6, -40e-6}, calibrated_radius()};
  const auto written = apply_edit(base, stamp(d, -1));
  const auto erased = apply_edit(written, stamp(d, +1));
  ASSERT_EQ(base.cells().size(), erased.cells().size());
  EXPECT_TRUE(std::equal(base.cells().begin(), base.cells().end(), erased.cells().begin()));
}

TEST(Pattern, EraseInverseOnArbitraryBackground) {
  auto p = annulus_pattern();
  p = apply_edit(p, stamp(Rectangle{{-300e-6, -900e-6}, {600e-6, 300e-6}}, 0));
  const Disk d{{0.0, -800e-6}, 200e-6};
  const auto once = apply_edit(p, stamp(d, -1));
  const auto back = apply_edit(once, stamp(d, +1));
  const auto again = apply_edit(back, stamp(d, -1));
  EXPECT_TRUE(std::equal(once.cells().begin(), once.cells().end(), again.cells().begin()));
}

TEST(Pattern, OpticalZeroWriteLeavesSurroundings) {
  const auto base = disk_pattern();
  const Rectangle sq{{500e-6, 500e-6}, {200e-6, 200e-6}};
  const auto p = apply_edit(base, stamp(sq, 0));
  EXPECT_EQ(count_value(p, 0), 100u * 100u);
  for (int j = 0; j < p.ny(); j += 7) {
    for (int i = 0; i < p.nx(); i += 7) {
      if (contains(Shape{sq}, p.cell_center(i, j))) {
        EXPECT_EQ(p.at(i, j), 0);
      } else {
        EXPECT_EQ(p.at(i, j), base.at(i, j));
      }
    }
  }
}

TEST(Pattern, ThresholdTenMilliwattPerTenMicron) {
  EXPECT_DOUBLE_EQ(power_threshold(10e-6), 10e-3);
  const auto base = uniform();
  const auto ok = scan_stroke(base, {{-1e-3, 0.0}, {1e-3, 0.0}}, 10e-6, 10e-3, -1);
  EXPECT_EQ(ok.status, WriteStatus::written);
  EXPECT_GT(ok.cells_changed, 0u);
  const auto weak = scan_stroke(base, {{-1e-3, 0.0}, {1e-3, 0.0}}, 10e-6, 5e-3, -1);
  EXPECT_EQ(weak.status, WriteStatus::no_write);
  EXPECT_EQ(weak.cells_changed, 0u);
  EXPECT_TRUE(std::equal(base.cells().begin(), base.cells().end(), weak.pattern.cells().begin()));
  EXPECT_EQ(weak.pattern.edit_log().size(), 1u);
}

TEST(Pattern, ThresholdMonotoneInPower) {
  const auto base = uniform();
  for (double w : {4e-6, 10e-6, 20e-6}) {
    for (double factor : {1.0, 1.5, 3.0}) {
      const auto r = scan_stroke(base, {{0.0, -5e-4}, {0.0, 5e-4}}, w, factor * power_threshold(w), -1);
      EXPECT_EQ(r.status, WriteStatus::written) << w << " " << factor;
    }
  }
}

TEST(Pattern, StrokeCellsWithinHalfWidth) {
  const std::vector<Vec2> poly{{-400e-6, 0.0}, {0.0, 0.0}, {0.0, 400e-6}};
  const double width = 20e-6;
  const auto r = scan_stroke(disk_pattern(), poly, width, 50e-3, -1);
  const auto& p = r.pattern;
  for (int j = 850; j < 1250; ++j) {
    for (int i = 750; i < 1050; ++i) {
      const Vec2 c = p.cell_center(i, j);
      const double d = std::min(distance_to_segment(c, poly[0], poly[1]), distance_to_segment(c, poly[1], poly[2]));
      if (d <= 0.5 * width) EXPECT_EQ(p.at(i, j), -1);
    }
  }
}

TEST(Pattern, ShapeOutsideExtentAndNegativePowerRejected) {
  EXPECT_THROW(apply_edit(uniform(), stamp(Disk{{10e-3, 0.0}, 100e-6})), SpecificationError);
  EXPECT_THROW(apply_edit(uniform(), stamp(Disk{{0.0, 0.0}, 100e-6}, -1, -1.0)), SpecificationError);
}

TEST(Pattern, RasterClosureAndReplay) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-1.8e-3, 1.8e-3), rad(20e-6, 300e-6);
  std::uniform_int_distribution<int> sign(-1, 1);
  auto p = uniform();
  for (int k = 0; k < 12; ++k) {
    EditOp op = k % 3 == 0 ? stamp(Rectangle{{pos(rng), pos(rng)}, {rad(rng), rad(rng)}}, sign(rng))
                           : stamp(Disk{{pos(rng), pos(rng)}, rad(rng)}, sign(rng));
    p = apply_edit(p, op);
  }
  for (int8_t m : p.cells()) ASSERT_TRUE(m == -1 || m == 0 || m == 1);
  const auto q = replay(p.film(), p.initial_polarity(), p.edit_log());
  EXPECT_TRUE(std::equal(p.cells().begin(), p.cells().end(), q.cells().begin()));
}

TEST(Pattern, LocalityOutsideEditRegion) {
  const auto base = annulus_pattern();
  const Disk d{{-1e-3, 1e-3}, 150e-6};
  const auto p = apply_edit(base, stamp(d, 0));
  for (int j = 0; j < p.ny(); j += 3) {
    for (int i = 0; i < p.nx(); i += 3) {
      if (!contains(Shape{d}, p.cell_center(i, j))) ASSERT_EQ(p.at(i, j), base.at(i, j));
    }
  }
}

TEST(Pattern, FaradayImageMapsThreeStates) {
  auto p = disk_pattern();
  p = apply_edit(p, stamp(Rectangle{{500e-6, 500e-6}, {100e-6, 100e-6}}, 0));
  const auto img = faraday_image(p);
  EXPECT_EQ(img.width, p.nx());
  EXPECT_EQ(img.height, p.ny());
  EXPECT_DOUBLE_EQ(img.at(1000, 1000), 0.0);  // reversed disk centre is dark
  EXPECT_DOUBLE_EQ(img.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(img.at(1275, 1275), 0.5);
  const auto white = faraday_image(uniform());
  EXPECT_TRUE(std::all_of(white.gray.begin(), white.gray.end(), [](double g) { return g == 1.0; }));
}

TEST(Pattern, FaradayPgmIsP5WithTopRowLargestY) {
  auto p = apply_edit(uniform(), stamp(Rectangle{{-2e-3, 1.9e-3}, {4e-3, 0.1e-3}}, -1));
  const std::string pgm = faraday_pgm(p);
  const std::string header = "P5\n2000 2000\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  ASSERT_EQ(pgm.size(), header.size() + 2000u * 2000u);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(pgm.back()), 255);
  p = apply_edit(p, stamp(Rectangle{{-2e-3, -2e-3}, {4e-3, 0.1e-3}}, 0));
  EXPECT_EQ(static_cast<unsigned char>(faraday_pgm(p).back()), 128);
}
