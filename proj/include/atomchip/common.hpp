#pragma once

#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace atomchip {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

namespace constants {
inline constexpr double pi = std::numbers::pi;
inline constexpr double mu0 = 4.0e-7 * pi;        // T m / A
inline constexpr double hbar = 1.054571817e-34;   // J s
inline constexpr double planck = 6.62607015e-34;  // J s
inline constexpr double k_boltzmann = 1.380649e-23;
inline constexpr double g_standard = 9.80665;     // m / s^2
inline constexpr double bohr_magneton = 9.2740100783e-24;  // J / T
}  // namespace constants

// Invalid user input. `field()` names the offending parameter.
class SpecificationError : public std::invalid_argument {
 public:
  SpecificationError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A physically meaningless request, e.g. evaluating the field inside the film.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Numerical failure (step underflow, non-convergence where convergence is required).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace atomchip
