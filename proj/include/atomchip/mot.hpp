#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "atomchip/common.hpp"
#include "atomchip/field.hpp"
#include "atomchip/trap.hpp"

namespace atomchip {

// Two-level stand-in for the cooling transition.
struct AtomSpecies {
  double mass = 0.0;         // kg
  double wavelength = 0.0;   // m
  double linewidth = 0.0;    // Gamma, rad/s
  double zeeman_rate = 0.0;  // mu'/hbar, rad/(s T)

  double wavenumber() const { return 2.0 * constants::pi / wavelength; }
  double recoil_momentum() const { return constants::hbar * wavenumber(); }

  bool operator==(const AtomSpecies&) const = default;
};

// 85Rb D2 cycling transition: m = 1.409e-25 kg, Gamma/2pi = 6.07 MHz,
// lambda = 780 nm, mu'/h = 1.4 MHz/G (stretched-state value).
AtomSpecies rubidium85();
void validate(const AtomSpecies& species);

inline double doppler_temperature(const AtomSpecies& species) {
  return constants::hbar * species.linewidth / (2.0 * constants::k_boltzmann);
}

struct Beam {
  Vec3 direction = Vec3::UnitX();  // unit wavevector
  int handedness = 1;              // sigma, +1 or -1
  double power = 0.0;              // W
  double waist_diameter_1e2 = 0.0; // m

  double waist_radius() const { return 0.5 * waist_diameter_1e2; }
  double peak_intensity() const;   // W/m^2, 2P / (pi w^2)

  bool operator==(const Beam&) const = default;
};

// Beams 2i and 2i+1 form counter-propagating pairs. Beam axes all pass
// through beam_center.
struct MOTConfig {
  std::array<Beam, 6> beams;
  Vec3 beam_center = Vec3::Zero();
  double detuning = 0.0;               // rad/s, negative = red
  double saturation_intensity = 16.69; // W/m^2
  // Through-film attenuation on the +z leg, the one that has crossed the
  // film after retro-reflection below the chip.
  bool film_attenuation = false;
  double film_transmission = 0.9;
  bool operator==(const MOTConfig&) const = default;
};

void validate(const MOTConfig& config);

// Six beams along +-x, +-y, +-z with equal power and diameter. The
// handedness is chosen so the light restores toward a zero whose axial
// gradient dBz/dz has sign `gradient_sign`.
MOTConfig standard_mot(const AtomSpecies& species, double power = 20e-3, double waist_diameter = 10e-3,
                       double detuning_linewidths = -1.0, const Vec3& center = Vec3::Zero(),
                       int gradient_sign = 1);

struct BeamForces {
  std::array<Vec3, 6> force;  // N
  std::array<double, 6> rate; // photon scattering rate per beam, 1/s

  Vec3 total() const;
};

// F_i = hbar k k_i (Gamma/2) s_i / (1 + s_tot + (2 delta_i / Gamma)^2),
// delta_i = detuning - k k_i.v - sigma_i (mu'/hbar)(k_i.B).
BeamForces beam_scattering_force(const MOTConfig& config, const AtomSpecies& species, const Vec3& B, const Vec3& v,
                                 const Vec3& position);

struct AtomState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  bool alive = true;
};

// Light force with B = total field at the atom, plus (0, 0, -m g) when
// requested. The magnetic dipole force is neglected.
Vec3 total_force(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                 const AtomState& state, double time, bool include_gravity);

struct ForceSample {
  Vec3 force = Vec3::Zero();
  std::array<double, 6> rate{};  // per-beam scattering rates, used for recoil kicks
};

using ForceModel = std::function<ForceSample(const Vec3& position, const Vec3& velocity, double time)>;

ForceModel mot_force_model(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                           bool include_gravity);

// Random recoil: per beam N_i ~ Poisson(R_i dt) absorptions, each kick
// (N_i - R_i dt) hbar k k_i (the mean is already in the force) plus N_i
// spontaneous emissions in isotropic random directions.
struct RecoilKicks {
  std::mt19937_64* rng = nullptr;
  double momentum = 0.0;               // hbar k
  std::array<Vec3, 6> directions{};
};

struct StepLimits {
  double mass = 0.0;
  double max_displacement = 0.0;  // m; a larger step throws NumericError
  // Simulation volume. A step ending outside it marks the atom dead
  // without evaluating the force there.
  Vec3 volume_min = Vec3::Constant(-std::numeric_limits<double>::infinity());
  Vec3 volume_max = Vec3::Constant(std::numeric_limits<double>::infinity());
};

// Velocity-Verlet step; the end-of-step force uses the predicted velocity
// v + a dt, so velocity-dependent forces stay second order.
AtomState step_atom(const AtomState& state, const ForceModel& force, double time, double dt, const StepLimits& limits,
                    const RecoilKicks* kicks = nullptr);

// Mass and displacement cap from the species and beams; volume from lo/hi,
// else +-10 mm around the beam center, floored half a thickness above the film.
StepLimits step_limits(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                       const std::optional<Vec3>& lo = std::nullopt, const std::optional<Vec3>& hi = std::nullopt);

RecoilKicks recoil_kicks(const MOTConfig& config, const AtomSpecies& species, std::mt19937_64* rng);

// Per-atom random stream derived from (seed, atom index).
std::mt19937_64 atom_rng(std::uint64_t seed, std::uint64_t index);

struct EnsembleSpec {
  int count = 0;
  Vec3 position_mean = Vec3::Zero();
  Vec3 position_sigma = Vec3::Zero();  // m, per axis
  Vec3 velocity_mean = Vec3::Zero();
  Vec3 velocity_sigma = Vec3::Zero();  // m/s, per axis

  bool operator==(const EnsembleSpec&) const = default;
};

void validate(const EnsembleSpec& ensemble);

// Gaussian draw of one atom, position first then velocity.
AtomState sample_atom(const EnsembleSpec& ensemble, std::mt19937_64& rng);

struct SimulationOptions {
  double duration = 20e-3;  // s
  double dt = 10e-6;        // s
  bool stochastic = false;
  bool gravity = true;
  std::uint64_t seed = 1;
  int threads = 1;
  double capture_radius = 100e-6;
  // Atoms leaving this box are marked dead. Unset: +-10 mm around the
  // beam center, floored at half a film thickness above the film.
  std::optional<Vec3> volume_min;
  std::optional<Vec3> volume_max;
  int record_stride = 0;  // trajectory sample every n steps, 0 = final only

  bool operator==(const SimulationOptions&) const = default;
};

struct TrajectoryPoint {
  double time = 0.0;
  int atom = 0;
  AtomState state;
};

struct CloudResult {
  std::vector<AtomState> final_states;
  std::vector<Vec3> traps;                 // quadrupole zeros at the final time
  std::optional<double> captured_fraction; // unset when no trap was found
  Vec3 centroid = Vec3::Zero();            // over surviving atoms
  Vec3 rms_radius = Vec3::Zero();
  int alive = 0;
  std::uint64_t seed = 0;
  double final_time = 0.0;
  std::vector<TrajectoryPoint> trajectory;  // empty unless record_stride > 0
};

CloudResult simulate_cloud(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                           const EnsembleSpec& ensemble, const SearchRegion& trap_region,
                           const SimulationOptions& options = {});

struct CaptureOptions {
  double duration = 40e-3;
  double dt = 10e-6;
  bool gravity = true;
  double capture_radius = 100e-6;
  int threads = 1;
  // Seed lattice for the volume: cell centres of a box around the trap,
  // clipped below at half a film thickness.
  double half_width = 2e-3;
  std::array<int, 3> lattice{8, 8, 8};
  double max_speed = 20.0;  // m/s, bisection bracket
  int bisection_steps = 10;
  bool operator==(const CaptureOptions&) const = default;
};

struct CaptureMetric {
  Vec3 trap = Vec3::Zero();
  // Smallest of the launches along +-x, +-y, +z from the trap centre; a -z
  // launch runs into the film and is not counted.
  double capture_velocity = 0.0;
  std::array<double, 5> directional_velocity{};
  double capture_volume = 0.0;  // m^3
  int captured_seeds = 0;
  int total_seeds = 0;
};

// Throws DomainError when the region holds no quadrupole trap.
CaptureMetric capture_metric(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                             const SearchRegion& trap_region, const CaptureOptions& options = {});

struct FollowingOptions {
  double duration = 0.0;
  double dt = 10e-6;
  int record_stride = 50;
  bool gravity = true;
  double loss_distance = 300e-6;  // atom-trap distance counted as lost
  Vec2 axis = Vec2::Zero();       // azimuths measured about this point
};

struct FollowingSample {
  double time = 0.0;
  Vec3 atom = Vec3::Zero();
  Vec3 trap = Vec3::Zero();
  double lag = 0.0;  // rad, atom azimuth minus trap azimuth, wrapped to (-pi, pi]
};

struct FollowingResult {
  std::vector<FollowingSample> samples;
  std::optional<std::size_t> lost_at;
  double max_abs_lag = 0.0;
};

// One atom starts at rest on the first trap found at t = 0 and is
// integrated deterministically while the bias modulates; the trap is
// tracked by continuation at every recorded step.
FollowingResult transport_following(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                                    const SearchRegion& region, const FollowingOptions& options);

}  // namespace atomchip
