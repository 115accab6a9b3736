#include "atomchip/mot.hpp"

#include <algorithm>
#include <cmath>

#include "atomchip/parallel.hpp"

namespace atomchip {

AtomSpecies rubidium85() {
  AtomSpecies s;
  s.mass = 1.409e-25;
  s.wavelength = 780e-9;
  s.linewidth = 2.0 * constants::pi * 6.07e6;
  s.zeeman_rate = 2.0 * constants::pi * 1.4e6 / 1e-4;
  return s;
}

void validate(const AtomSpecies& s) {
  if (!(s.mass > 0.0)) throw SpecificationError("species.mass", "must be > 0");
  if (!(s.wavelength > 0.0)) throw SpecificationError("species.wavelength", "must be > 0");
  if (!(s.linewidth > 0.0)) throw SpecificationError("species.linewidth", "must be > 0");
  if (!(s.zeeman_rate > 0.0)) throw SpecificationError("species.zeeman_rate", "must be > 0");
}

double Beam::peak_intensity() const {
  const double w = waist_radius();
  return 2.0 * power / (constants::pi * w * w);
}

void validate(const MOTConfig& c) {
  for (std::size_t i = 0; i < c.beams.size(); ++i) {
    const auto& b = c.beams[i];
    const std::string name = "mot.beams[" + std::to_string(i) + "]";
    if (!b.direction.allFinite() || std::abs(b.direction.norm() - 1.0) > 1e-9)
      throw SpecificationError(name + ".direction", "must be a unit vector");
    if (b.handedness != 1 && b.handedness != -1) throw SpecificationError(name + ".handedness", "must be +1 or -1");
    if (!(b.power >= 0.0)) throw SpecificationError(name + ".power", "must be >= 0");
    if (!(b.waist_diameter_1e2 > 0.0)) throw SpecificationError(name + ".waist_diameter", "must be > 0");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if ((c.beams[2 * i].direction + c.beams[2 * i + 1].direction).norm() > 1e-9)
      throw SpecificationError("mot.beams", "beams " + std::to_string(2 * i) + " and " + std::to_string(2 * i + 1) +
                                                " must counter-propagate");
  }
  if (!(c.detuning < 0.0)) throw SpecificationError("mot.detuning", "must be red (< 0) for cooling");
  if (!(c.saturation_intensity > 0.0)) throw SpecificationError("mot.saturation_intensity", "must be > 0");
  if (!(c.film_transmission > 0.0 && c.film_transmission <= 1.0))
    throw SpecificationError("mot.film_transmission", "must lie in (0, 1]");
  if (!c.beam_center.allFinite()) throw SpecificationError("mot.beam_center", "must be finite");
}

MOTConfig standard_mot(const AtomSpecies& species, double power, double waist_diameter, double detuning_linewidths,
                       const Vec3& center, int gradient_sign) {
  MOTConfig c;
  const int s = gradient_sign >= 0 ? 1 : -1;
  for (int axis = 0; axis < 3; ++axis) {
    // Along z the field grows as +g z, along x and y as -g/2; the pair
    // handedness flips with it.
    const int sigma = axis == 2 ? s : -s;
    for (int sign : {1, -1}) {
      Beam& b = c.beams[2 * axis + (sign > 0 ? 0 : 1)];
      b.direction = Vec3::Zero();
      b.direction[axis] = sign;
      b.handedness = sigma;
      b.power = power;
      b.waist_diameter_1e2 = waist_diameter;
    }
  }
  c.beam_center = center;
  c.detuning = detuning_linewidths * species.linewidth;
  return c;
}

Vec3 BeamForces::total() const {
  Vec3 f = Vec3::Zero();
  for (const auto& fi : force) f += fi;
  return f;
}

BeamForces beam_scattering_force(const MOTConfig& config, const AtomSpecies& species, const Vec3& B, const Vec3& v,
                                 const Vec3& position) {
  const double k = species.wavenumber();
  const double gamma = species.linewidth;
  const Vec3 r = position - config.beam_center;

  std::array<double, 6> s{};
  double s_total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& b = config.beams[i];
    if (b.power == 0.0) continue;
    const double w = b.waist_radius();
    const double rho2 = (r - r.dot(b.direction) * b.direction).squaredNorm();
    double intensity = b.peak_intensity() * std::exp(-2.0 * rho2 / (w * w));
    if (config.film_attenuation && b.direction.z() > 0.5) intensity *= config.film_transmission;
    s[i] = intensity / config.saturation_intensity;
    s_total += s[i];
  }

  BeamForces out;
  const double hbar_k = constants::hbar * k;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& b = config.beams[i];
    const double delta = config.detuning - k * b.direction.dot(v) - b.handedness * species.zeeman_rate * b.direction.dot(B);
    const double x = 2.0 * delta / gamma;
    out.rate[i] = 0.5 * gamma * s[i] / (1.0 + s_total + x * x);
    out.force[i] = hbar_k * out.rate[i] * b.direction;
  }
  return out;
}

Vec3 total_force(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                 const AtomState& state, double time, bool include_gravity) {
  const Vec3 B = source.field(state.position, time);
  Vec3 f = beam_scattering_force(config, species, B, state.velocity, state.position).total();
  if (include_gravity) f.z() -= species.mass * constants::g_standard;
  return f;
}

ForceModel mot_force_model(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                           bool include_gravity) {
  return [config, species, &source, include_gravity](const Vec3& x, const Vec3& v, double t) {
    const auto beams = beam_scattering_force(config, species, source.field(x, t), v, x);
    ForceSample out;
    out.force = beams.total();
    if (include_gravity) out.force.z() -= species.mass * constants::g_standard;
    out.rate = beams.rate;
    return out;
  };
}

std::mt19937_64 atom_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace {

Vec3 isotropic_direction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> phi(0.0, 2.0 * constants::pi);
  const double c = u(rng);
  const double a = phi(rng);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  return {s * std::cos(a), s * std::sin(a), c};
}

Vec3 recoil(const RecoilKicks& kicks, const std::array<double, 6>& rate, double dt) {
  Vec3 dp = Vec3::Zero();
  for (std::size_t i = 0; i < 6; ++i) {
    const double mean = rate[i] * dt;
    if (mean <= 0.0) continue;
    std::poisson_distribution<long> poisson(mean);
    const long n = poisson(*kicks.rng);
    dp += (static_cast<double>(n) - mean) * kicks.momentum * kicks.directions[i];
    for (long e = 0; e < n; ++e) dp += kicks.momentum * isotropic_direction(*kicks.rng);
  }
  return dp;
}

}  // namespace

AtomState step_atom(const AtomState& state, const ForceModel& force, double time, double dt, const StepLimits& limits,
                    const RecoilKicks* kicks) {
  if (!(dt > 0.0)) throw SpecificationError("dt", "must be > 0");
  if (!(limits.mass > 0.0)) throw SpecificationError("mass", "must be > 0");
  if (!state.alive) return state;
  const ForceSample f0 = force(state.position, state.velocity, time);
  const Vec3 a0 = f0.force / limits.mass;
  const Vec3 dx = state.velocity * dt + 0.5 * a0 * dt * dt;
  if (limits.max_displacement > 0.0 && dx.norm() > limits.max_displacement)
    throw NumericError("time step too large: displacement exceeds a tenth of the beam waist");

  AtomState next;
  next.position = state.position + dx;
  if ((next.position.array() < limits.volume_min.array()).any() ||
      (next.position.array() > limits.volume_max.array()).any()) {
    next.velocity = state.velocity;
    next.alive = false;
    return next;
  }
  const Vec3 predicted = state.velocity + a0 * dt;
  const ForceSample f1 = force(next.position, predicted, time + dt);
  next.velocity = state.velocity + 0.5 * (a0 + f1.force / limits.mass) * dt;
  if (kicks && kicks->rng) next.velocity += recoil(*kicks, f0.rate, dt) / limits.mass;
  return next;
}

void validate(const EnsembleSpec& e) {
  if (e.count < 0) throw SpecificationError("ensemble.count", "must be >= 0");
  if ((e.position_sigma.array() < 0.0).any()) throw SpecificationError("ensemble.position_sigma", "must be >= 0");
  if ((e.velocity_sigma.array() < 0.0).any()) throw SpecificationError("ensemble.velocity_sigma", "must be >= 0");
  if (!e.position_mean.allFinite() || !e.velocity_mean.allFinite())
    throw SpecificationError("ensemble", "means must be finite");
}

namespace {

double min_waist(const MOTConfig& config) {
  double w = std::numeric_limits<double>::infinity();
  for (const auto& b : config.beams) w = std::min(w, b.waist_radius());
  return w;
}

bool inside(const StepLimits& l, const Vec3& p) {
  return (p.array() >= l.volume_min.array()).all() && (p.array() <= l.volume_max.array()).all();
}

// Integrates in place for `steps` steps; stops early once the atom leaves
// the volume.
void integrate(AtomState& atom, const ForceModel& model, const StepLimits& limits, double t0, double dt, long steps,
               const RecoilKicks* kicks, int record_stride, int id, std::vector<TrajectoryPoint>* record) {
  for (long n = 0; n < steps && atom.alive; ++n) {
    atom = step_atom(atom, model, t0 + n * dt, dt, limits, kicks);
    if (record && record_stride > 0 && ((n + 1) % record_stride == 0 || !atom.alive))
      record->push_back({t0 + (n + 1) * dt, id, atom});
  }
}

std::vector<Vec3> quadrupole_zeros(const FieldSource& source, const SearchRegion& region, double time) {
  std::vector<Vec3> out;
  for (const auto& c : find_zeros(source, region, time)) {
    if (c.classification == TrapClass::quadrupole_3d) out.push_back(c.position);
  }
  return out;
}

}  // namespace

StepLimits step_limits(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                       const std::optional<Vec3>& lo, const std::optional<Vec3>& hi) {
  StepLimits l;
  l.mass = species.mass;
  l.max_displacement = 0.1 * min_waist(config);
  l.volume_min = lo.value_or(config.beam_center - Vec3::Constant(10e-3));
  l.volume_max = hi.value_or(config.beam_center + Vec3::Constant(10e-3));
  if (source.pattern) l.volume_min.z() = std::max(l.volume_min.z(), 0.5 * source.film_thickness());
  return l;
}

RecoilKicks recoil_kicks(const MOTConfig& config, const AtomSpecies& species, std::mt19937_64* rng) {
  RecoilKicks k;
  k.rng = rng;
  k.momentum = species.recoil_momentum();
  for (std::size_t i = 0; i < 6; ++i) k.directions[i] = config.beams[i].direction;
  return k;
}

AtomState sample_atom(const EnsembleSpec& ensemble, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  AtomState atom;
  for (int a = 0; a < 3; ++a) {
    atom.position[a] = ensemble.position_mean[a] + ensemble.position_sigma[a] * normal(rng);
    atom.velocity[a] = ensemble.velocity_mean[a] + ensemble.velocity_sigma[a] * normal(rng);
  }
  return atom;
}

CloudResult simulate_cloud(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                           const EnsembleSpec& ensemble, const SearchRegion& trap_region,
                           const SimulationOptions& options) {
  validate(config);
  validate(species);
  validate(ensemble);
  if (!(options.dt > 0.0)) throw SpecificationError("dt", "must be > 0");
  if (!(options.duration >= 0.0)) throw SpecificationError("duration", "must be >= 0");
  if (!(options.capture_radius > 0.0)) throw SpecificationError("capture_radius", "must be > 0");

  const long steps = std::lround(options.duration / options.dt);
  const StepLimits limits = step_limits(config, species, source, options.volume_min, options.volume_max);
  const auto model = mot_force_model(config, species, source, options.gravity);

  CloudResult result;
  result.seed = options.seed;
  result.final_time = steps * options.dt;
  result.final_states.resize(static_cast<std::size_t>(ensemble.count));
  std::vector<std::vector<TrajectoryPoint>> tracks(static_cast<std::size_t>(ensemble.count));
  parallel_for(static_cast<std::size_t>(ensemble.count), options.threads, [&](std::size_t i) {
    auto rng = atom_rng(options.seed, i);
    AtomState atom = sample_atom(ensemble, rng);
    atom.alive = inside(limits, atom.position);
    const RecoilKicks kicks = recoil_kicks(config, species, &rng);
    auto* record = options.record_stride > 0 ? &tracks[i] : nullptr;
    if (record) record->push_back({0.0, static_cast<int>(i), atom});
    integrate(atom, model, limits, 0.0, options.dt, steps, options.stochastic ? &kicks : nullptr,
              options.record_stride, static_cast<int>(i), record);
    result.final_states[i] = atom;
  });
  for (auto& t : tracks) result.trajectory.insert(result.trajectory.end(), t.begin(), t.end());

  Vec3 sum = Vec3::Zero();
  Vec3 sum2 = Vec3::Zero();
  for (const auto& a : result.final_states) {
    if (!a.alive) continue;
    ++result.alive;
    sum += a.position;
  }
  if (result.alive > 0) {
    result.centroid = sum / result.alive;
    for (const auto& a : result.final_states) {
      if (a.alive) sum2 += (a.position - result.centroid).cwiseAbs2();
    }
    result.rms_radius = (sum2 / result.alive).cwiseSqrt();
  }

  result.traps = quadrupole_zeros(source, trap_region, steps * options.dt);
  if (!result.traps.empty() && ensemble.count > 0) {
    int captured = 0;
    for (const auto& a : result.final_states) {
      if (!a.alive) continue;
      for (const auto& t : result.traps) {
        if ((a.position - t).norm() <= options.capture_radius) {
          ++captured;
          break;
        }
      }
    }
    result.captured_fraction = static_cast<double>(captured) / ensemble.count;
  }
  return result;
}

CaptureMetric capture_metric(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                             const SearchRegion& trap_region, const CaptureOptions& options) {
  validate(config);
  validate(species);
  if (!(options.dt > 0.0) || !(options.duration > 0.0)) throw SpecificationError("capture", "dt and duration must be > 0");
  for (int a = 0; a < 3; ++a) {
    if (options.lattice[a] < 1) throw SpecificationError("capture.lattice", "must be >= 1 per axis");
  }
  const auto traps = quadrupole_zeros(source, trap_region, 0.0);
  if (traps.empty()) throw DomainError("capture metric needs a quadrupole trap in the search region");

  CaptureMetric out;
  out.trap = traps.front();
  const StepLimits limits = step_limits(config, species, source, std::nullopt, std::nullopt);
  const auto model = mot_force_model(config, species, source, options.gravity);
  const long steps = std::lround(options.duration / options.dt);

  auto captured = [&](AtomState atom) {
    if (!inside(limits, atom.position)) return false;
    integrate(atom, model, limits, 0.0, options.dt, steps, nullptr, 0, 0, nullptr);
    return atom.alive && (atom.position - out.trap).norm() <= options.capture_radius;
  };

  const std::array<Vec3, 5> directions{Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ()};
  parallel_for(directions.size(), options.threads, [&](std::size_t d) {
    double lo = 0.0;
    double hi = options.max_speed;
    if (captured({out.trap, hi * directions[d], true})) {
      out.directional_velocity[d] = hi;
      return;
    }
    for (int it = 0; it < options.bisection_steps; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (captured({out.trap, mid * directions[d], true})) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    out.directional_velocity[d] = lo;
  });
  out.capture_velocity = *std::min_element(out.directional_velocity.begin(), out.directional_velocity.end());

  Vec3 lo = out.trap - Vec3::Constant(options.half_width);
  const Vec3 hi = out.trap + Vec3::Constant(options.half_width);
  if (source.pattern) lo.z() = std::max(lo.z(), 0.5 * source.film_thickness());
  const auto& n = options.lattice;
  const Vec3 cell = (hi - lo).cwiseQuotient(Vec3(n[0], n[1], n[2]));
  const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
  std::vector<char> hit(total, 0);
  parallel_for(total, options.threads, [&](std::size_t k) {
    const int i = static_cast<int>(k % n[0]);
    const int j = static_cast<int>((k / n[0]) % n[1]);
    const int l = static_cast<int>(k / (static_cast<std::size_t>(n[0]) * n[1]));
    const Vec3 p = lo + Vec3((i + 0.5) * cell.x(), (j + 0.5) * cell.y(), (l + 0.5) * cell.z());
    hit[k] = captured({p, Vec3::Zero(), true}) ? 1 : 0;
  });
  out.total_seeds = static_cast<int>(total);
  out.captured_seeds = static_cast<int>(std::count(hit.begin(), hit.end(), 1));
  out.capture_volume = out.captured_seeds * cell.prod();
  return out;
}

FollowingResult transport_following(const MOTConfig& config, const AtomSpecies& species, const FieldSource& source,
                                    const SearchRegion& region, const FollowingOptions& options) {
  validate(config);
  validate(species);
  if (!(options.dt > 0.0)) throw SpecificationError("dt", "must be > 0");
  if (!(options.duration >= 0.0)) throw SpecificationError("duration", "must be >= 0");
  if (options.record_stride < 1) throw SpecificationError("record_stride", "must be >= 1");

  const auto start = find_zeros(source, region, 0.0);
  if (start.empty()) throw DomainError("no trap at t = 0 to follow");
  const StepLimits limits = step_limits(config, species, source, std::nullopt, std::nullopt);
  const auto model = mot_force_model(config, species, source, options.gravity);
  // Continuation may wander outside the seed box while following.
  SearchRegion track = region;
  track.box_min -= Vec3::Constant(1e-3);
  track.box_max += Vec3::Constant(1e-3);
  if (source.pattern) track.box_min.z() = std::max(track.box_min.z(), 0.5 * source.film_thickness());

  auto azimuth = [&](const Vec3& p) { return std::atan2(p.y() - options.axis.y(), p.x() - options.axis.x()); };
  FollowingResult out;
  AtomState atom{start.front().position, Vec3::Zero(), true};
  Vec3 trap = start.front().position;
  out.samples.push_back({0.0, atom.position, trap, 0.0});

  const long steps = std::lround(options.duration / options.dt);
  for (long n = 0; n < steps; n += options.record_stride) {
    const long chunk = std::min<long>(options.record_stride, steps - n);
    const double t0 = n * options.dt;
    integrate(atom, model, limits, t0, options.dt, chunk, nullptr, 0, 0, nullptr);
    const double t1 = (n + chunk) * options.dt;
    const auto tracked = refine_zero(source, track, trap, t1);
    if (!atom.alive || !tracked) {
      out.lost_at = out.samples.size();
      break;
    }
    trap = tracked->position;
    const double lag = std::remainder(azimuth(atom.position) - azimuth(trap), 2.0 * constants::pi);
    out.samples.push_back({t1, atom.position, trap, lag});
    out.max_abs_lag = std::max(out.max_abs_lag, std::abs(lag));
    if ((atom.position - trap).norm() > options.loss_distance) {
      out.lost_at = out.samples.size() - 1;
      break;
    }
  }
  return out;
}

}  // namespace atomchip
