#include "atomchip/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace atomchip {

using nlohmann::json;

namespace {

// Document value = SI value * scale.
namespace unit {
constexpr double um = 1e6;
constexpr double mm = 1e3;
constexpr double nm = 1e9;
constexpr double mT = 1e3;
constexpr double uT = 1e6;
constexpr double nT = 1e9;
constexpr double mW = 1e3;
constexpr double ms = 1e3;
constexpr double us = 1e6;
constexpr double uT_per_cm = 1e4;                            // T/m -> uT/cm
constexpr double MHz = 1.0 / (2.0 * constants::pi * 1e6);    // rad/s -> f in MHz
constexpr double MHz_per_G = 1.0 / (2.0 * constants::pi * 1e10);  // rad/(s T) -> MHz/G
constexpr double deg = 180.0 / constants::pi;
}  // namespace unit

// Walks one JSON object, remembers which keys were consumed and rejects
// leftovers so typos do not pass silently.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ScenarioError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ScenarioError(at(key), "missing");
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double scale) { return to_number(raw(key), at(key)) / scale; }
  double number(const std::string& key, double scale, double fallback_doc) {
    return has(key) ? number(key, scale) : fallback_doc / scale;
  }

  long long integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ScenarioError(at(key), "expected an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long fallback) { return has(key) ? integer(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ScenarioError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ScenarioError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  Vec2 vec2(const std::string& key, double scale) {
    const auto v = numbers(key, 2);
    return Vec2(v[0], v[1]) / scale;
  }
  Vec3 vec3(const std::string& key, double scale) {
    const auto v = numbers(key, 3);
    return Vec3(v[0], v[1], v[2]) / scale;
  }
  Vec3 vec3(const std::string& key, double scale, const Vec3& fallback_doc) {
    return has(key) ? vec3(key, scale) : Vec3(fallback_doc / scale);
  }

  std::vector<double> numbers(const std::string& key, std::size_t n) {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != n)
      throw ScenarioError(at(key), "expected an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(to_number(v[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ScenarioError(at(item.key()), "unknown key");
    }
  }

 private:
  static double to_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ScenarioError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ScenarioError(path, "must be finite");
    return d;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json arr(const Vec2& v, double scale) { return json::array({v.x() * scale, v.y() * scale}); }
json arr(const Vec3& v, double scale) { return json::array({v.x() * scale, v.y() * scale, v.z() * scale}); }

// Re-raise a physics-side validation error with the document path in front.
template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ScenarioError&) {
    throw;
  } catch (const SpecificationError& e) {
    throw ScenarioError(path + "." + e.field(), e.what());
  }
}

FilmSpec film_from_json(const json& j, const std::string& path, int& polarity) {
  Reader r(j, path);
  FilmSpec f;
  // Absent keys keep the SI defaults exactly.
  if (r.has("thickness_um")) f.thickness = r.number("thickness_um", unit::um);
  if (r.has("remanence_mT")) f.remanence = r.number("remanence_mT", unit::mT);
  if (r.has("coercive_field_mT")) f.coercive_field = r.number("coercive_field_mT", unit::mT);
  if (r.has("extent_center_um")) f.extent_center = r.vec2("extent_center_um", unit::um);
  if (r.has("extent_size_um")) f.extent_size = r.vec2("extent_size_um", unit::um);
  if (r.has("cell_size_um")) f.cell_size = r.number("cell_size_um", unit::um);
  polarity = static_cast<int>(r.integer("initial_polarity", 1));
  r.finish();
  if (polarity != 1 && polarity != -1) throw ScenarioError(r.at("initial_polarity"), "must be +1 or -1");
  checked(path, [&] { validate(f); });
  return f;
}

json film_to_json(const FilmSpec& f, int polarity) {
  return {{"thickness_um", f.thickness * unit::um},
          {"remanence_mT", f.remanence * unit::mT},
          {"coercive_field_mT", f.coercive_field * unit::mT},
          {"extent_center_um", arr(f.extent_center, unit::um)},
          {"extent_size_um", arr(f.extent_size, unit::um)},
          {"cell_size_um", f.cell_size * unit::um},
          {"initial_polarity", polarity}};
}

Shape shape_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  const std::string type = r.string("type");
  Shape shape;
  if (type == "disk") {
    shape = Disk{r.vec2("center_um", unit::um), r.number("radius_um", unit::um)};
  } else if (type == "rectangle") {
    shape = Rectangle{r.vec2("corner_um", unit::um), r.vec2("size_um", unit::um)};
  } else if (type == "annulus") {
    shape = Annulus{r.vec2("center_um", unit::um), r.number("r_inner_um", unit::um), r.number("r_outer_um", unit::um)};
  } else if (type == "stroke") {
    Stroke s;
    const json& pts = r.raw("polyline_um");
    if (!pts.is_array()) throw ScenarioError(r.at("polyline_um"), "expected an array of [x, y] pairs");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::string p = r.at("polyline_um") + "[" + std::to_string(i) + "]";
      if (!pts[i].is_array() || pts[i].size() != 2 || !pts[i][0].is_number() || !pts[i][1].is_number())
        throw ScenarioError(p, "expected [x, y]");
      s.polyline.emplace_back(pts[i][0].get<double>() / unit::um, pts[i][1].get<double>() / unit::um);
    }
    s.width = r.number("width_um", unit::um);
    shape = std::move(s);
  } else {
    throw ScenarioError(r.at("type"), "unknown shape '" + type + "' (disk, rectangle, annulus, stroke)");
  }
  r.finish();
  return shape;
}

json shape_to_json(const Shape& shape) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return {{"type", "disk"}, {"center_um", arr(s.center, unit::um)}, {"radius_um", s.radius * unit::um}};
        } else if constexpr (std::is_same_v<T, Rectangle>) {
          return {{"type", "rectangle"}, {"corner_um", arr(s.corner, unit::um)}, {"size_um", arr(s.size, unit::um)}};
        } else if constexpr (std::is_same_v<T, Annulus>) {
          return {{"type", "annulus"},
                  {"center_um", arr(s.center, unit::um)},
                  {"r_inner_um", s.r_inner * unit::um},
                  {"r_outer_um", s.r_outer * unit::um}};
        } else {
          json pts = json::array();
          for (const auto& p : s.polyline) pts.push_back(arr(p, unit::um));
          return {{"type", "stroke"}, {"polyline_um", pts}, {"width_um", s.width * unit::um}};
        }
      },
      shape);
}

SearchRegion region_defaults() { return SearchRegion{}; }

DepthBox depth_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  DepthBox d;
  d.box_min = r.vec3("min_um", unit::um);
  d.box_max = r.vec3("max_um", unit::um);
  d.spacing = r.number("spacing_um", unit::um, 5.0);
  r.finish();
  if (!(d.spacing > 0.0)) throw ScenarioError(r.at("spacing_um"), "must be > 0");
  if ((d.box_max.array() <= d.box_min.array()).any()) throw ScenarioError(path, "max must exceed min on every axis");
  return d;
}

std::optional<Backend> backend_field(Reader& r) {
  if (!r.has("backend")) return std::nullopt;
  const std::string b = r.string("backend");
  try {
    return backend_from_string(b);
  } catch (const SpecificationError&) {
    throw ScenarioError(r.at("backend"), "unknown backend '" + b + "' (edge, sheet, spectral)");
  }
}

json ensemble_to_json(const EnsembleSpec& e) {
  return {{"count", e.count},
          {"position_mean_um", arr(e.position_mean, unit::um)},
          {"position_sigma_um", arr(e.position_sigma, unit::um)},
          {"velocity_mean_mps", arr(e.velocity_mean, 1.0)},
          {"velocity_sigma_mps", arr(e.velocity_sigma, 1.0)}};
}

std::string output_field(Reader& r, const std::string& key) {
  std::string out = r.string(key);
  if (out.empty()) throw ScenarioError(r.at(key), "must not be empty");
  return out;
}

Directive directive_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  const std::string type = r.string("type");
  Directive d;
  if (type == "field-grid") {
    FieldGridTask t;
    t.grid = plane_from_json(j, path, t.z);
    for (const char* k : {"z_um", "x_um", "y_um", "nx", "ny"}) r.raw(k);
    t.time = r.number("time_s", 1.0, 0.0);
    t.format = r.string("format", "csv");
    if (t.format != "csv" && t.format != "pgm") throw ScenarioError(r.at("format"), "must be csv or pgm");
    t.backend = backend_field(r);
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "field-line") {
    FieldLineTask t;
    t.start = r.vec3("start_um", unit::um);
    t.end = r.vec3("end_um", unit::um);
    t.points = static_cast<int>(r.integer("points"));
    if (t.points < 2) throw ScenarioError(r.at("points"), "must be >= 2");
    t.time = r.number("time_s", 1.0, 0.0);
    t.backend = backend_field(r);
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "traps") {
    TrapsTask t;
    t.region = region_from_json(r.raw("region"), r.at("region"));
    t.time = r.number("time_s", 1.0, 0.0);
    if (r.has("depth")) t.depth = depth_from_json(r.raw("depth"), r.at("depth"));
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "ring") {
    RingTask t;
    t.region = region_from_json(r.raw("region"), r.at("region"));
    t.time = r.number("time_s", 1.0, 0.0);
    t.options.max_gap_deg = r.number("max_gap_deg", 1.0, RingOptions{}.max_gap_deg);
    t.options.min_vertices = static_cast<int>(r.integer("min_vertices", RingOptions{}.min_vertices));
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "transport") {
    TransportTask t;
    t.region = region_from_json(r.raw("region"), r.at("region"));
    t.samples = static_cast<int>(r.integer("samples", 16));
    if (t.samples < 1) throw ScenarioError(r.at("samples"), "must be >= 1");
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "mot-run") {
    MotRunTask t;
    t.region = region_from_json(r.raw("region"), r.at("region"));
    t.ensemble = ensemble_from_json(r.raw("ensemble"), r.at("ensemble"));
    const SimulationOptions def;
    t.options.duration = r.number("duration_ms", unit::ms, def.duration * unit::ms);
    t.options.dt = r.number("dt_us", unit::us, def.dt * unit::us);
    t.options.stochastic = r.boolean("stochastic", def.stochastic);
    t.options.gravity = r.boolean("gravity", def.gravity);
    t.options.capture_radius = r.number("capture_radius_um", unit::um, def.capture_radius * unit::um);
    t.options.record_stride = static_cast<int>(r.integer("record_stride", def.record_stride));
    if (!(t.options.duration >= 0.0)) throw ScenarioError(r.at("duration_ms"), "must be >= 0");
    if (!(t.options.dt > 0.0)) throw ScenarioError(r.at("dt_us"), "must be > 0");
    if (!(t.options.capture_radius > 0.0)) throw ScenarioError(r.at("capture_radius_um"), "must be > 0");
    if (t.options.record_stride < 0) throw ScenarioError(r.at("record_stride"), "must be >= 0");
    t.output = output_field(r, "output");
    t.summary = output_field(r, "summary");
    d = t;
  } else if (type == "capture") {
    CaptureTask t;
    t.region = region_from_json(r.raw("region"), r.at("region"));
    const CaptureOptions def;
    t.options.duration = r.number("duration_ms", unit::ms, def.duration * unit::ms);
    t.options.dt = r.number("dt_us", unit::us, def.dt * unit::us);
    t.options.gravity = r.boolean("gravity", def.gravity);
    t.options.capture_radius = r.number("capture_radius_um", unit::um, def.capture_radius * unit::um);
    t.options.half_width = r.number("half_width_um", unit::um, def.half_width * unit::um);
    if (r.has("lattice")) {
      const auto v = r.numbers("lattice", 3);
      for (int a = 0; a < 3; ++a) {
        if (v[a] != std::floor(v[a]) || v[a] < 1) throw ScenarioError(r.at("lattice"), "entries must be integers >= 1");
        t.options.lattice[a] = static_cast<int>(v[a]);
      }
    }
    t.options.max_speed = r.number("max_speed_mps", 1.0, def.max_speed);
    t.options.bisection_steps = static_cast<int>(r.integer("bisection_steps", def.bisection_steps));
    if (!(t.options.duration > 0.0)) throw ScenarioError(r.at("duration_ms"), "must be > 0");
    if (!(t.options.dt > 0.0)) throw ScenarioError(r.at("dt_us"), "must be > 0");
    if (!(t.options.half_width > 0.0)) throw ScenarioError(r.at("half_width_um"), "must be > 0");
    if (!(t.options.max_speed > 0.0)) throw ScenarioError(r.at("max_speed_mps"), "must be > 0");
    t.output = output_field(r, "output");
    d = t;
  } else if (type == "faraday") {
    d = FaradayTask{output_field(r, "output")};
  } else {
    throw ScenarioError(r.at("type"), "unknown directive '" + type +
                                          "' (field-grid, field-line, traps, ring, transport, mot-run, capture, faraday)");
  }
  r.finish();
  return d;
}

json plane_to_json(const GridSpec& g, double z) {
  return {{"z_um", z * unit::um},
          {"x_um", json::array({g.x_min * unit::um, g.x_max * unit::um})},
          {"y_um", json::array({g.y_min * unit::um, g.y_max * unit::um})},
          {"nx", g.nx},
          {"ny", g.ny}};
}

json directive_to_json(const Directive& d) {
  json j = {{"type", directive_type(d)}};
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, FieldGridTask>) {
          j.update(plane_to_json(t.grid, t.z));
          j["time_s"] = t.time;
          j["format"] = t.format;
          if (t.backend) j["backend"] = to_string(*t.backend);
        } else if constexpr (std::is_same_v<T, FieldLineTask>) {
          j["start_um"] = arr(t.start, unit::um);
          j["end_um"] = arr(t.end, unit::um);
          j["points"] = t.points;
          j["time_s"] = t.time;
          if (t.backend) j["backend"] = to_string(*t.backend);
        } else if constexpr (std::is_same_v<T, TrapsTask>) {
          j["region"] = to_json(t.region);
          j["time_s"] = t.time;
          if (t.depth) {
            j["depth"] = {{"min_um", arr(t.depth->box_min, unit::um)},
                          {"max_um", arr(t.depth->box_max, unit::um)},
                          {"spacing_um", t.depth->spacing * unit::um}};
          }
        } else if constexpr (std::is_same_v<T, RingTask>) {
          j["region"] = to_json(t.region);
          j["time_s"] = t.time;
          j["max_gap_deg"] = t.options.max_gap_deg;
          j["min_vertices"] = t.options.min_vertices;
        } else if constexpr (std::is_same_v<T, TransportTask>) {
          j["region"] = to_json(t.region);
          j["samples"] = t.samples;
        } else if constexpr (std::is_same_v<T, MotRunTask>) {
          j["region"] = to_json(t.region);
          j["ensemble"] = ensemble_to_json(t.ensemble);
          j["duration_ms"] = t.options.duration * unit::ms;
          j["dt_us"] = t.options.dt * unit::us;
          j["stochastic"] = t.options.stochastic;
          j["gravity"] = t.options.gravity;
          j["capture_radius_um"] = t.options.capture_radius * unit::um;
          j["record_stride"] = t.options.record_stride;
          j["summary"] = t.summary;
        } else if constexpr (std::is_same_v<T, CaptureTask>) {
          j["region"] = to_json(t.region);
          j["duration_ms"] = t.options.duration * unit::ms;
          j["dt_us"] = t.options.dt * unit::us;
          j["gravity"] = t.options.gravity;
          j["capture_radius_um"] = t.options.capture_radius * unit::um;
          j["half_width_um"] = t.options.half_width * unit::um;
          j["lattice"] = t.options.lattice;
          j["max_speed_mps"] = t.options.max_speed;
          j["bisection_steps"] = t.options.bisection_steps;
        }
        j["output"] = t.output;
      },
      d);
  return j;
}

AtomSpecies species_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  const AtomSpecies def = rubidium85();
  AtomSpecies s;
  s.mass = r.number("mass_kg", 1.0, def.mass);
  s.wavelength = r.number("wavelength_nm", unit::nm, def.wavelength * unit::nm);
  s.linewidth = r.number("linewidth_MHz", unit::MHz, def.linewidth * unit::MHz);
  s.zeeman_rate = r.number("zeeman_MHz_per_G", unit::MHz_per_G, def.zeeman_rate * unit::MHz_per_G);
  r.finish();
  checked(path, [&] { validate(s); });
  return s;
}

MotSection mot_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  MotSection m;
  m.species = r.has("species") ? species_from_json(r.raw("species"), r.at("species")) : rubidium85();
  const double power = r.number("power_mW", unit::mW, 20.0);
  const double waist = r.number("waist_diameter_mm", unit::mm, 10.0);
  const Vec3 center = r.vec3("beam_center_um", unit::um, Vec3::Zero());
  const int gradient_sign = static_cast<int>(r.integer("gradient_sign", 1));
  if (gradient_sign != 1 && gradient_sign != -1) throw ScenarioError(r.at("gradient_sign"), "must be +1 or -1");
  m.config = standard_mot(m.species, power, waist, -1.0, center, gradient_sign);
  m.config.detuning = r.number("detuning_MHz", unit::MHz, -m.species.linewidth * unit::MHz);
  if (r.has("beams")) {
    const json& beams = r.raw("beams");
    if (!beams.is_array() || beams.size() != 6) throw ScenarioError(r.at("beams"), "expected 6 beams");
    for (std::size_t i = 0; i < 6; ++i) {
      Reader b(beams[i], r.at("beams") + "[" + std::to_string(i) + "]");
      auto& beam = m.config.beams[i];
      beam.direction = b.vec3("direction", 1.0);
      beam.handedness = static_cast<int>(b.integer("handedness"));
      beam.power = b.number("power_mW", unit::mW);
      beam.waist_diameter_1e2 = b.number("waist_diameter_mm", unit::mm);
      b.finish();
    }
  }
  m.config.saturation_intensity =
      r.number("saturation_intensity_W_per_m2", 1.0, MOTConfig{}.saturation_intensity);
  m.config.film_attenuation = r.boolean("film_attenuation", false);
  m.config.film_transmission = r.number("film_transmission", 1.0, MOTConfig{}.film_transmission);
  r.finish();
  checked(path, [&] { validate(m.config); });
  return m;
}

json mot_to_json(const MotSection& m) {
  json beams = json::array();
  for (const auto& b : m.config.beams) {
    beams.push_back({{"direction", arr(b.direction, 1.0)},
                     {"handedness", b.handedness},
                     {"power_mW", b.power * unit::mW},
                     {"waist_diameter_mm", b.waist_diameter_1e2 * unit::mm}});
  }
  return {{"species",
           {{"mass_kg", m.species.mass},
            {"wavelength_nm", m.species.wavelength * unit::nm},
            {"linewidth_MHz", m.species.linewidth * unit::MHz},
            {"zeeman_MHz_per_G", m.species.zeeman_rate * unit::MHz_per_G}}},
          {"beam_center_um", arr(m.config.beam_center, unit::um)},
          {"detuning_MHz", m.config.detuning * unit::MHz},
          {"beams", beams},
          {"saturation_intensity_W_per_m2", m.config.saturation_intensity},
          {"film_attenuation", m.config.film_attenuation},
          {"film_transmission", m.config.film_transmission}};
}

int line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

std::string directive_type(const Directive& d) {
  static const char* names[] = {"field-grid", "field-line", "traps",   "ring",
                                "transport",  "mot-run",    "capture", "faraday"};
  return names[d.index()];
}

std::vector<std::string> directive_outputs(const Directive& d) {
  return std::visit(
      [](const auto& t) -> std::vector<std::string> {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, MotRunTask>) {
          return {t.output, t.summary};
        } else if constexpr (std::is_same_v<T, FieldGridTask>) {
          if (t.format == "pgm") return {t.output, t.output + ".txt"};
          return {t.output};
        } else {
          return {t.output};
        }
      },
      d);
}

EnsembleSpec ensemble_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  EnsembleSpec e;
  e.count = static_cast<int>(r.integer("count"));
  e.position_mean = r.vec3("position_mean_um", unit::um);
  e.position_sigma = r.vec3("position_sigma_um", unit::um, Vec3::Zero());
  e.velocity_mean = r.vec3("velocity_mean_mps", 1.0, Vec3::Zero());
  e.velocity_sigma = r.vec3("velocity_sigma_mps", 1.0, Vec3::Zero());
  r.finish();
  checked(path, [&] { validate(e); });
  return e;
}

EditOp edit_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  EditOp op;
  const std::string kind = r.string("kind", "stamp");
  if (kind == "stamp") {
    op.kind = EditKind::stamp;
  } else if (kind == "scan") {
    op.kind = EditKind::scan;
  } else {
    throw ScenarioError(r.at("kind"), "must be stamp or scan");
  }
  op.shape = shape_from_json(r.raw("shape"), r.at("shape"));
  op.write_field_sign = static_cast<int>(r.integer("write_field_sign"));
  op.beam_power = r.number("beam_power_mW", unit::mW);
  op.spot_diameter = r.number("spot_diameter_um", unit::um, 10.0);
  r.finish();
  checked(path, [&] { validate(op); });
  return op;
}

json to_json(const EditOp& op) {
  return {{"kind", op.kind == EditKind::stamp ? "stamp" : "scan"},
          {"shape", shape_to_json(op.shape)},
          {"write_field_sign", op.write_field_sign},
          {"beam_power_mW", op.beam_power * unit::mW},
          {"spot_diameter_um", op.spot_diameter * unit::um}};
}

BiasField bias_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  BiasField b;
  b.static_field = r.vec3("static_uT", unit::uT, Vec3::Zero());
  if (r.has("modulation") && !r.raw("modulation").is_null()) {
    Reader m(r.raw("modulation"), r.at("modulation"));
    BiasModulation mod;
    mod.amplitude = m.vec3("amplitude_uT", unit::uT);
    mod.angular_frequency = m.number("angular_frequency_rad_s", 1.0);
    mod.phase = m.vec3("phase_rad", 1.0, Vec3::Zero());
    m.finish();
    b.modulation = mod;
  }
  r.finish();
  checked(path, [&] { validate(b); });
  return b;
}

json to_json(const BiasField& b) {
  json j = {{"static_uT", arr(b.static_field, unit::uT)}};
  if (b.modulation) {
    j["modulation"] = {{"amplitude_uT", arr(b.modulation->amplitude, unit::uT)},
                       {"angular_frequency_rad_s", b.modulation->angular_frequency},
                       {"phase_rad", arr(b.modulation->phase, 1.0)}};
  }
  return j;
}

SearchRegion region_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  const SearchRegion def = region_defaults();
  SearchRegion s;
  s.box_min = r.vec3("min_um", unit::um);
  s.box_max = r.vec3("max_um", unit::um);
  if (r.has("seeds")) {
    const auto v = r.numbers("seeds", 3);
    for (int a = 0; a < 3; ++a) {
      if (v[a] != std::floor(v[a])) throw ScenarioError(r.at("seeds"), "entries must be integers");
      s.seeds[a] = static_cast<int>(v[a]);
    }
  }
  s.zero_tolerance = r.number("zero_tolerance_nT", unit::nT, def.zero_tolerance * unit::nT);
  s.max_iterations = static_cast<int>(r.integer("max_iterations", def.max_iterations));
  s.merge_radius = r.number("merge_radius_um", unit::um, def.merge_radius * unit::um);
  r.finish();
  checked(path, [&] { validate(s, FieldSource{}); });
  return s;
}

json to_json(const SearchRegion& s) {
  return {{"min_um", arr(s.box_min, unit::um)},
          {"max_um", arr(s.box_max, unit::um)},
          {"seeds", s.seeds},
          {"zero_tolerance_nT", s.zero_tolerance * unit::nT},
          {"max_iterations", s.max_iterations},
          {"merge_radius_um", s.merge_radius * unit::um}};
}

GridSpec plane_from_json(const json& j, const std::string& path, double& z) {
  // Reads only the plane keys; the caller owns the object.
  if (!j.is_object()) throw ScenarioError(path, "expected an object");
  auto sub = [&](const char* key) { return path.empty() ? std::string(key) : path + "." + key; };
  auto number = [&](const json& v, const std::string& p) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) throw ScenarioError(p, "expected a finite number");
    return v.get<double>();
  };
  auto pair = [&](const char* key) {
    if (!j.contains(key)) throw ScenarioError(sub(key), "missing");
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ScenarioError(sub(key), "expected [min, max]");
    return std::pair{number(v[0], sub(key)) / unit::um, number(v[1], sub(key)) / unit::um};
  };
  auto count = [&](const char* key) {
    if (!j.contains(key)) throw ScenarioError(sub(key), "missing");
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 1) throw ScenarioError(sub(key), "expected an integer >= 1");
    return static_cast<int>(v.get<long long>());
  };
  if (!j.contains("z_um")) throw ScenarioError(sub("z_um"), "missing");
  z = number(j.at("z_um"), sub("z_um")) / unit::um;
  GridSpec g;
  std::tie(g.x_min, g.x_max) = pair("x_um");
  std::tie(g.y_min, g.y_max) = pair("y_um");
  g.nx = count("nx");
  g.ny = count("ny");
  checked(path, [&] { validate(g); });
  return g;
}

Scenario scenario_from_json(const json& doc) {
  Reader r(doc, "");
  Scenario s;
  s.name = r.string("name", "");
  s.film = r.has("film") ? film_from_json(r.raw("film"), "film", s.initial_polarity)
                         : film_from_json(json::object(), "film", s.initial_polarity);
  if (r.has("edits")) {
    const json& edits = r.raw("edits");
    if (!edits.is_array()) throw ScenarioError("edits", "expected an array");
    for (std::size_t i = 0; i < edits.size(); ++i)
      s.edits.push_back(edit_from_json(edits[i], "edits[" + std::to_string(i) + "]"));
  }
  if (r.has("bias")) s.bias = bias_from_json(r.raw("bias"), "bias");
  if (r.has("aux_quadrupole") && !r.raw("aux_quadrupole").is_null()) {
    Reader a(r.raw("aux_quadrupole"), "aux_quadrupole");
    AuxQuadrupole q;
    q.center = a.vec3("center_um", unit::um);
    q.axial_gradient = a.number("axial_gradient_uT_per_cm", unit::uT_per_cm);
    a.finish();
    s.aux_quadrupole = q;
  }
  if (r.has("field")) {
    Reader f(r.raw("field"), "field");
    s.field.include_extent_boundary = f.boolean("include_extent_boundary", true);
    if (auto b = backend_field(f)) s.backend = *b;
    f.finish();
  }
  if (r.has("mot") && !r.raw("mot").is_null()) s.mot = mot_from_json(r.raw("mot"), "mot");
  if (r.has("directives")) {
    const json& list = r.raw("directives");
    if (!list.is_array()) throw ScenarioError("directives", "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i)
      s.directives.push_back(directive_from_json(list[i], "directives[" + std::to_string(i) + "]"));
  }
  if (r.has("limits")) {
    Reader l(r.raw("limits"), "limits");
    const long long cap = l.integer("max_grid_points", static_cast<long long>(s.max_grid_points));
    if (cap < 1) throw ScenarioError("limits.max_grid_points", "must be >= 1");
    s.max_grid_points = static_cast<std::size_t>(cap);
    l.finish();
  }
  if (r.has("seed")) {
    const json& v = r.raw("seed");
    if (!v.is_number_unsigned()) throw ScenarioError("seed", "expected a non-negative integer");
    s.seed = v.get<std::uint64_t>();
  }
  r.finish();
  return s;
}

Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("document", e.what(), line_of(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  return scenario_from_json(doc);
}

json to_json(const Scenario& s) {
  json edits = json::array();
  for (const auto& e : s.edits) edits.push_back(to_json(e));
  json directives = json::array();
  for (const auto& d : s.directives) directives.push_back(directive_to_json(d));
  json j = {{"name", s.name},
            {"film", film_to_json(s.film, s.initial_polarity)},
            {"edits", edits},
            {"bias", to_json(s.bias)},
            {"field", {{"include_extent_boundary", s.field.include_extent_boundary}, {"backend", to_string(s.backend)}}},
            {"directives", directives},
            {"limits", {{"max_grid_points", s.max_grid_points}}},
            {"seed", s.seed}};
  if (s.aux_quadrupole) {
    j["aux_quadrupole"] = {{"center_um", arr(s.aux_quadrupole->center, unit::um)},
                           {"axial_gradient_uT_per_cm", s.aux_quadrupole->axial_gradient * unit::uT_per_cm}};
  }
  if (s.mot) j["mot"] = mot_to_json(*s.mot);
  return j;
}

std::string serialize_scenario(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

void validate(const Scenario& s) {
  validate(s.film);
  std::set<std::string> outputs;
  FieldSource probe;
  probe.bias = s.bias;
  for (std::size_t i = 0; i < s.directives.size(); ++i) {
    const auto& d = s.directives[i];
    const std::string path = "directives[" + std::to_string(i) + "]";
    for (const auto& out : directive_outputs(d)) {
      if (!outputs.insert(out).second) throw ScenarioError(path + ".output", "output path '" + out + "' used twice");
    }
    const double t = s.film.thickness;
    auto check_region = [&](const SearchRegion& region) {
      if (region.box_min.z() < 0.5 * t)
        throw ScenarioError(path + ".region.min_um", "region intersects the film; z must be >= thickness / 2");
    };
    std::visit(
        [&](const auto& task) {
          using T = std::decay_t<decltype(task)>;
          if constexpr (std::is_same_v<T, FieldGridTask>) {
            if (task.grid.size() > s.max_grid_points)
              throw ScenarioError(path, "grid of " + std::to_string(task.grid.size()) + " points exceeds the cap of " +
                                            std::to_string(s.max_grid_points));
            if (task.z < 0.5 * t) throw ScenarioError(path + ".z_um", "plane must lie at least thickness / 2 above the film");
          } else if constexpr (std::is_same_v<T, FieldLineTask>) {
            if (static_cast<std::size_t>(task.points) > s.max_grid_points)
              throw ScenarioError(path + ".points", "exceeds the grid cap");
            if (task.backend.value_or(s.backend) == Backend::spectral)
              throw ScenarioError(path + ".backend", "the spectral backend evaluates planes only");
          } else if constexpr (std::is_same_v<T, FaradayTask>) {
          } else {
            check_region(task.region);
            if (s.backend == Backend::spectral)
              throw ScenarioError(path, "the spectral backend evaluates planes only; use edge or sheet for " +
                                            directive_type(d));
            if constexpr (std::is_same_v<T, TrapsTask>) {
              if (task.depth && task.depth->box_min.z() < 0.5 * t)
                throw ScenarioError(path + ".depth.min_um", "depth box intersects the film");
            }
            if constexpr (std::is_same_v<T, TransportTask>) {
              if (!s.bias.modulation) throw ScenarioError(path, "transport requires bias.modulation");
              if (!(s.bias.modulation->angular_frequency > 0.0))
                throw ScenarioError("bias.modulation.angular_frequency_rad_s", "transport needs a frequency > 0");
            }
            if constexpr (std::is_same_v<T, MotRunTask> || std::is_same_v<T, CaptureTask>) {
              if (!s.mot) throw ScenarioError(path, directive_type(d) + " requires a mot section");
            }
          }
        },
        d);
  }
}

MagnetizationPattern build_pattern(const Scenario& s) {
  auto pattern = create_uniform(s.film, s.initial_polarity);
  for (std::size_t i = 0; i < s.edits.size(); ++i) {
    try {
      pattern = apply_edit(pattern, s.edits[i]);
    } catch (const SpecificationError& e) {
      throw ScenarioError("edits[" + std::to_string(i) + "]." + e.field(), e.what());
    }
  }
  return pattern;
}

FieldSource build_source(const Scenario& s, const MagnetizationPattern& pattern) {
  const Backend b = s.backend == Backend::spectral ? Backend::edge : s.backend;
  return make_source(pattern, s.bias, s.aux_quadrupole, s.field, b);
}

}  // namespace atomchip
