#include "atomchip/export.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace atomchip {

namespace {

void put(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  out += buf;
}

void put_row(std::string& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out += ',';
    put(out, v);
    first = false;
  }
  out += '\n';
}

std::string format_line(const char* key, double v) {
  std::string s = key;
  s += ' ';
  put(s, v);
  s += '\n';
  return s;
}

}  // namespace

std::string field_grid_csv(const FieldGrid& g) {
  std::string out = "x_m,y_m,z_m,Bx_T,By_T,Bz_T\n";
  out.reserve(out.size() + g.B.size() * 100);
  for (int j = 0; j < g.grid.ny; ++j) {
    for (int i = 0; i < g.grid.nx; ++i) {
      const Vec3& b = g.at(i, j);
      put_row(out, {g.grid.x(i), g.grid.y(j), g.z, b.x(), b.y(), b.z()});
    }
  }
  return out;
}

std::string field_line_csv(const std::vector<Vec3>& points, const std::vector<Vec3>& fields) {
  std::string out = "x_m,y_m,z_m,Bx_T,By_T,Bz_T,B_T\n";
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Vec3& p = points[k];
    const Vec3& b = fields[k];
    put_row(out, {p.x(), p.y(), p.z(), b.x(), b.y(), b.z(), b.norm()});
  }
  return out;
}

Heatmap field_magnitude_pgm(const FieldGrid& g) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& b : g.B) {
    lo = std::min(lo, b.norm());
    hi = std::max(hi, b.norm());
  }
  if (g.B.empty()) lo = hi = 0.0;
  const double span = hi > lo ? hi - lo : 1.0;
  Heatmap h;
  h.pgm = "P5\n" + std::to_string(g.grid.nx) + " " + std::to_string(g.grid.ny) + "\n255\n";
  for (int j = g.grid.ny - 1; j >= 0; --j) {
    for (int i = 0; i < g.grid.nx; ++i) {
      const double u = (g.at(i, j).norm() - lo) / span;
      h.pgm += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(u, 0.0, 1.0))));
    }
  }
  h.scale = "quantity |B|\nunit T\n" + format_line("gray_0", lo) + format_line("gray_255", hi) +
            format_line("z_m", g.z) + format_line("x_min_m", g.grid.x_min) + format_line("x_max_m", g.grid.x_max) +
            format_line("y_min_m", g.grid.y_min) + format_line("y_max_m", g.grid.y_max) +
            "rows top_to_bottom_decreasing_y\n";
  return h;
}

std::string trap_csv(const std::vector<TrapCandidate>& traps) {
  std::string out = "time_s,x_m,y_m,z_m,Bres_T,g1_Tpm,g2_Tpm,g3_Tpm,class,depth_T\n";
  for (const auto& t : traps) {
    put(out, t.time);
    for (double v : {t.position.x(), t.position.y(), t.position.z(), t.residual_B, t.principal_gradients[0],
                     t.principal_gradients[1], t.principal_gradients[2]}) {
      out += ',';
      put(out, v);
    }
    out += ',' + to_string(t.classification) + ',';
    if (t.depth) put(out, *t.depth);
    out += '\n';
  }
  return out;
}

std::string ring_csv(const RingLocus& ring) {
  std::string out = "# topology " + to_string(ring.topology) + "\n";
  out += "# center_m ";
  put(out, ring.center.x());
  out += ' ';
  put(out, ring.center.y());
  out += "\n" + std::string("# mean_radius_m ");
  put(out, ring.mean_radius);
  out += "\n# mean_height_m ";
  put(out, ring.mean_height);
  out += "\ncomponent,x_m,y_m,z_m\n";
  for (std::size_t c = 0; c < ring.components.size(); ++c) {
    for (const auto& p : ring.components[c]) {
      out += std::to_string(c) + ',';
      put_row(out, {p.x(), p.y(), p.z()});
    }
  }
  return out;
}

std::string transport_csv(const TransportPath& path, const Vec2& axis) {
  std::string out = "sample,time_s,x_m,y_m,z_m,azimuth_rad,Bres_T\n";
  std::vector<Vec3> pts;
  for (const auto& s : path.samples) pts.push_back(s.position);
  const auto phi = unwrapped_azimuths(pts, axis);
  for (std::size_t k = 0; k < path.samples.size(); ++k) {
    const auto& s = path.samples[k];
    out += std::to_string(k) + ',';
    put_row(out, {s.time, s.position.x(), s.position.y(), s.position.z(), phi[k], s.residual_B});
  }
  if (path.lost_at) out += "# lost_at_sample " + std::to_string(*path.lost_at) + "\n";
  return out;
}

std::string trajectory_csv(const CloudResult& cloud) {
  std::string out = "t_s,atom_id,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps,alive\n";
  auto row = [&](double t, int id, const AtomState& a) {
    put(out, t);
    out += ',' + std::to_string(id);
    for (double v : {a.position.x(), a.position.y(), a.position.z(), a.velocity.x(), a.velocity.y(), a.velocity.z()}) {
      out += ',';
      put(out, v);
    }
    out += a.alive ? ",1\n" : ",0\n";
  };
  if (cloud.trajectory.empty()) {
    for (std::size_t i = 0; i < cloud.final_states.size(); ++i)
      row(cloud.final_time, static_cast<int>(i), cloud.final_states[i]);
  } else {
    for (const auto& p : cloud.trajectory) row(p.time, p.atom, p.state);
  }
  return out;
}

std::string cloud_summary(const CloudResult& cloud) {
  std::string out = "atoms " + std::to_string(cloud.final_states.size()) + "\n";
  out += "alive " + std::to_string(cloud.alive) + "\n";
  out += "seed " + std::to_string(cloud.seed) + "\n";
  out += format_line("final_time_s", cloud.final_time);
  out += "traps " + std::to_string(cloud.traps.size()) + "\n";
  for (const auto& t : cloud.traps) {
    out += "trap_m ";
    put(out, t.x());
    out += ' ';
    put(out, t.y());
    out += ' ';
    put(out, t.z());
    out += '\n';
  }
  if (cloud.captured_fraction) {
    out += format_line("captured_fraction", *cloud.captured_fraction);
  } else {
    out += "captured_fraction none\n";
  }
  out += "centroid_m ";
  put(out, cloud.centroid.x());
  out += ' ';
  put(out, cloud.centroid.y());
  out += ' ';
  put(out, cloud.centroid.z());
  out += "\nrms_radius_m ";
  put(out, cloud.rms_radius.x());
  out += ' ';
  put(out, cloud.rms_radius.y());
  out += ' ';
  put(out, cloud.rms_radius.z());
  out += '\n';
  return out;
}

std::string capture_summary(const CaptureMetric& m) {
  std::string out = "trap_m ";
  put(out, m.trap.x());
  out += ' ';
  put(out, m.trap.y());
  out += ' ';
  put(out, m.trap.z());
  out += '\n';
  out += format_line("capture_velocity_mps", m.capture_velocity);
  const char* dirs[] = {"+x", "-x", "+y", "-y", "+z"};
  for (int k = 0; k < 5; ++k) out += format_line(("capture_velocity_" + std::string(dirs[k]) + "_mps").c_str(),
                                                 m.directional_velocity[k]);
  out += format_line("capture_volume_m3", m.capture_volume);
  out += "captured_seeds " + std::to_string(m.captured_seeds) + "\n";
  out += "total_seeds " + std::to_string(m.total_seeds) + "\n";
  return out;
}

std::string grid_binary(const FieldGrid& g, double time) {
  const nlohmann::json header = {{"width", g.grid.nx},
                                 {"height", g.grid.ny},
                                 {"plane", {{"z_m", g.z},
                                            {"x_m", {g.grid.x_min, g.grid.x_max}},
                                            {"y_m", {g.grid.y_min, g.grid.y_max}}}},
                                 {"time_s", time},
                                 {"components", {"Bx", "By", "Bz"}},
                                 {"units", "T"},
                                 {"dtype", "float64le"},
                                 {"order", "row-major, x fastest, components interleaved"}};
  std::string out = header.dump() + "\n";
  const std::size_t start = out.size();
  out.resize(start + g.B.size() * 3 * sizeof(double));
  char* dst = out.data() + start;
  for (const auto& b : g.B) {
    for (int a = 0; a < 3; ++a) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(b[a]);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      std::memcpy(dst, &bits, sizeof bits);
      dst += sizeof bits;
    }
  }
  return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    f.flush();
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace atomchip
