#pragma once

// Text formats for trajectories (TUM) and point clouds (ASCII PLY).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"

namespace grs::io {

inline std::string format_number(double v, int significant_digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant_digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// TUM: `timestamp tx ty tz qx qy qz qw`, 9 significant digits.

inline constexpr int kTumDigits = 9;

inline void write_tum(std::ostream& os, const Trajectory& traj) {
  for (const auto& sp : traj) {
    const auto& t = sp.pose.translation;
    const auto& q = sp.pose.rotation;
    const double fields[8] = {sp.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()};
    for (int i = 0; i < 8; ++i) {
      if (i) os << ' ';
      os << format_number(fields[i], kTumDigits);
    }
    os << '\n';
  }
}

inline std::string to_tum_string(const Trajectory& traj) {
  std::ostringstream os;
  write_tum(os, traj);
  return os.str();
}

/// Parses TUM lines. Blank lines and '#' comments are skipped. Quaternion
/// coefficients are kept verbatim.
inline Trajectory read_tum(std::istream& is) {
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) throw ParseError("TUM: expected 8 numeric fields", line_no);
    }
    std::string extra;
    if (ls >> extra) throw ParseError("TUM: trailing content '" + extra + "'", line_no);
    const Quaternion q(v[7], v[4], v[5], v[6]);
    const double n = q.norm();
    if (!(std::abs(n - 1.0) < 1e-3)) throw ParseError("TUM: quaternion is not unit length", line_no);
    try {
      traj.push_back(v[0], SE3Pose::from_raw(q, Vec3(v[1], v[2], v[3])));
    } catch (const InputError&) {
      throw ParseError("TUM: timestamps must be strictly increasing", line_no);
    }
  }
  return traj;
}

inline void save_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_tum(os, traj);
}

inline Trajectory load_tum(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  return read_tum(is);
}

// ---------------------------------------------------------------------------
// ASCII PLY with `x y z confidence` vertex properties.

inline void write_ply(std::ostream& os, const PointCloud& cloud) {
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << cloud.size() << "\n";
  os << "property double x\nproperty double y\nproperty double z\n";
  os << "property double confidence\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    os << format_number(p.x(), 9) << ' ' << format_number(p.y(), 9) << ' '
       << format_number(p.z(), 9) << ' ' << format_number(cloud.confidence[i], 9) << '\n';
  }
}

inline PointCloud read_ply(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw ParseError("PLY: missing magic", line_no);
  std::size_t count = 0;
  bool have_count = false;
  std::vector<std::string> props;
  while (true) {
    if (!next()) throw ParseError("PLY: unterminated header", line_no);
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw ParseError("PLY: only ascii format is supported", line_no);
    } else if (key == "element") {
      std::string name;
      ls >> name;
      if (name == "vertex") {
        if (!(ls >> count)) throw ParseError("PLY: bad vertex count", line_no);
        have_count = true;
      }
    } else if (key == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    }
  }
  if (!have_count) throw ParseError("PLY: no vertex element", line_no);
  int ix = -1, iy = -1, iz = -1, ic = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    if (props[i] == "x") ix = i;
    if (props[i] == "y") iy = i;
    if (props[i] == "z") iz = i;
    if (props[i] == "confidence") ic = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY: missing x/y/z properties", line_no);
  PointCloud cloud;
  cloud.points.reserve(count);
  cloud.confidence.reserve(count);
  std::vector<double> row(props.size());
  for (std::size_t k = 0; k < count; ++k) {
    if (!next()) throw ParseError("PLY: fewer vertices than declared", line_no);
    std::istringstream ls(line);
    for (double& x : row) {
      if (!(ls >> x)) throw ParseError("PLY: malformed vertex", line_no);
    }
    cloud.push_back(Vec3(row[ix], row[iy], row[iz]), ic >= 0 ? row[ic] : 1.0);
  }
  return cloud;
}

inline void save_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_ply(os, cloud);
}

inline PointCloud load_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  return read_ply(is);
}

}  // namespace grs::io
