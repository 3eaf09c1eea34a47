#pragma once

// Top-down (XY) SVG of a ground-truth and an estimated trajectory, the
// estimate colored by per-pose error.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"

namespace grs {

namespace detail {

inline std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Blue (low error) to red (high error).
inline std::string error_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(255 * t), 40, static_cast<int>(255 * (1 - t)));
  return buf;
}

}  // namespace detail

inline std::string trajectory_svg(const std::vector<Vec3>& gt, const std::vector<Vec3>& est,
                                  const std::vector<double>& residuals, int size = 600) {
  if (gt.size() != est.size() || est.size() != residuals.size()) {
    throw InputError("trajectory_svg: position and residual counts differ");
  }
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_x;
  for (const auto* v : {&gt, &est}) {
    for (const auto& p : *v) {
      lo_x = std::min(lo_x, p.x());
      hi_x = std::max(hi_x, p.x());
      lo_y = std::min(lo_y, p.y());
      hi_y = std::max(hi_y, p.y());
    }
  }
  const double margin = 30.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double k = (size - 2 * margin) / span;
  auto px = [&](const Vec3& p) { return detail::svg_number(margin + (p.x() - lo_x) * k); };
  // SVG y grows downward; flip so +y points up.
  auto py = [&](const Vec3& p) { return detail::svg_number(size - margin - (p.y() - lo_y) * k); };
  const double max_err = residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end());

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) + "\" height=\"" +
       std::to_string(size) + "\" viewBox=\"0 0 " + std::to_string(size) + " " + std::to_string(size) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : gt) s += px(p) + "," + py(p) + " ";
  s += "\"/>\n";
  for (std::size_t i = 0; i + 1 < est.size(); ++i) {
    const double t = max_err > 0.0 ? 0.5 * (residuals[i] + residuals[i + 1]) / max_err : 0.0;
    s += "<line x1=\"" + px(est[i]) + "\" y1=\"" + py(est[i]) + "\" x2=\"" + px(est[i + 1]) + "\" y2=\"" +
         py(est[i + 1]) + "\" stroke=\"" + detail::error_color(t) + "\" stroke-width=\"2\"/>\n";
  }
  s += "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">ground truth (black), estimate "
       "(blue to red: 0 to " + detail::svg_number(100.0 * max_err) + " cm)</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace grs
