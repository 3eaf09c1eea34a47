#pragma once

// Point-to-point ICP with the scale held at its initial value.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"
#include "grs/nearest_neighbor.hpp"
#include "grs/parallel.hpp"
#include "grs/umeyama.hpp"

namespace grs {

struct IcpOptions {
  int max_iters = 50;
  double rel_tol = 1e-6;  // stop when the association RMSE changes less than this, relatively
  double max_distance = std::numeric_limits<double>::infinity();  // reject farther pairs
};

struct IcpResult {
  Sim3Transform transform;
  std::vector<double> rmse_trace;  // association RMSE at the start of each iteration
  int iterations = 0;
  std::size_t matches = 0;
  bool converged = false;
};

inline IcpResult icp(std::span<const Vec3> src, const KdTree& target, const Sim3Transform& init,
                     const IcpOptions& opt = {}) {
  if (src.size() < 3 || target.size() < 3) throw InputError("icp: both point sets need at least 3 points");
  IcpResult res;
  res.transform = init;
  const double max_d2 = opt.max_distance * opt.max_distance;
  std::vector<Neighbor> nn(src.size());
  for (int it = 0; it < opt.max_iters; ++it) {
    const Sim3Transform cur = res.transform;
    parallel_for(src.size(), [&](std::size_t i) { nn[i] = target.nearest(cur * src[i]); });
    std::vector<Vec3> from, to;
    double sum = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (nn[i].squared_distance > max_d2) continue;
      from.push_back(cur.scale * src[i]);
      to.push_back(target.points()[nn[i].index]);
      sum += nn[i].squared_distance;
    }
    res.iterations = it + 1;
    res.matches = from.size();
    if (from.size() < 3) break;
    const double rmse = std::sqrt(sum / static_cast<double>(from.size()));
    res.rmse_trace.push_back(rmse);
    const std::size_t n = res.rmse_trace.size();
    if (rmse == 0.0 || (n > 1 && std::abs(res.rmse_trace[n - 2] - rmse) <= opt.rel_tol * res.rmse_trace[n - 2])) {
      res.converged = true;
      break;
    }
    try {
      const Sim3Transform rigid = weighted_umeyama(from, to, false);
      res.transform = Sim3Transform(cur.scale, rigid.rotation, rigid.translation);
    } catch (const DegenerateError&) {
      break;
    }
  }
  return res;
}

}  // namespace grs
