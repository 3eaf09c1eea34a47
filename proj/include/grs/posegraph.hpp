#pragma once

// SE(3) pose graph over submaps with Levenberg-Marquardt on the manifold,
// plus g2o text import/export.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frontend.hpp"
#include "grs/geometry.hpp"
#include "grs/json_util.hpp"

namespace grs {

enum class EdgeKind { sequential, loop };

struct PoseGraphEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  SE3Pose measurement;  // T_from^-1 T_to
  Mat6 information = Mat6::Identity();
  EdgeKind kind = EdgeKind::sequential;
};

struct PriorFactor {
  std::size_t node = 0;
  SE3Pose mean;
  Mat6 information = Mat6::Identity();
};

namespace detail {

inline void check_information(const Mat6& m) {
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    throw InputError("pose graph: information matrix must be symmetric");
  }
  Eigen::LLT<Mat6> llt(m);
  if (llt.info() != Eigen::Success) throw InputError("pose graph: information matrix must be positive definite");
}

inline bool same_edge(const PoseGraphEdge& a, const PoseGraphEdge& b) {
  return a.from == b.from && a.to == b.to && a.kind == b.kind &&
         a.measurement.translation == b.measurement.translation &&
         a.measurement.rotation.coeffs() == b.measurement.rotation.coeffs() && a.information == b.information;
}

}  // namespace detail

class PoseGraph {
 public:
  void add_node(std::size_t id, const SE3Pose& pose) {
    if (nodes_.count(id)) throw InputError("pose graph: duplicate node " + std::to_string(id));
    nodes_.emplace(id, pose);
  }

  void add_edge(const PoseGraphEdge& e) {
    if (!nodes_.count(e.from) || !nodes_.count(e.to)) throw InputError("pose graph: edge endpoint does not exist");
    if (e.from == e.to) throw InputError("pose graph: self edge");
    detail::check_information(e.information);
    edges_.push_back(e);
  }

  void set_prior(const PriorFactor& p) {
    if (!nodes_.count(p.node)) throw InputError("pose graph: prior node does not exist");
    detail::check_information(p.information);
    prior_ = p;
  }

  bool has_edge(const PoseGraphEdge& e) const {
    for (const auto& x : edges_) {
      if (detail::same_edge(x, e)) return true;
    }
    return false;
  }

  const std::map<std::size_t, SE3Pose>& nodes() const { return nodes_; }
  std::map<std::size_t, SE3Pose>& nodes() { return nodes_; }
  const std::vector<PoseGraphEdge>& edges() const { return edges_; }
  const std::optional<PriorFactor>& prior() const { return prior_; }
  const SE3Pose& node(std::size_t id) const {
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) throw InputError("pose graph: unknown node " + std::to_string(id));
    return it->second;
  }

 private:
  std::map<std::size_t, SE3Pose> nodes_;
  std::vector<PoseGraphEdge> edges_;
  std::optional<PriorFactor> prior_;
};

inline Twist edge_residual(const SE3Pose& tu, const SE3Pose& tv, const SE3Pose& measurement) {
  return se3_log(compose(inverse(measurement), compose(inverse(tu), tv)));
}

inline Twist prior_residual(const SE3Pose& t, const SE3Pose& mean) { return se3_log(compose(inverse(t), mean)); }

/// Huber on the Mahalanobis norm; delta <= 0 is plain least squares.
inline double robust_cost(double squared_norm, double delta) {
  if (delta <= 0.0 || squared_norm <= delta * delta) return squared_norm;
  return 2.0 * delta * std::sqrt(squared_norm) - delta * delta;
}

inline double graph_cost(const PoseGraph& g, double huber_delta = 0.0) {
  double c = 0.0;
  for (const auto& e : g.edges()) {
    const Twist r = edge_residual(g.node(e.from), g.node(e.to), e.measurement);
    c += robust_cost(r.dot(e.information * r), huber_delta);
  }
  if (g.prior()) {
    const Twist r = prior_residual(g.node(g.prior()->node), g.prior()->mean);
    c += robust_cost(r.dot(g.prior()->information * r), huber_delta);
  }
  return c;
}

struct LmConfig {
  int max_iters = 100;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double grad_tol = 1e-10;
  double huber_delta = 0.0;  // off
  double jacobian_step = 1e-6;

  void validate() const {
    if (max_iters < 0) throw InputError("lm: max_iters must be >= 0");
    if (!(lambda_init > 0.0 && lambda_up > 1.0 && lambda_down > 0.0 && lambda_down < 1.0)) {
      throw InputError("lm: need lambda_init > 0, lambda_up > 1, 0 < lambda_down < 1");
    }
    if (!(grad_tol >= 0.0) || !(jacobian_step > 0.0)) throw InputError("lm: bad tolerances");
  }
};

struct LmReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted = 0;
  int singular_events = 0;
  std::vector<double> cost_trace;  // initial cost, then after each accepted step
  bool converged = false;
};

/// Throws unless every node is linked to the prior node through edges.
inline void check_connected(const PoseGraph& g) {
  if (!g.prior()) throw InputError("pose graph: no prior factor to fix the gauge");
  std::map<std::size_t, std::vector<std::size_t>> adj;
  for (const auto& e : g.edges()) {
    adj[e.from].push_back(e.to);
    adj[e.to].push_back(e.from);
  }
  std::set<std::size_t> seen{g.prior()->node};
  std::queue<std::size_t> q;
  q.push(g.prior()->node);
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : adj[u]) {
      if (seen.insert(v).second) q.push(v);
    }
  }
  for (const auto& [id, pose] : g.nodes()) {
    if (!seen.count(id)) throw InputError("pose graph: node " + std::to_string(id) + " is disconnected");
  }
}

namespace detail {

struct Linearization {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
};

/// Gauss-Newton system with numeric Jacobians of each residual with respect
/// to right perturbations T <- T exp(delta).
inline Linearization linearize(const PoseGraph& graph, const std::map<std::size_t, int>& slot, const LmConfig& cfg) {
  const int n = static_cast<int>(slot.size()) * 6;
  Linearization lin{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  const double h = cfg.jacobian_step;

  auto accumulate = [&](const std::vector<std::size_t>& vars, const std::vector<SE3Pose>& poses, const Mat6& info,
                        const auto& residual) {
    const Twist r0 = residual(poses);
    Eigen::MatrixXd j(6, 6 * vars.size());
    for (std::size_t k = 0; k < vars.size(); ++k) {
      for (int d = 0; d < 6; ++d) {
        Twist delta = Twist::Zero();
        delta(d) = h;
        auto plus = poses, minus = poses;
        plus[k] = compose(poses[k], se3_exp(delta));
        minus[k] = compose(poses[k], se3_exp(-delta));
        j.col(6 * k + d) = (residual(plus) - residual(minus)) / (2.0 * h);
      }
    }
    double w = 1.0;
    if (cfg.huber_delta > 0.0) {
      const double e = std::sqrt(r0.dot(info * r0));
      if (e > cfg.huber_delta) w = cfg.huber_delta / e;
    }
    const Eigen::MatrixXd jt_info = w * j.transpose() * info;
    const Eigen::MatrixXd block_h = jt_info * j;
    const Eigen::VectorXd block_g = jt_info * r0;
    for (std::size_t a = 0; a < vars.size(); ++a) {
      const int ia = slot.at(vars[a]) * 6;
      lin.g.segment<6>(ia) += block_g.segment<6>(6 * a);
      for (std::size_t b = 0; b < vars.size(); ++b) {
        const int ib = slot.at(vars[b]) * 6;
        lin.h.block<6, 6>(ia, ib) += block_h.block<6, 6>(6 * a, 6 * b);
      }
    }
  };

  for (const auto& e : graph.edges()) {
    accumulate({e.from, e.to}, {graph.node(e.from), graph.node(e.to)}, e.information,
               [&](const std::vector<SE3Pose>& p) { return edge_residual(p[0], p[1], e.measurement); });
  }
  if (graph.prior()) {
    const auto& pr = *graph.prior();
    accumulate({pr.node}, {graph.node(pr.node)}, pr.information,
               [&](const std::vector<SE3Pose>& p) { return prior_residual(p[0], pr.mean); });
  }
  return lin;
}

}  // namespace detail

/// Levenberg-Marquardt over all node poses. Steps are accepted only when the
/// cost strictly decreases, so the accepted cost trace is non-increasing.
inline LmReport optimize(PoseGraph& graph, const LmConfig& cfg = {}) {
  cfg.validate();
  check_connected(graph);
  std::map<std::size_t, int> slot;
  for (const auto& [id, pose] : graph.nodes()) slot.emplace(id, static_cast<int>(slot.size()));

  LmReport rep;
  double cost = graph_cost(graph, cfg.huber_delta);
  rep.initial_cost = cost;
  rep.cost_trace.push_back(cost);
  double lambda = cfg.lambda_init;

  for (int it = 0; it < cfg.max_iters; ++it) {
    rep.iterations = it + 1;
    const auto lin = detail::linearize(graph, slot, cfg);
    if (lin.g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      rep.converged = true;
      rep.iterations = it;
      break;
    }
    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::MatrixXd a = lin.h;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += lambda * std::max(lin.h(i, i), 1e-9);
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      Eigen::VectorXd delta;
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) delta = ldlt.solve(-lin.g);
      if (delta.size() == 0 || !delta.allFinite()) {
        ++rep.singular_events;
        lambda *= cfg.lambda_up;
        continue;
      }
      PoseGraph trial = graph;
      for (auto& [id, pose] : trial.nodes()) pose = compose(pose, se3_exp(delta.segment<6>(slot.at(id) * 6)));
      double trial_cost;
      try {
        trial_cost = graph_cost(trial, cfg.huber_delta);
      } catch (const DegenerateError&) {
        trial_cost = std::numeric_limits<double>::infinity();
      }
      if (trial_cost < cost) {
        graph = std::move(trial);
        cost = trial_cost;
        lambda = std::max(lambda * cfg.lambda_down, 1e-12);
        accepted = true;
        ++rep.accepted;
        rep.cost_trace.push_back(cost);
      } else {
        lambda *= cfg.lambda_up;
      }
    }
    if (!accepted) {
      // No decrease at any damping: we sit at a minimum to working precision.
      rep.converged = true;
      break;
    }
  }
  rep.final_cost = cost;
  return rep;
}

// ---------------------------------------------------------------------------
// Incremental construction

struct PoseGraphConfig {
  LmConfig lm;
  double sequential_weight = 1.0;
  double loop_weight = 10.0;
  double prior_weight = 1e6;

  void validate() const {
    lm.validate();
    if (!(sequential_weight > 0.0 && loop_weight > 0.0 && prior_weight > 0.0)) {
      throw InputError("posegraph: information weights must be positive");
    }
  }
};

inline PoseGraphConfig posegraph_config_from_json(const json_util::Json& j) {
  using json_util::get_or;
  PoseGraphConfig c;
  c.sequential_weight = get_or(j, "sequential_weight", c.sequential_weight);
  c.loop_weight = get_or(j, "loop_weight", c.loop_weight);
  c.prior_weight = get_or(j, "prior_weight", c.prior_weight);
  c.lm.max_iters = get_or(j, "max_iters", c.lm.max_iters);
  c.lm.lambda_init = get_or(j, "lambda_init", c.lm.lambda_init);
  c.lm.lambda_up = get_or(j, "lambda_up", c.lm.lambda_up);
  c.lm.lambda_down = get_or(j, "lambda_down", c.lm.lambda_down);
  c.lm.grad_tol = get_or(j, "grad_tol", c.lm.grad_tol);
  c.lm.huber_delta = get_or(j, "huber_delta", c.lm.huber_delta);
  c.validate();
  return c;
}

/// Relative transform between consecutive submaps from the boundary frame,
/// whose pose is known in both submap frames.
inline PoseGraphEdge sequential_constraint(const Submap& old, const Submap& next, const Mat6& information) {
  if (!old.exit_pose || !old.exit_frame || *old.exit_frame != next.anchor) {
    throw InputError("sequential_constraint: missing boundary observation between submaps " +
                     std::to_string(old.id) + " and " + std::to_string(next.id));
  }
  return {old.id, next.id, compose(*old.exit_pose, inverse(next.entry_pose)), information, EdgeKind::sequential};
}

/// Appends a factor. A sequential edge to an unseen node creates that node by
/// composition and does not optimize; a loop edge triggers optimization. An
/// edge identical to an existing one is not added twice.
inline std::optional<LmReport> incremental_update(PoseGraph& graph, const PoseGraphEdge& edge,
                                                  const LmConfig& cfg = {}) {
  if (edge.kind == EdgeKind::sequential) {
    if (!graph.nodes().count(edge.from)) throw InputError("incremental_update: unknown source node");
    if (!graph.nodes().count(edge.to)) graph.add_node(edge.to, compose(graph.node(edge.from), edge.measurement));
    if (!graph.has_edge(edge)) graph.add_edge(edge);
    return std::nullopt;
  }
  if (!graph.has_edge(edge)) graph.add_edge(edge);
  return optimize(graph, cfg);
}

// ---------------------------------------------------------------------------
// g2o text format. Information blocks are stored in g2o's (translation,
// rotation) order and permuted to this library's (rotation, translation).

namespace detail {

inline Mat6 swap_halves(const Mat6& m) {
  Mat6 p = Mat6::Zero();
  p.block<3, 3>(0, 3) = Mat3::Identity();
  p.block<3, 3>(3, 0) = Mat3::Identity();
  return p * m * p.transpose();
}

inline std::string g2o_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_pose(std::ostream& os, const SE3Pose& p) {
  const auto& t = p.translation;
  const auto& q = p.rotation;
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) os << ' ' << g2o_number(v);
}

inline void write_information(std::ostream& os, const Mat6& info) {
  const Mat6 m = swap_halves(info);
  for (int r = 0; r < 6; ++r)
    for (int c = r; c < 6; ++c) os << ' ' << g2o_number(m(r, c));
}

}  // namespace detail

inline void write_g2o(std::ostream& os, const PoseGraph& g) {
  for (const auto& [id, pose] : g.nodes()) {
    os << "VERTEX_SE3:QUAT " << id;
    detail::write_pose(os, pose);
    os << '\n';
  }
  if (g.prior()) {
    os << "PARAMS_SE3OFFSET 0";
    detail::write_pose(os, SE3Pose::identity());
    os << '\n';
    os << "EDGE_SE3_PRIOR " << g.prior()->node << " 0";
    detail::write_pose(os, g.prior()->mean);
    detail::write_information(os, g.prior()->information);
    os << '\n';
  }
  for (const auto& e : g.edges()) {
    os << "EDGE_SE3:QUAT " << e.from << ' ' << e.to;
    detail::write_pose(os, e.measurement);
    detail::write_information(os, e.information);
    os << '\n';
  }
}

inline std::string to_g2o_string(const PoseGraph& g) {
  std::ostringstream os;
  write_g2o(os, g);
  return os.str();
}

/// Reads VERTEX_SE3:QUAT, EDGE_SE3:QUAT and EDGE_SE3_PRIOR lines. Edges
/// between consecutive ids are treated as sequential, others as loops.
inline PoseGraph read_g2o(std::istream& is) {
  PoseGraph g;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<PoseGraphEdge, std::size_t>> edges;
  std::optional<std::pair<PriorFactor, std::size_t>> prior;

  auto read_pose = [&](std::istringstream& ls) {
    double v[7];
    for (double& x : v) {
      if (!(ls >> x)) throw ParseError("g2o: expected 7 pose values", line_no);
    }
    const Quaternion q(v[6], v[3], v[4], v[5]);
    if (!(std::abs(q.norm() - 1.0) < 1e-3)) throw ParseError("g2o: quaternion is not unit length", line_no);
    return SE3Pose::from_raw(q, Vec3(v[0], v[1], v[2]));
  };
  auto read_info = [&](std::istringstream& ls) {
    Mat6 m;
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) {
        if (!(ls >> m(r, c))) throw ParseError("g2o: expected 21 information values", line_no);
        m(c, r) = m(r, c);
      }
    }
    return detail::swap_halves(m);
  };
  auto finish = [&](std::istringstream& ls) {
    std::string extra;
    if (ls >> extra) throw ParseError("g2o: trailing content '" + extra + "'", line_no);
  };

  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "VERTEX_SE3:QUAT") {
      std::size_t id;
      if (!(ls >> id)) throw ParseError("g2o: bad vertex id", line_no);
      const SE3Pose p = read_pose(ls);
      finish(ls);
      try {
        g.add_node(id, p);
      } catch (const InputError& e) {
        throw ParseError(e.what(), line_no);
      }
    } else if (tag == "EDGE_SE3:QUAT") {
      PoseGraphEdge e;
      if (!(ls >> e.from >> e.to)) throw ParseError("g2o: bad edge ids", line_no);
      e.measurement = read_pose(ls);
      e.information = read_info(ls);
      finish(ls);
      e.kind = e.to == e.from + 1 ? EdgeKind::sequential : EdgeKind::loop;
      edges.emplace_back(e, line_no);
    } else if (tag == "EDGE_SE3_PRIOR") {
      PriorFactor p;
      std::size_t param;
      if (!(ls >> p.node >> param)) throw ParseError("g2o: bad prior ids", line_no);
      p.mean = read_pose(ls);
      p.information = read_info(ls);
      finish(ls);
      prior.emplace(p, line_no);
    } else if (tag == "PARAMS_SE3OFFSET") {
      std::size_t id;
      if (!(ls >> id)) throw ParseError("g2o: bad parameter id", line_no);
      const SE3Pose offset = read_pose(ls);
      finish(ls);
      if (offset.translation.norm() != 0.0 || offset.rotation.vec().norm() != 0.0) {
        throw ParseError("g2o: only identity sensor offsets are supported", line_no);
      }
    } else {
      throw ParseError("g2o: unsupported record '" + tag + "'", line_no);
    }
  }
  // Vertices may follow the edges that use them.
  for (const auto& [e, where] : edges) {
    try {
      g.add_edge(e);
    } catch (const InputError& err) {
      throw ParseError(err.what(), where);
    }
  }
  if (prior) {
    try {
      g.set_prior(prior->first);
    } catch (const InputError& err) {
      throw ParseError(err.what(), prior->second);
    }
  }
  return g;
}

inline void save_g2o(const std::string& path, const PoseGraph& g) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_g2o(os, g);
}

inline PoseGraph load_g2o(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  return read_g2o(is);
}

}  // namespace grs
