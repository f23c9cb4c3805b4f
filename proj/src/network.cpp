#include "netmoments/network.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <limits>
#include <string>

namespace netmoments {

Topology::Topology(NodeId num_nodes) {
  if (num_nodes < 0) throw ConfigError("topology size must be non-negative");
  adjacency_.resize(static_cast<std::size_t>(num_nodes));
}

bool Topology::has_edge(NodeId u, NodeId v) const {
  const auto& a = adjacency_.at(u);
  return std::find(a.begin(), a.end(), v) != a.end();
}

void Topology::add_edge(NodeId u, NodeId v) {
  if (u < 0 || v < 0 || u >= size() || v >= size()) throw ConfigError("edge endpoint out of range");
  if (u == v) throw ConfigError("self-loop " + std::to_string(u));
  if (has_edge(u, v)) throw ConfigError("duplicate edge " + std::to_string(u) + "-" + std::to_string(v));
  add_edge_unchecked(u, v);
}

void Topology::add_edge_unchecked(NodeId u, NodeId v) {
  adjacency_[u].push_back(v);
  adjacency_[v].push_back(u);
  ++num_edges_;
}

void Topology::set_geometry(Eigen::Matrix2Xd positions, double radius) {
  if (positions.cols() != size()) throw ConfigError("positions do not match node count");
  positions_ = std::move(positions);
  radius_ = radius;
}

void Topology::validate() const {
  std::int64_t half_edges = 0;
  for (NodeId u = 0; u < size(); ++u) {
    for (NodeId v : adjacency_[u]) {
      if (v == u) throw StructuralError("self-loop at " + std::to_string(u));
      if (!has_edge(v, u)) throw StructuralError("asymmetric edge " + std::to_string(u));
      ++half_edges;
    }
  }
  if (half_edges != 2 * num_edges_) throw StructuralError("edge count mismatch");
  if (positions_ && radius_) {
    const double r2 = *radius_ * *radius_;
    for (NodeId u = 0; u < size(); ++u) {
      for (NodeId v = u + 1; v < size(); ++v) {
        const bool close = (positions_->col(u) - positions_->col(v)).squaredNorm() <= r2;
        if (close != has_edge(u, v)) throw StructuralError("distance rule violated");
      }
    }
  }
}

Topology Topology::induced(std::span<const NodeId> nodes) const {
  std::vector<NodeId> relabel(adjacency_.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) relabel.at(nodes[i]) = static_cast<NodeId>(i);
  Topology out(static_cast<NodeId>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (NodeId v : adjacency_[nodes[i]]) {
      const NodeId j = relabel[v];
      if (j > static_cast<NodeId>(i)) out.add_edge_unchecked(static_cast<NodeId>(i), j);
    }
  }
  if (positions_ && radius_) {
    Eigen::Matrix2Xd pos(2, static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) pos.col(static_cast<Eigen::Index>(i)) = positions_->col(nodes[i]);
    out.set_geometry(std::move(pos), *radius_);
  }
  return out;
}

Topology complete_graph(NodeId n) {
  Topology t(n);
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) t.add_edge_unchecked(u, v);
  }
  return t;
}

Topology cycle_graph(NodeId n) {
  if (n < 3) throw ConfigError("cycle needs at least 3 nodes");
  Topology t(n);
  for (NodeId u = 0; u < n; ++u) t.add_edge(u, (u + 1) % n);
  return t;
}

Topology rgg_from_positions(const Eigen::Matrix2Xd& positions, double radius) {
  const auto n = static_cast<NodeId>(positions.cols());
  Topology t(n);
  const double r2 = radius * radius;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if ((positions.col(u) - positions.col(v)).squaredNorm() <= r2) t.add_edge_unchecked(u, v);
    }
  }
  t.set_geometry(positions, radius);
  return t;
}

Topology build_rgg(NodeId n, double radius, NodeRng& rng) {
  if (n < 2) throw ConfigError("build_rgg: need N >= 2");
  if (!(radius > 0.0) || radius > std::sqrt(2.0) + 1e-12) {
    throw ConfigError("build_rgg: radius must be in (0, sqrt 2]");
  }
  Eigen::Matrix2Xd pos(2, n);
  for (NodeId u = 0; u < n; ++u) {
    pos(0, u) = uniform01(rng);
    pos(1, u) = uniform01(rng);
  }
  return rgg_from_positions(pos, radius);
}

double connectivity_radius(std::int64_t n, double c) {
  if (n < 2 || !(c > 0.0)) throw ConfigError("connectivity_radius: need N >= 2, c > 0");
  const double nn = static_cast<double>(n);
  return std::sqrt(c * std::log(nn) / nn);
}

double percolation_radius(std::int64_t n, double c) {
  if (n < 2 || !(c > 0.0)) throw ConfigError("percolation_radius: need N >= 2, c > 0");
  return c / std::sqrt(static_cast<double>(n));
}

ComponentReport giant_component(const Topology& t) {
  const NodeId n = t.size();
  ComponentReport r;
  r.component_ids.assign(static_cast<std::size_t>(n), -1);
  std::vector<NodeId> sizes;
  std::vector<NodeId> stack;
  for (NodeId s = 0; s < n; ++s) {
    if (r.component_ids[s] >= 0) continue;
    const NodeId label = static_cast<NodeId>(sizes.size());
    sizes.push_back(0);
    r.component_ids[s] = label;
    stack.push_back(s);
    while (!stack.empty()) {
      const NodeId u = stack.back();
      stack.pop_back();
      ++sizes[label];
      for (NodeId v : t.neighbors(u)) {
        if (r.component_ids[v] < 0) {
          r.component_ids[v] = label;
          stack.push_back(v);
        }
      }
    }
  }
  r.num_components = static_cast<NodeId>(sizes.size());
  if (n == 0) return r;
  // Labels are assigned in order of smallest member, so the first maximum wins ties.
  const auto giant = static_cast<NodeId>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (NodeId u = 0; u < n; ++u) {
    if (r.component_ids[u] == giant) r.giant_set.push_back(u);
  }
  r.alpha = 1.0 - static_cast<double>(r.giant_set.size()) / n;
  return r;
}

bool is_connected(const Topology& t) { return t.size() <= 1 || giant_component(t).num_components == 1; }

double conductance_small(const Topology& t) {
  const NodeId n = t.size();
  if (n > 20) throw UnsupportedError("conductance_small: exhaustive cuts limited to N <= 20");
  if (n < 2 || !is_connected(t)) return 0.0;
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v : t.neighbors(u)) adj(u, v) = 1.0;
  }
  const Eigen::VectorXd deg = adj.rowwise().sum();
  const double total = deg.sum();
  double best = std::numeric_limits<double>::infinity();
  const std::uint32_t full = (std::uint32_t{1} << n) - 1;
  // S and its complement give the same ratio, so fix node n-1 outside S.
  for (std::uint32_t mask = 1; mask < (std::uint32_t{1} << (n - 1)); ++mask) {
    double vol = 0.0;
    double cut = 0.0;
    for (NodeId u = 0; u < n; ++u) {
      if (!((mask >> u) & 1U)) continue;
      vol += deg(u);
      for (NodeId v : t.neighbors(u)) {
        if (!(((mask & full) >> v) & 1U)) cut += 1.0;
      }
    }
    const double side = std::min(vol, total - vol);
    if (side > 0.0) best = std::min(best, cut / side);
  }
  return best;
}

void write_edge_list(std::ostream& os, const Topology& t) {
  os << t.size() << ' ' << std::setprecision(9) << t.radius().value_or(0.0) << '\n';
  for (NodeId u = 0; u < t.size(); ++u) {
    for (NodeId v : t.neighbors(u)) {
      if (u < v) os << u << ' ' << v << '\n';
    }
  }
}

Topology read_edge_list(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  NodeId n = -1;
  Topology t;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (n < 0) {
      double radius = 0.0;
      if (!(ls >> n >> radius) || n < 0) throw ParseError(lineno, "expected header 'N radius'");
      t = Topology(n);
      continue;
    }
    long long u = 0;
    long long v = 0;
    std::string extra;
    if (!(ls >> u >> v) || (ls >> extra)) throw ParseError(lineno, "expected 'u v'");
    if (u < 0 || v < 0 || u >= n || v >= n) throw ParseError(lineno, "node id out of range");
    try {
      t.add_edge(static_cast<NodeId>(u), static_cast<NodeId>(v));
    } catch (const ConfigError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (n < 0) throw ParseError(lineno, "missing header");
  return t;
}

void write_positions(std::ostream& os, const Topology& t) {
  if (!t.positions()) throw ConfigError("topology has no positions");
  const auto& p = *t.positions();
  os << std::setprecision(9);
  for (NodeId u = 0; u < t.size(); ++u) os << u << ' ' << p(0, u) << ' ' << p(1, u) << '\n';
}

}  // namespace netmoments
