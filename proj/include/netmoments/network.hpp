#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "netmoments/sketch_core.hpp"

namespace netmoments {

using NodeId = std::int32_t;

// Undirected simple graph, optionally embedded in the unit square.
class Topology {
 public:
  Topology() = default;
  explicit Topology(NodeId num_nodes);

  NodeId size() const noexcept { return static_cast<NodeId>(adjacency_.size()); }
  std::int64_t num_edges() const noexcept { return num_edges_; }

  std::span<const NodeId> neighbors(NodeId u) const { return adjacency_.at(u); }
  NodeId degree(NodeId u) const { return static_cast<NodeId>(adjacency_.at(u).size()); }
  bool has_edge(NodeId u, NodeId v) const;

  // Adds u-v once; self-loops and duplicates are rejected.
  void add_edge(NodeId u, NodeId v);
  // Caller guarantees u != v, both in range, and the edge is new.
  void add_edge_unchecked(NodeId u, NodeId v);

  const std::optional<Eigen::Matrix2Xd>& positions() const noexcept { return positions_; }
  std::optional<double> radius() const noexcept { return radius_; }
  void set_geometry(Eigen::Matrix2Xd positions, double radius);

  // Checks symmetry, no self-loops, and the distance rule when geometry is present.
  void validate() const;

  // Subgraph on `nodes` relabelled 0..n-1 in the given order.
  Topology induced(std::span<const NodeId> nodes) const;

 private:
  std::vector<std::vector<NodeId>> adjacency_;
  std::int64_t num_edges_ = 0;
  std::optional<Eigen::Matrix2Xd> positions_;
  std::optional<double> radius_;
};

Topology complete_graph(NodeId n);
Topology cycle_graph(NodeId n);

// n i.i.d. uniform points in the unit square, edge iff distance <= radius.
Topology build_rgg(NodeId n, double radius, NodeRng& rng);
// Rebuilds the edge set of an embedded topology for a new radius.
Topology rgg_from_positions(const Eigen::Matrix2Xd& positions, double radius);

// sqrt(c ln N / N)
double connectivity_radius(std::int64_t n, double c);
// c / sqrt(N)
double percolation_radius(std::int64_t n, double c);

inline constexpr double kDefaultConnectivityC = 2.0;
// Smallest c on a 0.05 grid with a >= 80% giant component at N = 2000 in >= 95% of seeds.
inline constexpr double kDefaultPercolationC = 1.35;

struct ComponentReport {
  std::vector<NodeId> component_ids;  // labels 0.. in order of first appearance by node id
  std::vector<NodeId> giant_set;      // ascending node ids
  NodeId num_components = 0;
  double alpha = 0.0;                 // 1 - |giant| / N
};

// Connected components; the giant is the largest, ties to the one holding the smallest id.
ComponentReport giant_component(const Topology& t);

bool is_connected(const Topology& t);

// min over cuts S of cut(S) / min(vol S, vol S^c); N <= 20 only.
double conductance_small(const Topology& t);

// Edge list: "N radius" header (radius 0 when not embedded), then "u v" per edge.
void write_edge_list(std::ostream& os, const Topology& t);
Topology read_edge_list(std::istream& is);
// "u x y" per node, 9 significant digits.
void write_positions(std::ostream& os, const Topology& t);

}  // namespace netmoments
