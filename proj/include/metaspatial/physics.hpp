#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaspatial/layout.hpp"

namespace metaspatial {

struct PhysicsParams {
  double alpha = 0.2;  // collision weight
  double beta = 0.2;   // constraint weight
  double bound_tolerance_m = 1e-3;
  double support_tolerance_m = 0.05;
};

struct ViolationSet {
  bool out_of_bounds = false;
  bool floating = false;

  bool any() const { return out_of_bounds || floating; }
  friend bool operator==(const ViolationSet&, const ViolationSet&) = default;
};

struct SceneNode {
  ObjectSpec spec;
  Placement placement;
  Aabb box;
};

struct SceneGraph {
  std::vector<SceneNode> nodes;
  // Node index pairs (i < j), sorted.
  std::vector<std::pair<std::size_t, std::size_t>> collision_edges;
  // Parallel to nodes.
  std::vector<ViolationSet> violations;

  bool collides(std::size_t a, std::size_t b) const;
  std::vector<std::pair<std::string, std::string>> colliding_id_pairs() const;
  std::map<std::string, ViolationSet> violations_by_id() const;
};

struct PhysicsReport {
  double collision_ratio = 0.0;
  double constraint_ratio = 0.0;
  double physics_reward = 0.0;
  std::map<std::string, double> per_object_penalty;
};

// Throws std::invalid_argument naming any placement id the task does not know.
SceneGraph build_scene_graph(const Layout& layout, const SceneTask& task,
                             const PhysicsParams& params = {});

ViolationSet check_constraints(const SceneNode& node, const RoomSpec& room,
                               std::span<const Aabb> support_candidates,
                               const PhysicsParams& params = {});

// Throws std::invalid_argument on an empty graph or negative weights.
PhysicsReport physics_report(const SceneGraph& graph, double alpha, double beta);

// Report used when no layout could be scored: every task object counts as
// colliding and violating.
PhysicsReport unscorable_physics_report(const SceneTask& task, double alpha, double beta);

}  // namespace metaspatial
