#include "metaspatial/physics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metaspatial/kernels.hpp"

namespace metaspatial {

bool SceneGraph::collides(std::size_t a, std::size_t b) const {
  const auto key = std::minmax(a, b);
  return std::binary_search(collision_edges.begin(), collision_edges.end(),
                            std::pair<std::size_t, std::size_t>(key.first, key.second));
}

std::vector<std::pair<std::string, std::string>> SceneGraph::colliding_id_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(collision_edges.size());
  for (auto [a, b] : collision_edges) {
    out.emplace_back(nodes[a].spec.id, nodes[b].spec.id);
  }
  return out;
}

std::map<std::string, ViolationSet> SceneGraph::violations_by_id() const {
  std::map<std::string, ViolationSet> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (violations[i].any()) out[nodes[i].spec.id] = violations[i];
  }
  return out;
}

SceneGraph build_scene_graph(const Layout& layout, const SceneTask& task,
                             const PhysicsParams& params) {
  SceneGraph graph;
  graph.nodes.reserve(layout.placements.size());
  for (const auto& p : layout.placements) {
    const ObjectSpec* spec = task.find_object(p.object_id);
    if (spec == nullptr) {
      throw std::invalid_argument("build_scene_graph: unknown object id '" + p.object_id + "'");
    }
    graph.nodes.push_back({*spec, p, aabb_of(*spec, p)});
  }

  std::vector<Aabb> boxes;
  boxes.reserve(graph.nodes.size());
  for (const auto& n : graph.nodes) boxes.push_back(n.box);
  graph.collision_edges = kernels::overlap_pairs_serial(boxes);

  graph.violations.reserve(graph.nodes.size());
  std::vector<Aabb> others;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    others.clear();
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (j != i) others.push_back(boxes[j]);
    }
    graph.violations.push_back(check_constraints(graph.nodes[i], task.room, others, params));
  }
  return graph;
}

namespace {

bool horizontal_overlap(const Aabb& a, const Aabb& b) {
  return a.min.x < b.max.x && b.min.x < a.max.x && a.min.y < b.max.y && b.min.y < a.max.y;
}

}  // namespace

ViolationSet check_constraints(const SceneNode& node, const RoomSpec& room,
                               std::span<const Aabb> support_candidates,
                               const PhysicsParams& params) {
  ViolationSet v;
  const Aabb& box = node.box;
  const Vec3 extent = room.extent();
  for (Axis a : kAxes) {
    if (box.min[a] < -params.bound_tolerance_m || box.max[a] > extent[a] + params.bound_tolerance_m) {
      v.out_of_bounds = true;
    }
  }

  const bool on_floor = box.min.z <= params.support_tolerance_m;
  switch (node.spec.placement_class) {
    case PlacementClass::floor:
      v.floating = !on_floor;
      break;
    case PlacementClass::surface: {
      if (on_floor) break;
      const bool supported =
          std::any_of(support_candidates.begin(), support_candidates.end(), [&](const Aabb& s) {
            return std::abs(box.min.z - s.max.z) <= params.support_tolerance_m &&
                   horizontal_overlap(box, s);
          });
      v.floating = !supported;
      break;
    }
    case PlacementClass::wall_mounted:
    case PlacementClass::ceiling:
      break;
  }
  return v;
}

PhysicsReport physics_report(const SceneGraph& graph, double alpha, double beta) {
  if (graph.nodes.empty()) throw std::invalid_argument("physics_report: empty scene graph");
  if (!(alpha >= 0) || !(beta >= 0)) {
    throw std::invalid_argument("physics_report: alpha and beta must be non-negative");
  }
  const std::size_t n = graph.nodes.size();
  std::vector<bool> colliding(n, false);
  for (auto [a, b] : graph.collision_edges) {
    colliding[a] = true;
    colliding[b] = true;
  }

  PhysicsReport report;
  std::size_t n_colliding = 0;
  std::size_t n_violating = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool violating = graph.violations[i].any();
    n_colliding += colliding[i] ? 1 : 0;
    n_violating += violating ? 1 : 0;
    report.per_object_penalty[graph.nodes[i].spec.id] =
        0.5 * (colliding[i] ? 1.0 : 0.0) + 0.5 * (violating ? 1.0 : 0.0);
  }
  report.collision_ratio = static_cast<double>(n_colliding) / static_cast<double>(n);
  report.constraint_ratio = static_cast<double>(n_violating) / static_cast<double>(n);
  // + 0.0 folds a negative zero into 0.
  report.physics_reward = -alpha * report.collision_ratio - beta * report.constraint_ratio + 0.0;
  return report;
}

PhysicsReport unscorable_physics_report(const SceneTask& task, double alpha, double beta) {
  PhysicsReport report;
  report.collision_ratio = 1.0;
  report.constraint_ratio = 1.0;
  report.physics_reward = -alpha - beta;
  for (const auto& o : task.objects) report.per_object_penalty[o.id] = 1.0;
  return report;
}

}  // namespace metaspatial
