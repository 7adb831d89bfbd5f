#pragma once

#include <random>
#include <string>
#include <vector>

#include "navgen/worldmodel.hpp"

namespace navgen::testing {

using world::EdgeAttrs;
using world::GridPos;
using world::Heading;
using world::Pose;
using world::WorldMap;

inline EdgeAttrs floor_attrs(const std::string& color, const std::string& texture = "wood") {
  return EdgeAttrs{color, texture, std::nullopt, std::nullopt};
}

// Straight east-west corridor (0,0) .. (n-1,0).
inline WorldMap corridor(int n, const std::string& color = "blue") {
  WorldMap m;
  for (int x = 0; x < n; ++x) m.add_node({x, 0});
  for (int x = 0; x + 1 < n; ++x) m.add_edge({x, 0}, {x + 1, 0}, floor_attrs(color));
  return m;
}

// A plus-shaped junction at (1,1) with four arms:
//         (1,2)
//   (0,1) (1,1) (2,1)
//         (1,0)
inline WorldMap junction() {
  WorldMap m;
  for (GridPos p : {GridPos{1, 1}, GridPos{0, 1}, GridPos{2, 1}, GridPos{1, 2}, GridPos{1, 0}}) m.add_node(p);
  m.add_edge({1, 1}, {0, 1}, floor_attrs("red", "brick"));
  m.add_edge({1, 1}, {2, 1}, floor_attrs("blue", "grass"));
  m.add_edge({1, 1}, {1, 2}, floor_attrs("yellow", "stone"));
  m.add_edge({1, 1}, {1, 0}, floor_attrs("black", "gravel"));
  return m;
}

// Random connected map on a w x h grid subset; used by property tests.
inline WorldMap random_map(std::mt19937& rng, int max_nodes, double object_rate = 0.3) {
  static const std::vector<std::string> colors = {"blue", "red", "black", "yellow"};
  static const std::vector<std::string> textures = {"wood", "brick", "grass"};
  static const std::vector<std::string> objects = {"chair", "easel", "lamp", "sofa"};
  static const std::vector<std::string> walls = {"fish", "butterfly", "eiffel"};
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Grow a random tree by 4-neighbour steps, then add a few extra edges.
  std::vector<GridPos> nodes{{0, 0}};
  std::vector<std::pair<GridPos, GridPos>> links;
  std::uniform_int_distribution<int> target_n(2, max_nodes);
  int n = target_n(rng);
  int guard = 0;
  while (static_cast<int>(nodes.size()) < n && guard++ < 1000) {
    GridPos base = nodes[std::uniform_int_distribution<std::size_t>(0, nodes.size() - 1)(rng)];
    Heading h = static_cast<Heading>(std::uniform_int_distribution<int>(0, 3)(rng));
    GridPos next = world::step(base, h);
    if (std::find(nodes.begin(), nodes.end(), next) != nodes.end()) continue;
    nodes.push_back(next);
    links.emplace_back(base, next);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      GridPos a = nodes[i], b = nodes[j];
      if (std::abs(a.x - b.x) + std::abs(a.y - b.y) != 1) continue;
      bool present = std::any_of(links.begin(), links.end(), [&](const auto& l) {
        return (l.first == a && l.second == b) || (l.first == b && l.second == a);
      });
      if (!present && u(rng) < 0.3) links.emplace_back(a, b);
    }
  }
  WorldMap m;
  for (auto p : nodes) m.add_node(p);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  for (auto [a, b] : links) {
    EdgeAttrs attrs = floor_attrs(pick(colors), pick(textures));
    if (u(rng) < 0.2) attrs.wall_left = pick(walls);
    if (u(rng) < 0.2) attrs.wall_right = pick(walls);
    m.add_edge(a, b, attrs);
  }
  for (auto p : nodes) {
    if (u(rng) < object_rate) m.set_object(p, pick(objects));
  }
  return m;
}

inline Pose random_pose(std::mt19937& rng, const WorldMap& m) {
  std::vector<GridPos> nodes(m.nodes().begin(), m.nodes().end());
  GridPos p = nodes[std::uniform_int_distribution<std::size_t>(0, nodes.size() - 1)(rng)];
  return {p, static_cast<Heading>(std::uniform_int_distribution<int>(0, 3)(rng))};
}

}  // namespace navgen::testing
