#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace navgen::world {

struct GridPos {
  int x = 0;
  int y = 0;
  auto operator<=>(const GridPos&) const = default;
};

// N is +y, E is +x.
enum class Heading : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };

Heading turned_left(Heading h);
Heading turned_right(Heading h);
GridPos step(GridPos p, Heading h);
char heading_char(Heading h);
Heading parse_heading(std::string_view s);

struct Pose {
  GridPos node;
  Heading heading = Heading::N;
  auto operator<=>(const Pose&) const = default;
};

std::string to_string(const Pose& pose);

// Declaration order is the shortest-path tie-break priority.
enum class Move : std::uint8_t { Forward = 0, Left = 1, Right = 2 };

Pose apply(const Pose& pose, Move move);

// Label vocabularies shared by maps, CAS entities and the corpus lexicon.
inline constexpr std::array<std::string_view, 11> kFloorColors = {
    "black", "blue", "brown", "green", "grey", "olive", "orange", "pink", "red", "white", "yellow"};
inline constexpr std::array<std::string_view, 8> kFloorTextures = {
    "brick", "concrete", "flower", "grass", "gravel", "honeycomb", "stone", "wood"};
inline constexpr std::array<std::string_view, 3> kWallFeatures = {"butterfly", "eiffel", "fish"};
inline constexpr std::array<std::string_view, 6> kObjectKinds = {
    "barstool", "chair", "easel", "hatrack", "lamp", "sofa"};

enum class EntityClass { Object, Floor, WallFeature, Wall, Unknown };

// Entity names as they appear in CAS values: `chair`, `blue_floor`,
// `brick_floor`, `fish_wall`, and the bare `wall` (end of a corridor).
EntityClass classify_entity(std::string_view entity);
std::string floor_entity(std::string_view color_or_texture);
std::string wall_entity(std::string_view feature);
const std::vector<std::string>& all_entities();

// Wall sides are relative to travel from `a` to `b` as stored.
struct EdgeAttrs {
  std::string floor_color;
  std::string floor_texture;
  std::optional<std::string> wall_left;
  std::optional<std::string> wall_right;
  bool operator==(const EdgeAttrs&) const = default;
};

struct Edge {
  GridPos a;
  GridPos b;
  EdgeAttrs attrs;
  bool operator==(const Edge&) const = default;
};

class WorldMap {
 public:
  void add_node(GridPos p);
  // Throws MapError on dangling endpoints, non-adjacent endpoints, duplicate
  // edges or labels outside the vocabularies.
  void add_edge(GridPos a, GridPos b, EdgeAttrs attrs);
  void set_object(GridPos node, std::string kind);

  bool has_node(GridPos p) const { return nodes_.count(p) != 0; }
  bool connected(GridPos a, GridPos b) const;
  // Attributes oriented for travel from `from` to `to` (wall sides swapped
  // when the stored edge runs the other way).
  std::optional<EdgeAttrs> edge(GridPos from, GridPos to) const;
  int degree(GridPos p) const;
  std::optional<std::string> object_at(GridPos p) const;

  const std::set<GridPos>& nodes() const { return nodes_; }
  std::vector<Edge> edges() const;
  const std::map<GridPos, std::string>& objects() const { return objects_; }
  std::size_t edge_count() const { return edges_.size(); }

  bool operator==(const WorldMap&) const = default;

 private:
  std::set<GridPos> nodes_;
  // Keyed by (min, max) endpoint; attrs oriented from key.first to key.second.
  std::map<std::pair<GridPos, GridPos>, EdgeAttrs> edges_;
  std::map<GridPos, std::string> objects_;
};

WorldMap load_map(std::istream& source);
WorldMap load_map_file(const std::string& path);
std::string save_map(const WorldMap& map);

class Path {
 public:
  Path() = default;
  // Validates that consecutive poses differ by exactly one atomic move.
  Path(const WorldMap& map, std::vector<Pose> poses);

  const std::vector<Pose>& poses() const { return poses_; }
  const std::vector<Move>& moves() const { return moves_; }
  std::size_t move_count() const { return moves_.size(); }
  const Pose& front() const { return poses_.front(); }
  const Pose& back() const { return poses_.back(); }
  // Sub-path over poses [first, last] inclusive.
  Path slice(std::size_t first, std::size_t last) const;

  bool operator==(const Path& other) const { return poses_ == other.poses_; }

 private:
  friend Path path_from_moves(const Pose& start, const std::vector<Move>& moves);

  std::vector<Pose> poses_;
  std::vector<Move> moves_;
};

// No map validation; callers generate moves from existing edges.
Path path_from_moves(const Pose& start, const std::vector<Move>& moves);

enum class SegmentKind { Turn, Travel };

struct PathSegment {
  SegmentKind kind = SegmentKind::Travel;
  // Pose index range [first_pose, last_pose]; adjacent segments share their
  // boundary pose, so the move ranges partition the parent's moves.
  std::size_t first_pose = 0;
  std::size_t last_pose = 0;
  std::vector<Pose> poses;

  std::size_t move_count() const { return last_pose - first_pose; }
};

// Minimal atomic-move route; ties go to fewer turns, then to the
// lexicographically smallest move sequence under Forward < Left < Right.
Path shortest_path(const WorldMap& map, const Pose& start, const Pose& goal);

std::vector<PathSegment> segment_path(const Path& path);

enum class Relation : std::uint8_t { At = 0, Ahead = 1, Left = 2, Right = 3 };

std::string_view relation_name(Relation r);

struct Sighting {
  std::string entity;
  Relation relation = Relation::At;
  // Edges along the heading ray; 0 for things at or beside the current node.
  int distance = 0;
  auto operator<=>(const Sighting&) const = default;
};

// Corridor ray cast along the heading through connected edges, plus what is at
// the current node and down the side corridors.
std::set<Sighting> visible_entities(const WorldMap& map, const Pose& pose);

// Sightings at distance 0: what the follower is next to at this pose.
std::set<std::string> encountered_entities(const WorldMap& map, const Pose& pose);

// All self-avoiding pose sequences from `start` with at most `max_moves`
// moves, in depth-first order over Forward < Left < Right. Enumeration stops
// once `cap` paths have been produced; `truncated` reports whether it did.
struct PathEnumeration {
  std::vector<std::vector<Move>> move_lists;
  bool truncated = false;
};
PathEnumeration enumerate_paths(const WorldMap& map, const Pose& start, int max_moves,
                                std::size_t cap);

}  // namespace navgen::world
