#include "navgen/worldmodel.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "navgen/error.hpp"

namespace navgen::world {

namespace {

using Json = nlohmann::json;

template <std::size_t N>
bool in_vocab(const std::array<std::string_view, N>& vocab, std::string_view label) {
  return std::find(vocab.begin(), vocab.end(), label) != vocab.end();
}

std::string pos_str(GridPos p) {
  return "[" + std::to_string(p.x) + "," + std::to_string(p.y) + "]";
}

bool adjacent(GridPos a, GridPos b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y) == 1;
}

}  // namespace

Heading turned_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
Heading turned_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

GridPos step(GridPos p, Heading h) {
  switch (h) {
    case Heading::N: return {p.x, p.y + 1};
    case Heading::E: return {p.x + 1, p.y};
    case Heading::S: return {p.x, p.y - 1};
    case Heading::W: return {p.x - 1, p.y};
  }
  return p;
}

char heading_char(Heading h) { return "NESW"[static_cast<int>(h)]; }

Heading parse_heading(std::string_view s) {
  if (s == "N") return Heading::N;
  if (s == "E") return Heading::E;
  if (s == "S") return Heading::S;
  if (s == "W") return Heading::W;
  throw PathError("invalid heading '" + std::string(s) + "'");
}

std::string to_string(const Pose& pose) {
  return std::to_string(pose.node.x) + "," + std::to_string(pose.node.y) + "," +
         heading_char(pose.heading);
}

Pose apply(const Pose& pose, Move move) {
  switch (move) {
    case Move::Forward: return {step(pose.node, pose.heading), pose.heading};
    case Move::Left: return {pose.node, turned_left(pose.heading)};
    case Move::Right: return {pose.node, turned_right(pose.heading)};
  }
  return pose;
}

EntityClass classify_entity(std::string_view entity) {
  if (entity == "wall") return EntityClass::Wall;
  if (in_vocab(kObjectKinds, entity)) return EntityClass::Object;
  constexpr std::string_view floor_suffix = "_floor";
  constexpr std::string_view wall_suffix = "_wall";
  if (entity.size() > floor_suffix.size() && entity.ends_with(floor_suffix)) {
    auto stem = entity.substr(0, entity.size() - floor_suffix.size());
    if (in_vocab(kFloorColors, stem) || in_vocab(kFloorTextures, stem)) return EntityClass::Floor;
  }
  if (entity.size() > wall_suffix.size() && entity.ends_with(wall_suffix)) {
    auto stem = entity.substr(0, entity.size() - wall_suffix.size());
    if (in_vocab(kWallFeatures, stem)) return EntityClass::WallFeature;
  }
  return EntityClass::Unknown;
}

std::string floor_entity(std::string_view color_or_texture) {
  return std::string(color_or_texture) + "_floor";
}

std::string wall_entity(std::string_view feature) { return std::string(feature) + "_wall"; }

const std::vector<std::string>& all_entities() {
  static const std::vector<std::string> entities = [] {
    std::vector<std::string> out;
    for (auto k : kObjectKinds) out.emplace_back(k);
    for (auto c : kFloorColors) out.push_back(floor_entity(c));
    for (auto t : kFloorTextures) out.push_back(floor_entity(t));
    for (auto w : kWallFeatures) out.push_back(wall_entity(w));
    out.emplace_back("wall");
    std::sort(out.begin(), out.end());
    return out;
  }();
  return entities;
}

// ---------------------------------------------------------------------------
// WorldMap

void WorldMap::add_node(GridPos p) {
  if (!nodes_.insert(p).second) throw MapError("duplicate node " + pos_str(p));
}

void WorldMap::add_edge(GridPos a, GridPos b, EdgeAttrs attrs) {
  if (!has_node(a) || !has_node(b)) {
    throw MapError("dangling edge " + pos_str(a) + "-" + pos_str(b));
  }
  if (!adjacent(a, b)) throw MapError("edge " + pos_str(a) + "-" + pos_str(b) + " is not 4-neighbor");
  if (!in_vocab(kFloorColors, attrs.floor_color)) {
    throw MapError("unknown floor_color '" + attrs.floor_color + "'");
  }
  if (!in_vocab(kFloorTextures, attrs.floor_texture)) {
    throw MapError("unknown floor_texture '" + attrs.floor_texture + "'");
  }
  for (const auto& wall : {attrs.wall_left, attrs.wall_right}) {
    if (wall && !in_vocab(kWallFeatures, *wall)) throw MapError("unknown wall feature '" + *wall + "'");
  }
  if (b < a) {
    std::swap(a, b);
    std::swap(attrs.wall_left, attrs.wall_right);
  }
  if (!edges_.emplace(std::make_pair(a, b), std::move(attrs)).second) {
    throw MapError("duplicate edge " + pos_str(a) + "-" + pos_str(b));
  }
}

void WorldMap::set_object(GridPos node, std::string kind) {
  if (!has_node(node)) throw MapError("object on missing node " + pos_str(node));
  if (!in_vocab(kObjectKinds, kind)) throw MapError("unknown object kind '" + kind + "'");
  if (!objects_.emplace(node, std::move(kind)).second) {
    throw MapError("duplicate object at " + pos_str(node));
  }
}

bool WorldMap::connected(GridPos a, GridPos b) const {
  auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  return edges_.count(key) != 0;
}

std::optional<EdgeAttrs> WorldMap::edge(GridPos from, GridPos to) const {
  bool flipped = to < from;
  auto key = flipped ? std::make_pair(to, from) : std::make_pair(from, to);
  auto it = edges_.find(key);
  if (it == edges_.end()) return std::nullopt;
  EdgeAttrs attrs = it->second;
  if (flipped) std::swap(attrs.wall_left, attrs.wall_right);
  return attrs;
}

int WorldMap::degree(GridPos p) const {
  int d = 0;
  for (int h = 0; h < 4; ++h) {
    if (connected(p, step(p, static_cast<Heading>(h)))) ++d;
  }
  return d;
}

std::optional<std::string> WorldMap::object_at(GridPos p) const {
  auto it = objects_.find(p);
  if (it == objects_.end()) return std::nullopt;
  return it->second;
}

std::vector<Edge> WorldMap::edges() const {
  std::vector<Edge> out;
  out.reserve(edges_.size());
  for (const auto& [key, attrs] : edges_) out.push_back({key.first, key.second, attrs});
  return out;
}

// ---------------------------------------------------------------------------
// Map document I/O

namespace {

GridPos read_pos(const Json& j, const std::string& locus) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw MapError(locus + ": expected [x,y] integer pair");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

std::string read_label(const Json& obj, const char* key, const std::string& locus) {
  auto it = obj.find(key);
  if (it == obj.end()) throw MapError(locus + "." + key + ": missing");
  if (!it->is_string()) throw MapError(locus + "." + key + ": expected string");
  return it->get<std::string>();
}

void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& locus) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw MapError(locus + ": unknown key '" + key + "'");
    }
  }
}

Json pos_json(GridPos p) { return Json::array({p.x, p.y}); }

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

}  // namespace

WorldMap load_map(std::istream& source) {
  std::string text((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw MapError("map parse error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object()) throw MapError("map document must be an object");
  reject_unknown_keys(doc, {"nodes", "edges", "objects"}, "map");

  WorldMap map;
  const Json empty = Json::array();
  const Json& nodes = doc.contains("nodes") ? doc["nodes"] : empty;
  if (!nodes.is_array()) throw MapError("nodes: expected list");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto locus = "nodes[" + std::to_string(i) + "]";
    try {
      map.add_node(read_pos(nodes[i], locus));
    } catch (const MapError& e) {
      throw MapError(locus + ": " + e.what());
    }
  }

  const Json& edges = doc.contains("edges") ? doc["edges"] : empty;
  if (!edges.is_array()) throw MapError("edges: expected list");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    auto locus = "edges[" + std::to_string(i) + "]";
    const Json& e = edges[i];
    if (!e.is_object()) throw MapError(locus + ": expected object");
    reject_unknown_keys(e, {"a", "b", "floor_color", "floor_texture", "wall_left", "wall_right"}, locus);
    if (!e.contains("a") || !e.contains("b")) throw MapError(locus + ": missing endpoint");
    EdgeAttrs attrs;
    attrs.floor_color = read_label(e, "floor_color", locus);
    attrs.floor_texture = read_label(e, "floor_texture", locus);
    if (e.contains("wall_left")) attrs.wall_left = read_label(e, "wall_left", locus);
    if (e.contains("wall_right")) attrs.wall_right = read_label(e, "wall_right", locus);
    try {
      map.add_edge(read_pos(e["a"], locus + ".a"), read_pos(e["b"], locus + ".b"), std::move(attrs));
    } catch (const MapError& err) {
      throw MapError(locus + ": " + err.what());
    }
  }

  const Json& objects = doc.contains("objects") ? doc["objects"] : empty;
  if (!objects.is_array()) throw MapError("objects: expected list");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    auto locus = "objects[" + std::to_string(i) + "]";
    const Json& o = objects[i];
    if (!o.is_object()) throw MapError(locus + ": expected object");
    reject_unknown_keys(o, {"node", "kind"}, locus);
    if (!o.contains("node")) throw MapError(locus + ".node: missing");
    try {
      map.set_object(read_pos(o["node"], locus + ".node"), read_label(o, "kind", locus));
    } catch (const MapError& err) {
      throw MapError(locus + ": " + err.what());
    }
  }
  return map;
}

WorldMap load_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MapError("cannot open map file " + path);
  return load_map(in);
}

std::string save_map(const WorldMap& map) {
  Json doc;
  doc["nodes"] = Json::array();
  for (const auto& n : map.nodes()) doc["nodes"].push_back(pos_json(n));
  doc["edges"] = Json::array();
  for (const auto& e : map.edges()) {
    Json je{{"a", pos_json(e.a)},
            {"b", pos_json(e.b)},
            {"floor_color", e.attrs.floor_color},
            {"floor_texture", e.attrs.floor_texture}};
    if (e.attrs.wall_left) je["wall_left"] = *e.attrs.wall_left;
    if (e.attrs.wall_right) je["wall_right"] = *e.attrs.wall_right;
    doc["edges"].push_back(std::move(je));
  }
  doc["objects"] = Json::array();
  for (const auto& [node, kind] : map.objects()) {
    doc["objects"].push_back({{"node", pos_json(node)}, {"kind", kind}});
  }
  return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Paths

Path::Path(const WorldMap& map, std::vector<Pose> poses) : poses_(std::move(poses)) {
  if (poses_.empty()) throw PathError("path has no poses");
  for (const auto& p : poses_) {
    if (!map.has_node(p.node)) throw PathError("pose " + to_string(p) + " is off the map");
  }
  for (std::size_t i = 1; i < poses_.size(); ++i) {
    const Pose& prev = poses_[i - 1];
    const Pose& cur = poses_[i];
    if (cur == apply(prev, Move::Left)) {
      moves_.push_back(Move::Left);
    } else if (cur == apply(prev, Move::Right)) {
      moves_.push_back(Move::Right);
    } else if (cur == apply(prev, Move::Forward) && map.connected(prev.node, cur.node)) {
      moves_.push_back(Move::Forward);
    } else {
      throw PathError("poses " + to_string(prev) + " -> " + to_string(cur) +
                      " are not one atomic move apart");
    }
  }
}

Path Path::slice(std::size_t first, std::size_t last) const {
  Path out;
  out.poses_.assign(poses_.begin() + static_cast<long>(first), poses_.begin() + static_cast<long>(last) + 1);
  out.moves_.assign(moves_.begin() + static_cast<long>(first), moves_.begin() + static_cast<long>(last));
  return out;
}

Path path_from_moves(const Pose& start, const std::vector<Move>& moves) {
  Path out;
  out.poses_.reserve(moves.size() + 1);
  out.poses_.push_back(start);
  for (Move m : moves) out.poses_.push_back(apply(out.poses_.back(), m));
  out.moves_ = moves;
  return out;
}

namespace {

struct Cost {
  int moves = 0;
  int turns = 0;
  auto operator<=>(const Cost&) const = default;
  Cost operator+(const Cost& o) const { return {moves + o.moves, turns + o.turns}; }
};

Cost move_cost(Move m) { return {1, m == Move::Forward ? 0 : 1}; }

constexpr std::array<Move, 3> kMoves = {Move::Forward, Move::Left, Move::Right};

std::optional<Pose> try_move(const WorldMap& map, const Pose& pose, Move m) {
  Pose next = apply(pose, m);
  if (m == Move::Forward && !map.connected(pose.node, next.node)) return std::nullopt;
  return next;
}

}  // namespace

Path shortest_path(const WorldMap& map, const Pose& start, const Pose& goal) {
  if (!map.has_node(start.node)) throw PathError("start pose " + to_string(start) + " is off the map");
  if (!map.has_node(goal.node)) throw PathError("goal pose " + to_string(goal) + " is off the map");

  // Cost-to-goal over (node, heading) by Dijkstra on the reversed move graph,
  // then a forward walk that takes the first move (in priority order) lying
  // on an optimal route. This yields the lexicographically smallest optimal
  // move list.
  std::map<Pose, std::vector<std::pair<Pose, Move>>> predecessors;
  for (const auto& node : map.nodes()) {
    for (int h = 0; h < 4; ++h) {
      Pose from{node, static_cast<Heading>(h)};
      for (Move m : kMoves) {
        if (auto to = try_move(map, from, m)) predecessors[*to].emplace_back(from, m);
      }
    }
  }

  std::map<Pose, Cost> to_goal;
  using Item = std::pair<Cost, Pose>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  to_goal[goal] = {};
  open.push({{}, goal});
  while (!open.empty()) {
    auto [cost, pose] = open.top();
    open.pop();
    if (cost > to_goal[pose]) continue;
    for (const auto& [prev, m] : predecessors[pose]) {
      Cost c = cost + move_cost(m);
      auto it = to_goal.find(prev);
      if (it == to_goal.end() || c < it->second) {
        to_goal[prev] = c;
        open.push({c, prev});
      }
    }
  }

  auto start_it = to_goal.find(start);
  if (start_it == to_goal.end()) {
    throw PathError("unreachable: no route from " + to_string(start) + " to " + to_string(goal));
  }

  std::vector<Move> moves;
  Pose cur = start;
  while (cur != goal) {
    const Cost here = to_goal.at(cur);
    bool advanced = false;
    for (Move m : kMoves) {
      auto next = try_move(map, cur, m);
      if (!next) continue;
      auto it = to_goal.find(*next);
      if (it != to_goal.end() && it->second + move_cost(m) == here) {
        moves.push_back(m);
        cur = *next;
        advanced = true;
        break;
      }
    }
    if (!advanced) throw PathError("internal: shortest-path walk stalled");
  }
  return path_from_moves(start, moves);
}

std::vector<PathSegment> segment_path(const Path& path) {
  std::vector<PathSegment> out;
  const auto& moves = path.moves();
  std::size_t i = 0;
  while (i < moves.size()) {
    bool turning = moves[i] != Move::Forward;
    std::size_t j = i;
    while (j < moves.size() && (moves[j] != Move::Forward) == turning) ++j;
    PathSegment seg;
    seg.kind = turning ? SegmentKind::Turn : SegmentKind::Travel;
    seg.first_pose = i;
    seg.last_pose = j;
    seg.poses.assign(path.poses().begin() + static_cast<long>(i),
                     path.poses().begin() + static_cast<long>(j) + 1);
    out.push_back(std::move(seg));
    i = j;
  }
  return out;
}

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::At: return "at";
    case Relation::Ahead: return "ahead";
    case Relation::Left: return "left";
    case Relation::Right: return "right";
  }
  return "?";
}

namespace {

void add_floor(std::set<Sighting>& out, const EdgeAttrs& e, Relation rel, int distance) {
  out.insert({floor_entity(e.floor_color), rel, distance});
  out.insert({floor_entity(e.floor_texture), rel, distance});
}

}  // namespace

std::set<Sighting> visible_entities(const WorldMap& map, const Pose& pose) {
  std::set<Sighting> out;
  const GridPos here = pose.node;
  if (auto obj = map.object_at(here)) out.insert({*obj, Relation::At, 0});

  // Side corridors at the current node: their floor and whatever sits on the
  // adjacent node.
  for (auto [rel, heading] : {std::pair{Relation::Left, turned_left(pose.heading)},
                              std::pair{Relation::Right, turned_right(pose.heading)}}) {
    GridPos side = step(here, heading);
    if (auto e = map.edge(here, side)) {
      add_floor(out, *e, rel, 0);
      if (auto obj = map.object_at(side)) out.insert({*obj, rel, 0});
    }
  }

  GridPos cur = here;
  int k = 0;
  while (true) {
    GridPos next = step(cur, pose.heading);
    auto e = map.edge(cur, next);
    if (!e) break;
    ++k;
    add_floor(out, *e, Relation::Ahead, k);
    if (e->wall_left) out.insert({wall_entity(*e->wall_left), Relation::Left, k});
    if (e->wall_right) out.insert({wall_entity(*e->wall_right), Relation::Right, k});
    if (auto obj = map.object_at(next)) out.insert({*obj, Relation::Ahead, k});
    cur = next;
  }
  out.insert({"wall", Relation::Ahead, k});
  return out;
}

std::set<std::string> encountered_entities(const WorldMap& map, const Pose& pose) {
  std::set<std::string> out;
  for (const auto& s : visible_entities(map, pose)) {
    if (s.distance == 0) out.insert(s.entity);
  }
  return out;
}

PathEnumeration enumerate_paths(const WorldMap& map, const Pose& start, int max_moves,
                                std::size_t cap) {
  PathEnumeration result;
  std::vector<Move> moves;
  std::set<Pose> visited{start};

  std::function<void(const Pose&)> visit = [&](const Pose& pose) {
    if (result.move_lists.size() >= cap) {
      result.truncated = true;
      return;
    }
    result.move_lists.push_back(moves);
    if (static_cast<int>(moves.size()) >= max_moves) return;
    for (Move m : kMoves) {
      auto next = try_move(map, pose, m);
      if (!next || visited.count(*next)) continue;
      visited.insert(*next);
      moves.push_back(m);
      visit(*next);
      moves.pop_back();
      visited.erase(*next);
      if (result.truncated) return;
    }
  };
  visit(start);
  return result;
}

}  // namespace navgen::world
