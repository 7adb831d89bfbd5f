#include "navgen/planner.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "navgen/error.hpp"

namespace navgen::plan {

using cas::ActionKind;
using cas::Command;
using world::Move;
using world::Pose;
using world::Relation;

namespace {

// Empty, [L], [R] or [L, L].
bool canonical_turns(const std::vector<Move>& moves, std::size_t first, std::size_t last) {
  switch (last - first) {
    case 0:
    case 1:
      return true;
    case 2:
      return moves[first] == Move::Left && moves[first + 1] == Move::Left;
    default:
      return false;
  }
}

}  // namespace

std::optional<std::vector<ActionSpan>> align_actions(const Command& shape, const std::vector<Move>& moves) {
  std::vector<ActionSpan> spans;
  std::size_t cursor = 0;
  const std::size_t m = moves.size();
  auto run = [&](bool forward) {
    std::size_t j = cursor;
    while (j < m && (moves[j] == Move::Forward) == forward) ++j;
    return j;
  };
  for (const auto& action : shape.actions) {
    std::size_t end = cursor;
    switch (action.kind) {
      case ActionKind::Turn:
        end = run(false);
        if (end == cursor) return std::nullopt;
        break;
      case ActionKind::Face:
        end = run(false);
        if (!canonical_turns(moves, cursor, end)) return std::nullopt;
        break;
      case ActionKind::Travel:
        end = run(true);
        if (end == cursor) return std::nullopt;
        break;
      case ActionKind::Verify:
        break;
      case ActionKind::Find:
        if (cursor == m || moves[m - 1] != Move::Forward) return std::nullopt;
        end = m;
        break;
    }
    spans.push_back({cursor, end});
    cursor = end;
  }
  if (cursor != m) return std::nullopt;
  return spans;
}

namespace {

struct PoseView {
  std::set<world::Sighting> sightings;
  std::set<std::string> encountered;
  std::set<std::string> names;
};

class VisibilityCache {
 public:
  explicit VisibilityCache(const world::WorldMap& map) : map_(map) {}

  const PoseView& at(const Pose& pose) {
    auto it = cache_.find(pose);
    if (it != cache_.end()) return it->second;
    PoseView v;
    v.sightings = world::visible_entities(map_, pose);
    for (const auto& s : v.sightings) {
      v.names.insert(s.entity);
      if (s.distance == 0) v.encountered.insert(s.entity);
    }
    return cache_.emplace(pose, std::move(v)).first->second;
  }

  const world::WorldMap& map() const { return map_; }

 private:
  const world::WorldMap& map_;
  std::map<Pose, PoseView> cache_;
};

Relation side_relation(const std::string& side) {
  if (side == "left") return Relation::Left;
  if (side == "right") return Relation::Right;
  if (side == "ahead") return Relation::Ahead;
  return Relation::At;
}

bool turn_matches(const std::vector<Move>& moves, const ActionSpan& span, const std::string& direction) {
  std::vector<Move> run(moves.begin() + static_cast<std::ptrdiff_t>(span.first),
                        moves.begin() + static_cast<std::ptrdiff_t>(span.last));
  if (direction == "Left") return run == std::vector<Move>{Move::Left};
  if (direction == "Right") return run == std::vector<Move>{Move::Right};
  if (direction == "Back") return run == std::vector<Move>{Move::Left, Move::Left};
  return false;
}

bool attribute_valid(const cas::Action& action, const cas::Attribute& attr, const ActionSpan& span,
                     const std::vector<Pose>& poses, const std::vector<Move>& moves, VisibilityCache& vis) {
  const std::string& value = *attr.value;
  switch (action.kind) {
    case ActionKind::Turn:
      return turn_matches(moves, span, value);
    case ActionKind::Face: {
      for (const auto& s : vis.at(poses[span.last]).sightings) {
        if (s.entity == value && s.relation == Relation::Ahead) return true;
      }
      return false;
    }
    case ActionKind::Travel:
      if (attr.name == "distance") return static_cast<int>(span.last - span.first) == std::stoi(value);
      if (attr.name == "until") {
        if (!vis.at(poses[span.last]).encountered.count(value)) return false;
        for (std::size_t i = span.first; i < span.last; ++i) {
          if (vis.at(poses[i]).encountered.count(value)) return false;
        }
        return true;
      }
      if (attr.name == "past") {
        for (std::size_t i = span.first + 1; i < span.last; ++i) {
          if (vis.at(poses[i]).encountered.count(value)) return true;
        }
        return false;
      }
      return false;
    case ActionKind::Verify: {
      const auto& view = vis.at(poses[span.first]);
      if (attr.name == "see") return view.names.count(value) != 0;
      auto see = action.value("see");
      Relation rel = side_relation(value);
      for (const auto& s : view.sightings) {
        if (s.relation == rel && (!see || s.entity == *see)) return true;
      }
      return false;
    }
    case ActionKind::Find: {
      auto obj = vis.map().object_at(poses[span.last].node);
      return obj && *obj == value;
    }
  }
  return false;
}

int count_valid(const Command& cmd, const std::vector<ActionSpan>& spans, const std::vector<Pose>& poses,
                const std::vector<Move>& moves, VisibilityCache& vis) {
  int n = 0;
  for (std::size_t i = 0; i < cmd.actions.size(); ++i) {
    for (const auto& attr : cmd.actions[i].attributes) {
      if (attr.value && attribute_valid(cmd.actions[i], attr, spans[i], poses, moves, vis)) ++n;
    }
  }
  return n;
}

bool all_valid(const Command& cmd, const std::vector<ActionSpan>& spans, const std::vector<Pose>& poses,
               const std::vector<Move>& moves, VisibilityCache& vis) {
  for (std::size_t i = 0; i < cmd.actions.size(); ++i) {
    for (const auto& attr : cmd.actions[i].attributes) {
      if (attr.value && !attribute_valid(cmd.actions[i], attr, spans[i], poses, moves, vis)) return false;
    }
  }
  return true;
}

std::vector<Pose> poses_of(const Pose& start, const std::vector<Move>& moves) {
  std::vector<Pose> out{start};
  for (Move m : moves) out.push_back(world::apply(out.back(), m));
  return out;
}

}  // namespace

int phi(const Command& cmd, const world::Path& path, const world::WorldMap& map) {
  auto spans = align_actions(cmd, path.moves());
  if (!spans) return 0;
  VisibilityCache vis(map);
  return count_valid(cmd, *spans, path.poses(), path.moves(), vis);
}

int delta(const Command& cmd, const world::Path& path, const world::WorldMap& map) {
  return cas::eta(cmd) == phi(cmd, path, map) ? 1 : 0;
}

// ---- SegmentPlanner -------------------------------------------------------

struct SegmentPlanner::Impl {
  struct Alternative {
    std::vector<Move> moves;
    std::vector<Pose> poses;
  };
  struct Aligned {
    std::size_t alternative;
    std::vector<ActionSpan> spans;
  };

  const world::WorldMap& map;
  world::Path path;
  VisibilityCache vis;
  std::vector<Alternative> alternatives;
  std::size_t self_index = 0;
  bool approximate = false;
  std::map<std::string, std::vector<Aligned>> aligned;  // keyed by structure serialization

  Impl(const world::WorldMap& m, const world::Path& p, const PlannerConfig& cfg) : map(m), path(p), vis(m) {
    int horizon = cfg.horizon >= 0 ? cfg.horizon : static_cast<int>(p.move_count()) + 2;
    auto e = world::enumerate_paths(m, p.front(), horizon, cfg.max_alt_paths);
    approximate = e.truncated;
    bool found = false;
    for (auto& moves : e.move_lists) {
      if (moves == p.moves()) {
        self_index = alternatives.size();
        found = true;
      }
      alternatives.push_back({moves, poses_of(p.front(), moves)});
    }
    // The described path always belongs to the universe, even when it
    // revisits a pose or exceeds the horizon.
    if (!found) {
      self_index = alternatives.size();
      alternatives.push_back({p.moves(), p.poses()});
    }
  }

  const std::vector<Aligned>& aligned_for(const Command& cmd) {
    std::string key = cas::serialize(cas::structure_of(cmd));
    auto it = aligned.find(key);
    if (it != aligned.end()) return it->second;
    std::vector<Aligned> out;
    for (std::size_t i = 0; i < alternatives.size(); ++i) {
      if (auto spans = align_actions(cmd, alternatives[i].moves)) out.push_back({i, std::move(*spans)});
    }
    return aligned.emplace(key, std::move(out)).first->second;
  }

  Likelihood likelihood(const Command& cmd) {
    Likelihood l;
    l.alternatives = alternatives.size();
    l.approximate = approximate;
    const auto& al = aligned_for(cmd);
    bool zero_eta = cas::eta(cmd) == 0;
    bool self_ok = false;
    std::size_t count = 0;
    for (const auto& a : al) {
      const auto& alt = alternatives[a.alternative];
      if (all_valid(cmd, a.spans, alt.poses, alt.moves, vis)) {
        ++count;
        if (a.alternative == self_index) self_ok = true;
      }
    }
    // With nothing bound, delta is 1 on every path, aligned or not.
    if (zero_eta) {
      count = alternatives.size();
      self_ok = true;
    }
    l.satisfying = count;
    if (self_ok && count > 0) l.value = 1.0 / static_cast<double>(count);
    return l;
  }
};

SegmentPlanner::SegmentPlanner(const world::WorldMap& map, const world::Path& path, PlannerConfig cfg)
    : impl_(std::make_unique<Impl>(map, path, cfg)), cfg_(cfg) {}

SegmentPlanner::~SegmentPlanner() = default;

Likelihood SegmentPlanner::likelihood(const Command& cmd) { return impl_->likelihood(cmd); }

std::optional<ScoredCommand> SegmentPlanner::greedy(const cas::Structure& structure, std::vector<std::string>* trace) {
  std::set<std::string> visible;
  for (const auto& pose : impl_->path.poses()) {
    const auto& names = impl_->vis.at(pose).names;
    visible.insert(names.begin(), names.end());
  }
  Command cmd = structure.shape();
  for (std::size_t i = 0; i < cmd.actions.size(); ++i) {
    for (std::size_t j = 0; j < cmd.actions[i].attributes.size(); ++j) {
      auto& attr = cmd.actions[i].attributes[j];
      const cas::AttributeSpec* spec = cas::find_spec(cmd.actions[i].kind, attr.name);
      auto values = cas::candidate_values(cmd.actions[i].kind, *spec, visible);
      if (values.empty()) {
        if (trace) trace->push_back(cas::serialize(structure) + ": no candidates for " + attr.name);
        return std::nullopt;
      }
      std::string best;
      double best_score = -1.0;
      for (const auto& v : values) {
        attr.value = v;
        double score = likelihood(cmd).value;
        if (score > best_score) {
          best_score = score;
          best = v;
        }
      }
      attr.value = best;
      if (trace) {
        std::ostringstream line;
        line << cas::serialize(structure) << ": " << cas::action_name(cmd.actions[i].kind) << "." << attr.name
             << " = " << best << " (partial likelihood " << best_score << ")";
        trace->push_back(line.str());
      }
    }
  }
  return ScoredCommand{cmd, likelihood(cmd).value};
}

// ---- free functions -------------------------------------------------------

Likelihood command_likelihood(const Command& cmd, const world::Path& path, const world::WorldMap& map,
                              const PlannerConfig& cfg) {
  SegmentPlanner planner(map, path, cfg);
  return planner.likelihood(cmd);
}

std::vector<Command> instantiate(const cas::Structure& structure, const world::Path& path,
                                 const world::WorldMap& map, const PlannerConfig& cfg) {
  SegmentPlanner planner(map, path, cfg);
  auto scored = planner.greedy(structure);
  if (scored && scored->likelihood > cfg.p_threshold) return {scored->command};
  return {};
}

std::vector<Command> plan(const std::vector<cas::Structure>& structures, const world::Path& path,
                          const world::WorldMap& map, const PlannerConfig& cfg, std::vector<std::string>* trace) {
  SegmentPlanner planner(map, path, cfg);
  std::map<std::string, Command> unique;
  for (const auto& s : structures) {
    auto scored = planner.greedy(s, trace);
    if (!scored) continue;
    bool keep = scored->likelihood > cfg.p_threshold;
    if (trace) {
      trace->push_back(cas::serialize(scored->command) + (keep ? " kept" : " rejected") + " with likelihood " +
                       std::to_string(scored->likelihood));
    }
    if (keep) unique.emplace(cas::serialize(scored->command), scored->command);
  }
  std::vector<Command> out;
  for (auto& [key, cmd] : unique) out.push_back(std::move(cmd));
  return out;
}

std::optional<ScoredCommand> best_effort(const std::vector<cas::Structure>& structures, const world::Path& path,
                                         const world::WorldMap& map, const PlannerConfig& cfg) {
  SegmentPlanner planner(map, path, cfg);
  std::optional<ScoredCommand> best;
  for (const auto& s : structures) {
    auto scored = planner.greedy(s);
    if (scored && (!best || scored->likelihood > best->likelihood)) best = std::move(scored);
  }
  return best;
}

}  // namespace navgen::plan
