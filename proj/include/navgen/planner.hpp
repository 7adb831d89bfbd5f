#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "navgen/cas.hpp"
#include "navgen/worldmodel.hpp"

namespace navgen::plan {

struct PlannerConfig {
  double p_threshold = 0.99;
  int horizon = -1;  // maximum moves of an alternative path; negative means |path| + 2
  std::size_t max_alt_paths = 20000;
};

// How a command's actions consume a path's moves. Turn takes a non-empty run
// of turns, Face a possibly empty run limited to [], [L], [R] or [L, L],
// Travel a non-empty run of forward moves, Verify nothing, Find all remaining
// moves (at least one, the last forward). Every move must be consumed.
struct ActionSpan {
  std::size_t first = 0;  // pose indices
  std::size_t last = 0;
};
std::optional<std::vector<ActionSpan>> align_actions(const cas::Command& shape, const std::vector<world::Move>& moves);

// Number of bound attributes satisfied by executing `path` in `map`; zero when
// the command's actions cannot be aligned to the path.
int phi(const cas::Command& cmd, const world::Path& path, const world::WorldMap& map);
// 1 iff every bound attribute is satisfied.
int delta(const cas::Command& cmd, const world::Path& path, const world::WorldMap& map);

struct Likelihood {
  double value = 0.0;
  std::size_t satisfying = 0;    // alternatives (including the path) with delta = 1
  std::size_t alternatives = 0;  // size of the alternative-path universe
  bool approximate = false;      // enumeration hit max_alt_paths
};

Likelihood command_likelihood(const cas::Command& cmd, const world::Path& path, const world::WorldMap& map,
                              const PlannerConfig& cfg = {});

struct ScoredCommand {
  cas::Command command;
  double likelihood = 0.0;
};

// Reusable state for one path: alternative paths, per-pose visibility and
// per-structure alignments are computed once.
class SegmentPlanner {
 public:
  SegmentPlanner(const world::WorldMap& map, const world::Path& path, PlannerConfig cfg = {});
  ~SegmentPlanner();
  SegmentPlanner(const SegmentPlanner&) = delete;
  SegmentPlanner& operator=(const SegmentPlanner&) = delete;

  Likelihood likelihood(const cas::Command& cmd);
  // Greedy binding in canonical slot order; nullopt when some slot has no
  // candidate value. The result may fall below the threshold.
  std::optional<ScoredCommand> greedy(const cas::Structure& structure, std::vector<std::string>* trace = nullptr);
  const PlannerConfig& config() const { return cfg_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  PlannerConfig cfg_;
};

// Greedy instantiation kept only if its likelihood exceeds cfg.p_threshold.
std::vector<cas::Command> instantiate(const cas::Structure& structure, const world::Path& path,
                                      const world::WorldMap& map, const PlannerConfig& cfg = {});

// Union of instantiate() over the structures, deduplicated and sorted by
// canonical serialization.
std::vector<cas::Command> plan(const std::vector<cas::Structure>& structures, const world::Path& path,
                               const world::WorldMap& map, const PlannerConfig& cfg = {},
                               std::vector<std::string>* trace = nullptr);

// The highest-likelihood greedy instantiation regardless of threshold (first
// structure wins ties); used when plan() comes back empty.
std::optional<ScoredCommand> best_effort(const std::vector<cas::Structure>& structures, const world::Path& path,
                                         const world::WorldMap& map, const PlannerConfig& cfg = {});

}  // namespace navgen::plan
