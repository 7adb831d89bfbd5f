#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/cas.hpp"
#include "navgen/planner.hpp"
#include "navgen/vocab.hpp"
#include "navgen/worldmodel.hpp"

namespace navgen::corpus {

using Words = std::vector<std::string>;

// Lowercase, split on whitespace and punctuation, punctuation dropped.
Words tokenize_text(std::string_view text);
std::string join_words(const Words& words);

struct Demonstration {
  std::string map_id;
  world::Path path;
  std::vector<cas::Command> cas;    // one per path segment
  std::vector<Words> instruction;  // one per path segment
  std::string instructor_id;
  std::string paragraph_id;

  bool operator==(const Demonstration&) const = default;
};

// ---- lexicon ----------------------------------------------------------------

enum class Category { Direction, Distance, Side, Entity };

struct Template {
  cas::ActionKind action = cas::ActionKind::Turn;
  std::vector<std::string> slots;  // bound attribute names, canonical order
  double weight = 1.0;
  std::string text;                // words and {slot} holes
  bool operator==(const Template&) const = default;
};

class Lexicon {
 public:
  // Throws Error with the line number on malformed input.
  static Lexicon parse(std::string_view text);
  static Lexicon load(const std::filesystem::path& path);
  // The lexicon shipped with the library.
  static const Lexicon& builtin();

  std::string to_text() const;

  // Phrases for a value, rendering phrase first; nullptr when unknown.
  const std::vector<Words>* phrases(Category category, const std::string& value) const;
  // Values of the category in file order; entities restricted to one class.
  std::vector<std::string> values(Category category) const;
  std::vector<std::string> entity_values(world::EntityClass cls) const;

  // Templates for an action with exactly these bound attributes.
  std::vector<const Template*> templates(cas::ActionKind action, const std::vector<std::string>& slots) const;
  const std::vector<Template>& all_templates() const { return templates_; }

  bool operator==(const Lexicon&) const = default;

 private:
  struct Entry {
    Category category;
    std::string value;
    std::vector<Words> phrases;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries_;
  std::vector<Template> templates_;
};

Category category_of(cas::ValueType type);

// ---- dataset I/O --------------------------------------------------------------

// Layout: maps/<map_id>.map, demos.jsonl (one record per line), lexicon.txt.
struct Dataset {
  std::map<std::string, world::WorldMap> maps;
  std::vector<Demonstration> demos;
  std::optional<Lexicon> lexicon;
  std::vector<std::string> warnings;  // per-record problems, in file order
};

// Records that fail validation (unknown map, invalid poses, unparsable CAS,
// segment count mismatch) are skipped with a warning; CAS entities absent
// from the record's map only warn. Throws Error if the directory or the
// demonstrations file is missing or a map document is invalid.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& data);

nlohmann::json demo_to_json(const Demonstration& demo);
// Throws Error on schema problems and PathError on invalid poses.
Demonstration demo_from_json(const nlohmann::json& j, const std::map<std::string, world::WorldMap>& maps);

// Problems with a demonstration against its map, empty if none.
std::vector<std::string> validate(const Demonstration& demo, const world::WorldMap& map);

// ---- splitting --------------------------------------------------------------

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<Demonstration> train, validation, test;
  SplitRatios ratios;
};

// Paragraphs are shuffled under `seed` and assigned whole: round(train * P)
// to train, round(validation * P) to validation, the rest to test. Throws
// Error unless the ratios are non-negative and sum to one.
DatasetSplit split(const std::vector<Demonstration>& demos, const SplitRatios& ratios = {}, std::uint64_t seed = 0);

// ---- pairs, augmentation and vocabulary ---------------------------------------

struct Pair {
  cas::Command cas;
  Words words;
  bool operator==(const Pair&) const = default;
  auto operator<=>(const Pair&) const = default;
};

std::vector<Pair> segment_pairs(const std::vector<Demonstration>& demos);

struct AugmentConfig {
  bool combinatorial = false;  // rebind several attributes of one pair at once
  std::size_t max_pairs = 0;   // stop once the output has this many pairs; 0 = no limit
};

struct Augmented {
  std::vector<Pair> pairs;
  std::vector<std::string> warnings;
};

// Originals first, then for each pair and each bound attribute the variants
// with that attribute rebound to every other lexicon value of its category
// (entities within their class) and the matching phrase substituted.
// Duplicates are dropped.
Augmented augment(const std::vector<Pair>& pairs, const Lexicon& lexicon, const AugmentConfig& cfg = {});

// Types with count >= min_count, most frequent first, ties alphabetical.
Vocab build_vocab(const std::vector<Words>& sentences, int min_count = 1);

// ---- synthetic data -------------------------------------------------------------

struct MapGenConfig {
  int size = 8;          // nodes lie in [0, size)^2
  int hallways = 3;      // horizontal and vertical hallways each
  double object_rate = 0.3;
  double picture_rate = 0.15;
};

// A connected hallway grid: every horizontal hallway crosses every vertical
// one, each hallway has its own floor color and texture.
world::WorldMap generate_map(std::uint64_t seed, const MapGenConfig& cfg = {});

struct SynthConfig {
  int max_legs = 3;  // routes per paragraph, each starting where the last ended
  plan::PlannerConfig planner;
};

// Routes between random poses along shortest paths; each segment gets a
// planner-instantiated command for a structure drawn from a fixed pool and
// an instruction rendered from the lexicon templates. Map ids are "map<i>".
std::vector<Demonstration> synth_corpus(const std::vector<world::WorldMap>& maps, std::size_t n, std::uint64_t seed,
                                        const Lexicon& lexicon = Lexicon::builtin(), const SynthConfig& cfg = {});

// Instruction words for a command, one weighted template draw per action;
// throws Error when the lexicon lacks a template or a phrase.
Words render(const cas::Command& cmd, const Lexicon& lexicon, std::mt19937_64& rng);

}  // namespace navgen::corpus
