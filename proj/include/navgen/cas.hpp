#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "navgen/worldmodel.hpp"

namespace navgen::cas {

enum class ActionKind { Travel, Turn, Face, Verify, Find };

std::string_view action_name(ActionKind kind);
std::optional<ActionKind> parse_action_name(std::string_view name);

enum class ValueType { Distance, Direction, Entity, Side };

struct AttributeSpec {
  std::string_view name;
  ValueType type;
};

// Legal attributes per action, in canonical order:
//   Travel(distance, until, past)  Turn(direction)  Face(target)
//   Verify(see, side)              Find(object)
const std::vector<AttributeSpec>& attribute_specs(ActionKind kind);
const AttributeSpec* find_spec(ActionKind kind, std::string_view attribute);

struct Attribute {
  std::string name;
  std::optional<std::string> value;  // nullopt encodes `None`
  bool operator==(const Attribute&) const = default;
  auto operator<=>(const Attribute&) const = default;
};

struct Action {
  ActionKind kind = ActionKind::Turn;
  std::vector<Attribute> attributes;  // canonical order, no duplicates

  const Attribute* find(std::string_view name) const;
  std::optional<std::string> value(std::string_view name) const;
  bool operator==(const Action&) const = default;
  auto operator<=>(const Action&) const = default;
};

struct Command {
  std::vector<Action> actions;

  bool is_structure() const;
  bool operator==(const Command&) const = default;
  auto operator<=>(const Command&) const = default;
};

// A command with every attribute slot unset.
class Structure {
 public:
  Structure() = default;
  // Throws CasError if any attribute is bound.
  explicit Structure(Command shape);

  const Command& shape() const { return shape_; }
  bool operator==(const Structure&) const = default;
  auto operator<=>(const Structure&) const = default;

 private:
  Command shape_;
};

// Concrete syntax: `Action(attr=value, ...)` joined by `;`. Throws CasError
// carrying the character offset of the problem.
Command parse(std::string_view text);
Structure parse_structure(std::string_view text);
std::string serialize(const Command& cmd);
std::string serialize(const Structure& s);

// Throws CasError when a value does not fit the attribute's type.
void validate_value(const AttributeSpec& spec, std::string_view value);

Structure structure_of(const Command& cmd);

// Action token, then one `attribute.value` token per bound attribute.
std::vector<std::string> tokenize(const Command& cmd);

// Action token, then one token per attribute slot (bound or not). Separates
// structures that `tokenize` would collapse, e.g. Travel(until) vs Travel(past).
std::vector<std::string> slot_tokens(const Command& cmd);

int eta(const Command& cmd);

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Levenshtein distance over `tokenize` output divided by the longer length.
double token_distance(const Command& a, const Command& b);

// Candidate values for one attribute slot given the entity names visible to
// the follower. Direction/distance/side slots get their literal sets.
std::vector<std::string> candidate_values(ActionKind kind, const AttributeSpec& spec,
                                          const std::set<std::string>& visible);

std::set<std::string> visible_names(const std::set<world::Sighting>& sightings);

// Every full binding of the structure's slots, slot-major in canonical order
// (the first slot varies slowest). `fn` returns false to stop early.
void for_each_instantiation(const Structure& structure, const std::set<std::string>& visible,
                            const std::function<bool(const Command&)>& fn);

std::vector<Command> enumerate_attribute_values(const Structure& structure, const world::WorldMap& map,
                                                const world::Pose& pose);

}  // namespace navgen::cas
