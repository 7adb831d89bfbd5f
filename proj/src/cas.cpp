#include "navgen/cas.hpp"

#include <algorithm>
#include <cctype>

#include "navgen/error.hpp"

namespace navgen::cas {

std::string_view action_name(ActionKind kind) {
  switch (kind) {
    case ActionKind::Travel: return "Travel";
    case ActionKind::Turn: return "Turn";
    case ActionKind::Face: return "Face";
    case ActionKind::Verify: return "Verify";
    case ActionKind::Find: return "Find";
  }
  return "?";
}

std::optional<ActionKind> parse_action_name(std::string_view name) {
  for (auto k : {ActionKind::Travel, ActionKind::Turn, ActionKind::Face, ActionKind::Verify,
                 ActionKind::Find}) {
    if (action_name(k) == name) return k;
  }
  return std::nullopt;
}

const std::vector<AttributeSpec>& attribute_specs(ActionKind kind) {
  static const std::vector<AttributeSpec> travel = {
      {"distance", ValueType::Distance}, {"until", ValueType::Entity}, {"past", ValueType::Entity}};
  static const std::vector<AttributeSpec> turn = {{"direction", ValueType::Direction}};
  static const std::vector<AttributeSpec> face = {{"target", ValueType::Entity}};
  static const std::vector<AttributeSpec> verify = {{"see", ValueType::Entity}, {"side", ValueType::Side}};
  static const std::vector<AttributeSpec> find = {{"object", ValueType::Entity}};
  switch (kind) {
    case ActionKind::Travel: return travel;
    case ActionKind::Turn: return turn;
    case ActionKind::Face: return face;
    case ActionKind::Verify: return verify;
    case ActionKind::Find: return find;
  }
  return turn;
}

const AttributeSpec* find_spec(ActionKind kind, std::string_view attribute) {
  for (const auto& spec : attribute_specs(kind)) {
    if (spec.name == attribute) return &spec;
  }
  return nullptr;
}

const Attribute* Action::find(std::string_view name) const {
  for (const auto& a : attributes) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::optional<std::string> Action::value(std::string_view name) const {
  const Attribute* a = find(name);
  return a ? a->value : std::nullopt;
}

bool Command::is_structure() const {
  for (const auto& action : actions) {
    for (const auto& attr : action.attributes) {
      if (attr.value) return false;
    }
  }
  return true;
}

Structure::Structure(Command shape) : shape_(std::move(shape)) {
  if (!shape_.is_structure()) throw CasError("structure has a bound attribute", 0);
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

constexpr std::string_view kDirections[] = {"Left", "Right", "Back"};
constexpr std::string_view kSides[] = {"left", "right", "ahead", "at"};

bool is_snake_case(std::string_view s) {
  if (s.empty() || !std::islower(static_cast<unsigned char>(s.front()))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
           c == '_';
  });
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Command parse_command() {
    Command cmd;
    skip_ws();
    if (at_end()) throw CasError("empty command", pos_);
    cmd.actions.push_back(parse_action());
    skip_ws();
    while (!at_end()) {
      expect(';');
      cmd.actions.push_back(parse_action());
      skip_ws();
    }
    return cmd;
  }

 private:
  Action parse_action() {
    skip_ws();
    std::size_t start = pos_;
    std::string name = identifier();
    auto kind = parse_action_name(name);
    if (!kind) throw CasError("unknown action '" + name + "'", start);
    Action action{*kind, {}};
    expect('(');
    skip_ws();
    if (peek() != ')') {
      parse_attribute(action);
      skip_ws();
      while (peek() == ',') {
        ++pos_;
        parse_attribute(action);
        skip_ws();
      }
    }
    expect(')');
    // Canonical order follows the grammar declaration.
    const auto& specs = attribute_specs(action.kind);
    std::stable_sort(action.attributes.begin(), action.attributes.end(),
                     [&](const Attribute& a, const Attribute& b) {
                       auto rank = [&](const Attribute& x) {
                         for (std::size_t i = 0; i < specs.size(); ++i) {
                           if (specs[i].name == x.name) return i;
                         }
                         return specs.size();
                       };
                       return rank(a) < rank(b);
                     });
    return action;
  }

  void parse_attribute(Action& action) {
    skip_ws();
    std::size_t start = pos_;
    std::string name = identifier();
    const AttributeSpec* spec = find_spec(action.kind, name);
    if (!spec) {
      throw CasError("unknown attribute '" + name + "' for " + std::string(action_name(action.kind)), start);
    }
    if (action.find(name)) throw CasError("duplicate attribute '" + name + "'", start);
    expect('=');
    skip_ws();
    std::size_t value_start = pos_;
    std::string value = token();
    if (value.empty()) throw CasError("missing value", value_start);
    Attribute attr{name, std::nullopt};
    if (value != "None") {
      try {
        validate_value(*spec, value);
      } catch (const CasError& e) {
        throw CasError("invalid value '" + value + "' for " + name, value_start);
      }
      attr.value = value;
    }
    action.attributes.push_back(std::move(attr));
  }

  std::string identifier() {
    std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    if (start == pos_ || std::isdigit(static_cast<unsigned char>(text_[start]))) {
      throw CasError("expected identifier", start);
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string token() {
    std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) throw CasError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  bool at_end() const { return pos_ >= text_.size(); }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

void validate_value(const AttributeSpec& spec, std::string_view value) {
  bool ok = false;
  switch (spec.type) {
    case ValueType::Distance:
      ok = value.size() == 1 && value[0] >= '1' && value[0] <= '9';
      break;
    case ValueType::Direction:
      ok = std::find(std::begin(kDirections), std::end(kDirections), value) != std::end(kDirections);
      break;
    case ValueType::Side:
      ok = std::find(std::begin(kSides), std::end(kSides), value) != std::end(kSides);
      break;
    case ValueType::Entity:
      ok = is_snake_case(value);
      break;
  }
  if (!ok) throw CasError("invalid value '" + std::string(value) + "' for " + std::string(spec.name), 0);
}

Command parse(std::string_view text) { return Parser(text).parse_command(); }

Structure parse_structure(std::string_view text) { return structure_of(parse(text)); }

std::string serialize(const Command& cmd) {
  std::string out;
  for (std::size_t i = 0; i < cmd.actions.size(); ++i) {
    if (i) out += "; ";
    const Action& a = cmd.actions[i];
    out += action_name(a.kind);
    out += '(';
    for (std::size_t j = 0; j < a.attributes.size(); ++j) {
      if (j) out += ", ";
      out += a.attributes[j].name;
      out += '=';
      out += a.attributes[j].value.value_or("None");
    }
    out += ')';
  }
  return out;
}

std::string serialize(const Structure& s) { return serialize(s.shape()); }

Structure structure_of(const Command& cmd) {
  Command shape = cmd;
  for (auto& action : shape.actions) {
    for (auto& attr : action.attributes) attr.value.reset();
  }
  return Structure(std::move(shape));
}

std::vector<std::string> tokenize(const Command& cmd) {
  std::vector<std::string> out;
  for (const auto& action : cmd.actions) {
    out.emplace_back(action_name(action.kind));
    for (const auto& attr : action.attributes) {
      if (attr.value) out.push_back(attr.name + "." + *attr.value);
    }
  }
  return out;
}

std::vector<std::string> slot_tokens(const Command& cmd) {
  std::vector<std::string> out;
  for (const auto& action : cmd.actions) {
    out.emplace_back(action_name(action.kind));
    for (const auto& attr : action.attributes) out.push_back(attr.name);
  }
  return out;
}

int eta(const Command& cmd) {
  int n = 0;
  for (const auto& action : cmd.actions) {
    for (const auto& attr : action.attributes) n += attr.value ? 1 : 0;
  }
  return n;
}

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double token_distance(const Command& a, const Command& b) {
  auto ta = tokenize(a);
  auto tb = tokenize(b);
  std::size_t longest = std::max(ta.size(), tb.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(edit_distance(ta, tb)) / static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// Attribute enumeration

std::vector<std::string> candidate_values(ActionKind kind, const AttributeSpec& spec,
                                          const std::set<std::string>& visible) {
  std::vector<std::string> out;
  switch (spec.type) {
    case ValueType::Direction:
      for (auto d : kDirections) out.emplace_back(d);
      break;
    case ValueType::Distance:
      for (char c = '1'; c <= '9'; ++c) out.emplace_back(1, c);
      break;
    case ValueType::Side:
      for (auto s : kSides) out.emplace_back(s);
      break;
    case ValueType::Entity:
      for (const auto& e : visible) {
        if (kind == ActionKind::Find && world::classify_entity(e) != world::EntityClass::Object) continue;
        out.push_back(e);
      }
      break;
  }
  return out;
}

std::set<std::string> visible_names(const std::set<world::Sighting>& sightings) {
  std::set<std::string> out;
  for (const auto& s : sightings) out.insert(s.entity);
  return out;
}

void for_each_instantiation(const Structure& structure, const std::set<std::string>& visible,
                            const std::function<bool(const Command&)>& fn) {
  struct Slot {
    std::size_t action;
    std::size_t attr;
    std::vector<std::string> values;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < structure.shape().actions.size(); ++i) {
    const Action& action = structure.shape().actions[i];
    for (std::size_t j = 0; j < action.attributes.size(); ++j) {
      const AttributeSpec* spec = find_spec(action.kind, action.attributes[j].name);
      auto values = candidate_values(action.kind, *spec, visible);
      if (values.empty()) return;
      slots.push_back({i, j, std::move(values)});
    }
  }
  Command cmd = structure.shape();
  std::function<bool(std::size_t)> bind = [&](std::size_t s) -> bool {
    if (s == slots.size()) return fn(cmd);
    for (const auto& v : slots[s].values) {
      cmd.actions[slots[s].action].attributes[slots[s].attr].value = v;
      if (!bind(s + 1)) return false;
    }
    return true;
  };
  bind(0);
}

std::vector<Command> enumerate_attribute_values(const Structure& structure, const world::WorldMap& map,
                                                const world::Pose& pose) {
  std::vector<Command> out;
  auto visible = visible_names(world::visible_entities(map, pose));
  for_each_instantiation(structure, visible, [&](const Command& c) {
    out.push_back(c);
    return true;
  });
  return out;
}

}  // namespace navgen::cas
