#include "navgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "navgen/error.hpp"

namespace navgen::corpus {

extern const char* const kBuiltinLexicon;

using nlohmann::json;

Words tokenize_text(std::string_view text) {
  Words out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_words(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<Category> parse_category(std::string_view s) {
  if (s == "direction") return Category::Direction;
  if (s == "distance") return Category::Distance;
  if (s == "side") return Category::Side;
  if (s == "entity") return Category::Entity;
  return std::nullopt;
}

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Direction:
      return "direction";
    case Category::Distance:
      return "distance";
    case Category::Side:
      return "side";
    case Category::Entity:
      return "entity";
  }
  return "";
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto at = s.find(sep, start);
    out.push_back(trim(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

// `Action(slot,slot) weight`
Template parse_template_head(std::string_view head, int line) {
  auto fail = [&](const std::string& why) -> Error {
    return Error("lexicon line " + std::to_string(line) + ": " + why);
  };
  auto open = head.find('(');
  auto close = head.find(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw fail("expected Action(slots) in template");
  }
  Template t;
  auto kind = cas::parse_action_name(trim(head.substr(0, open)));
  if (!kind) throw fail("unknown action '" + trim(head.substr(0, open)) + "'");
  t.action = *kind;
  auto inner = trim(head.substr(open + 1, close - open - 1));
  if (!inner.empty()) {
    for (auto& slot : split_on(inner, ',')) {
      if (!cas::find_spec(t.action, slot)) throw fail("unknown attribute '" + slot + "'");
      t.slots.push_back(slot);
    }
  }
  auto weight = trim(head.substr(close + 1));
  if (!weight.empty()) {
    try {
      t.weight = std::stod(weight);
    } catch (const std::exception&) {
      throw fail("bad template weight '" + weight + "'");
    }
    if (!(t.weight > 0.0)) throw fail("template weight must be positive");
  }
  return t;
}

}  // namespace

Category category_of(cas::ValueType type) {
  switch (type) {
    case cas::ValueType::Direction:
      return Category::Direction;
    case cas::ValueType::Distance:
      return Category::Distance;
    case cas::ValueType::Side:
      return Category::Side;
    case cas::ValueType::Entity:
      return Category::Entity;
  }
  return Category::Entity;
}

Lexicon Lexicon::parse(std::string_view text) {
  Lexicon lex;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    auto colon = s.find(':');
    if (colon == std::string::npos) throw Error("lexicon line " + std::to_string(line) + ": missing ':'");
    auto head = trim(std::string_view(s).substr(0, colon));
    auto body = trim(std::string_view(s).substr(colon + 1));
    auto space = head.find(' ');
    if (space == std::string::npos) throw Error("lexicon line " + std::to_string(line) + ": expected '<kind> <value>'");
    auto kind = head.substr(0, space);
    auto rest = trim(std::string_view(head).substr(space + 1));
    if (kind == "template") {
      auto t = parse_template_head(rest, line);
      t.text = body;
      lex.templates_.push_back(std::move(t));
      continue;
    }
    auto cat = parse_category(kind);
    if (!cat) throw Error("lexicon line " + std::to_string(line) + ": unknown category '" + kind + "'");
    if (lex.phrases(*cat, rest)) {
      throw Error("lexicon line " + std::to_string(line) + ": duplicate entry for '" + rest + "'");
    }
    Entry e{*cat, rest, {}};
    for (const auto& p : split_on(body, '|')) {
      auto words = tokenize_text(p);
      if (words.empty()) throw Error("lexicon line " + std::to_string(line) + ": empty phrase");
      e.phrases.push_back(std::move(words));
    }
    lex.entries_.push_back(std::move(e));
  }
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = parse(kBuiltinLexicon);
  return lex;
}

std::string Lexicon::to_text() const {
  std::string out;
  for (const auto& e : entries_) {
    out += std::string(category_name(e.category)) + " " + e.value + ":";
    for (std::size_t i = 0; i < e.phrases.size(); ++i) out += (i ? " | " : " ") + join_words(e.phrases[i]);
    out += '\n';
  }
  for (const auto& t : templates_) {
    std::ostringstream w;
    w << t.weight;
    out += "template " + std::string(cas::action_name(t.action)) + "(";
    for (std::size_t i = 0; i < t.slots.size(); ++i) out += (i ? "," : "") + t.slots[i];
    out += ") " + w.str() + ": " + t.text + "\n";
  }
  return out;
}

const std::vector<Words>* Lexicon::phrases(Category category, const std::string& value) const {
  for (const auto& e : entries_) {
    if (e.category == category && e.value == value) return &e.phrases;
  }
  return nullptr;
}

std::vector<std::string> Lexicon::values(Category category) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.category == category) out.push_back(e.value);
  }
  return out;
}

std::vector<std::string> Lexicon::entity_values(world::EntityClass cls) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.category == Category::Entity && world::classify_entity(e.value) == cls) out.push_back(e.value);
  }
  return out;
}

std::vector<const Template*> Lexicon::templates(cas::ActionKind action, const std::vector<std::string>& slots) const {
  std::vector<const Template*> out;
  for (const auto& t : templates_) {
    if (t.action == action && t.slots == slots) out.push_back(&t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::vector<std::string> bound_slots(const cas::Action& action) {
  std::vector<std::string> out;
  for (const auto& a : action.attributes) {
    if (a.value) out.push_back(a.name);
  }
  return out;
}

const Words& render_phrase(const Lexicon& lex, cas::ActionKind kind, const cas::Attribute& attr) {
  const auto* spec = cas::find_spec(kind, attr.name);
  if (!spec) throw Error("unknown attribute " + attr.name);
  const auto* p = lex.phrases(category_of(spec->type), *attr.value);
  if (!p) throw Error("lexicon has no phrase for " + attr.name + "=" + *attr.value);
  return p->front();
}

}  // namespace

Words render(const cas::Command& cmd, const Lexicon& lexicon, std::mt19937_64& rng) {
  Words out;
  for (std::size_t i = 0; i < cmd.actions.size(); ++i) {
    const auto& action = cmd.actions[i];
    auto options = lexicon.templates(action.kind, bound_slots(action));
    if (options.empty()) {
      throw Error("lexicon has no template for " + std::string(cas::action_name(action.kind)) + " with these slots");
    }
    std::vector<double> weights;
    for (const auto* t : options) weights.push_back(t->weight);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const Template& t = *options[pick(rng)];
    if (i > 0) out.emplace_back("and");
    std::istringstream in(t.text);
    std::string tok;
    while (in >> tok) {
      if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
        auto name = tok.substr(1, tok.size() - 2);
        const auto* attr = action.find(name);
        if (!attr || !attr->value) throw Error("template hole {" + name + "} is not bound");
        const auto& phrase = render_phrase(lexicon, action.kind, *attr);
        out.insert(out.end(), phrase.begin(), phrase.end());
      } else {
        for (auto& w : tokenize_text(tok)) out.push_back(std::move(w));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset I/O

nlohmann::json demo_to_json(const Demonstration& demo) {
  json poses = json::array();
  for (const auto& p : demo.path.poses()) {
    poses.push_back({p.node.x, p.node.y, std::string(1, world::heading_char(p.heading))});
  }
  json cas = json::array();
  for (const auto& c : demo.cas) cas.push_back(cas::serialize(c));
  json instr = json::array();
  for (const auto& w : demo.instruction) instr.push_back(join_words(w));
  return {{"map_id", demo.map_id},     {"poses", poses},
          {"cas", cas},                {"instruction", instr},
          {"instructor_id", demo.instructor_id}, {"paragraph_id", demo.paragraph_id}};
}

Demonstration demo_from_json(const nlohmann::json& j, const std::map<std::string, world::WorldMap>& maps) {
  static const std::set<std::string> keys = {"map_id", "poses", "cas", "instruction", "instructor_id", "paragraph_id"};
  if (!j.is_object()) throw Error("record is not an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw Error("unknown key '" + k + "'");
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) throw Error("missing key '" + k + "'");
  }
  Demonstration d;
  try {
    d.map_id = j.at("map_id").get<std::string>();
    d.instructor_id = j.at("instructor_id").get<std::string>();
    d.paragraph_id = j.at("paragraph_id").get<std::string>();
    auto it = maps.find(d.map_id);
    if (it == maps.end()) throw Error("unknown map '" + d.map_id + "'");
    std::vector<world::Pose> poses;
    for (const auto& p : j.at("poses")) {
      if (!p.is_array() || p.size() != 3) throw Error("pose must be [x, y, heading]");
      poses.push_back({{p[0].get<int>(), p[1].get<int>()}, world::parse_heading(p[2].get<std::string>())});
    }
    d.path = world::Path(it->second, std::move(poses));
    for (const auto& c : j.at("cas")) d.cas.push_back(cas::parse(c.get<std::string>()));
    for (const auto& s : j.at("instruction")) d.instruction.push_back(tokenize_text(s.get<std::string>()));
  } catch (const json::exception& e) {
    throw Error(std::string("bad field type: ") + e.what());
  }
  auto segments = world::segment_path(d.path).size();
  if (d.cas.size() != segments || d.instruction.size() != segments) {
    throw Error("segment count mismatch: path has " + std::to_string(segments) + ", cas " +
                std::to_string(d.cas.size()) + ", instruction " + std::to_string(d.instruction.size()));
  }
  return d;
}

namespace {

std::set<std::string> map_entities(const world::WorldMap& map) {
  std::set<std::string> out = {"wall"};
  for (const auto& [node, kind] : map.objects()) out.insert(kind);
  for (const auto& e : map.edges()) {
    out.insert(world::floor_entity(e.attrs.floor_color));
    out.insert(world::floor_entity(e.attrs.floor_texture));
    if (e.attrs.wall_left) out.insert(world::wall_entity(*e.attrs.wall_left));
    if (e.attrs.wall_right) out.insert(world::wall_entity(*e.attrs.wall_right));
  }
  return out;
}

}  // namespace

std::vector<std::string> validate(const Demonstration& demo, const world::WorldMap& map) {
  std::vector<std::string> problems;
  auto segments = world::segment_path(demo.path).size();
  if (demo.cas.size() != segments || demo.instruction.size() != segments) {
    problems.push_back("segment count mismatch");
  }
  auto present = map_entities(map);
  for (std::size_t i = 0; i < demo.cas.size(); ++i) {
    for (const auto& action : demo.cas[i].actions) {
      for (const auto& attr : action.attributes) {
        if (!attr.value) continue;
        const auto* spec = cas::find_spec(action.kind, attr.name);
        if (spec && spec->type == cas::ValueType::Entity && !present.count(*attr.value)) {
          problems.push_back("segment " + std::to_string(i) + ": entity '" + *attr.value + "' is not on map " +
                             demo.map_id);
        }
      }
    }
  }
  return problems;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  Dataset data;
  if (fs::is_directory(dir / "maps")) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir / "maps")) {
      if (f.path().extension() == ".map") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        data.maps.emplace(f.stem().string(), world::load_map_file(f.string()));
      } catch (const MapError& e) {
        throw MapError(f.string() + ": " + e.what());
      }
    }
  }
  if (fs::exists(dir / "lexicon.txt")) data.lexicon = Lexicon::load(dir / "lexicon.txt");
  std::ifstream in(dir / "demos.jsonl");
  if (!in) throw Error("demonstrations file not found: " + (dir / "demos.jsonl").string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    auto where = "demos.jsonl:" + std::to_string(number) + ": ";
    try {
      auto d = demo_from_json(json::parse(line), data.maps);
      for (const auto& p : validate(d, data.maps.at(d.map_id))) data.warnings.push_back(where + p);
      data.demos.push_back(std::move(d));
    } catch (const json::parse_error& e) {
      data.warnings.push_back(where + "skipped: " + e.what());
    } catch (const Error& e) {
      data.warnings.push_back(where + "skipped: " + e.what());
    }
  }
  return data;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "maps");
  for (const auto& [id, map] : data.maps) {
    std::ofstream out(dir / "maps" / (id + ".map"));
    if (!out) throw Error("cannot write map " + id);
    out << world::save_map(map);
  }
  std::ofstream demos(dir / "demos.jsonl");
  if (!demos) throw Error("cannot write " + (dir / "demos.jsonl").string());
  for (const auto& d : data.demos) demos << demo_to_json(d).dump() << '\n';
  if (data.lexicon) {
    std::ofstream lex(dir / "lexicon.txt");
    lex << data.lexicon->to_text();
  }
}

// ---------------------------------------------------------------------------
// Splitting

DatasetSplit split(const std::vector<Demonstration>& demos, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw Error("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> paragraphs;
  std::set<std::string> seen;
  for (const auto& d : demos) {
    if (seen.insert(d.paragraph_id).second) paragraphs.push_back(d.paragraph_id);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(paragraphs.begin(), paragraphs.end(), rng);
  const auto n = static_cast<double>(paragraphs.size());
  auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  auto n_val = static_cast<std::size_t>(std::llround(ratios.validation * n));
  n_train = std::min(n_train, paragraphs.size());
  n_val = std::min(n_val, paragraphs.size() - n_train);
  std::map<std::string, int> where;
  for (std::size_t i = 0; i < paragraphs.size(); ++i) where[paragraphs[i]] = i < n_train ? 0 : i < n_train + n_val ? 1 : 2;
  DatasetSplit out;
  out.ratios = ratios;
  for (const auto& d : demos) {
    switch (where[d.paragraph_id]) {
      case 0:
        out.train.push_back(d);
        break;
      case 1:
        out.validation.push_back(d);
        break;
      default:
        out.test.push_back(d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairs, augmentation, vocabulary

std::vector<Pair> segment_pairs(const std::vector<Demonstration>& demos) {
  std::vector<Pair> out;
  for (const auto& d : demos) {
    for (std::size_t i = 0; i < d.cas.size() && i < d.instruction.size(); ++i) out.push_back({d.cas[i], d.instruction[i]});
  }
  return out;
}

namespace {

struct Slot {
  std::size_t action = 0;
  std::size_t attribute = 0;
  Category category = Category::Entity;
};

// Start indices of non-overlapping occurrences of any phrase, left to right,
// longer phrases first at each position.
std::vector<std::pair<std::size_t, std::size_t>> occurrences(const Words& words, std::vector<Words> phrases) {
  std::sort(phrases.begin(), phrases.end(), [](const Words& a, const Words& b) { return a.size() > b.size(); });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool hit = false;
    for (const auto& p : phrases) {
      if (i + p.size() <= words.size() && std::equal(p.begin(), p.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
        out.emplace_back(i, p.size());
        i += p.size();
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return out;
}

std::vector<std::string> alternatives(const Lexicon& lex, Category cat, const std::string& value) {
  std::vector<std::string> pool =
      cat == Category::Entity ? lex.entity_values(world::classify_entity(value)) : lex.values(cat);
  pool.erase(std::remove(pool.begin(), pool.end(), value), pool.end());
  return pool;
}

class Augmenter {
 public:
  Augmenter(const Lexicon& lex, const AugmentConfig& cfg, Augmented& out) : lex_(lex), cfg_(cfg), out_(out) {}

  bool full() const { return cfg_.max_pairs > 0 && out_.pairs.size() >= cfg_.max_pairs; }

  void add(const Pair& p) {
    if (full()) return;
    if (seen_.insert(p).second) out_.pairs.push_back(p);
  }

  void expand(const Pair& p, std::size_t index, bool warn) {
    auto slots = bound(p.cas);
    expand_from(p, slots, 0, index, warn);
  }

 private:
  std::vector<Slot> bound(const cas::Command& cmd) const {
    std::vector<Slot> out;
    for (std::size_t a = 0; a < cmd.actions.size(); ++a) {
      const auto& action = cmd.actions[a];
      for (std::size_t k = 0; k < action.attributes.size(); ++k) {
        if (!action.attributes[k].value) continue;
        const auto* spec = cas::find_spec(action.kind, action.attributes[k].name);
        if (spec) out.push_back({a, k, category_of(spec->type)});
      }
    }
    return out;
  }

  void expand_from(const Pair& p, const std::vector<Slot>& slots, std::size_t first, std::size_t index, bool warn) {
    for (std::size_t s = first; s < slots.size() && !full(); ++s) {
      const auto& slot = slots[s];
      const auto& value = *p.cas.actions[slot.action].attributes[slot.attribute].value;
      const auto* phrases = lex_.phrases(slot.category, value);
      auto where = "pair " + std::to_string(index) + ": ";
      if (!phrases) {
        if (warn) out_.warnings.push_back(where + "no lexicon entry for '" + value + "'");
        continue;
      }
      // Slots render in command order, so an earlier slot with the same value
      // owns the earlier occurrence.
      std::size_t nth = 0;
      for (std::size_t e = 0; e < s; ++e) {
        const auto& other = slots[e];
        if (other.category == slot.category &&
            *p.cas.actions[other.action].attributes[other.attribute].value == value) {
          ++nth;
        }
      }
      auto hits = occurrences(p.words, *phrases);
      if (nth >= hits.size()) {
        if (warn) out_.warnings.push_back(where + "instruction has no phrase for '" + value + "'");
        continue;
      }
      auto [at, len] = hits[nth];
      for (const auto& alt : alternatives(lex_, slot.category, value)) {
        const auto* alt_phrases = lex_.phrases(slot.category, alt);
        Pair v = p;
        v.cas.actions[slot.action].attributes[slot.attribute].value = alt;
        v.words.erase(v.words.begin() + static_cast<std::ptrdiff_t>(at),
                      v.words.begin() + static_cast<std::ptrdiff_t>(at + len));
        v.words.insert(v.words.begin() + static_cast<std::ptrdiff_t>(at), alt_phrases->front().begin(),
                       alt_phrases->front().end());
        add(v);
        if (cfg_.combinatorial) expand_from(v, slots, s + 1, index, false);
        if (full()) return;
      }
    }
  }

  const Lexicon& lex_;
  const AugmentConfig& cfg_;
  Augmented& out_;
  std::set<Pair> seen_;
};

}  // namespace

Augmented augment(const std::vector<Pair>& pairs, const Lexicon& lexicon, const AugmentConfig& cfg) {
  Augmented out;
  Augmenter aug(lexicon, cfg, out);
  for (const auto& p : pairs) aug.add(p);
  for (std::size_t i = 0; i < pairs.size() && !aug.full(); ++i) aug.expand(pairs[i], i, true);
  return out;
}

Vocab build_vocab(const std::vector<Words>& sentences, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s) ++counts[w];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocab(tokens);
}

// ---------------------------------------------------------------------------
// Synthetic maps and demonstrations

world::WorldMap generate_map(std::uint64_t seed, const MapGenConfig& cfg) {
  if (cfg.size < 2 || cfg.hallways < 1 || cfg.hallways > cfg.size) throw Error("generate_map: bad configuration");
  if (2 * static_cast<std::size_t>(cfg.hallways) > world::kFloorTextures.size()) {
    throw Error("generate_map: more hallways than floor textures");
  }
  std::mt19937_64 rng(seed);
  auto pick_lines = [&] {
    std::vector<int> all(static_cast<std::size_t>(cfg.size));
    for (int i = 0; i < cfg.size; ++i) all[static_cast<std::size_t>(i)] = i;
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<int> out(all.begin(), all.begin() + cfg.hallways);
    std::sort(out.begin(), out.end());
    return out;
  };
  auto rows = pick_lines();
  auto cols = pick_lines();
  std::vector<std::string> colors(world::kFloorColors.begin(), world::kFloorColors.end());
  std::vector<std::string> textures(world::kFloorTextures.begin(), world::kFloorTextures.end());
  std::shuffle(colors.begin(), colors.end(), rng);
  std::shuffle(textures.begin(), textures.end(), rng);
  std::uniform_int_distribution<int> stub(0, 2);

  // Each hallway spans the crossing hallways plus a random stub at either end.
  struct Line {
    bool horizontal;
    int at, from, to;
  };
  std::vector<Line> lines;
  for (int y : rows) {
    int from = std::max(0, cols.front() - stub(rng));
    int to = std::min(cfg.size - 1, cols.back() + stub(rng));
    lines.push_back({true, y, from, to});
  }
  for (int x : cols) {
    int from = std::max(0, rows.front() - stub(rng));
    int to = std::min(cfg.size - 1, rows.back() + stub(rng));
    lines.push_back({false, x, from, to});
  }
  world::WorldMap map;
  for (const auto& l : lines) {
    for (int k = l.from; k <= l.to; ++k) {
      world::GridPos p = l.horizontal ? world::GridPos{k, l.at} : world::GridPos{l.at, k};
      if (!map.has_node(p)) map.add_node(p);
    }
  }
  std::bernoulli_distribution picture(cfg.picture_rate);
  std::bernoulli_distribution left_side(0.5);
  std::uniform_int_distribution<std::size_t> feature(0, world::kWallFeatures.size() - 1);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    for (int k = l.from; k < l.to; ++k) {
      world::GridPos a = l.horizontal ? world::GridPos{k, l.at} : world::GridPos{l.at, k};
      world::GridPos b = l.horizontal ? world::GridPos{k + 1, l.at} : world::GridPos{l.at, k + 1};
      world::EdgeAttrs attrs{colors[i], textures[i], std::nullopt, std::nullopt};
      if (picture(rng)) {
        std::string f(world::kWallFeatures[feature(rng)]);
        (left_side(rng) ? attrs.wall_left : attrs.wall_right) = f;
      }
      map.add_edge(a, b, attrs);
    }
  }
  std::bernoulli_distribution object(cfg.object_rate);
  std::uniform_int_distribution<std::size_t> kind(0, world::kObjectKinds.size() - 1);
  for (const auto& n : map.nodes()) {
    if (object(rng)) map.set_object(n, std::string(world::kObjectKinds[kind(rng)]));
  }
  return map;
}

namespace {

struct PoolEntry {
  const char* structure;
  double weight;
};

const std::vector<PoolEntry>& turn_pool() {
  static const std::vector<PoolEntry> pool = {
      {"Turn(direction=None)", 4.0},
      {"Face(target=None)", 3.0},
      {"Turn(direction=None); Verify(see=None)", 1.0},
  };
  return pool;
}

const std::vector<PoolEntry>& travel_pool() {
  static const std::vector<PoolEntry> pool = {
      {"Travel(distance=None)", 4.0},
      {"Travel(until=None)", 2.0},
      {"Travel(past=None)", 1.0},
      {"Travel(distance=None, until=None)", 1.0},
      {"Travel(distance=None, past=None)", 1.0},
      {"Find(object=None)", 2.0},
      {"Travel(distance=None); Verify(see=None, side=None)", 1.0},
  };
  return pool;
}

// Pool structures in a weighted random order (sampling without replacement).
std::vector<cas::Structure> draw_order(const std::vector<PoolEntry>& pool, std::mt19937_64& rng) {
  std::vector<std::pair<double, std::size_t>> keys;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    // Efraimidis-Spirakis keys: u^(1/w), largest first.
    keys.emplace_back(std::pow(u(rng), 1.0 / pool[i].weight), i);
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<cas::Structure> out;
  for (const auto& [k, i] : keys) out.push_back(cas::parse_structure(pool[i].structure));
  return out;
}

std::optional<cas::Command> choose_command(const world::WorldMap& map, const world::Path& segment,
                                           world::SegmentKind kind, const plan::PlannerConfig& cfg,
                                           std::mt19937_64& rng) {
  plan::SegmentPlanner planner(map, segment, cfg);
  auto order = draw_order(kind == world::SegmentKind::Turn ? turn_pool() : travel_pool(), rng);
  for (const auto& s : order) {
    auto r = planner.greedy(s);
    if (r && r->likelihood > cfg.p_threshold) return r->command;
  }
  return std::nullopt;
}

}  // namespace

std::vector<Demonstration> synth_corpus(const std::vector<world::WorldMap>& maps, std::size_t n, std::uint64_t seed,
                                        const Lexicon& lexicon, const SynthConfig& cfg) {
  std::vector<Demonstration> out;
  if (n == 0) return out;
  if (maps.empty()) throw Error("synth_corpus: no maps");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<world::GridPos>> nodes;
  for (const auto& m : maps) {
    if (m.nodes().size() < 2) throw Error("synth_corpus: maps need at least two nodes");
    nodes.emplace_back(m.nodes().begin(), m.nodes().end());
  }
  std::uniform_int_distribution<int> heading(0, 3);
  std::uniform_int_distribution<int> legs(1, std::max(1, cfg.max_legs));
  auto random_pose = [&](std::size_t m) {
    std::uniform_int_distribution<std::size_t> pick(0, nodes[m].size() - 1);
    return world::Pose{nodes[m][pick(rng)], static_cast<world::Heading>(heading(rng))};
  };
  std::size_t paragraph = 0;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 100 * n + 1000) throw Error("synth_corpus: could not generate enough demonstrations");
    std::size_t m = std::uniform_int_distribution<std::size_t>(0, maps.size() - 1)(rng);
    const auto& map = maps[m];
    auto pose = random_pose(m);
    int count = legs(rng);
    std::string pid = "p" + std::to_string(paragraph);
    std::string instructor = "synth" + std::to_string(paragraph % 3);
    bool emitted = false;
    for (int leg = 0; leg < count && out.size() < n; ++leg) {
      auto goal = random_pose(m);
      if (goal.node == pose.node) continue;
      world::Path path;
      try {
        path = world::shortest_path(map, pose, goal);
      } catch (const PathError&) {
        continue;
      }
      Demonstration d;
      d.map_id = "map" + std::to_string(m);
      d.path = path;
      d.instructor_id = instructor;
      d.paragraph_id = pid;
      bool ok = true;
      for (const auto& seg : world::segment_path(path)) {
        auto cmd = choose_command(map, path.slice(seg.first_pose, seg.last_pose), seg.kind, cfg.planner, rng);
        if (!cmd) {
          ok = false;
          break;
        }
        d.instruction.push_back(render(*cmd, lexicon, rng));
        d.cas.push_back(std::move(*cmd));
      }
      if (!ok) continue;
      out.push_back(std::move(d));
      pose = goal;
      emitted = true;
    }
    if (emitted) ++paragraph;
  }
  return out;
}

}  // namespace navgen::corpus
