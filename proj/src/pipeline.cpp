#include "navgen/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "navgen/error.hpp"
#include "navgen/planner.hpp"

namespace navgen::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

json to_json(const PipelineConfig& c) {
  return {{"dataset_dir", c.dataset_dir.string()},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"seed", c.seed},
          {"k_c", c.k_c},
          {"p_t", c.p_t},
          {"k_e", c.k_e},
          {"l_t", c.l_t},
          {"beam_width", c.beam_width},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"clusters", c.clusters},
          {"maps", c.maps},
          {"demos", c.demos},
          {"max_legs", c.max_legs},
          {"seq2seq_epochs", c.seq2seq_epochs},
          {"lm_epochs", c.lm_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"patience", c.patience},
          {"feed_previous_word", c.feed_previous_word},
          {"combinatorial_augmentation", c.combinatorial_augmentation},
          {"irl_iters", c.irl_iters},
          {"irl_lr", c.irl_lr},
          {"irl_l2", c.irl_l2}};
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  if (!j.is_object()) throw Error("config must be an object");
  auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.k_c = j.value("k_c", c.k_c);
    c.p_t = j.value("p_t", c.p_t);
    c.k_e = j.value("k_e", c.k_e);
    c.l_t = j.value("l_t", c.l_t);
    c.beam_width = j.value("beam_width", c.beam_width);
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.clusters = j.value("clusters", c.clusters);
    c.maps = j.value("maps", c.maps);
    c.demos = j.value("demos", c.demos);
    c.max_legs = j.value("max_legs", c.max_legs);
    c.seq2seq_epochs = j.value("seq2seq_epochs", c.seq2seq_epochs);
    c.lm_epochs = j.value("lm_epochs", c.lm_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.patience = j.value("patience", c.patience);
    c.feed_previous_word = j.value("feed_previous_word", c.feed_previous_word);
    c.combinatorial_augmentation = j.value("combinatorial_augmentation", c.combinatorial_augmentation);
    c.irl_iters = j.value("irl_iters", c.irl_iters);
    c.irl_lr = j.value("irl_lr", c.irl_lr);
    c.irl_l2 = j.value("irl_l2", c.irl_l2);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in), std::move(base));
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data

corpus::Dataset prepare(const PipelineConfig& cfg) {
  std::vector<world::WorldMap> maps;
  for (int i = 0; i < cfg.maps; ++i) maps.push_back(corpus::generate_map(cfg.seed * 1000 + static_cast<std::uint64_t>(i)));
  corpus::SynthConfig synth;
  synth.max_legs = cfg.max_legs;
  synth.planner.p_threshold = cfg.p_t;
  corpus::Dataset data;
  for (std::size_t i = 0; i < maps.size(); ++i) data.maps.emplace("map" + std::to_string(i), maps[i]);
  data.demos = corpus::synth_corpus(maps, cfg.demos, cfg.seed, corpus::Lexicon::builtin(), synth);
  data.lexicon = corpus::Lexicon::builtin();
  corpus::save_dataset(cfg.dataset_dir, data);
  return data;
}

namespace {

// Appends the repeats that deduplication removed from `originals`, so phrasing
// frequencies among real demonstrations survive augmentation.
void restore_repeats(std::vector<corpus::Pair>& augmented, const std::vector<corpus::Pair>& originals) {
  std::map<std::pair<std::string, corpus::Words>, int> seen;
  for (const auto& p : originals) {
    if (seen[{cas::serialize(p.cas), p.words}]++ > 0) augmented.push_back(p);
  }
}

}  // namespace

PreparedPairs prepare_pairs(const corpus::Dataset& data, const PipelineConfig& cfg,
                            const corpus::AugmentConfig& augment) {
  const auto& lexicon = data.lexicon ? *data.lexicon : corpus::Lexicon::builtin();
  auto s = corpus::split(data.demos, {}, cfg.seed);
  PreparedPairs out;
  out.train_original = corpus::segment_pairs(s.train);
  auto train = corpus::augment(out.train_original, lexicon, augment);
  auto val_original = corpus::segment_pairs(s.validation);
  auto val = corpus::augment(val_original, lexicon, augment);
  out.train = std::move(train.pairs);
  out.validation = std::move(val.pairs);
  restore_repeats(out.train, out.train_original);
  restore_repeats(out.validation, val_original);
  out.test = corpus::segment_pairs(s.test);
  out.warnings = std::move(train.warnings);
  out.warnings.insert(out.warnings.end(), val.warnings.begin(), val.warnings.end());
  return out;
}

PreparedPairs prepare_pairs(const corpus::Dataset& data, const PipelineConfig& cfg) {
  corpus::AugmentConfig augment;
  augment.combinatorial = cfg.combinatorial_augmentation;
  return prepare_pairs(data, cfg, augment);
}

std::vector<corpus::Pair> heldout_recombinations(const std::vector<corpus::Pair>& train,
                                                 const std::vector<corpus::Pair>& test) {
  std::set<std::string> structures, commands;
  for (const auto& p : train) {
    structures.insert(cas::serialize(cas::structure_of(p.cas)));
    commands.insert(cas::serialize(p.cas));
  }
  std::vector<corpus::Pair> out;
  for (const auto& p : test) {
    if (structures.count(cas::serialize(cas::structure_of(p.cas))) && !commands.count(cas::serialize(p.cas))) {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<realize::Example> to_examples(const std::vector<corpus::Pair>& pairs) {
  std::vector<realize::Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({cas::tokenize(p.cas), p.words});
  return out;
}

std::vector<select::IrlDemo> irl_demos(const corpus::Dataset& data, const std::vector<corpus::Demonstration>& demos) {
  std::vector<select::IrlDemo> out;
  for (const auto& d : demos) {
    const auto& map = data.maps.at(d.map_id);
    for (std::size_t i = 0; i < d.cas.size(); ++i) {
      select::IrlDemo demo;
      demo.context = select::extract_context(map, d.path, i);
      auto structure = cas::structure_of(d.cas[i]);
      demo.properties = select::extract_properties(structure, &d.cas[i]);
      demo.structure = structure;
      out.push_back(std::move(demo));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training phases

std::filesystem::path irl_checkpoint(const PipelineConfig& cfg) { return cfg.checkpoint_dir / "irl.json"; }
std::filesystem::path seq2seq_checkpoint(const PipelineConfig& cfg, bool use_aligner) {
  return cfg.checkpoint_dir / (use_aligner ? "seq2seq.json" : "seq2seq_no_aligner.json");
}
std::filesystem::path lm_checkpoint(const PipelineConfig& cfg) { return cfg.checkpoint_dir / "lm.json"; }

select::IrlModel train_irl_phase(const corpus::Dataset& data, const std::vector<corpus::Demonstration>& demos,
                                 const PipelineConfig& cfg, select::IrlReport* report) {
  select::IrlHyper hyper;
  hyper.iters = cfg.irl_iters;
  hyper.lr = cfg.irl_lr;
  hyper.l2 = cfg.irl_l2;
  select::IrlConfig config;
  config.k_c = cfg.k_c;
  config.clusters = cfg.clusters;
  return select::train_irl(irl_demos(data, demos), hyper, report, config);
}

namespace {

nn::TrainConfig train_config(const PipelineConfig& cfg, int epochs) {
  nn::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.patience = cfg.patience;
  tc.seed = cfg.seed;
  return tc;
}

}  // namespace

realize::Seq2SeqModel train_seq2seq_phase(const std::vector<corpus::Pair>& train, const std::vector<corpus::Pair>& val,
                                          const PipelineConfig& cfg, bool use_aligner, realize::TrainReport* report) {
  if (train.empty()) throw TrainingError("seq2seq: no training pairs");
  std::vector<corpus::Words> sources, targets;
  for (const auto& p : train) {
    sources.push_back(cas::tokenize(p.cas));
    targets.push_back(p.words);
  }
  realize::Seq2SeqConfig mc;
  mc.embedding = cfg.k_e;
  mc.hidden = cfg.hidden;
  mc.layers = cfg.layers;
  mc.use_aligner = use_aligner;
  mc.feed_previous_word = cfg.feed_previous_word;
  realize::Seq2SeqModel model(corpus::build_vocab(sources), corpus::build_vocab(targets), mc, cfg.seed);
  auto r = realize::train(model, to_examples(train), to_examples(val), train_config(cfg, cfg.seq2seq_epochs));
  if (report) *report = r;
  return model;
}

lm::LanguageModel train_lm_phase(const std::vector<corpus::Words>& train, const std::vector<corpus::Words>& val,
                                 const PipelineConfig& cfg, realize::TrainReport* report) {
  if (train.empty()) throw TrainingError("lm: no training sentences");
  lm::LmConfig lc;
  lc.embedding = cfg.k_e;
  lc.hidden = cfg.hidden;
  lc.layers = cfg.layers;
  lc.flag_threshold = cfg.l_t;
  lm::LanguageModel model(corpus::build_vocab(train), lc, cfg.seed);
  auto r = lm::train_lm(model, train, val, train_config(cfg, cfg.lm_epochs));
  if (report) *report = r;
  return model;
}

select::IrlReport run_train_irl(const corpus::Dataset& data, const PipelineConfig& cfg) {
  auto s = corpus::split(data.demos, {}, cfg.seed);
  select::IrlReport report;
  auto model = train_irl_phase(data, s.train, cfg, &report);
  std::filesystem::create_directories(cfg.checkpoint_dir);
  select::save_irl(irl_checkpoint(cfg), model);
  return report;
}

realize::TrainReport run_train_seq2seq(const corpus::Dataset& data, const PipelineConfig& cfg, bool use_aligner) {
  auto pp = prepare_pairs(data, cfg);
  realize::TrainReport report;
  auto model = train_seq2seq_phase(pp.train, pp.validation, cfg, use_aligner, &report);
  std::filesystem::create_directories(cfg.checkpoint_dir);
  realize::save_seq2seq(seq2seq_checkpoint(cfg, use_aligner), model);
  return report;
}

realize::TrainReport run_train_lm(const corpus::Dataset& data, const PipelineConfig& cfg) {
  auto pp = prepare_pairs(data, cfg);
  std::vector<corpus::Words> train, val;
  for (const auto& p : pp.train) train.push_back(p.words);
  for (const auto& p : pp.validation) val.push_back(p.words);
  realize::TrainReport report;
  auto model = train_lm_phase(train, val, cfg, &report);
  std::filesystem::create_directories(cfg.checkpoint_dir);
  lm::save_lm(lm_checkpoint(cfg), model);
  return report;
}

// ---------------------------------------------------------------------------
// Generation

Models load_models(const PipelineConfig& cfg, bool use_aligner) {
  for (const auto& p : {irl_checkpoint(cfg), seq2seq_checkpoint(cfg, use_aligner), lm_checkpoint(cfg)}) {
    if (!std::filesystem::exists(p)) throw CheckpointError("missing checkpoint " + p.string());
  }
  Models m{select::load_irl(irl_checkpoint(cfg)), realize::load_seq2seq(seq2seq_checkpoint(cfg, use_aligner)),
           lm::load_lm(lm_checkpoint(cfg))};
  m.irl.config.k_c = cfg.k_c;
  m.irl.config.clusters = cfg.clusters;
  m.lm.config().flag_threshold = cfg.l_t;
  return m;
}

namespace {

std::vector<cas::Structure> all_structures(const select::IrlModel& irl) {
  std::vector<cas::Structure> out;
  for (const auto& e : irl.action_db) {
    if (std::find(out.begin(), out.end(), e.structure) == out.end()) out.push_back(e.structure);
  }
  return out;
}

}  // namespace

Generation generate_for_path(const world::WorldMap& map, const world::Path& path, const Models& models,
                             const PipelineConfig& cfg) {
  Generation g;
  auto segments = world::segment_path(path);
  if (segments.empty()) {
    g.notices.push_back("start and goal coincide; nothing to describe");
    return g;
  }
  plan::PlannerConfig pc;
  pc.p_threshold = cfg.p_t;
  std::vector<lm::Sentence> sentences;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    SegmentTrace t;
    t.index = i;
    auto slice = path.slice(segments[i].first_pose, segments[i].last_pose);
    auto context = select::extract_context(map, path, i);
    auto target = select::map_property_vector(models.irl, context);
    auto structures = select::cluster_structures(select::knn_retrieve(models.irl, target), cfg.clusters);
    for (const auto& s : structures) t.structures.push_back(cas::serialize(s));
    auto commands = plan::plan(structures, slice, map, pc);
    if (commands.empty()) {
      t.fallback = true;
      auto best = plan::best_effort(structures, slice, map, pc);
      if (!best) best = plan::best_effort(all_structures(models.irl), slice, map, pc);
      if (!best) {
        throw Error("segment " + std::to_string(i) + ": no structure can describe this segment");
      }
      commands.push_back(best->command);
      g.notices.push_back("segment " + std::to_string(i) +
                          ": planner found no command above the likelihood threshold; using " +
                          cas::serialize(best->command) + " (likelihood " + std::to_string(best->likelihood) + ")");
    }
    std::vector<lm::Sentence> candidates;
    std::vector<std::size_t> owner;
    for (std::size_t c = 0; c < commands.size(); ++c) {
      t.commands.push_back(cas::serialize(commands[c]));
      for (auto& gen : realize::generate_candidates(models.seq2seq, cas::tokenize(commands[c]), cfg.beam_width)) {
        candidates.push_back(std::move(gen.words));
        owner.push_back(c);
      }
    }
    auto ranking = lm::rank(models.lm, candidates);
    for (const auto& c : candidates) t.candidates.push_back(corpus::join_words(c));
    t.perplexities = ranking.perplexities;
    t.command = t.commands[owner[ranking.best]];
    t.sentence = t.candidates[ranking.best];
    t.flagged = ranking.flagged[ranking.best];
    if (t.flagged) {
      g.notices.push_back("segment " + std::to_string(i) + ": best sentence perplexity " +
                          std::to_string(ranking.perplexities[ranking.best]) + " exceeds the flag threshold");
    }
    sentences.push_back(candidates[ranking.best]);
    g.segments.push_back(std::move(t));
  }
  g.instruction = lm::sequence_instruction(sentences);
  return g;
}

Generation generate(const world::WorldMap& map, const world::Pose& start, const world::Pose& goal,
                    const Models& models, const PipelineConfig& cfg) {
  return generate_for_path(map, world::shortest_path(map, start, goal), models, cfg);
}

json to_json(const Generation& g) {
  json segs = json::array();
  for (const auto& t : g.segments) {
    segs.push_back({{"index", t.index},
                    {"structures", t.structures},
                    {"commands", t.commands},
                    {"fallback", t.fallback},
                    {"command", t.command},
                    {"candidates", t.candidates},
                    {"perplexities", t.perplexities},
                    {"sentence", t.sentence},
                    {"flagged", t.flagged}});
  }
  return {{"instruction", g.instruction}, {"segments", segs}, {"notices", g.notices}};
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate(const realize::Seq2SeqModel& seq2seq, const lm::LanguageModel* lm,
                    const std::vector<corpus::Pair>& pairs, int beam_width) {
  Evaluation ev;
  metrics::ScoredPairs scored;
  for (const auto& p : pairs) {
    auto gens = realize::generate_candidates(seq2seq, cas::tokenize(p.cas), beam_width);
    std::size_t best = 0;
    if (lm && gens.size() > 1) {
      std::vector<lm::Sentence> candidates;
      for (const auto& g : gens) candidates.push_back(g.words);
      best = lm::rank(*lm, candidates).best;
    }
    ev.hypotheses.push_back(gens[best].words);
    scored.emplace_back(gens[best].words, p.words);
  }
  if (!scored.empty()) ev.report = metrics::bleu_report(scored);
  return ev;
}

EvalSummary run_evaluate(const corpus::Dataset& data, const PipelineConfig& cfg, bool use_aligner) {
  for (const auto& p : {seq2seq_checkpoint(cfg, use_aligner), lm_checkpoint(cfg)}) {
    if (!std::filesystem::exists(p)) throw CheckpointError("missing checkpoint " + p.string());
  }
  auto seq2seq = realize::load_seq2seq(seq2seq_checkpoint(cfg, use_aligner));
  auto lm = lm::load_lm(lm_checkpoint(cfg));
  auto pp = prepare_pairs(data, cfg);
  EvalSummary out;
  out.test = evaluate(seq2seq, &lm, pp.test, cfg.beam_width);
  out.heldout = evaluate(seq2seq, &lm, heldout_recombinations(pp.train_original, pp.test), cfg.beam_width);
  return out;
}

json to_json(const metrics::BleuReport& r) {
  return {{"pairs", r.pairs},
          {"sentence_bleu", r.sentence_bleu_mean},
          {"corpus_bleu", r.corpus_bleu},
          {"precisions", r.precisions},
          {"brevity_penalty", r.brevity_penalty}};
}

Evaluation evaluate_references(const std::vector<corpus::Pair>& pairs) {
  Evaluation ev;
  metrics::ScoredPairs scored;
  for (const auto& p : pairs) {
    ev.hypotheses.push_back(p.words);
    scored.emplace_back(p.words, p.words);
  }
  if (!scored.empty()) ev.report = metrics::bleu_report(scored);
  return ev;
}

// ---------------------------------------------------------------------------
// Figures

std::string render_svg(const world::WorldMap& map, const world::Path& path) {
  constexpr int cell = 60, margin = 40;
  int max_x = 0, max_y = 0;
  for (const auto& n : map.nodes()) {
    max_x = std::max(max_x, n.x);
    max_y = std::max(max_y, n.y);
  }
  // North is up: screen y grows as grid y shrinks.
  auto sx = [&](int x) { return margin + x * cell; };
  auto sy = [&](int y) { return margin + (max_y - y) * cell; };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * margin + max_x * cell << "\" height=\""
      << 2 * margin + max_y * cell << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (const auto& e : map.edges()) {
    out << "  <line x1=\"" << sx(e.a.x) << "\" y1=\"" << sy(e.a.y) << "\" x2=\"" << sx(e.b.x) << "\" y2=\""
        << sy(e.b.y) << "\" stroke=\"" << e.attrs.floor_color << "\" stroke-width=\"8\" stroke-opacity=\"0.5\">"
        << "<title>" << e.attrs.floor_color << " " << e.attrs.floor_texture << "</title></line>\n";
  }
  for (const auto& n : map.nodes()) {
    out << "  <circle cx=\"" << sx(n.x) << "\" cy=\"" << sy(n.y) << "\" r=\"5\" fill=\"#444\"/>\n";
  }
  for (const auto& [n, kind] : map.objects()) {
    out << "  <text x=\"" << sx(n.x) + 7 << "\" y=\"" << sy(n.y) - 7 << "\">" << kind << "</text>\n";
  }
  out << "  <polyline fill=\"none\" stroke=\"black\" stroke-width=\"3\" points=\"";
  for (std::size_t i = 0; i < path.poses().size(); ++i) {
    const auto& p = path.poses()[i].node;
    out << (i ? " " : "") << sx(p.x) << "," << sy(p.y);
  }
  out << "\"/>\n";
  std::set<world::GridPos> drawn;
  for (const auto& pose : path.poses()) {
    if (!drawn.insert(pose.node).second) continue;
    out << "  <circle data-node=\"" << pose.node.x << "," << pose.node.y << "\" cx=\"" << sx(pose.node.x)
        << "\" cy=\"" << sy(pose.node.y) << "\" r=\"7\" fill=\"none\" stroke=\"black\"/>\n";
  }
  const auto& s = path.front().node;
  const auto& g = path.back().node;
  out << "  <text x=\"" << sx(s.x) - 12 << "\" y=\"" << sy(s.y) + 22 << "\" font-weight=\"bold\">start</text>\n";
  out << "  <text x=\"" << sx(g.x) - 12 << "\" y=\"" << sy(g.y) + 22 << "\" font-weight=\"bold\">goal</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace navgen::pipeline
