#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "navgen/content_select.hpp"
#include "navgen/metrics.hpp"
#include "navgen/neural.hpp"
#include "navgen/pipeline.hpp"
#include "navgen/planner.hpp"
#include "navgen/realize.hpp"
#include "unit/planner_oracle.hpp"

using namespace navgen;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

double since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

// ---- 1: gradient fidelity -------------------------------------------------

nn::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

nn::Var weighted_sum(nn::Graph& g, nn::Var out, const nn::Matrix& w) { return g.sum(g.mul(out, g.constant(w))); }

void scramble(realize::Seq2SeqModel& m, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : m.params().all()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
  }
}

Outcome gradient_fidelity() {
  // Individual ops and lstm_step against 1e-6, composite losses against 1e-4.
  double worst_op = 0.0, worst_model = 0.0;
  std::string worst_op_name, worst_model_name;
  auto record = [&](const std::string& name, const nn::GradCheckResult& r, bool op) {
    double& slot = op ? worst_op : worst_model;
    if (r.max_rel_error >= slot) {
      slot = r.max_rel_error;
      (op ? worst_op_name : worst_model_name) = name;
    }
  };
  std::mt19937_64 rng(17);

  // Individual ops through a random weighted sum.
  {
    nn::ParameterStore s;
    s.add("a", 3, 4).value = random_matrix(rng, 3, 4);
    s.add("b", 4, 3).value = random_matrix(rng, 4, 3);
    s.add("r", 1, 3).value = random_matrix(rng, 1, 3);
    nn::Matrix w = random_matrix(rng, 3, 3);
    nn::Matrix mask = nn::Matrix::Ones(3, 3);
    mask(1, 2) = 0.0;
    record("matmul/add_row/sigmoid/tanh/square/softmax",
           nn::gradcheck(s, [&](nn::Graph& g) {
             auto x = g.add_row(g.matmul(g.param(s.get("a")), g.param(s.get("b"))), g.param(s.get("r")));
             auto y = g.add(g.sigmoid(x), g.add(g.tanh(g.scale(x, 0.5)), g.square(x)));
             return weighted_sum(g, g.add(y, g.softmax_rows(x, mask)), w);
           }),
           true);
    record("log_softmax/cross_entropy", nn::gradcheck(s, [&](nn::Graph& g) {
             auto x = g.matmul(g.param(s.get("a")), g.param(s.get("b")));
             return g.add(weighted_sum(g, g.log_softmax_rows(x), w), g.cross_entropy(x, {0, 2, 1}, {1.0, 0.5, 2.0}));
           }),
           true);
  }
  // lstm_step over parameters and inputs.
  {
    nn::ParameterStore s;
    auto layer = nn::add_lstm_layer(s, "l", 3, 4);
    layer.weight->value = random_matrix(rng, 7, 16, 0.5);
    layer.bias->value = random_matrix(rng, 1, 16, 0.5);
    s.add("x", 2, 3).value = random_matrix(rng, 2, 3);
    s.add("h", 2, 4).value = random_matrix(rng, 2, 4, 0.5);
    s.add("c", 2, 4).value = random_matrix(rng, 2, 4);
    nn::Matrix wh = random_matrix(rng, 2, 4), wc = random_matrix(rng, 2, 4);
    record("lstm_step", nn::gradcheck(s, [&](nn::Graph& g) {
             auto out = nn::lstm_step(g, g.param(s.get("x")), g.param(s.get("h")), g.param(s.get("c")),
                                      g.param(*layer.weight), g.param(*layer.bias), layer);
             return g.add(weighted_sum(g, out.h, wh), weighted_sum(g, out.c, wc));
           }),
           true);
  }

  Vocab src({"Turn", "Travel", "direction.Left", "distance.2", "until.sofa"});
  Vocab dst({"turn", "left", "go", "two", "steps", "to", "the", "sofa"});
  realize::Seq2SeqConfig mc;
  mc.embedding = 3;
  mc.hidden = 4;
  realize::Seq2SeqModel m(src, dst, mc, 11);
  scramble(m, 12, 0.4);
  std::vector<std::vector<int>> sources = {m.cas_vocab().encode({"Travel", "distance.2", "until.sofa"}),
                                           m.cas_vocab().encode({"Turn"})};
  record("align", nn::gradcheck(m.params(), [&](nn::Graph& g) {
           auto b = realize::bind(g, m);
           auto enc = realize::encode_batch(g, b, m, sources);
           auto d = g.tanh(g.rows(b.cas_embedding, {4, 5}));
           d = g.concat_cols(std::vector<nn::Var>{d, g.slice_cols(d, 0, 1)});
           return g.sum(g.square(realize::attend(g, b, d, enc).context));
         }),
         true);
  record("decode_step", nn::gradcheck(m.params(), [&](nn::Graph& g) {
           auto b = realize::bind(g, m);
           auto enc = realize::encode_batch(g, b, m, sources);
           auto s0 = realize::initial_state(g, m, 2);
           auto s1 = realize::decode_step(g, b, m, enc, s0, {Vocab::kBos, Vocab::kBos});
           auto s2 = realize::decode_step(g, b, m, enc, s1.state, {5, 6});
           return g.cross_entropy(s2.logits, {7, 8}, {1.0, 0.5});
         }, 1e-4),
         false);
  std::vector<realize::Example> batch = {{{"Travel", "distance.2", "until.sofa"}, {"go", "two", "steps", "to", "the", "sofa"}},
                                         {{"Turn", "direction.Left"}, {"turn", "left"}}};
  record("seq2seq nll", nn::gradcheck(m.params(), [&](nn::Graph& g) {
           auto b = realize::bind(g, m);
           return realize::batch_nll(g, b, m, batch);
         }, 1e-4),
         false);

  bool pass = worst_op < 1e-6 && worst_model < 1e-4;
  return {pass, "max rel error ops " + fmt(worst_op) + " at " + worst_op_name + " (< 1e-6), composite " +
                    fmt(worst_model) + " at " + worst_model_name + " (< 1e-4)"};
}

// ---- 2: planner likelihood against exhaustive enumeration ---------------------

Outcome planner_oracle() {
  std::mt19937 rng(2024);
  int fixtures = 0, equal = 0, nonzero = 0;
  while (fixtures < 60) {
    auto m = testing::random_map(rng, 8);
    if (m.edge_count() == 0) continue;
    int horizon = std::uniform_int_distribution<int>(1, 4)(rng);
    auto p = testing::random_walk(rng, m, horizon);
    plan::PlannerConfig cfg;
    cfg.horizon = horizon;
    auto s = testing::aligned_structure(rng, p);
    std::optional<cas::Command> c;
    if (rng() % 2 == 0) {
      plan::SegmentPlanner sp(m, p, cfg);
      if (auto g = sp.greedy(s)) c = g->command;
    } else {
      c = testing::random_binding(rng, s, p, m);
    }
    if (!c) continue;
    ++fixtures;
    auto got = plan::command_likelihood(*c, p, m, cfg);
    double want = testing::oracle_likelihood(*c, p, m, horizon);
    equal += !got.approximate && got.value == want;
    nonzero += want > 0;
  }
  return {equal == fixtures && fixtures >= 50,
          std::to_string(equal) + "/" + std::to_string(fixtures) + " fixtures exact, " + std::to_string(nonzero) +
              " with non-zero likelihood"};
}

// ---- 3: IRL recovery ----------------------------------------------------------

Outcome irl_recovery() {
  using namespace select;
  std::mt19937_64 rng(31);
  std::vector<PropertyVector> actions = {{1, 0, 1, 1, 0, 0, 0, 0, 0}, {2, 1, 1, 2, 1, 0, 0, 0, 0},
                                         {2, 2, 2, 2, 0, 0, 1, 1, 1}, {3, 1, 2, 3, 1, 1, 0, 1, 0},
                                         {1, 1, 0, 1, 0, 0, 1, 0, 0}};
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd planted(kJointSize);
  for (Eigen::Index i = 0; i < planted.size(); ++i) planted(i) = u(rng);
  std::vector<ContextVector> pool;
  std::bernoulli_distribution coin(0.4);
  for (int i = 0; i < 50; ++i) {
    ContextVector c{};
    for (auto& b : c) b = coin(rng);
    pool.push_back(c);
  }
  // pi(a|s) proportional to exp(-theta . psi(s, a)), sampled from the definition.
  auto energies = [&](const ContextVector& s) {
    std::vector<double> e;
    for (const auto& a : actions) e.push_back(planted.dot(joint_features(s, a)));
    return e;
  };
  std::vector<IrlDemo> demos;
  std::uniform_int_distribution<std::size_t> ctx(0, pool.size() - 1);
  for (int i = 0; i < 200000; ++i) {
    const auto& s = pool[ctx(rng)];
    std::vector<double> w;
    for (double e : energies(s)) w.push_back(std::exp(-e));
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    demos.push_back({s, actions[pick(rng)], std::nullopt});
  }
  IrlReport report;
  auto model = train_irl(demos, {0.1, 3000, 1e-3, 1e-10}, &report);
  auto [emp, exp] = feature_expectations(model, demos);
  double gap = (emp - exp).cwiseAbs().maxCoeff();
  int agree = 0;
  for (const auto& s : pool) {
    auto e = energies(s);
    auto best = static_cast<std::size_t>(std::min_element(e.begin(), e.end()) - e.begin());
    auto pi = model.policy(s);
    auto chosen = static_cast<std::size_t>(std::max_element(pi.begin(), pi.end()) - pi.begin());
    agree += model.actions[chosen] == actions[best];
  }
  double rate = static_cast<double>(agree) / static_cast<double>(pool.size());
  return {gap < 1e-3 && rate >= 0.95,
          "feature gap " + fmt(gap) + " (< 1e-3), MAP agreement " + std::to_string(agree) + "/" +
              std::to_string(pool.size())};
}

// ---- 4: BLEU ------------------------------------------------------------------------

metrics::Words words(const std::string& text) {
  std::istringstream in(text);
  metrics::Words out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Outcome bleu_correctness() {
  bool identical = metrics::bleu_sentence(words("walk forward twice to the chair"),
                                          words("walk forward twice to the chair")) == 100.0;
  // Hand counts: clipped n-gram matches over totals, brevity penalty from lengths.
  double hand[3] = {100.0 * std::exp(-1.0 / 3.0), 100.0 * std::pow(6.0 / 7.0 * 4.0 / 6.0 * 2.0 / 5.0 * 1.0 / 4.0, 0.25),
                    100.0 * std::pow(2.0 / 4.0 * 1.0 / 4.0 * 1.0 / 3.0 * 1.0 / 2.0, 0.25)};
  double got[3] = {metrics::bleu_sentence(words("the cat sat"), words("the cat sat down")),
                   metrics::bleu_sentence(words("turn left and walk to the chair"),
                                          words("turn left then walk to the chair")),
                   metrics::bleu_sentence(words("the the the the"), words("the cat the mat"))};
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(hand[i] - got[i]));

  std::mt19937 rng(13);
  const metrics::Words vocab = {"turn", "left", "right", "walk", "to", "the", "chair", "sofa", "blue", "hall"};
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::uniform_int_distribution<int> len(2, 12);
  int increases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    metrics::Words ref(static_cast<std::size_t>(len(rng)));
    for (auto& w : ref) w = vocab[pick(rng)];
    metrics::Words scrambled = ref;
    std::shuffle(scrambled.begin(), scrambled.end(), rng);
    increases += metrics::bleu_sentence(scrambled, ref) > metrics::bleu_sentence(ref, ref);
  }
  return {identical && worst < 1e-9 && increases == 0,
          std::string("identical ") + (identical ? "100" : "not 100") + ", hand fixtures max error " + fmt(worst) +
              ", scramble increased the score " + std::to_string(increases) + "/200 times"};
}

// ---- 5-8: desk-scale pipeline -----------------------------------------------------

struct Desk {
  fs::path work;
  pipeline::PipelineConfig base;
  std::optional<corpus::Dataset> data;

  pipeline::PipelineConfig config(std::uint64_t seed) const {
    auto cfg = base;
    cfg.seed = seed;
    cfg.checkpoint_dir = work / ("checkpoints_seed" + std::to_string(seed));
    return cfg;
  }
};

Outcome desk_end_to_end(Desk& desk) {
  auto t0 = clk::now();
  auto cfg = desk.config(0);
  desk.data = pipeline::prepare(cfg);
  auto pp = pipeline::prepare_pairs(*desk.data, cfg);
  std::set<std::pair<std::string, corpus::Words>> distinct_pairs;
  for (const auto* part : {&pp.train, &pp.validation})
    for (const auto& p : *part) distinct_pairs.insert({cas::serialize(p.cas), p.words});
  std::size_t augmented = distinct_pairs.size();
  pipeline::run_train_irl(*desk.data, cfg);
  auto s2s = pipeline::run_train_seq2seq(*desk.data, cfg);
  pipeline::run_train_lm(*desk.data, cfg);
  auto ev = pipeline::run_evaluate(*desk.data, cfg);
  double seconds = since(t0);
  const auto& r = ev.heldout.report;
  bool pass = desk.data->maps.size() == 3 && augmented >= 2000 && r.pairs > 0 && r.sentence_bleu_mean >= 90.0 &&
              seconds < 1800.0;
  return {pass, std::to_string(augmented) + " distinct augmented pairs over " + std::to_string(desk.data->maps.size()) +
                    " maps, " + std::to_string(s2s.epochs_run) + " epochs; held-out recombinations (" +
                    std::to_string(r.pairs) + " pairs) sentence BLEU " + fmt(r.sentence_bleu_mean, 4) +
                    " corpus BLEU " + fmt(r.corpus_bleu, 4) + " (test " + fmt(ev.test.report.sentence_bleu_mean, 4) +
                    "); " + fmt(seconds, 4) + " s (< 1800)"};
}

void ensure_data(Desk& desk) {
  if (desk.data) return;
  auto cfg = desk.config(0);
  if (fs::exists(cfg.dataset_dir / "demos.jsonl")) {
    desk.data = corpus::load_dataset(cfg.dataset_dir);
  } else {
    desk.data = pipeline::prepare(cfg);
  }
}

void ensure_trained(Desk& desk, std::uint64_t seed, bool aligner) {
  ensure_data(desk);
  auto cfg = desk.config(seed);
  if (!fs::exists(pipeline::seq2seq_checkpoint(cfg, aligner))) pipeline::run_train_seq2seq(*desk.data, cfg, aligner);
  if (!fs::exists(pipeline::lm_checkpoint(cfg))) pipeline::run_train_lm(*desk.data, cfg);
  if (!fs::exists(pipeline::irl_checkpoint(cfg))) pipeline::run_train_irl(*desk.data, cfg);
}

Outcome ablation(Desk& desk) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    ensure_trained(desk, seed, true);
    ensure_trained(desk, seed, false);
    auto cfg = desk.config(seed);
    double full = pipeline::run_evaluate(*desk.data, cfg, true).test.report.corpus_bleu;
    double plain = pipeline::run_evaluate(*desk.data, cfg, false).test.report.corpus_bleu;
    wins += full >= plain;
    detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + " full " + fmt(full, 4) +
              " vs no aligner " + fmt(plain, 4);
  }
  return {wins >= 2, detail + " (" + std::to_string(wins) + "/3 hold)"};
}

Outcome lm_ranking(Desk& desk) {
  ensure_trained(desk, 0, true);
  auto cfg = desk.config(0);
  auto lm = lm::load_lm(pipeline::lm_checkpoint(cfg));
  auto pp = pipeline::prepare_pairs(*desk.data, cfg);
  std::mt19937 rng(12);
  std::set<corpus::Words> used;
  int wins = 0, pairs = 0;
  for (const auto& p : pp.test) {
    if (pairs == 100) break;
    std::set<std::string> distinct(p.words.begin(), p.words.end());
    if (distinct.size() != p.words.size() || p.words.size() < 2 || !used.insert(p.words).second) continue;
    auto scrambled = p.words;
    while (scrambled == p.words) std::shuffle(scrambled.begin(), scrambled.end(), rng);
    ++pairs;
    wins += lm::perplexity(lm, p.words) < lm::perplexity(lm, scrambled);
  }
  return {pairs == 100 && wins >= 90,
          "grammatical order preferred in " + std::to_string(wins) + "/" + std::to_string(pairs) + " held-out pairs"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pose_text(const world::Pose& p) {
  return std::to_string(p.node.x) + "," + std::to_string(p.node.y) + "," + world::heading_char(p.heading);
}

Outcome determinism(Desk& desk, const std::string& cli) {
  ensure_trained(desk, 0, true);
  auto cfg = desk.config(0);
  const auto& map = desk.data->maps.at("map0");
  std::vector<world::GridPos> nodes(map.nodes().begin(), map.nodes().end());
  std::optional<std::pair<world::Pose, world::Pose>> route;
  for (std::size_t i = 0; i < nodes.size() && !route; ++i) {
    for (std::size_t j = 0; j < nodes.size() && !route; ++j) {
      for (int h = 0; h < 4 && !route; ++h) {
        world::Pose a{nodes[i], world::Heading::N}, b{nodes[j], static_cast<world::Heading>(h)};
        if (world::shortest_path(map, a, b).moves().size() == 9) route = {a, b};
      }
    }
  }
  if (!route) return {false, "no 9-movement route on map0"};
  auto first = pipeline::load_models(cfg);
  auto t0 = clk::now();
  auto a = pipeline::generate(map, route->first, route->second, first, cfg);
  double seconds = since(t0);
  auto second = pipeline::load_models(cfg);
  auto b = pipeline::generate(map, route->first, route->second, second, cfg);
  bool same = pipeline::to_json(a).dump() == pipeline::to_json(b).dump();
  std::string detail = "9-movement route " + pose_text(route->first) + " -> " + pose_text(route->second) + " in " +
                       fmt(seconds) + " s (<= 60), " + std::to_string(a.segments.size()) + " segments; in-process " +
                       (same ? "identical" : "DIFFERENT");
  if (!cli.empty()) {
    std::string cmd = cli + " --dataset-dir " + cfg.dataset_dir.string() + " --checkpoint-dir " +
                      cfg.checkpoint_dir.string() + " generate --json --map map0 --start " + pose_text(route->first) +
                      " --goal " + pose_text(route->second);
    std::string outs[2];
    for (int k = 0; k < 2; ++k) {
      auto file = desk.work / ("generate_" + std::to_string(k) + ".json");
      int rc = std::system((cmd + " > " + file.string()).c_str());
      if (rc != 0) return {false, detail + "; CLI exited with " + std::to_string(rc)};
      outs[k] = slurp(file);
    }
    bool cli_same = outs[0] == outs[1] && !outs[0].empty();
    same = same && cli_same;
    detail += std::string(", CLI runs ") + (cli_same ? "byte-identical" : "DIFFERENT");
  }
  return {same && seconds <= 60.0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "navgen_acceptance").string();
  std::string cli;
  bool keep = false;
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  app.add_option("--work", work, "Scratch directory for the desk-scale run");
  app.add_option("--cli", cli, "navgen executable for the byte-identity check");
  app.add_flag("--keep", keep, "Reuse checkpoints already in the scratch directory");
  CLI11_PARSE(app, argc, argv);

  Desk desk;
  desk.work = work;
  if (!keep) fs::remove_all(desk.work);
  fs::create_directories(desk.work);
  desk.base.dataset_dir = desk.work / "dataset";
  desk.base.combinatorial_augmentation = true;

  struct Criterion {
    std::string name;
    double limit_seconds;  // 0: no runtime bound beyond the check itself
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient fidelity", 60, gradient_fidelity},
      {"planner likelihood equals exhaustive enumeration", 60, planner_oracle},
      {"IRL recovers a planted policy", 120, irl_recovery},
      {"BLEU correctness", 0, bleu_correctness},
      {"desk-scale end-to-end BLEU", 0, [&] { return desk_end_to_end(desk); }},
      {"aligner ablation direction", 0, [&] { return ablation(desk); }},
      {"LM prefers grammatical order", 0, [&] { return lm_ranking(desk); }},
      {"determinism and latency", 0, [&] { return determinism(desk, cli); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    auto t0 = clk::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double seconds = since(t0);
    std::string timing = fmt(seconds, 4) + " s";
    if (criteria[i].limit_seconds > 0) {
      timing += " of " + fmt(criteria[i].limit_seconds) + " allowed";
      if (seconds >= criteria[i].limit_seconds) o.pass = false;
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].name << ": "
              << o.detail << " [" << timing << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
