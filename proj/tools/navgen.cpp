#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "navgen/error.hpp"
#include "navgen/pipeline.hpp"

using namespace navgen;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Flags that override the config file, which overrides the defaults.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> beam_width, k_c;
  std::optional<double> p_t, l_t;
  std::optional<std::string> checkpoint_dir, dataset_dir;
};

pipeline::PipelineConfig resolve(const Overrides& o) {
  pipeline::PipelineConfig cfg;
  if (!o.config.empty()) cfg = pipeline::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.beam_width) cfg.beam_width = *o.beam_width;
  if (o.k_c) cfg.k_c = *o.k_c;
  if (o.p_t) cfg.p_t = *o.p_t;
  if (o.l_t) cfg.l_t = *o.l_t;
  if (o.checkpoint_dir) cfg.checkpoint_dir = *o.checkpoint_dir;
  if (o.dataset_dir) cfg.dataset_dir = *o.dataset_dir;
  return cfg;
}

// "x,y,H" with H one of N E S W.
world::Pose parse_pose(const std::string& text) {
  auto a = text.find(',');
  auto b = text.find(',', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw Error("pose must be x,y,H: '" + text + "'");
  try {
    return {{std::stoi(text.substr(0, a)), std::stoi(text.substr(a + 1, b - a - 1))},
            world::parse_heading(text.substr(b + 1))};
  } catch (const std::logic_error&) {
    throw Error("pose must be x,y,H: '" + text + "'");
  }
}

bool use_aligner(const std::string& ablation) { return ablation != "no_aligner"; }

json train_json(const realize::TrainReport& r) {
  json history = json::array();
  for (const auto& h : r.history) history.push_back({{"epoch", h.epoch}, {"train", h.train_loss}, {"val", h.val_loss}});
  return {{"epochs", r.epochs_run}, {"train_loss", r.final_train_loss}, {"best_val_loss", r.best_val_loss},
          {"history", history}};
}

const world::WorldMap& find_map(const corpus::Dataset& data, const std::string& id) {
  auto it = data.maps.find(id);
  if (it == data.maps.end()) throw Error("unknown map '" + id + "'");
  return it->second;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Navigational instruction generator"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Random seed");
  app.add_option("--beam-width", o.beam_width, "Beam width")->check(CLI::PositiveNumber);
  app.add_option("--kc", o.k_c, "Structures retrieved per segment")->check(CLI::PositiveNumber);
  app.add_option("--pt", o.p_t, "Planner likelihood threshold");
  app.add_option("--lt", o.l_t, "Perplexity flag threshold");
  app.add_option("--checkpoint-dir", o.checkpoint_dir, "Checkpoint directory");
  app.add_option("--dataset-dir", o.dataset_dir, "Dataset directory");

  auto* prepare = app.add_subcommand("prepare", "Generate maps and a synthetic corpus");

  auto* augment = app.add_subcommand("augment", "Write augmented training pairs as JSON lines");
  std::string augment_out;
  corpus::AugmentConfig augment_cfg;
  augment->add_option("--out", augment_out, "Output file (default <dataset>/augmented.jsonl)");
  augment->add_flag("--combinatorial", augment_cfg.combinatorial, "Rebind several attributes at once");
  augment->add_option("--max-pairs", augment_cfg.max_pairs, "Stop after this many pairs");

  auto* train_irl = app.add_subcommand("train-irl", "Train the content selection model");
  auto* train_s2s = app.add_subcommand("train-seq2seq", "Train the surface realizer");
  std::string ablation = "none";
  train_s2s->add_option("--ablation", ablation, "none or no_aligner")->check(CLI::IsMember({"none", "no_aligner"}));
  auto* train_lm = app.add_subcommand("train-lm", "Train the ranking language model");

  auto* generate = app.add_subcommand("generate", "Describe a route");
  std::string map_id, start_text, goal_text;
  bool as_json = false;
  for (auto* sub : {generate}) {
    sub->add_option("--map", map_id, "Map id")->required();
    sub->add_option("--start", start_text, "Start pose x,y,H")->required();
    sub->add_option("--goal", goal_text, "Goal pose x,y,H")->required();
  }
  generate->add_flag("--json", as_json, "Print the full trace as JSON");

  auto* evaluate = app.add_subcommand("evaluate", "BLEU on the test split");
  evaluate->add_option("--ablation", ablation, "none or no_aligner")->check(CLI::IsMember({"none", "no_aligner"}));

  auto* figures = app.add_subcommand("export-figures", "Alignment matrices and a route SVG");
  std::string figures_out = "figures";
  figures->add_option("--map", map_id, "Map id")->required();
  figures->add_option("--start", start_text, "Start pose x,y,H")->required();
  figures->add_option("--goal", goal_text, "Goal pose x,y,H")->required();
  figures->add_option("--out", figures_out, "Output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a tiny realizer");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve(o);
    if (prepare->parsed()) {
      auto data = pipeline::prepare(cfg);
      std::cout << json{{"dataset_dir", cfg.dataset_dir.string()},
                        {"maps", data.maps.size()},
                        {"demonstrations", data.demos.size()}}
                       .dump(2)
                << "\n";
    } else if (augment->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      print_warnings(data.warnings);
      augment_cfg.combinatorial = augment_cfg.combinatorial || cfg.combinatorial_augmentation;
      auto pp = pipeline::prepare_pairs(data, cfg, augment_cfg);
      print_warnings(pp.warnings);
      fs::path out = augment_out.empty() ? cfg.dataset_dir / "augmented.jsonl" : fs::path(augment_out);
      std::string text;
      for (const auto& p : pp.train) {
        text += json{{"cas", cas::serialize(p.cas)}, {"instruction", corpus::join_words(p.words)}}.dump() + "\n";
      }
      write_file(out, text);
      std::cout << json{{"original", pp.train_original.size()}, {"augmented", pp.train.size()},
                        {"validation", pp.validation.size()}, {"out", out.string()}}
                       .dump(2)
                << "\n";
    } else if (train_irl->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      print_warnings(data.warnings);
      auto r = pipeline::run_train_irl(data, cfg);
      std::cout << json{{"converged", r.converged}, {"iterations", r.iterations}, {"grad_norm", r.grad_norm},
                        {"feature_gap", r.feature_gap}, {"objective", r.objective},
                        {"checkpoint", pipeline::irl_checkpoint(cfg).string()}}
                       .dump(2)
                << "\n";
    } else if (train_s2s->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      print_warnings(data.warnings);
      auto r = pipeline::run_train_seq2seq(data, cfg, use_aligner(ablation));
      auto j = train_json(r);
      j["checkpoint"] = pipeline::seq2seq_checkpoint(cfg, use_aligner(ablation)).string();
      std::cout << j.dump(2) << "\n";
    } else if (train_lm->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      print_warnings(data.warnings);
      auto j = train_json(pipeline::run_train_lm(data, cfg));
      j["checkpoint"] = pipeline::lm_checkpoint(cfg).string();
      std::cout << j.dump(2) << "\n";
    } else if (generate->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      auto models = pipeline::load_models(cfg);
      auto g = pipeline::generate(find_map(data, map_id), parse_pose(start_text), parse_pose(goal_text), models, cfg);
      if (as_json) {
        std::cout << pipeline::to_json(g).dump(2) << "\n";
      } else {
        print_warnings(g.notices);
        std::cout << g.instruction << "\n";
      }
    } else if (evaluate->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      auto s = pipeline::run_evaluate(data, cfg, use_aligner(ablation));
      std::cout << json{{"ablation", ablation},
                        {"test", pipeline::to_json(s.test.report)},
                        {"heldout_recombinations", pipeline::to_json(s.heldout.report)}}
                       .dump(2)
                << "\n";
    } else if (figures->parsed()) {
      auto data = corpus::load_dataset(cfg.dataset_dir);
      auto models = pipeline::load_models(cfg);
      const auto& map = find_map(data, map_id);
      auto path = world::shortest_path(map, parse_pose(start_text), parse_pose(goal_text));
      auto g = pipeline::generate_for_path(map, path, models, cfg);
      fs::path dir = figures_out;
      write_file(dir / "route.svg", pipeline::render_svg(map, path));
      for (const auto& t : g.segments) {
        auto cmd = cas::parse(t.command);
        auto j = realize::export_alignment(models.seq2seq, cas::tokenize(cmd), corpus::tokenize_text(t.sentence));
        write_file(dir / ("alignment_" + std::to_string(t.index) + ".json"), j.dump(2) + "\n");
      }
      std::cout << json{{"out", dir.string()}, {"segments", g.segments.size()}, {"instruction", g.instruction}}.dump(2)
                << "\n";
    } else if (gradcheck->parsed()) {
      Vocab src({"Travel", "distance.2", "until.chair"});
      Vocab dst({"walk", "forward", "twice", "to", "the", "chair"});
      realize::Seq2SeqConfig mc;
      mc.embedding = 4;
      mc.hidden = 5;
      realize::Seq2SeqModel model(src, dst, mc, cfg.seed);
      std::vector<realize::Example> batch{{{"Travel", "distance.2", "until.chair"}, {"walk", "forward", "twice"}},
                                          {{"Travel", "until.chair"}, {"walk", "to", "the", "chair"}}};
      auto r = nn::gradcheck(model.params(), [&](nn::Graph& g) {
        auto b = realize::bind(g, model);
        return realize::batch_nll(g, b, model, batch);
      }, 1e-4);
      bool ok = r.max_rel_error < 1e-4;
      std::cout << json{{"checked", r.checked}, {"max_rel_error", r.max_rel_error},
                        {"worst_parameter", r.worst_parameter}, {"pass", ok}}
                       .dump(2)
                << "\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
