#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/content_select.hpp"
#include "navgen/corpus.hpp"
#include "navgen/lm.hpp"
#include "navgen/metrics.hpp"
#include "navgen/realize.hpp"

namespace navgen::pipeline {

struct PipelineConfig {
  std::filesystem::path dataset_dir = "dataset";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::uint64_t seed = 0;

  int k_c = 100;          // structures retrieved per segment
  double p_t = 0.99;      // planner likelihood threshold
  int k_e = 128;          // embedding size
  double l_t = 95.0;      // perplexity flag threshold
  int beam_width = 2;
  int layers = 2;
  int hidden = 128;
  int clusters = 5;

  // Synthetic data.
  int maps = 3;
  std::size_t demos = 1200;
  int max_legs = 3;

  // Training.
  int seq2seq_epochs = 30;
  int lm_epochs = 5;
  int batch_size = 32;
  double lr = 4e-3;
  int patience = 5;
  bool feed_previous_word = false;
  bool combinatorial_augmentation = false;  // rebind several attributes of one pair at once
  int irl_iters = 500;
  double irl_lr = 0.1;
  double irl_l2 = 1e-3;
};

nlohmann::json to_json(const PipelineConfig& cfg);
// Keys present in `j` override `base`; unknown keys throw Error.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

// ---- data ---------------------------------------------------------------------

// Generated maps and a synthetic corpus, written to cfg.dataset_dir.
corpus::Dataset prepare(const PipelineConfig& cfg);

struct PreparedPairs {
  // Augmented train/validation, plus repeated originals at their observed counts; raw test.
  std::vector<corpus::Pair> train, validation, test;
  std::vector<corpus::Pair> train_original;          // train before augmentation
  std::vector<std::string> warnings;
};
PreparedPairs prepare_pairs(const corpus::Dataset& data, const PipelineConfig& cfg,
                            const corpus::AugmentConfig& augment);
// Augments with cfg.combinatorial_augmentation and no pair limit.
PreparedPairs prepare_pairs(const corpus::Dataset& data, const PipelineConfig& cfg);

// Test pairs whose structure occurs in `train` but whose command does not;
// pass the training pairs before augmentation.
std::vector<corpus::Pair> heldout_recombinations(const std::vector<corpus::Pair>& train,
                                                 const std::vector<corpus::Pair>& test);

std::vector<realize::Example> to_examples(const std::vector<corpus::Pair>& pairs);

std::vector<select::IrlDemo> irl_demos(const corpus::Dataset& data, const std::vector<corpus::Demonstration>& demos);

// ---- training phases ------------------------------------------------------------

select::IrlModel train_irl_phase(const corpus::Dataset& data, const std::vector<corpus::Demonstration>& demos,
                                 const PipelineConfig& cfg, select::IrlReport* report = nullptr);

realize::Seq2SeqModel train_seq2seq_phase(const std::vector<corpus::Pair>& train, const std::vector<corpus::Pair>& val,
                                          const PipelineConfig& cfg, bool use_aligner = true,
                                          realize::TrainReport* report = nullptr);

lm::LanguageModel train_lm_phase(const std::vector<corpus::Words>& train, const std::vector<corpus::Words>& val,
                                 const PipelineConfig& cfg, realize::TrainReport* report = nullptr);

// Checkpoint files inside cfg.checkpoint_dir.
std::filesystem::path irl_checkpoint(const PipelineConfig& cfg);
std::filesystem::path seq2seq_checkpoint(const PipelineConfig& cfg, bool use_aligner = true);
std::filesystem::path lm_checkpoint(const PipelineConfig& cfg);

// Split `data`, train one phase on the training side and write its
// checkpoint; the LM trains on the augmented training instructions.
select::IrlReport run_train_irl(const corpus::Dataset& data, const PipelineConfig& cfg);
realize::TrainReport run_train_seq2seq(const corpus::Dataset& data, const PipelineConfig& cfg, bool use_aligner = true);
realize::TrainReport run_train_lm(const corpus::Dataset& data, const PipelineConfig& cfg);

// ---- generation -------------------------------------------------------------------

struct SegmentTrace {
  std::size_t index = 0;
  std::vector<std::string> structures;  // clustered candidate structures
  std::vector<std::string> commands;    // planner output
  bool fallback = false;                // planner output was empty
  std::string command;                  // command of the chosen sentence
  std::vector<std::string> candidates;  // realized sentences
  std::vector<double> perplexities;
  std::string sentence;
  bool flagged = false;                 // chosen sentence above the perplexity threshold
};

struct Generation {
  std::string instruction;
  std::vector<SegmentTrace> segments;
  std::vector<std::string> notices;
};

struct Models {
  select::IrlModel irl;
  realize::Seq2SeqModel seq2seq;
  lm::LanguageModel lm;
};

// Throws CheckpointError naming the missing file.
Models load_models(const PipelineConfig& cfg, bool use_aligner = true);

// Shortest path, then per segment: context, MAP property vector, k-NN and
// clustering, planning (with a flagged fallback), realization and ranking.
// Throws PathError when the goal is unreachable.
Generation generate(const world::WorldMap& map, const world::Pose& start, const world::Pose& goal,
                    const Models& models, const PipelineConfig& cfg);
Generation generate_for_path(const world::WorldMap& map, const world::Path& path, const Models& models,
                             const PipelineConfig& cfg);

nlohmann::json to_json(const Generation& g);

// ---- evaluation ---------------------------------------------------------------------

struct Evaluation {
  metrics::BleuReport report;
  std::vector<corpus::Words> hypotheses;
};

// generate_candidates + LM ranking per pair (first candidate without an LM),
// scored against the pair's words.
Evaluation evaluate(const realize::Seq2SeqModel& seq2seq, const lm::LanguageModel* lm,
                    const std::vector<corpus::Pair>& pairs, int beam_width);

struct EvalSummary {
  Evaluation test;     // every test pair
  Evaluation heldout;  // test pairs that recombine training structures
};
// Loads the seq2seq and LM checkpoints and scores the test split.
EvalSummary run_evaluate(const corpus::Dataset& data, const PipelineConfig& cfg, bool use_aligner = true);

nlohmann::json to_json(const metrics::BleuReport& report);

// References scored against themselves.
Evaluation evaluate_references(const std::vector<corpus::Pair>& pairs);

// ---- figures ------------------------------------------------------------------------

// Map edges, objects and the path as a standalone SVG document. Every node on
// the path carries a `data-node="x,y"` marker.
std::string render_svg(const world::WorldMap& map, const world::Path& path);

}  // namespace navgen::pipeline
