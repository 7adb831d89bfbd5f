#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/neural.hpp"
#include "navgen/training.hpp"
#include "navgen/vocab.hpp"

namespace navgen::lm {

using Sentence = std::vector<std::string>;

struct LmConfig {
  int embedding = 128;
  int hidden = 128;
  int layers = 2;
  double flag_threshold = 95.0;  // perplexities above this are flagged, not rejected
};

nlohmann::json to_json(const LmConfig& cfg);
LmConfig lm_config_from_json(const nlohmann::json& j);

class LanguageModel {
 public:
  explicit LanguageModel(Vocab vocab, LmConfig cfg = {}, std::uint64_t seed = 0);
  LanguageModel(const LanguageModel& other);
  LanguageModel& operator=(const LanguageModel& other);

  const LmConfig& config() const { return cfg_; }
  LmConfig& config() { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const std::vector<nn::LstmLayer>& layers() const { return layers_; }

 private:
  void bind_layers();

  LmConfig cfg_;
  Vocab vocab_;
  nn::ParameterStore params_;
  std::vector<nn::LstmLayer> layers_;
};

// Mean per-token next-word NLL over the batch; each sentence is read after BOS
// and predicts its words followed by EOS.
nn::Var batch_nll(nn::Graph& g, LanguageModel& model, const std::vector<Sentence>& batch);

// Summed NLL and token count (EOS included) of one sentence.
std::pair<double, std::size_t> sentence_nll(const LanguageModel& model, const Sentence& sentence);

// exp(mean per-token NLL including EOS).
double perplexity(const LanguageModel& model, const Sentence& sentence);
// Pooled over sentences.
double corpus_perplexity(const LanguageModel& model, const std::vector<Sentence>& sentences);

nn::TrainReport train_lm(LanguageModel& model, const std::vector<Sentence>& train_data,
                         const std::vector<Sentence>& val_data, const nn::TrainConfig& cfg);

struct Ranking {
  std::size_t best = 0;
  std::vector<double> perplexities;
  std::vector<bool> flagged;  // perplexity above the flag threshold
};

// Arg min perplexity, first candidate on ties. Throws Error on an empty list.
Ranking rank(const LanguageModel& model, const std::vector<Sentence>& candidates);

// Sentences joined with ". " in the given order.
std::string sequence_instruction(const std::vector<Sentence>& sentences);

// Add-one smoothed unigram perplexity (EOS included) of `test` under counts
// from `train` over `vocab`.
double unigram_perplexity(const Vocab& vocab, const std::vector<Sentence>& train, const std::vector<Sentence>& test);

void save_lm(const std::filesystem::path& path, const LanguageModel& model);
LanguageModel load_lm(const std::filesystem::path& path);

}  // namespace navgen::lm
