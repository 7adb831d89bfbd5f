#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/neural.hpp"
#include "navgen/training.hpp"
#include "navgen/vocab.hpp"

namespace navgen::realize {

struct Seq2SeqConfig {
  int embedding = 128;
  int hidden = 128;
  int layers = 2;
  bool use_aligner = true;           // false: every step sees the last encoder state
  bool feed_previous_word = false;   // also feed the previous word's embedding to the decoder
  int max_length = 40;
};

nlohmann::json to_json(const Seq2SeqConfig& cfg);
Seq2SeqConfig seq2seq_config_from_json(const nlohmann::json& j);

class Seq2SeqModel {
 public:
  Seq2SeqModel(Vocab cas_vocab, Vocab word_vocab, Seq2SeqConfig cfg = {}, std::uint64_t seed = 0);

  const Seq2SeqConfig& config() const { return cfg_; }
  const Vocab& cas_vocab() const { return cas_vocab_; }
  const Vocab& word_vocab() const { return word_vocab_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const std::vector<nn::LstmLayer>& encoder_layers() const { return encoder_; }
  const std::vector<nn::LstmLayer>& decoder_layers() const { return decoder_; }

  // Layers hold pointers into the store, so copies rebind them.
  Seq2SeqModel(const Seq2SeqModel& other);
  Seq2SeqModel& operator=(const Seq2SeqModel& other);

 private:
  void bind_layers();

  Seq2SeqConfig cfg_;
  Vocab cas_vocab_;
  Vocab word_vocab_;
  nn::ParameterStore params_;
  std::vector<nn::LstmLayer> encoder_;
  std::vector<nn::LstmLayer> decoder_;
};

// ---- graph-level building blocks ------------------------------------------

// Parameters placed on one graph.
struct Bound {
  nn::Var cas_embedding, word_embedding;
  std::vector<nn::Var> enc_weight, enc_bias, dec_weight, dec_bias;
  nn::Var align_v, align_W, align_V;
  nn::Var out_L0, out_Ld, out_Lz;
};
Bound bind(nn::Graph& g, Seq2SeqModel& model);

// Batched encoding of right-padded sequences read in reverse. Step s holds
// token N_b - 1 - s of sequence b; steps past a sequence's end carry its state
// unchanged and are masked out of attention.
struct EncodedBatch {
  std::vector<nn::Var> annotations;  // per step, B x H (top layer)
  std::vector<nn::Var> projected;    // per step, annotations * V
  nn::Matrix mask;                   // B x S
  nn::Var last;                      // B x H top state after the whole sequence
  std::vector<int> lengths;
};
EncodedBatch encode_batch(nn::Graph& g, const Bound& b, const Seq2SeqModel& model,
                          const std::vector<std::vector<int>>& sources);

struct Attention {
  nn::Var weights;  // B x S, rows sum to one over unmasked steps
  nn::Var context;  // B x H
};
// beta_j = v . tanh(W d_prev + V h_j), weights = softmax(beta).
Attention attend(nn::Graph& g, const Bound& b, nn::Var d_prev, const EncodedBatch& enc);

struct DecoderState {
  std::vector<nn::Var> h, c;  // per layer, B x H
};
DecoderState initial_state(nn::Graph& g, const Seq2SeqModel& model, Eigen::Index batch);

struct DecodeStep {
  DecoderState state;
  nn::Var logits;   // B x |V|
  nn::Var weights;  // attention weights; id -1 without an aligner
};
// `prev_words` is read only when the model feeds previous words.
DecodeStep decode_step(nn::Graph& g, const Bound& b, const Seq2SeqModel& model, const EncodedBatch& enc,
                       const DecoderState& prev, const std::vector<int>& prev_words);

struct Example {
  std::vector<std::string> source;  // CAS tokens
  std::vector<std::string> target;  // words, without EOS
};

// Mean per-token negative log-likelihood (EOS included) under teacher forcing.
nn::Var batch_nll(nn::Graph& g, const Bound& b, const Seq2SeqModel& model, const std::vector<Example>& batch);

// ---- single-sequence inference --------------------------------------------

struct SourceEncoding {
  nn::Matrix annotations;  // N x H, original token order
  nn::Matrix last;         // 1 x H
};
// Throws ShapeError on an empty sequence.
SourceEncoding encode(const Seq2SeqModel& model, const std::vector<std::string>& source);

struct StateValues {
  std::vector<nn::Matrix> h, c;
};
StateValues initial_values(const Seq2SeqModel& model);

// Attention weights over the source positions for decoder top state d_prev.
Eigen::RowVectorXd align(const Seq2SeqModel& model, const nn::Matrix& d_prev, const SourceEncoding& src);

struct StepValues {
  StateValues state;
  Eigen::RowVectorXd probs;    // over the word vocabulary
  Eigen::RowVectorXd weights;  // over source positions; empty without an aligner
};
StepValues decode_step(const Seq2SeqModel& model, const SourceEncoding& src, const StateValues& prev, int prev_word);

// ---- training ---------------------------------------------------------------

using nn::EpochLog;
using nn::TrainConfig;
using nn::TrainReport;

// Mean per-token NLL over `data` (token-weighted across batches).
double mean_nll(Seq2SeqModel& model, const std::vector<Example>& data, int batch_size = 32);

// Adam on shuffled mini-batches. With validation data the parameters from the
// best validation epoch are restored and training stops after `patience`
// epochs without improvement. Throws TrainingError on a non-finite loss.
TrainReport train(Seq2SeqModel& model, const std::vector<Example>& train_data, const std::vector<Example>& val_data,
                  const TrainConfig& cfg);

// ---- search -----------------------------------------------------------------

struct Generation {
  std::vector<std::string> words;
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / number of emitted tokens (EOS included)
  bool truncated = false;
  std::vector<Eigen::RowVectorXd> alignment;  // one row per emitted token
};

Generation greedy(const Seq2SeqModel& model, const std::vector<std::string>& source);
// Finished hypotheses sorted by score, best first. Width 1 reproduces greedy.
std::vector<Generation> beam_search(const Seq2SeqModel& model, const std::vector<std::string>& source, int width);
// Greedy followed by the width-`width` beam, deduplicated by word sequence.
std::vector<Generation> generate_candidates(const Seq2SeqModel& model, const std::vector<std::string>& source,
                                            int width = 2);

// Attention weights of a teacher-forced pass over `words` followed by EOS:
// (|words| + 1) x N, rows in source order. Throws Error without an aligner.
nn::Matrix alignment_matrix(const Seq2SeqModel& model, const std::vector<std::string>& source,
                            const std::vector<std::string>& words);

// {"source": [...], "target": [... "<eos>"], "weights": [[...], ...]}.
nlohmann::json export_alignment(const Seq2SeqModel& model, const std::vector<std::string>& source,
                                const std::vector<std::string>& words);

// ---- persistence --------------------------------------------------------------

void save_seq2seq(const std::filesystem::path& path, const Seq2SeqModel& model);
Seq2SeqModel load_seq2seq(const std::filesystem::path& path);

}  // namespace navgen::realize
