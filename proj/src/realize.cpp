#include "navgen/realize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "navgen/checkpoint.hpp"
#include "navgen/error.hpp"

namespace navgen::realize {

using nn::Graph;
using nn::Matrix;
using nn::Var;

nlohmann::json to_json(const Seq2SeqConfig& cfg) {
  return {{"embedding", cfg.embedding},       {"hidden", cfg.hidden},
          {"layers", cfg.layers},             {"use_aligner", cfg.use_aligner},
          {"feed_previous_word", cfg.feed_previous_word}, {"max_length", cfg.max_length}};
}

Seq2SeqConfig seq2seq_config_from_json(const nlohmann::json& j) {
  Seq2SeqConfig cfg;
  cfg.embedding = j.value("embedding", cfg.embedding);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.use_aligner = j.value("use_aligner", cfg.use_aligner);
  cfg.feed_previous_word = j.value("feed_previous_word", cfg.feed_previous_word);
  cfg.max_length = j.value("max_length", cfg.max_length);
  return cfg;
}

// ---- model -----------------------------------------------------------------

Seq2SeqModel::Seq2SeqModel(Vocab cas_vocab, Vocab word_vocab, Seq2SeqConfig cfg, std::uint64_t seed)
    : cfg_(cfg), cas_vocab_(std::move(cas_vocab)), word_vocab_(std::move(word_vocab)) {
  if (cfg_.embedding <= 0 || cfg_.hidden <= 0 || cfg_.layers <= 0 || cfg_.max_length <= 0) {
    throw ShapeError("seq2seq dimensions must be positive");
  }
  const Eigen::Index e = cfg_.embedding, h = cfg_.hidden;
  const auto vc = static_cast<Eigen::Index>(cas_vocab_.size());
  const auto vw = static_cast<Eigen::Index>(word_vocab_.size());
  params_.add("cas_embedding", vc, e);
  params_.add("word_embedding", vw, e);
  for (int l = 0; l < cfg_.layers; ++l) nn::add_lstm_layer(params_, "encoder." + std::to_string(l), l == 0 ? e : h, h);
  const Eigen::Index dec_in = h + (cfg_.feed_previous_word ? e : 0);
  for (int l = 0; l < cfg_.layers; ++l) {
    nn::add_lstm_layer(params_, "decoder." + std::to_string(l), l == 0 ? dec_in : h, h);
  }
  if (cfg_.use_aligner) {
    params_.add("align.v", h, 1);
    params_.add("align.W", h, h);
    params_.add("align.V", h, h);
  }
  params_.add("output.L0", e, vw);
  params_.add("output.Ld", h, e);
  params_.add("output.Lz", h, e);
  nn::initialize(params_, seed);
  bind_layers();
}

Seq2SeqModel::Seq2SeqModel(const Seq2SeqModel& other)
    : cfg_(other.cfg_), cas_vocab_(other.cas_vocab_), word_vocab_(other.word_vocab_), params_(other.params_) {
  bind_layers();
}

Seq2SeqModel& Seq2SeqModel::operator=(const Seq2SeqModel& other) {
  if (this == &other) return *this;
  cfg_ = other.cfg_;
  cas_vocab_ = other.cas_vocab_;
  word_vocab_ = other.word_vocab_;
  params_ = other.params_;
  bind_layers();
  return *this;
}

void Seq2SeqModel::bind_layers() {
  encoder_.clear();
  decoder_.clear();
  for (const char* side : {"encoder", "decoder"}) {
    auto& layers = std::string(side) == "encoder" ? encoder_ : decoder_;
    for (int l = 0; l < cfg_.layers; ++l) {
      std::string prefix = std::string(side) + "." + std::to_string(l);
      nn::LstmLayer layer;
      layer.weight = &params_.get(prefix + ".weight");
      layer.bias = &params_.get(prefix + ".bias");
      layer.hidden = cfg_.hidden;
      layer.input = layer.weight->value.rows() - cfg_.hidden;
      layers.push_back(layer);
    }
  }
}

// ---- graph-level ---------------------------------------------------------------

Bound bind(Graph& g, Seq2SeqModel& model) {
  auto& p = model.params();
  Bound b;
  b.cas_embedding = g.param(p.get("cas_embedding"));
  b.word_embedding = g.param(p.get("word_embedding"));
  for (const auto& layer : model.encoder_layers()) {
    b.enc_weight.push_back(g.param(*layer.weight));
    b.enc_bias.push_back(g.param(*layer.bias));
  }
  for (const auto& layer : model.decoder_layers()) {
    b.dec_weight.push_back(g.param(*layer.weight));
    b.dec_bias.push_back(g.param(*layer.bias));
  }
  if (model.config().use_aligner) {
    b.align_v = g.param(p.get("align.v"));
    b.align_W = g.param(p.get("align.W"));
    b.align_V = g.param(p.get("align.V"));
  }
  b.out_L0 = g.param(p.get("output.L0"));
  b.out_Ld = g.param(p.get("output.Ld"));
  b.out_Lz = g.param(p.get("output.Lz"));
  return b;
}

namespace {

// mask * fresh + (1 - mask) * old, row-wise.
Var blend(Graph& g, const Matrix& mask, Var fresh, Var old) {
  Var m = g.constant(mask);
  Var inv = g.constant(Matrix::Ones(mask.rows(), 1) - mask);
  return g.add(g.mul_col(m, fresh), g.mul_col(inv, old));
}

}  // namespace

EncodedBatch encode_batch(Graph& g, const Bound& b, const Seq2SeqModel& model,
                          const std::vector<std::vector<int>>& sources) {
  if (sources.empty()) throw ShapeError("encode: empty batch");
  const auto batch = static_cast<Eigen::Index>(sources.size());
  const Eigen::Index hidden = model.config().hidden;
  EncodedBatch enc;
  std::size_t steps = 0;
  for (const auto& s : sources) {
    if (s.empty()) throw ShapeError("encode: empty source sequence");
    enc.lengths.push_back(static_cast<int>(s.size()));
    steps = std::max(steps, s.size());
  }
  enc.mask = Matrix::Zero(batch, static_cast<Eigen::Index>(steps));

  const auto& layers = model.encoder_layers();
  std::vector<Var> h, c;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h.push_back(g.constant(Matrix::Zero(batch, hidden)));
    c.push_back(g.constant(Matrix::Zero(batch, hidden)));
  }
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<int> ids(sources.size(), Vocab::kPad);
    Matrix live = Matrix::Zero(batch, 1);
    bool ragged = false;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto& src = sources[i];
      if (s < src.size()) {
        ids[i] = src[src.size() - 1 - s];
        live(static_cast<Eigen::Index>(i), 0) = 1.0;
        enc.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = 1.0;
      } else {
        ragged = true;
      }
    }
    Var x = g.rows(b.cas_embedding, ids);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto out = nn::lstm_step(g, x, h[l], c[l], b.enc_weight[l], b.enc_bias[l], layers[l]);
      if (ragged) {
        h[l] = blend(g, live, out.h, h[l]);
        c[l] = blend(g, live, out.c, c[l]);
      } else {
        h[l] = out.h;
        c[l] = out.c;
      }
      x = h[l];
    }
    enc.annotations.push_back(h.back());
    if (model.config().use_aligner) enc.projected.push_back(g.matmul(h.back(), b.align_V));
  }
  enc.last = h.back();
  return enc;
}

Attention attend(Graph& g, const Bound& b, Var d_prev, const EncodedBatch& enc) {
  if (b.align_v.id < 0) throw ShapeError("attend: model has no aligner");
  Var dw = g.matmul(d_prev, b.align_W);
  std::vector<Var> scores;
  scores.reserve(enc.annotations.size());
  for (Var proj : enc.projected) scores.push_back(g.matmul(g.tanh(g.add(dw, proj)), b.align_v));
  Attention a;
  a.weights = g.softmax_rows(g.concat_cols(scores), enc.mask);
  Var z;
  for (std::size_t j = 0; j < enc.annotations.size(); ++j) {
    Var term = g.mul_col(g.slice_cols(a.weights, static_cast<Eigen::Index>(j), 1), enc.annotations[j]);
    z = j == 0 ? term : g.add(z, term);
  }
  a.context = z;
  return a;
}

DecoderState initial_state(Graph& g, const Seq2SeqModel& model, Eigen::Index batch) {
  DecoderState s;
  for (int l = 0; l < model.config().layers; ++l) {
    s.h.push_back(g.constant(Matrix::Zero(batch, model.config().hidden)));
    s.c.push_back(g.constant(Matrix::Zero(batch, model.config().hidden)));
  }
  return s;
}

DecodeStep decode_step(Graph& g, const Bound& b, const Seq2SeqModel& model, const EncodedBatch& enc,
                       const DecoderState& prev, const std::vector<int>& prev_words) {
  DecodeStep out;
  Var z;
  if (model.config().use_aligner) {
    auto a = attend(g, b, prev.h.back(), enc);
    z = a.context;
    out.weights = a.weights;
  } else {
    z = enc.last;
  }
  Var x = z;
  if (model.config().feed_previous_word) {
    std::vector<Var> parts{z, g.rows(b.word_embedding, prev_words)};
    x = g.concat_cols(parts);
  }
  const auto& layers = model.decoder_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto o = nn::lstm_step(g, x, prev.h[l], prev.c[l], b.dec_weight[l], b.dec_bias[l], layers[l]);
    out.state.h.push_back(o.h);
    out.state.c.push_back(o.c);
    x = o.h;
  }
  Var deep = g.add(g.matmul(out.state.h.back(), b.out_Ld), g.matmul(z, b.out_Lz));
  out.logits = g.matmul(deep, b.out_L0);
  return out;
}

Var batch_nll(Graph& g, const Bound& b, const Seq2SeqModel& model, const std::vector<Example>& batch) {
  std::vector<std::vector<int>> sources, targets;
  std::size_t steps = 0;
  for (const auto& ex : batch) {
    sources.push_back(model.cas_vocab().encode(ex.source));
    auto t = model.word_vocab().encode(ex.target);
    t.push_back(Vocab::kEos);
    steps = std::max(steps, t.size());
    targets.push_back(std::move(t));
  }
  auto enc = encode_batch(g, b, model, sources);
  auto state = initial_state(g, model, static_cast<Eigen::Index>(batch.size()));
  double tokens = 0.0;
  Var total;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> prev(batch.size(), Vocab::kBos), gold(batch.size(), Vocab::kPad);
    std::vector<double> weight(batch.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (t > 0 && t - 1 < targets[i].size()) prev[i] = targets[i][t - 1];
      if (t < targets[i].size()) {
        gold[i] = targets[i][t];
        weight[i] = 1.0;
        tokens += 1.0;
      }
    }
    auto step = decode_step(g, b, model, enc, state, prev);
    Var ce = g.cross_entropy(step.logits, gold, weight);
    total = t == 0 ? ce : g.add(total, ce);
    state = step.state;
  }
  return g.scale(total, 1.0 / tokens);
}

// ---- single-sequence inference ------------------------------------------------

namespace {

// Graph without recording holding the bound parameters and one encoded source.
struct Session {
  Graph g{false};
  Bound b;
  EncodedBatch enc;

  Session(const Seq2SeqModel& model, const std::vector<std::string>& source) {
    if (source.empty()) throw ShapeError("encode: empty source sequence");
    b = bind(g, const_cast<Seq2SeqModel&>(model));
    enc = encode_batch(g, b, model, {model.cas_vocab().encode(source)});
  }

  Session(const Seq2SeqModel& model, const SourceEncoding& src) {
    b = bind(g, const_cast<Seq2SeqModel&>(model));
    const Eigen::Index n = src.annotations.rows();
    enc.mask = Matrix::Ones(1, n);
    enc.lengths = {static_cast<int>(n)};
    for (Eigen::Index j = 0; j < n; ++j) {
      Var a = g.constant(src.annotations.row(j));
      enc.annotations.push_back(a);
      if (model.config().use_aligner) enc.projected.push_back(g.matmul(a, b.align_V));
    }
    enc.last = g.constant(src.last);
  }
};

DecoderState constants(Graph& g, const StateValues& s) {
  DecoderState out;
  for (const auto& m : s.h) out.h.push_back(g.constant(m));
  for (const auto& m : s.c) out.c.push_back(g.constant(m));
  return out;
}

StateValues values(const Graph& g, const DecoderState& s) {
  StateValues out;
  for (Var v : s.h) out.h.push_back(g.value(v));
  for (Var v : s.c) out.c.push_back(g.value(v));
  return out;
}

Eigen::RowVectorXd log_softmax(const Matrix& logits) {
  Eigen::RowVectorXd row = logits.row(0);
  double mx = row.maxCoeff();
  double lse = mx + std::log((row.array() - mx).exp().sum());
  return row.array() - lse;
}

// Attention weights are kept in step order internally; step s is source
// position N - 1 - s.
Eigen::RowVectorXd source_order(const Matrix& step_weights) {
  const Eigen::Index n = step_weights.cols();
  Eigen::RowVectorXd out(n);
  for (Eigen::Index s = 0; s < n; ++s) out(n - 1 - s) = step_weights(0, s);
  return out;
}

bool selectable(int id) { return id != Vocab::kPad && id != Vocab::kBos; }

}  // namespace

SourceEncoding encode(const Seq2SeqModel& model, const std::vector<std::string>& source) {
  Session s(model, source);
  const Eigen::Index n = static_cast<Eigen::Index>(source.size());
  SourceEncoding out;
  out.annotations.resize(n, model.config().hidden);
  for (Eigen::Index step = 0; step < n; ++step) {
    out.annotations.row(n - 1 - step) = s.g.value(s.enc.annotations[static_cast<std::size_t>(step)]);
  }
  out.last = s.g.value(s.enc.last);
  return out;
}

StateValues initial_values(const Seq2SeqModel& model) {
  StateValues s;
  for (int l = 0; l < model.config().layers; ++l) {
    s.h.push_back(Matrix::Zero(1, model.config().hidden));
    s.c.push_back(Matrix::Zero(1, model.config().hidden));
  }
  return s;
}

Eigen::RowVectorXd align(const Seq2SeqModel& model, const Matrix& d_prev, const SourceEncoding& src) {
  Session s(model, src);
  auto a = attend(s.g, s.b, s.g.constant(d_prev), s.enc);
  return s.g.value(a.weights).row(0);
}

StepValues decode_step(const Seq2SeqModel& model, const SourceEncoding& src, const StateValues& prev, int prev_word) {
  Session s(model, src);
  auto step = decode_step(s.g, s.b, model, s.enc, constants(s.g, prev), {prev_word});
  StepValues out;
  out.state = values(s.g, step.state);
  out.probs = log_softmax(s.g.value(step.logits)).array().exp();
  if (step.weights.id >= 0) out.weights = s.g.value(step.weights).row(0);
  return out;
}

// ---- training -------------------------------------------------------------------

double mean_nll(Seq2SeqModel& model, const std::vector<Example>& data, int batch_size) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0, tokens = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Example> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                               data.begin() + static_cast<std::ptrdiff_t>(end));
    double n = 0.0;
    for (const auto& ex : batch) n += static_cast<double>(ex.target.size() + 1);
    Graph g(false);
    auto b = bind(g, model);
    sum += g.value(batch_nll(g, b, model, batch))(0, 0) * n;
    tokens += n;
  }
  return sum / tokens;
}

TrainReport train(Seq2SeqModel& model, const std::vector<Example>& train_data, const std::vector<Example>& val_data,
                  const TrainConfig& cfg) {
  nn::FitProblem problem;
  problem.examples = train_data.size();
  problem.batch_loss = [&](Graph& g, const std::vector<std::size_t>& idx) {
    std::vector<Example> batch;
    for (auto i : idx) batch.push_back(train_data[i]);
    auto b = bind(g, model);
    return batch_nll(g, b, model, batch);
  };
  problem.batch_weight = [&](const std::vector<std::size_t>& idx) {
    double n = 0.0;
    for (auto i : idx) n += static_cast<double>(train_data[i].target.size() + 1);
    return n;
  };
  if (!val_data.empty()) problem.validate = [&] { return mean_nll(model, val_data, cfg.batch_size); };
  return nn::fit(model.params(), problem, cfg);
}

// ---- search -----------------------------------------------------------------------

Generation greedy(const Seq2SeqModel& model, const std::vector<std::string>& source) {
  Session s(model, source);
  auto state = initial_state(s.g, model, 1);
  Generation gen;
  int prev = Vocab::kBos;
  std::vector<int> ids;
  for (int t = 0; t < model.config().max_length; ++t) {
    auto step = decode_step(s.g, s.b, model, s.enc, state, {prev});
    auto lp = log_softmax(s.g.value(step.logits));
    int best = -1;
    for (Eigen::Index w = 0; w < lp.size(); ++w) {
      if (selectable(static_cast<int>(w)) && (best < 0 || lp(w) > lp(best))) best = static_cast<int>(w);
    }
    gen.log_prob += lp(best);
    if (step.weights.id >= 0) gen.alignment.push_back(source_order(s.g.value(step.weights)));
    state = step.state;
    if (best == Vocab::kEos) {
      gen.score = gen.log_prob / static_cast<double>(t + 1);
      gen.words = model.word_vocab().decode(ids);
      return gen;
    }
    ids.push_back(best);
    prev = best;
  }
  gen.truncated = true;
  gen.score = gen.log_prob / static_cast<double>(model.config().max_length);
  gen.words = model.word_vocab().decode(ids);
  return gen;
}

std::vector<Generation> beam_search(const Seq2SeqModel& model, const std::vector<std::string>& source, int width) {
  if (width < 1) throw Error("beam width must be at least 1");
  Session s(model, source);
  struct Hyp {
    std::vector<int> ids;
    double log_prob = 0.0;
    DecoderState state;
    std::vector<Eigen::RowVectorXd> alignment;
  };
  struct Expansion {
    std::size_t hyp;
    int word;
    double log_prob;
  };
  auto finish = [&](const Hyp& h, std::size_t length, bool truncated) {
    Generation g;
    g.words = model.word_vocab().decode(h.ids);
    g.log_prob = h.log_prob;
    g.score = h.log_prob / static_cast<double>(length);
    g.truncated = truncated;
    g.alignment = h.alignment;
    return g;
  };

  std::vector<Hyp> live(1);
  live[0].state = initial_state(s.g, model, 1);
  std::vector<Generation> finished;
  for (int t = 0; t < model.config().max_length && !live.empty(); ++t) {
    std::vector<Expansion> expansions;
    std::vector<DecodeStep> steps;
    for (std::size_t i = 0; i < live.size(); ++i) {
      int prev = live[i].ids.empty() ? Vocab::kBos : live[i].ids.back();
      steps.push_back(decode_step(s.g, s.b, model, s.enc, live[i].state, {prev}));
      auto lp = log_softmax(s.g.value(steps.back().logits));
      for (Eigen::Index w = 0; w < lp.size(); ++w) {
        if (selectable(static_cast<int>(w))) expansions.push_back({i, static_cast<int>(w), live[i].log_prob + lp(w)});
      }
    }
    std::size_t keep = static_cast<std::size_t>(width) - finished.size();
    keep = std::min(keep, expansions.size());
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const Expansion& a, const Expansion& b) { return a.log_prob > b.log_prob; });
    std::vector<Hyp> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& e = expansions[k];
      Hyp h = live[e.hyp];
      h.log_prob = e.log_prob;
      h.state = steps[e.hyp].state;
      if (steps[e.hyp].weights.id >= 0) h.alignment.push_back(source_order(s.g.value(steps[e.hyp].weights)));
      if (e.word == Vocab::kEos) {
        finished.push_back(finish(h, h.ids.size() + 1, false));
      } else {
        h.ids.push_back(e.word);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (const auto& h : live) finished.push_back(finish(h, static_cast<std::size_t>(model.config().max_length), true));
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Generation& a, const Generation& b) { return a.score > b.score; });
  return finished;
}

std::vector<Generation> generate_candidates(const Seq2SeqModel& model, const std::vector<std::string>& source,
                                            int width) {
  std::vector<Generation> out{greedy(model, source)};
  for (auto& g : beam_search(model, source, width)) {
    bool seen = std::any_of(out.begin(), out.end(), [&](const Generation& o) { return o.words == g.words; });
    if (!seen) out.push_back(std::move(g));
  }
  return out;
}

Matrix alignment_matrix(const Seq2SeqModel& model, const std::vector<std::string>& source,
                        const std::vector<std::string>& words) {
  if (!model.config().use_aligner) throw Error("alignment export needs a model with an aligner");
  Session s(model, source);
  auto state = initial_state(s.g, model, 1);
  auto ids = model.word_vocab().encode(words);
  Matrix out(static_cast<Eigen::Index>(ids.size() + 1), static_cast<Eigen::Index>(source.size()));
  int prev = Vocab::kBos;
  for (std::size_t t = 0; t <= ids.size(); ++t) {
    auto step = decode_step(s.g, s.b, model, s.enc, state, {prev});
    out.row(static_cast<Eigen::Index>(t)) = source_order(s.g.value(step.weights));
    state = step.state;
    if (t < ids.size()) prev = ids[t];
  }
  return out;
}

nlohmann::json export_alignment(const Seq2SeqModel& model, const std::vector<std::string>& source,
                                const std::vector<std::string>& words) {
  Matrix m = alignment_matrix(model, source, words);
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(v);
  }
  std::vector<std::string> target = words;
  target.push_back(Vocab::specials()[Vocab::kEos]);
  return {{"source", source}, {"target", target}, {"weights", rows}};
}

// ---- persistence ----------------------------------------------------------------------

void save_seq2seq(const std::filesystem::path& path, const Seq2SeqModel& model) {
  nlohmann::json meta = {{"config", to_json(model.config())},
                         {"cas_vocab", model.cas_vocab().to_json()},
                         {"word_vocab", model.word_vocab().to_json()}};
  nn::save_checkpoint(path, "seq2seq", model.params(), meta);
}

Seq2SeqModel load_seq2seq(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path, "seq2seq");
  try {
    Seq2SeqModel model(Vocab::from_json(ck.metadata.at("cas_vocab")), Vocab::from_json(ck.metadata.at("word_vocab")),
                       seq2seq_config_from_json(ck.metadata.at("config")));
    nn::tensors_from_json(ck.tensors, model.params());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace navgen::realize
