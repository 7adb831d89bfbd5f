#include "navgen/lm.hpp"

#include <cmath>

#include "navgen/checkpoint.hpp"
#include "navgen/error.hpp"

namespace navgen::lm {

using nn::Graph;
using nn::Matrix;
using nn::Var;

nlohmann::json to_json(const LmConfig& cfg) {
  return {{"embedding", cfg.embedding},
          {"hidden", cfg.hidden},
          {"layers", cfg.layers},
          {"flag_threshold", cfg.flag_threshold}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig cfg;
  cfg.embedding = j.value("embedding", cfg.embedding);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.flag_threshold = j.value("flag_threshold", cfg.flag_threshold);
  return cfg;
}

LanguageModel::LanguageModel(Vocab vocab, LmConfig cfg, std::uint64_t seed) : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.embedding <= 0 || cfg_.hidden <= 0 || cfg_.layers <= 0) {
    throw ShapeError("language model dimensions must be positive");
  }
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  params_.add("embedding", v, cfg_.embedding);
  for (int l = 0; l < cfg_.layers; ++l) {
    nn::add_lstm_layer(params_, "lstm." + std::to_string(l), l == 0 ? cfg_.embedding : cfg_.hidden, cfg_.hidden);
  }
  params_.add("output.weight", cfg_.hidden, v);
  params_.add("output.b", 1, v);
  nn::initialize(params_, seed);
  bind_layers();
}

LanguageModel::LanguageModel(const LanguageModel& other)
    : cfg_(other.cfg_), vocab_(other.vocab_), params_(other.params_) {
  bind_layers();
}

LanguageModel& LanguageModel::operator=(const LanguageModel& other) {
  if (this == &other) return *this;
  cfg_ = other.cfg_;
  vocab_ = other.vocab_;
  params_ = other.params_;
  bind_layers();
  return *this;
}

void LanguageModel::bind_layers() {
  layers_.clear();
  for (int l = 0; l < cfg_.layers; ++l) {
    std::string prefix = "lstm." + std::to_string(l);
    nn::LstmLayer layer;
    layer.weight = &params_.get(prefix + ".weight");
    layer.bias = &params_.get(prefix + ".bias");
    layer.hidden = cfg_.hidden;
    layer.input = layer.weight->value.rows() - cfg_.hidden;
    layers_.push_back(layer);
  }
}

namespace {

// Sum of per-token NLL over the batch and the number of scored tokens.
std::pair<Var, double> summed_nll(Graph& g, LanguageModel& model, const std::vector<Sentence>& batch) {
  if (batch.empty()) throw ShapeError("language model: empty batch");
  auto& p = model.params();
  Var emb = g.param(p.get("embedding"));
  Var out_w = g.param(p.get("output.weight"));
  Var out_b = g.param(p.get("output.b"));
  std::vector<Var> weights, biases;
  for (const auto& layer : model.layers()) {
    weights.push_back(g.param(*layer.weight));
    biases.push_back(g.param(*layer.bias));
  }
  std::vector<std::vector<int>> ids;
  std::size_t steps = 0;
  for (const auto& s : batch) {
    auto e = model.vocab().encode(s);
    e.push_back(Vocab::kEos);
    steps = std::max(steps, e.size());
    ids.push_back(std::move(e));
  }
  const auto rows = static_cast<Eigen::Index>(batch.size());
  std::vector<Var> h, c;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    h.push_back(g.constant(Matrix::Zero(rows, model.config().hidden)));
    c.push_back(g.constant(Matrix::Zero(rows, model.config().hidden)));
  }
  Var total;
  double tokens = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> input(batch.size(), Vocab::kBos), gold(batch.size(), Vocab::kPad);
    std::vector<double> w(batch.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (t > 0 && t - 1 < ids[i].size()) input[i] = ids[i][t - 1];
      if (t < ids[i].size()) {
        gold[i] = ids[i][t];
        w[i] = 1.0;
        tokens += 1.0;
      }
    }
    // Rows past their sentence's end run on padding; their weight is zero and
    // nothing later reads their state.
    Var x = g.rows(emb, input);
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
      auto o = nn::lstm_step(g, x, h[l], c[l], weights[l], biases[l], model.layers()[l]);
      h[l] = o.h;
      c[l] = o.c;
      x = o.h;
    }
    Var logits = g.add_row(g.matmul(x, out_w), out_b);
    Var ce = g.cross_entropy(logits, gold, w);
    total = t == 0 ? ce : g.add(total, ce);
  }
  return {total, tokens};
}

}  // namespace

Var batch_nll(Graph& g, LanguageModel& model, const std::vector<Sentence>& batch) {
  auto [total, tokens] = summed_nll(g, model, batch);
  return g.scale(total, 1.0 / tokens);
}

std::pair<double, std::size_t> sentence_nll(const LanguageModel& model, const Sentence& sentence) {
  Graph g(false);
  auto [total, tokens] = summed_nll(g, const_cast<LanguageModel&>(model), {sentence});
  return {g.value(total)(0, 0), static_cast<std::size_t>(tokens)};
}

double perplexity(const LanguageModel& model, const Sentence& sentence) {
  auto [nll, n] = sentence_nll(model, sentence);
  return std::exp(nll / static_cast<double>(n));
}

double corpus_perplexity(const LanguageModel& model, const std::vector<Sentence>& sentences) {
  if (sentences.empty()) throw Error("corpus perplexity of an empty corpus");
  double nll = 0.0;
  std::size_t n = 0;
  for (std::size_t start = 0; start < sentences.size(); start += 64) {
    std::vector<Sentence> batch(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                                sentences.begin() + static_cast<std::ptrdiff_t>(std::min(sentences.size(), start + 64)));
    Graph g(false);
    auto [total, tokens] = summed_nll(g, const_cast<LanguageModel&>(model), batch);
    nll += g.value(total)(0, 0);
    n += static_cast<std::size_t>(tokens);
  }
  return std::exp(nll / static_cast<double>(n));
}

nn::TrainReport train_lm(LanguageModel& model, const std::vector<Sentence>& train_data,
                         const std::vector<Sentence>& val_data, const nn::TrainConfig& cfg) {
  nn::FitProblem problem;
  problem.examples = train_data.size();
  problem.batch_loss = [&](Graph& g, const std::vector<std::size_t>& idx) {
    std::vector<Sentence> batch;
    for (auto i : idx) batch.push_back(train_data[i]);
    return batch_nll(g, model, batch);
  };
  problem.batch_weight = [&](const std::vector<std::size_t>& idx) {
    double n = 0.0;
    for (auto i : idx) n += static_cast<double>(train_data[i].size() + 1);
    return n;
  };
  if (!val_data.empty()) problem.validate = [&] { return std::log(corpus_perplexity(model, val_data)); };
  return nn::fit(model.params(), problem, cfg);
}

Ranking rank(const LanguageModel& model, const std::vector<Sentence>& candidates) {
  if (candidates.empty()) throw Error("rank: no candidates");
  Ranking r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double p = perplexity(model, candidates[i]);
    r.perplexities.push_back(p);
    r.flagged.push_back(p > model.config().flag_threshold);
    if (p < r.perplexities[r.best]) r.best = i;
  }
  return r;
}

std::string sequence_instruction(const std::vector<Sentence>& sentences) {
  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0) out += ". ";
    for (std::size_t w = 0; w < sentences[i].size(); ++w) {
      if (w > 0) out += ' ';
      out += sentences[i][w];
    }
  }
  return out;
}

double unigram_perplexity(const Vocab& vocab, const std::vector<Sentence>& train, const std::vector<Sentence>& test) {
  std::vector<double> counts(vocab.size(), 1.0);
  double total = static_cast<double>(vocab.size());
  for (const auto& s : train) {
    for (int id : vocab.encode(s)) {
      counts[static_cast<std::size_t>(id)] += 1.0;
      total += 1.0;
    }
    counts[Vocab::kEos] += 1.0;
    total += 1.0;
  }
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : test) {
    auto ids = vocab.encode(s);
    ids.push_back(Vocab::kEos);
    for (int id : ids) {
      nll -= std::log(counts[static_cast<std::size_t>(id)] / total);
      ++n;
    }
  }
  return std::exp(nll / static_cast<double>(n));
}

void save_lm(const std::filesystem::path& path, const LanguageModel& model) {
  nn::save_checkpoint(path, "lm", model.params(),
                      {{"config", to_json(model.config())}, {"vocab", model.vocab().to_json()}});
}

LanguageModel load_lm(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path, "lm");
  try {
    LanguageModel model(Vocab::from_json(ck.metadata.at("vocab")), lm_config_from_json(ck.metadata.at("config")));
    nn::tensors_from_json(ck.tensors, model.params());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace navgen::lm
