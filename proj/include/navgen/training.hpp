#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "navgen/neural.hpp"

namespace navgen::nn {

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without validation data
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  int patience = 5;
  double clip = 5.0;
  std::uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainReport {
  int epochs_run = 0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::vector<EpochLog> history;
};

struct FitProblem {
  std::size_t examples = 0;
  // Mean loss over the examples with the given indices, built on `g`.
  std::function<Var(Graph& g, const std::vector<std::size_t>& batch)> batch_loss;
  // Weight of a batch when averaging epoch losses (e.g. its token count).
  std::function<double(const std::vector<std::size_t>& batch)> batch_weight;
  // Validation loss; empty disables early stopping.
  std::function<double()> validate;
};

// Adam over shuffled mini-batches with gradient clipping. With validation the
// best epoch's parameters are restored and training stops after `patience`
// epochs without improvement. Throws TrainingError on a non-finite loss or
// gradient.
TrainReport fit(ParameterStore& params, const FitProblem& problem, const TrainConfig& cfg);

}  // namespace navgen::nn
