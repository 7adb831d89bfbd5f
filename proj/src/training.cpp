#include "navgen/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "navgen/error.hpp"

namespace navgen::nn {

TrainReport fit(ParameterStore& params, const FitProblem& problem, const TrainConfig& cfg) {
  if (problem.examples == 0) throw TrainingError("no training examples");
  if (cfg.batch_size <= 0) throw TrainingError("batch size must be positive");
  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  AdamState adam;
  adam.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(problem.examples);
  std::iota(order.begin(), order.end(), 0);
  ParameterStore best = params;
  int stale = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0, weight = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += bs, ++batch_no) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      params.zero_grad();
      Graph g;
      Var loss = problem.batch_loss(g, batch);
      double value = g.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << value << " at epoch " << epoch << ", batch " << batch_no << " of "
            << batch.size() << " examples (first index " << batch.front() << ")";
        throw TrainingError(msg.str());
      }
      g.backward(loss);
      double norm = params.clip_grad_norm(cfg.clip);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      }
      adam_step(params, adam);
      double w = problem.batch_weight ? problem.batch_weight(batch) : static_cast<double>(batch.size());
      sum += value * w;
      weight += w;
    }
    EpochLog log{epoch, sum / weight, std::numeric_limits<double>::quiet_NaN()};
    report.epochs_run = epoch;
    report.final_train_loss = log.train_loss;
    if (problem.validate) {
      log.val_loss = problem.validate();
      if (log.val_loss < report.best_val_loss) {
        report.best_val_loss = log.val_loss;
        best = params;
        stale = 0;
      } else {
        ++stale;
      }
    }
    report.history.push_back(log);
    if (cfg.on_epoch) cfg.on_epoch(log);
    if (problem.validate && stale >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }
  if (problem.validate) {
    for (auto* p : params.all()) p->value = best.get(p->name).value;
  }
  return report;
}

}  // namespace navgen::nn
