#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdyn/tasks/tasks.hpp"
#include "cdyn/train/model.hpp"
#include "cdyn/train/optim.hpp"

namespace cdyn {

struct TrainConfig {
  double lr = 3e-3;
  std::vector<double> lr_grid;  // non-empty: train_sweep runs one model per value
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;  // 0 yields the initialization metrics only
  double warmup_frac = 0.05;
  double grad_clip = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

/// Everything a `train` run needs. The model's vocabulary is taken from the task.
struct RunConfig {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

/// Mean cross-entropy over the supervised positions of the batch, with its
/// gradient accumulated into `grad`. Throws OverflowError carrying the batch
/// position of the first example whose loss is not finite.
double batch_loss_and_grad(const Model& model, std::span<const TaskExample> batch, ParamSet* grad);

/// Exact-match accuracy over supervised positions.
double exact_match_accuracy(const std::vector<TaskExample>& examples,
                            const std::function<std::vector<std::int32_t>(const TaskExample&)>& predict);
std::vector<std::int32_t> argmax_predictions(const Model& model, const TaskExample& ex);
double evaluate(const Model& model, const std::vector<TaskExample>& examples);

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 = initialization
  double loss = 0.0;      // mean train loss over the epoch
  double eval_acc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  double lr = 0.0;
  std::vector<EpochMetrics> history;
  double best_eval_acc = 0.0;
  std::size_t best_epoch = 0;
  std::optional<std::string> failure;  // divergence or stability violation
  std::optional<Model> best;           // best-eval checkpoint
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train_loop(const ModelConfig& model_cfg, const TrainConfig& cfg, const TaskInstance& data,
                       double lr, const EpochCallback& on_epoch = {});
/// One run per lr in cfg.lr_grid (or cfg.lr alone).
std::vector<TrainResult> train_sweep(const RunConfig& run, const TaskInstance& data,
                                     const EpochCallback& on_epoch = {});

void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& history);
Json to_json(const TrainResult& r);

}  // namespace cdyn
