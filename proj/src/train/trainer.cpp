#include "cdyn/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "cdyn/errors.hpp"

namespace cdyn {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  for (double v : lr_grid)
    if (!(v > 0.0)) throw ConfigError("train.lr_grid entries must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw ConfigError("train.warmup_frac must lie in [0, 1)");
}

Json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},         {"lr_grid", c.lr_grid},       {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},   {"beta2", c.beta2},           {"batch_size", c.batch_size},
          {"epochs", c.epochs}, {"warmup_frac", c.warmup_frac}, {"grad_clip", c.grad_clip},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"lr", "lr_grid", "weight_decay", "beta1", "beta2", "batch_size", "epochs",
                      "warmup_frac", "grad_clip", "seed"},
                     "train");
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    if (j.contains("lr_grid")) c.lr_grid = j.at("lr_grid").get<std::vector<double>>();
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

Json to_json(const RunConfig& c) {
  return {{"task", to_json(c.task)}, {"model", to_json(c.model)}, {"train", to_json(c.train)}};
}

RunConfig run_config_from_json(const Json& j) {
  require_known_keys(j, {"task", "model", "train"}, "config");
  if (!j.contains("task") || !j.contains("model")) throw ConfigError("config: task and model are required");
  RunConfig c;
  c.task = task_spec_from_json(j.at("task"));
  Json model = j.at("model");
  model["vocab_size"] = c.task.total_vocab();
  if (!model.contains("max_len")) model["max_len"] = c.task.seq_len;
  c.model = model_config_from_json(model);
  if (c.model.positional_embedding && c.model.max_len < c.task.seq_len)
    throw ConfigError("model.max_len is shorter than task.seq_len");
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  return c;
}

double batch_loss_and_grad(const Model& model, std::span<const TaskExample> batch, ParamSet* grad) {
  if (batch.empty()) throw ConfigError("batch_loss_and_grad: empty batch");
  std::size_t count = 0;
  for (const auto& ex : batch)
    for (auto t : ex.targets) count += t >= 0;
  if (count == 0) return 0.0;
  const double norm = static_cast<double>(count);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    double l;
    try {
      l = model.loss_and_grad(batch[b], norm, grad);
    } catch (const OverflowError& e) {
      // The engine reports a time index; callers want the batch position.
      throw OverflowError(std::string(e.what()) + " (batch index " + std::to_string(b) + ")", long(b));
    }
    if (!std::isfinite(l))
      throw OverflowError("non-finite loss at batch index " + std::to_string(b), long(b));
    total += l;
  }
  return total / norm;
}

double exact_match_accuracy(const std::vector<TaskExample>& examples,
                            const std::function<std::vector<std::int32_t>(const TaskExample&)>& predict) {
  std::size_t hit = 0, total = 0;
  for (const auto& ex : examples) {
    const auto pred = predict(ex);
    for (std::size_t t = 0; t < ex.targets.size(); ++t) {
      if (ex.targets[t] < 0) continue;
      ++total;
      hit += pred.at(t) == ex.targets[t];
    }
  }
  return total == 0 ? 0.0 : double(hit) / double(total);
}

std::vector<std::int32_t> argmax_predictions(const Model& model, const TaskExample& ex) {
  const Matrix lg = model.logits(ex.tokens);
  std::vector<std::int32_t> out(lg.rows());
  for (std::size_t t = 0; t < lg.rows(); ++t) {
    const auto r = lg.row(t);
    out[t] = static_cast<std::int32_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double evaluate(const Model& model, const std::vector<TaskExample>& examples) {
  return exact_match_accuracy(examples, [&](const TaskExample& ex) { return argmax_predictions(model, ex); });
}

TrainResult train_loop(const ModelConfig& model_cfg, const TrainConfig& cfg, const TaskInstance& data,
                       double lr, const EpochCallback& on_epoch) {
  cfg.validate();
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (data.train.empty()) throw ConfigError("train: empty training split");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult res;
  res.lr = lr;
  Model model = Model::init(model_cfg, sub_seed(cfg.seed, 1));
  AdamW opt(model.params(), {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(sub_seed(cfg.seed, 2));

  const std::size_t batches = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  auto record = [&](EpochMetrics m) {
    res.history.push_back(m);
    if (res.history.size() == 1 || m.eval_acc > res.best_eval_acc) {
      res.best_eval_acc = m.eval_acc;
      res.best_epoch = m.epoch;
      res.best = model;
    }
    if (on_epoch) on_epoch(m);
  };

  try {
    double init_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, data.train.size());
      init_loss += batch_loss_and_grad(model, std::span(data.train).subspan(lo, hi - lo), nullptr) *
                   double(hi - lo);
    }
    record({0, init_loss / double(data.train.size()), evaluate(model, data.eval), 0.0});
  } catch (const Error& e) {
    res.failure = std::string("initialization: ") + e.what();
  }

  std::size_t step = 0;
  std::vector<TaskExample> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !res.failure; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    double last_lr = 0.0;
    for (std::size_t b = 0; b < batches && !res.failure; ++b) {
      batch.clear();
      for (std::size_t k = b * cfg.batch_size; k < std::min((b + 1) * cfg.batch_size, order.size()); ++k)
        batch.push_back(data.train[order[k]]);
      try {
        ParamSet grad = model.params().zeros_like();
        const double l = batch_loss_and_grad(model, batch, &grad);
        clip_grad_norm(grad, cfg.grad_clip);
        last_lr = cosine_lr(lr, step++, total_steps, cfg.warmup_frac);
        opt.step(model.params(), grad, last_lr);
        for (const auto& [name, p] : model.params())
          if (!p.all_finite()) throw OverflowError("parameter '" + name + "' became non-finite", long(b));
        epoch_loss += l * double(batch.size());
      } catch (const Error& e) {
        res.failure = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + e.what();
      }
    }
    if (res.failure) break;
    try {
      record({epoch, epoch_loss / double(data.train.size()), evaluate(model, data.eval), last_lr});
    } catch (const Error& e) {
      res.failure = "epoch " + std::to_string(epoch) + " eval: " + e.what();
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<TrainResult> train_sweep(const RunConfig& run, const TaskInstance& data,
                                     const EpochCallback& on_epoch) {
  std::vector<double> grid = run.train.lr_grid;
  if (grid.empty()) grid.push_back(run.train.lr);
  std::vector<TrainResult> out;
  for (double lr : grid) out.push_back(train_loop(run.model, run.train, data, lr, on_epoch));
  return out;
}

void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& history) {
  os << "epoch,loss,eval_acc\n";
  os.precision(10);
  for (const auto& m : history) os << m.epoch << ',' << m.loss << ',' << m.eval_acc << '\n';
}

Json to_json(const TrainResult& r) {
  Json hist = Json::array();
  for (const auto& m : r.history)
    hist.push_back({{"epoch", m.epoch}, {"loss", m.loss}, {"eval_acc", m.eval_acc}, {"lr", m.lr}});
  Json j = {{"lr", r.lr},
            {"best_eval_acc", r.best_eval_acc},
            {"best_epoch", r.best_epoch},
            {"seconds", r.seconds},
            {"history", hist}};
  j["failure"] = r.failure ? Json(*r.failure) : Json(nullptr);
  return j;
}

}  // namespace cdyn
