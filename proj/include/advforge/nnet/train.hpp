// Copyright 2026 The advforge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <numeric>
#include <optional>

#include "advforge/nnet/classifier.hpp"
#include "advforge/nnet/generator.hpp"

namespace advforge::nnet {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  bool early_stopping = true;  // false: run every epoch, keep the last weights

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error("learning_rate must be a finite value >= 0");
    }
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (patience < 1) throw Error("patience must be >= 1");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_dev_loss = 0.0;
};

// Minibatch Adam with early stopping on dev loss. `loss(i, grads)` returns
// the loss of training item i and accumulates its gradient when grads is
// non-null; `dev_loss(j)` scores dev item j. The parameters of the best dev
// epoch (epoch 0 included) are restored on return unless early stopping is
// off.
template <class Model, class TrainLoss, class DevLoss>
TrainLog fit(Model& model, std::size_t n_train, std::size_t n_dev, TrainLoss&& loss,
             DevLoss&& dev_loss, const TrainConfig& config) {
  config.validate();
  if (n_train == 0) throw Error("empty training set");
  if (n_dev == 0) throw Error("empty dev set");
  auto mean_dev = [&] {
    double s = 0.0;
    for (std::size_t j = 0; j < n_dev; ++j) s += dev_loss(j);
    return s / static_cast<double>(n_dev);
  };
  auto mean_train = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) s += loss(i, nullptr);
    return s / static_cast<double>(n_train);
  };

  TrainLog log;
  Adam opt(model.params(), config.learning_rate);
  Rng rng(config.seed);
  ParamSet grads = model.params().zeros_like();
  ParamSet best = model.params();
  double best_dev = mean_dev();
  log.epochs.push_back({0, mean_train(), best_dev});
  std::size_t since_best = 0;
  std::vector<std::size_t> order(n_train);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + config.batch_size);
      grads.set_zero();
      for (std::size_t b = start; b < end; ++b) epoch_loss += loss(order[b], &grads);
      grads.scale(1.0 / static_cast<double>(end - start));
      opt.step(model.params(), grads);
      if (!model.params().all_finite()) {
        throw Error("training diverged at epoch " + std::to_string(epoch) +
                    ": non-finite parameters");
      }
    }
    epoch_loss /= static_cast<double>(n_train);
    if (!std::isfinite(epoch_loss)) {
      throw Error("training diverged at epoch " + std::to_string(epoch) + ": loss is NaN");
    }
    const double dev = mean_dev();
    log.epochs.push_back({epoch, epoch_loss, dev});
    if (dev < best_dev) {
      best_dev = dev;
      best = model.params();
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience && config.early_stopping) {
      break;
    }
  }
  log.best_dev_loss = best_dev;
  if (config.early_stopping) model.params() = std::move(best);
  return log;
}

struct ClassifierTrainResult {
  ClassifierModel model;
  TrainLog log;
};

// Continues training from `model` (used for both fresh training and
// finetuning).
inline TrainLog fit_classifier(ClassifierModel& model, const Dataset& train,
                               const Dataset& dev, const TrainConfig& config) {
  if (train.empty() || dev.empty()) throw Error("train and dev must be non-empty");
  if (train.num_classes() != dev.num_classes() ||
      train.num_classes() != model.dims().num_classes) {
    throw Error("train/dev/model class counts differ");
  }
  std::vector<TokenSequence> tr, dv;
  for (const auto& ex : train.examples) tr.push_back(classifier_input(ex));
  for (const auto& ex : dev.examples) dv.push_back(classifier_input(ex));
  return fit(
      model, tr.size(), dv.size(),
      [&](std::size_t i, ParamSet* g) {
        return model.loss_and_grad(tr[i].ids, train.examples[i].gold_label, g);
      },
      [&](std::size_t j) {
        return model.loss_and_grad(dv[j].ids, dev.examples[j].gold_label, nullptr);
      },
      config);
}

inline ClassifierTrainResult train_classifier(const Dataset& train, const Dataset& dev,
                                              const ClassifierDims& dims,
                                              const TrainConfig& config) {
  ClassifierTrainResult r;
  r.model = ClassifierModel::init(dims, derive_seed(config.seed, "classifier.init"));
  TrainConfig c = config;
  c.seed = derive_seed(config.seed, "classifier.shuffle");
  r.log = fit_classifier(r.model, train, dev, c);
  return r;
}

// One generator training item: ids plus the mask of predicted positions.
struct LmItem {
  std::string source;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> predict_mask;  // empty = all positions
};

struct GeneratorTrainResult {
  GeneratorModel model;
  TrainLog log;
};

inline GeneratorTrainResult train_generator(const std::vector<LmItem>& train,
                                            const std::vector<LmItem>& dev,
                                            const GeneratorDims& dims,
                                            const TrainConfig& config) {
  for (const auto* set : {&train, &dev}) {
    for (const auto& item : *set) {
      if (item.ids.size() > dims.max_ctx) {
        throw Error("prompt for example " + item.source + " has length " +
                    std::to_string(item.ids.size()) + " > max_ctx " +
                    std::to_string(dims.max_ctx));
      }
      if (item.ids.size() < 2) {
        throw Error("prompt for example " + item.source + " is shorter than 2 tokens");
      }
    }
  }
  GeneratorTrainResult r;
  r.model = GeneratorModel::init(dims, derive_seed(config.seed, "generator.init"));
  TrainConfig c = config;
  c.seed = derive_seed(config.seed, "generator.shuffle");
  r.log = fit(
      r.model, train.size(), dev.size(),
      [&](std::size_t i, ParamSet* g) {
        return r.model.loss_and_grad(train[i].ids, train[i].predict_mask, g);
      },
      [&](std::size_t j) {
        return r.model.loss_and_grad(dev[j].ids, dev[j].predict_mask, nullptr);
      },
      c);
  return r;
}

}  // namespace advforge::nnet
