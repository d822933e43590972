// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "dvx/dataset.hpp"
#include "dvx/model.hpp"

namespace dvx {

/// Mean multi-label binary cross-entropy from logits (stable form).
double multilabel_soft_margin_loss(const Tensor& logits, const Tensor& targets);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Decoupled-weight-decay Adam. Decay is skipped for BatchNorm gamma/beta and
/// all biases (the model marks those decay=false).
struct OptimState {
    struct Slot {
        Tensor m, v;
        bool decay = true;
    };
    std::map<std::string, Slot> slots;
    std::int64_t step = 0;
};

void adamw_step(Model& model, const ad::GradientMap& grads, OptimState& state,
                const AdamWConfig& cfg, double lr);

struct ScheduleConfig {
    double base_lr = 1e-3;
    int warmup_epochs = 5;
    int total_epochs = 40;
    double min_lr = 0.0;
};

/// Linear warmup from base_lr/100, then cosine annealing to min_lr.
double lr_schedule(int epoch, const ScheduleConfig& cfg);

struct EmaState {
    double decay = 0.999;
    std::map<std::string, Tensor> shadow;
};

void ema_init(EmaState& ema, Model& model);
/// shadow <- decay * shadow + (1 - decay) * params
void ema_update(EmaState& ema, Model& model);

struct TrainConfig {
    int batch_size = 32;
    ScheduleConfig schedule;
    AdamWConfig optimizer;
    double ema_decay = 0.999;
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_map_raw = 0.0;
    double val_map_ema = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_map = 0.0;
    bool best_is_ema = false;
    EmaState ema;
    // state captured at the best validation epoch
    std::map<std::string, Tensor> best_params;
    std::map<std::string, Tensor> best_buffers;
    std::map<std::string, Tensor> best_ema;
};

/// Writes a captured parameter/buffer snapshot back into a model.
void apply_state(Model& model, const std::map<std::string, Tensor>& params,
                 const std::map<std::string, Tensor>& buffers);

/// Deterministic given the seed: fixed shuffling stream, per-step EMA update,
/// per-epoch validation with raw and EMA weights. Aborts with a diagnostic
/// naming the batch index if the loss turns non-finite.
TrainResult train(Model& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg);

/// Eval-mode mAP over a dataset; `overrides` substitutes parameters (EMA).
double evaluate_map(Model& model, const std::vector<SamplePair>& data,
                    const std::map<std::string, Tensor>* overrides = nullptr,
                    std::vector<double>* per_class = nullptr);

std::string history_to_csv(const std::vector<EpochStats>& history);

/// Assembles (B,1,H,W) view tensors and (B,C,1,1) targets for a batch.
struct Batch {
    Tensor ol, sd, targets;
};
Batch make_batch(const std::vector<SamplePair>& data, const std::vector<int>& indices);

}  // namespace dvx
