// SPDX-License-Identifier: Apache-2.0
#include "dvx/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dvx/init.hpp"
#include "dvx/metrics.hpp"

namespace dvx {

double multilabel_soft_margin_loss(const Tensor& logits, const Tensor& targets) {
    ad::Tape t;
    return t.val(t.multilabel_soft_margin_loss(t.input(logits), targets)).data[0];
}

void adamw_step(Model& model, const ad::GradientMap& grads, OptimState& state,
                const AdamWConfig& cfg, double lr) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    model.for_each_param([&](const std::string& name, Tensor& param, bool decay) {
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw std::runtime_error("adamw_step: missing gradient for " + name);
        }
        const Tensor& g = git->second;
        auto [it, fresh] = state.slots.try_emplace(name);
        OptimState::Slot& slot = it->second;
        if (fresh) {
            slot.m = Tensor(param.n(), param.c(), param.h(), param.w(), 0.0);
            slot.v = slot.m;
            slot.decay = decay;
        }
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            const double gi = g.data[i];
            slot.m.data[i] = cfg.beta1 * slot.m.data[i] + (1.0 - cfg.beta1) * gi;
            slot.v.data[i] = cfg.beta2 * slot.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = slot.m.data[i] / bc1;
            const double vhat = slot.v.data[i] / bc2;
            double p = param.data[i];
            if (slot.decay) p -= lr * cfg.weight_decay * p;
            p -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            param.data[i] = p;
        }
    });
}

double lr_schedule(int epoch, const ScheduleConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.total_epochs) {
        throw std::invalid_argument("lr_schedule: epoch out of range");
    }
    if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.total_epochs) {
        throw std::invalid_argument("lr_schedule: need 0 <= warmup_epochs < total_epochs");
    }
    const double start = cfg.base_lr / 100.0;
    if (epoch < cfg.warmup_epochs) {
        return start + (cfg.base_lr - start) * (static_cast<double>(epoch) / cfg.warmup_epochs);
    }
    const int t = epoch - cfg.warmup_epochs;
    const int total = cfg.total_epochs - cfg.warmup_epochs;
    return cfg.min_lr +
           0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * t / total));
}

void ema_init(EmaState& ema, Model& model) {
    ema.shadow.clear();
    model.for_each_param(
        [&](const std::string& name, Tensor& param, bool) { ema.shadow[name] = param; });
}

void ema_update(EmaState& ema, Model& model) {
    model.for_each_param([&](const std::string& name, Tensor& param, bool) {
        auto it = ema.shadow.find(name);
        if (it == ema.shadow.end()) {
            throw std::runtime_error("ema_update: shadow missing " + name);
        }
        Tensor& s = it->second;
        for (std::size_t i = 0; i < s.data.size(); ++i) {
            s.data[i] = ema.decay * s.data[i] + (1.0 - ema.decay) * param.data[i];
        }
    });
}

Batch make_batch(const std::vector<SamplePair>& data, const std::vector<int>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const int b = static_cast<int>(indices.size());
    const SamplePair& first = data[indices[0]];
    const int h = first.ol.h(), w = first.ol.w();
    const int classes = static_cast<int>(first.labels.size());
    Batch batch{Tensor(b, 1, h, w, 0.0), Tensor(b, 1, h, w, 0.0), Tensor(b, classes, 1, 1, 0.0)};
    for (int i = 0; i < b; ++i) {
        const SamplePair& s = data[indices[i]];
        std::copy(s.ol.data.begin(), s.ol.data.end(), &batch.ol.at(i, 0, 0, 0));
        std::copy(s.sd.data.begin(), s.sd.data.end(), &batch.sd.at(i, 0, 0, 0));
        for (int c = 0; c < classes; ++c) batch.targets.at(i, c, 0, 0) = s.labels[c];
    }
    return batch;
}

double evaluate_map(Model& model, const std::vector<SamplePair>& data,
                    const std::map<std::string, Tensor>* overrides,
                    std::vector<double>* per_class) {
    if (data.empty()) throw std::invalid_argument("evaluate_map: empty dataset");
    const int classes = static_cast<int>(data[0].labels.size());
    ScoredPredictions preds;
    preds.classes = classes;
    const int eval_batch = 32;
    for (std::size_t start = 0; start < data.size(); start += eval_batch) {
        std::vector<int> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + eval_batch); ++i) {
            idx.push_back(static_cast<int>(i));
        }
        Batch batch = make_batch(data, idx);
        Tensor logits = model.forward_pair(batch.ol, batch.sd, BnMode::Eval, overrides);
        for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
            for (int c = 0; c < classes; ++c) {
                preds.scores.push_back(logits.at(i, c, 0, 0));
                preds.truths.push_back(data[idx[i]].labels[c]);
            }
        }
    }
    if (per_class != nullptr) {
        per_class->clear();
        for (const auto& ap : per_class_ap(preds)) {
            per_class->push_back(ap.value_or(-1.0));
        }
    }
    return mean_ap(preds);
}

TrainResult train(Model& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    TrainResult result;
    result.ema.decay = cfg.ema_decay;
    ema_init(result.ema, model);
    OptimState opt;

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.schedule);
        std::mt19937_64 shuffle_rng(substream(cfg.seed, 0x10000u + static_cast<unsigned>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + std::min(order.size(),
                                                          start + cfg.batch_size));
            Batch batch = make_batch(train_set, idx);
            ad::Tape t;
            ad::Value logits =
                model.forward_pair(t, t.input(batch.ol), t.input(batch.sd), BnMode::Train);
            ad::Value loss = t.multilabel_soft_margin_loss(logits, batch.targets);
            const double loss_value = t.val(loss).data[0];
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("train: non-finite loss in epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batches));
            }
            loss_sum += loss_value;
            ++batches;
            ad::GradientMap grads = t.backward(loss, Tensor(1, 1, 1, 1, 1.0));
            adamw_step(model, grads, opt, cfg.optimizer, lr);
            ema_update(result.ema, model);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / std::max(1, batches);
        if (!val_set.empty()) {
            stats.val_map_raw = evaluate_map(model, val_set);
            stats.val_map_ema = evaluate_map(model, val_set, &result.ema.shadow);
        }
        result.history.push_back(stats);
        if (cfg.verbose) {
            std::printf("epoch %3d  lr %.6f  loss %.5f  val mAP %.4f (ema %.4f)\n", epoch, lr,
                        stats.train_loss, stats.val_map_raw, stats.val_map_ema);
            std::fflush(stdout);
        }
        const double best_here = std::max(stats.val_map_raw, stats.val_map_ema);
        if (result.best_epoch < 0 || best_here > result.best_val_map) {
            result.best_epoch = epoch;
            result.best_val_map = best_here;
            result.best_is_ema = stats.val_map_ema > stats.val_map_raw;
            result.best_params.clear();
            result.best_buffers.clear();
            model.for_each_param([&](const std::string& n, Tensor& p, bool) {
                result.best_params[n] = p;
            });
            model.for_each_buffer(
                [&](const std::string& n, Tensor& b) { result.best_buffers[n] = b; });
            result.best_ema = result.ema.shadow;
        }
    }
    return result;
}

void apply_state(Model& model, const std::map<std::string, Tensor>& params,
                 const std::map<std::string, Tensor>& buffers) {
    model.for_each_param([&](const std::string& n, Tensor& p, bool) {
        auto it = params.find(n);
        if (it == params.end()) throw std::runtime_error("apply_state: missing param " + n);
        p = it->second;
    });
    model.for_each_buffer([&](const std::string& n, Tensor& b) {
        auto it = buffers.find(n);
        if (it == buffers.end()) throw std::runtime_error("apply_state: missing buffer " + n);
        b = it->second;
    });
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,val_mAP_raw,val_mAP_ema\n";
    char buf[160];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.lr,
                      e.train_loss, e.val_map_raw, e.val_map_ema);
        os << buf;
    }
    return os.str();
}

}  // namespace dvx
