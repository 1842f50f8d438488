#include "dualdetr/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "dualdetr/losses.hpp"

namespace dualdetr {

void AdamW::step(std::vector<Parameter>& params, double lr, double weight_decay) {
    if (states_.empty()) {
        states_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            states_[i].m.assign(params[i].tensor->val.size(), 0.0);
            states_[i].v.assign(params[i].tensor->val.size(), 0.0);
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (!p.trainable) continue;
        p.tensor->ensure_grad();
        auto& m = states_[i].m;
        auto& v = states_[i].v;
        for (size_t k = 0; k < p.tensor->val.size(); ++k) {
            double g = p.tensor->grad[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p.tensor->val[k] -=
                lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p.tensor->val[k]);
        }
    }
}

void zero_grads(std::vector<Parameter>& params) {
    for (auto& p : params) {
        p.tensor->ensure_grad();
        p.tensor->clear_grad();
    }
}

void scale_grads(std::vector<Parameter>& params, double factor) {
    for (auto& p : params) {
        p.tensor->ensure_grad();
        for (auto& g : p.tensor->grad) g *= factor;
    }
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
    double sq = 0;
    for (auto& p : params) {
        p.tensor->ensure_grad();
        for (double g : p.tensor->grad) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        double f = max_norm / norm;
        for (auto& p : params)
            for (auto& g : p.tensor->grad) g *= f;
    }
    return norm;
}

Ema::Ema(const std::vector<Parameter>& params, double decay) : decay_(decay) {
    shadow_.reserve(params.size());
    for (const auto& p : params) shadow_.push_back(p.tensor->val);
}

void Ema::update(const std::vector<Parameter>& params) {
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& v = params[i].tensor->val;
        auto& s = shadow_[i];
        for (size_t k = 0; k < v.size(); ++k) s[k] = decay_ * s[k] + (1.0 - decay_) * v[k];
    }
}

TrainResult train(DualDetrModel& model, const std::vector<Window>& windows, const RunConfig& cfg,
                  const std::function<void(const EpochStats&)>& progress) {
    if (windows.empty()) throw DataError("no training windows");
    AdamW opt;
    std::vector<Parameter>& params = model.params().all();
    Ema ema(params, cfg.ema_decay);

    TrainResult result;
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.lr;
        if (epoch >= cfg.epochs - cfg.lr_drop_epochs) lr *= cfg.lr_drop_factor;

        // deterministic per-epoch shuffle
        Rng shuffle_rng(cfg.seed * 9176ULL + static_cast<uint64_t>(epoch) + 1);
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        EpochStats stats;
        stats.epoch = epoch;
        size_t cursor = 0;
        while (cursor < order.size()) {
            size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(cfg.batch_size));
            zero_grads(params);
            int batch_count = 0;
            for (size_t b = cursor; b < batch_end; ++b) {
                const Window& win = windows[order[b]];
                int capacity = std::min(model.config().num_queries, win.valid);
                if (static_cast<int>(win.gts.size()) > capacity) {
                    std::cerr << "warning: dropping window of " << win.video_id << " at snippet "
                              << win.start << ": " << win.gts.size()
                              << " ground truths exceed the assignable budget " << capacity
                              << "\n";
                    ++stats.dropped;
                    continue;
                }
                TensorRef features =
                    make_tensor({win.length, model.config().dim}, win.features);
                ModelForward fwd = model.forward(features, win.valid);
                auto [loss, breakdown] =
                    total_loss(fwd.layer_outputs, fwd.encoder_detections, win.gts, cfg.cost_w,
                               cfg.loss_w, cfg.focal);
                if (!std::isfinite(breakdown.total))
                    throw NumericError("non-finite loss on video " + win.video_id +
                                       " window at snippet " + std::to_string(win.start));
                backward(loss);
                stats.cls += breakdown.cls;
                stats.iou += breakdown.iou;
                stats.l1 += breakdown.l1;
                stats.total += breakdown.total;
                ++stats.windows;
                ++batch_count;
            }
            if (batch_count > 0) {
                scale_grads(params, 1.0 / batch_count);
                clip_grad_norm(params, cfg.clip_norm);
                opt.step(params, lr, cfg.weight_decay);
                if (cfg.ema) ema.update(params);
            }
            cursor = batch_end;
        }
        if (stats.windows > 0) {
            stats.cls /= stats.windows;
            stats.iou /= stats.windows;
            stats.l1 /= stats.windows;
            stats.total /= stats.windows;
        }
        result.epochs.push_back(stats);
        if (progress) progress(stats);
    }
    if (cfg.ema) result.ema_values = ema.shadow();
    return result;
}

}  // namespace dualdetr
