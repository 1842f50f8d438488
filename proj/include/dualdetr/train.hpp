#pragma once

#include <functional>

#include "dualdetr/config.hpp"

namespace dualdetr {

// Decoupled weight decay Adam. States are indexed by registry order.
class AdamW {
public:
    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::vector<Parameter>& params, double lr, double weight_decay);

private:
    struct State {
        std::vector<double> m, v;
    };
    std::vector<State> states_;
    int64_t t_ = 0;
    double beta1_, beta2_, eps_;
};

void zero_grads(std::vector<Parameter>& params);
void scale_grads(std::vector<Parameter>& params, double factor);
// Scales gradients down to max_norm when the global L2 norm exceeds it;
// returns the pre-clip norm.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

// Exponential moving average of parameter values, for evaluation weights.
class Ema {
public:
    Ema(const std::vector<Parameter>& params, double decay);
    void update(const std::vector<Parameter>& params);
    const std::vector<std::vector<double>>& shadow() const { return shadow_; }

private:
    std::vector<std::vector<double>> shadow_;
    double decay_;
};

struct EpochStats {
    int epoch = 0;
    double cls = 0, iou = 0, l1 = 0, total = 0;
    int windows = 0;
    int dropped = 0;  // windows skipped because ground truths exceeded queries
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::vector<std::vector<double>> ema_values;  // registry order; empty if ema off
};

// Gradient-accumulated AdamW loop over shuffled windows; deterministic for a
// fixed seed. progress, when set, is called after each epoch.
TrainResult train(DualDetrModel& model, const std::vector<Window>& windows, const RunConfig& cfg,
                  const std::function<void(const EpochStats&)>& progress = {});

}  // namespace dualdetr
