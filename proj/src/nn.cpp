#include "dualdetr/nn.hpp"

#include <cmath>

namespace dualdetr {

TensorRef ParamRegistry::add(const std::string& name, std::vector<int> shape,
                             std::vector<double> values, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    TensorRef t = make_tensor(std::move(shape), std::move(values), /*requires_grad=*/trainable);
    index_[name] = params_.size();
    params_.push_back({name, t, trainable});
    return t;
}

const Parameter* ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

int64_t ParamRegistry::count_values() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor->size();
    return n;
}

TensorRef Init::linear_weight(const std::string& name, int out, int in) {
    double limit = std::sqrt(6.0 / (in + out));
    std::vector<double> v(static_cast<size_t>(out) * in);
    for (auto& x : v) x = rng_.uniform(-limit, limit);
    return reg_.add(name, {out, in}, std::move(v));
}

TensorRef Init::zeros(const std::string& name, std::vector<int> shape) {
    return reg_.add(name, shape, std::vector<double>(shape_numel(shape), 0.0));
}

TensorRef Init::constant(const std::string& name, std::vector<int> shape, double v) {
    return reg_.add(name, shape, std::vector<double>(shape_numel(shape), v));
}

TensorRef Init::normal(const std::string& name, std::vector<int> shape, double stddev) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng_.normal() * stddev;
    return reg_.add(name, shape, std::move(v));
}

Linear::Linear(Init& init, const std::string& prefix, int in, int out, bool bias) {
    w_ = init.linear_weight(prefix + ".weight", out, in);
    if (bias) b_ = init.zeros(prefix + ".bias", {out});
}

TensorRef Linear::forward(const TensorRef& x) const {
    TensorRef y = matmul_nt(x, w_);
    return b_ ? add_rowvec(y, b_) : y;
}

LayerNorm::LayerNorm(Init& init, const std::string& prefix, int width) {
    gamma_ = init.constant(prefix + ".gamma", {width}, 1.0);
    beta_ = init.zeros(prefix + ".beta", {width});
}

TensorRef LayerNorm::forward(const TensorRef& x) const {
    return layer_norm_rows(x, gamma_, beta_);
}

Mlp::Mlp(Init& init, const std::string& prefix, const std::vector<int>& widths, bool zero_last) {
    if (widths.size() < 2) throw ConfigError("Mlp needs at least one layer");
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        std::string name = prefix + ".fc" + std::to_string(i);
        if (zero_last && i + 2 == widths.size()) {
            // final layer starts at zero so the head predicts no offset at step 0
            layers_.emplace_back(init.zeros(name + ".weight", {widths[i + 1], widths[i]}),
                                 init.zeros(name + ".bias", {widths[i + 1]}));
        } else {
            layers_.emplace_back(init, name, widths[i], widths[i + 1]);
        }
    }
}

TensorRef Mlp::forward(const TensorRef& x) const {
    TensorRef h = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
}

std::vector<double> sinusoid_row(double position, int dims) {
    TensorRef t = sinusoid_embed(make_tensor({1}, std::vector<double>{position}), dims);
    return t->val;
}

TensorRef sinusoid_embedding(const std::vector<double>& positions, int dims) {
    return sinusoid_embed(make_tensor({static_cast<int>(positions.size())},
                                      std::vector<double>(positions)),
                          dims);
}

}  // namespace dualdetr
