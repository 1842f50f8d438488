#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dualdetr/tensor.hpp"

namespace dualdetr {

struct Parameter {
    std::string name;
    TensorRef tensor;
    bool trainable = true;
};

// Owns every learned tensor of a model, keyed by a unique dotted path.
// Registration order is the initialization order, so a fixed seed yields a
// bit-identical model.
class ParamRegistry {
public:
    TensorRef add(const std::string& name, std::vector<int> shape, std::vector<double> values,
                  bool trainable = true);
    const std::vector<Parameter>& all() const { return params_; }
    std::vector<Parameter>& all() { return params_; }
    const Parameter* find(const std::string& name) const;
    int64_t count_values() const;

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, size_t> index_;
};

// Weight initializers draw from the registry-owned rng stream.
class Init {
public:
    Init(ParamRegistry& reg, uint64_t seed) : reg_(reg), rng_(seed) {}

    // Xavier-uniform weight of shape (out x in), zero bias.
    TensorRef linear_weight(const std::string& name, int out, int in);
    TensorRef zeros(const std::string& name, std::vector<int> shape);
    TensorRef constant(const std::string& name, std::vector<int> shape, double v);
    TensorRef normal(const std::string& name, std::vector<int> shape, double stddev);

    ParamRegistry& registry() { return reg_; }
    Rng& rng() { return rng_; }

private:
    ParamRegistry& reg_;
    Rng rng_;
};

// y = x W^T + b, weights stored (out x in).
class Linear {
public:
    Linear() = default;
    Linear(Init& init, const std::string& prefix, int in, int out, bool bias = true);
    Linear(TensorRef w, TensorRef b) : w_(std::move(w)), b_(std::move(b)) {}
    TensorRef forward(const TensorRef& x) const;
    TensorRef weight() const { return w_; }
    TensorRef bias() const { return b_; }

private:
    TensorRef w_;
    TensorRef b_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(Init& init, const std::string& prefix, int width);
    TensorRef forward(const TensorRef& x) const;

private:
    TensorRef gamma_;
    TensorRef beta_;
};

// Stack of linear layers with ReLU between them (none after the last).
// zero_last zero-initializes the final layer so the stack starts as the
// constant-zero map.
class Mlp {
public:
    Mlp() = default;
    Mlp(Init& init, const std::string& prefix, const std::vector<int>& widths,
        bool zero_last = false);
    explicit Mlp(std::vector<Linear> layers) : layers_(std::move(layers)) {}
    TensorRef forward(const TensorRef& x) const;
    Linear& last() { return layers_.back(); }

private:
    std::vector<Linear> layers_;
};

// Fixed sinusoidal embedding of normalized positions into `dims` channels
// (sin/cos pairs over a geometric frequency ladder). Returns a constant
// (positions.size() x dims) tensor.
TensorRef sinusoid_embedding(const std::vector<double>& positions, int dims);

std::vector<double> sinusoid_row(double position, int dims);

}  // namespace dualdetr
