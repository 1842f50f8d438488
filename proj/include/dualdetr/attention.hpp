#pragma once

#include <string>

#include "dualdetr/nn.hpp"

namespace dualdetr {

struct DeformAttnConfig {
    int heads = 8;
    int points = 4;
    int channels = 0;  // value/content width C; must be divisible by heads
    void validate() const;
};

// How a query's reference positions map sampling offsets to absolute
// normalized time.
enum class RefMode {
    Scalar,    // ref is one scalar; offsets scaled by a learned per-head scale
               // times a 0.05 base window
    Interval,  // ref is (center, duration); offsets are fractions of duration
};

inline constexpr double kScalarOffsetBase = 0.05;

// 1-D deformable attention: each query samples `points` fractional positions
// per head around its reference, weights them with a per-head softmax, and
// mixes heads through an output projection.
class DeformableAttention {
public:
    DeformableAttention() = default;
    DeformableAttention(Init& init, const std::string& prefix, const DeformAttnConfig& cfg,
                        RefMode mode);

    // z: (Q x C) query features; ref: (Q x 1) scalar mode or (Q x 2) interval
    // mode; x: (T x C) value map. valid_span limits sampling to
    // [0, valid_span] in normalized time (1.0 = no padding).
    TensorRef forward(const TensorRef& z, const TensorRef& ref, const TensorRef& x,
                      double valid_span = 1.0) const;

    const DeformAttnConfig& config() const { return cfg_; }

private:
    DeformAttnConfig cfg_;
    RefMode mode_ = RefMode::Scalar;
    Linear value_proj_;
    Linear out_proj_;
    Linear offset_head_;
    Linear weight_head_;
    TensorRef head_scale_;  // scalar mode only, one scale per head
};

// Standard multi-head self-attention; queries/keys see content + positional
// encoding, values see content only.
class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(Init& init, const std::string& prefix, int channels, int heads);

    TensorRef forward(const TensorRef& content, const TensorRef& pos_embed) const;

private:
    int heads_ = 1;
    int channels_ = 0;
    Linear q_proj_, k_proj_, v_proj_, out_proj_;
};

}  // namespace dualdetr
