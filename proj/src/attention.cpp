#include "dualdetr/attention.hpp"

#include <cmath>

namespace dualdetr {

void DeformAttnConfig::validate() const {
    if (heads < 1 || points < 1) throw ConfigError("deformable attention needs heads, points >= 1");
    if (channels < 1 || channels % heads != 0)
        throw ConfigError("deformable attention channels must be divisible by heads");
}

DeformableAttention::DeformableAttention(Init& init, const std::string& prefix,
                                         const DeformAttnConfig& cfg, RefMode mode)
    : cfg_(cfg), mode_(mode) {
    cfg_.validate();
    int c = cfg_.channels, mk = cfg_.heads * cfg_.points;
    value_proj_ = Linear(init, prefix + ".value_proj", c, c);
    out_proj_ = Linear(init, prefix + ".out_proj", c, c);
    weight_head_ = Linear(init, prefix + ".attn_weight", c, mk);
    // offsets: zero weights with biases spreading the initial samples across
    // heads and points
    TensorRef ow = init.zeros(prefix + ".offset.weight", {mk, c});
    std::vector<double> ob(static_cast<size_t>(mk));
    for (int m = 0; m < cfg_.heads; ++m) {
        double dir = (m % 2 == 0) ? 1.0 : -1.0;
        for (int k = 0; k < cfg_.points; ++k)
            ob[static_cast<size_t>(m) * cfg_.points + k] =
                dir * (k + 1) / static_cast<double>(cfg_.points) * 0.5;
    }
    TensorRef obt = init.registry().add(prefix + ".offset.bias", {mk}, std::move(ob));
    offset_head_ = Linear(ow, obt);
    if (mode_ == RefMode::Scalar)
        head_scale_ = init.constant(prefix + ".head_scale", {cfg_.heads}, 1.0);
}

TensorRef DeformableAttention::forward(const TensorRef& z, const TensorRef& ref,
                                       const TensorRef& x, double valid_span) const {
    int q = z->rows();
    if (z->cols() != cfg_.channels || x->cols() != cfg_.channels)
        throw ConfigError("deformable attention channel mismatch between query and value map");
    int m = cfg_.heads, k = cfg_.points, mk = m * k;

    TensorRef raw_off = offset_head_.forward(z);  // Q x MK
    TensorRef pos;                                // Q x MK absolute normalized positions
    if (mode_ == RefMode::Scalar) {
        if (ref->size() != q) throw ConfigError("scalar reference must have one entry per query");
        TensorRef scaled = scale(mul_headwise(raw_off, head_scale_, k), kScalarOffsetBase);
        pos = add_per_row(scaled, ref);
    } else {
        if (ref->size() != 2 * q)
            throw ConfigError("interval reference must have (center, duration) per query");
        TensorRef center = slice_cols(ref, 0, 1);
        TensorRef duration = slice_cols(ref, 1, 2);
        pos = add_per_row(mul_per_row(raw_off, duration), center);
    }
    if (valid_span < 1.0) pos = clamp(pos, 0.0, valid_span);

    TensorRef logits = weight_head_.forward(z);  // Q x MK
    TensorRef weights = reshape(softmax_rows(reshape(logits, {q * m, k})), {q, mk});

    TensorRef values = value_proj_.forward(x);  // T x C
    TensorRef samples = linear_sample_grouped(values, reshape(pos, {q * mk}), m, k);
    TensorRef mixed = deform_combine(samples, weights, m, k);  // Q x C
    return out_proj_.forward(mixed);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(Init& init, const std::string& prefix, int channels,
                                               int heads)
    : heads_(heads), channels_(channels) {
    if (channels % heads != 0)
        throw ConfigError("self-attention channels must be divisible by heads");
    q_proj_ = Linear(init, prefix + ".q_proj", channels, channels);
    k_proj_ = Linear(init, prefix + ".k_proj", channels, channels);
    v_proj_ = Linear(init, prefix + ".v_proj", channels, channels);
    out_proj_ = Linear(init, prefix + ".out_proj", channels, channels);
}

TensorRef MultiHeadSelfAttention::forward(const TensorRef& content,
                                          const TensorRef& pos_embed) const {
    int n = content->rows();
    if (n == 0) throw NumericError("self-attention over an empty sequence");
    if (content->cols() != channels_) throw ConfigError("self-attention width mismatch");

    TensorRef qk_in = pos_embed ? add(content, pos_embed) : content;
    TensorRef qm = q_proj_.forward(qk_in);
    TensorRef km = k_proj_.forward(qk_in);
    TensorRef vm = v_proj_.forward(content);

    int dh = channels_ / heads_;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorRef> head_out;
    head_out.reserve(static_cast<size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
        TensorRef qh = slice_cols(qm, h * dh, (h + 1) * dh);
        TensorRef kh = slice_cols(km, h * dh, (h + 1) * dh);
        TensorRef vh = slice_cols(vm, h * dh, (h + 1) * dh);
        TensorRef attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
        head_out.push_back(matmul(attn, vh));
    }
    return out_proj_.forward(concat_cols(head_out));
}

}  // namespace dualdetr
