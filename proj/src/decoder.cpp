#include "dualdetr/decoder.hpp"

#include <cmath>

namespace dualdetr {

namespace {

TensorRef boundary_pos_embed(const TensorRef& s_pos, const TensorRef& e_pos, int dims) {
    int n = s_pos->rows();
    TensorRef pos = reshape(concat_rows({s_pos, e_pos}), {2 * n});
    return sinusoid_embed(pos, dims);
}

TensorRef instance_pos_embed(const TensorRef& i_pos, int dims) {
    int n = i_pos->rows();
    int half = dims / 2;
    TensorRef c = reshape(slice_cols(i_pos, 0, 1), {n});
    TensorRef d = reshape(slice_cols(i_pos, 1, 2), {n});
    return concat_cols({sinusoid_embed(c, half), sinusoid_embed(d, dims - half)});
}

TensorRef refine_step(const TensorRef& base, const TensorRef& delta) {
    return sigmoid(add(delta, inverse_sigmoid(base)));
}

}  // namespace

RefinedPositions mutual_refine_positions(const TensorRef& i_pos, const TensorRef& s_pos,
                                         const TensorRef& e_pos, RefineMode mode) {
    RefinedPositions out{i_pos, s_pos, e_pos};
    if (mode == RefineMode::Off) return out;

    auto refine_instance = [](const TensorRef& ip, const TensorRef& sp, const TensorRef& ep) {
        TensorRef c = slice_cols(ip, 0, 1);
        TensorRef d = slice_cols(ip, 1, 2);
        TensorRef c2 = scale(add(c, scale(add(sp, ep), 0.5)), 0.5);
        TensorRef d2 = scale(add(d, sub(ep, sp)), 0.5);
        return clamp(concat_cols({c2, d2}), 0.0, 1.0);
    };
    auto refine_boundary = [](const TensorRef& ip, const TensorRef& sp, const TensorRef& ep) {
        TensorRef c = slice_cols(ip, 0, 1);
        TensorRef half = scale(slice_cols(ip, 1, 2), 0.5);
        TensorRef s2 = clamp(scale(add(sp, sub(c, half)), 0.5), 0.0, 1.0);
        TensorRef e2 = clamp(scale(add(ep, add(c, half)), 0.5), 0.0, 1.0);
        return std::make_pair(s2, e2);
    };

    switch (mode) {
        case RefineMode::Parallel:
        case RefineMode::PositionAndContent: {
            out.i_pos = refine_instance(i_pos, s_pos, e_pos);
            auto [s2, e2] = refine_boundary(i_pos, s_pos, e_pos);
            out.s_pos = s2;
            out.e_pos = e2;
            break;
        }
        case RefineMode::BoundaryFirst: {
            auto [s2, e2] = refine_boundary(i_pos, s_pos, e_pos);
            out.s_pos = s2;
            out.e_pos = e2;
            out.i_pos = refine_instance(i_pos, s2, e2);
            break;
        }
        case RefineMode::InstanceFirst: {
            out.i_pos = refine_instance(i_pos, s_pos, e_pos);
            auto [s2, e2] = refine_boundary(out.i_pos, s_pos, e_pos);
            out.s_pos = s2;
            out.e_pos = e2;
            break;
        }
        case RefineMode::Off:
            break;
    }
    return out;
}

BoundaryDecoderLayer::BoundaryDecoderLayer(Init& init, const std::string& prefix,
                                           const DecoderStructure& s) {
    int bw = s.boundary_width;
    self_attn_ = MultiHeadSelfAttention(init, prefix + ".self_attn", bw, s.heads);
    cross_attn_ = DeformableAttention(init, prefix + ".cross_attn",
                                      DeformAttnConfig{s.heads, s.points, bw}, RefMode::Scalar);
    ln1_ = LayerNorm(init, prefix + ".ln1", bw);
    ln2_ = LayerNorm(init, prefix + ".ln2", bw);
    ln3_ = LayerNorm(init, prefix + ".ln3", bw);
    ffn_ = Mlp(init, prefix + ".ffn", {bw, s.ffn_dim, bw});
    reg_ = Mlp(init, prefix + ".reg", {bw, s.dim, s.dim, 1}, /*zero_last=*/true);
}

void BoundaryDecoderLayer::forward(DualQuerySet& q, const TensorRef& x_s, const TensorRef& x_e,
                                   double valid_span) const {
    int n = q.count;
    int bw = q.s_con->cols();
    TensorRef seq = concat_rows({q.s_con, q.e_con});
    TensorRef pe = boundary_pos_embed(q.s_pos, q.e_pos, bw);
    TensorRef h = ln1_.forward(add(seq, self_attn_.forward(seq, pe)));

    TensorRef cs = cross_attn_.forward(slice_rows(h, 0, n), q.s_pos, x_s, valid_span);
    TensorRef ce = cross_attn_.forward(slice_rows(h, n, 2 * n), q.e_pos, x_e, valid_span);
    TensorRef h2 = ln2_.forward(add(h, concat_rows({cs, ce})));
    TensorRef h3 = ln3_.forward(add(h2, ffn_.forward(h2)));

    q.s_con = slice_rows(h3, 0, n);
    q.e_con = slice_rows(h3, n, 2 * n);
    q.s_pos = refine_step(q.s_pos, reg_.forward(q.s_con));
    q.e_pos = refine_step(q.e_pos, reg_.forward(q.e_con));
}

InstanceDecoderLayer::InstanceDecoderLayer(Init& init, const std::string& prefix,
                                           const DecoderStructure& s) {
    int iw = s.instance_width;
    self_attn_ = MultiHeadSelfAttention(init, prefix + ".self_attn", iw, s.heads);
    cross_attn_ = DeformableAttention(init, prefix + ".cross_attn",
                                      DeformAttnConfig{s.heads, s.points, iw}, RefMode::Interval);
    ln1_ = LayerNorm(init, prefix + ".ln1", iw);
    ln2_ = LayerNorm(init, prefix + ".ln2", iw);
    ln3_ = LayerNorm(init, prefix + ".ln3", iw);
    ffn_ = Mlp(init, prefix + ".ffn", {iw, s.ffn_dim, iw});
    reg_ = Mlp(init, prefix + ".reg", {iw, s.dim, s.dim, 2}, /*zero_last=*/true);
}

void InstanceDecoderLayer::forward(DualQuerySet& q, const TensorRef& x_i,
                                   double valid_span) const {
    TensorRef pe = instance_pos_embed(q.i_pos, q.i_con->cols());
    TensorRef h = ln1_.forward(add(q.i_con, self_attn_.forward(q.i_con, pe)));
    TensorRef c = cross_attn_.forward(h, q.i_pos, x_i, valid_span);
    TensorRef h2 = ln2_.forward(add(h, c));
    TensorRef h3 = ln3_.forward(add(h2, ffn_.forward(h2)));
    q.i_con = h3;
    q.i_pos = refine_step(q.i_pos, reg_.forward(h3));
}

Decoder::Decoder(Init& init, const DecoderStructure& s) : structure_(s) {
    bool wants_instance = s.level != QueryLevel::Boundary;
    bool wants_boundary = s.level != QueryLevel::Instance;
    for (int l = 0; l < s.layers; ++l) {
        std::string prefix = "decoder.layer" + std::to_string(l);
        if (wants_boundary) boundary_layers_.emplace_back(init, prefix + ".boundary", s);
        if (wants_instance) instance_layers_.emplace_back(init, prefix + ".instance", s);
        int cls_in = wants_instance ? s.instance_width : 2 * s.boundary_width;
        classifiers_.emplace_back(
            init.linear_weight(prefix + ".cls.weight", s.num_classes, cls_in),
            init.constant(prefix + ".cls.bias", {s.num_classes}, std::log(0.01 / 0.99)));
        if (s.refine == RefineMode::PositionAndContent && s.level == QueryLevel::Dual) {
            int mix = s.instance_width + 2 * s.boundary_width;
            content_mix_.push_back(
                Mlp(init, prefix + ".content_mix", {mix, mix, mix}, /*zero_last=*/true));
        }
    }
}

DetectionSet Decoder::detection_head(const DualQuerySet& q, int layer,
                                     QueryLevel active_level) const {
    DetectionSet det;
    const Linear& cls = classifiers_[static_cast<size_t>(layer)];
    if (active_level == QueryLevel::Boundary) {
        det.scores = sigmoid(cls.forward(concat_cols({q.s_con, q.e_con})));
        det.intervals = boundary_interval_tensor(q.s_pos, q.e_pos);
        return det;
    }
    det.scores = sigmoid(cls.forward(q.i_con));
    det.intervals = instance_interval_tensor(q.i_pos);
    if (active_level == QueryLevel::Dual)
        det.boundary_intervals = boundary_interval_tensor(q.s_pos, q.e_pos);
    return det;
}

std::vector<DetectionSet> Decoder::forward(DualQuerySet q, const TensorRef& x_s,
                                           const TensorRef& x_e, const TensorRef& x_i,
                                           double valid_span, QueryLevel active_level) const {
    std::vector<DetectionSet> out;
    out.reserve(static_cast<size_t>(structure_.layers));
    bool use_instance = active_level != QueryLevel::Boundary;
    bool use_boundary = active_level != QueryLevel::Instance;
    if (use_instance && instance_layers_.empty())
        throw ConfigError("instance branch requested but not built");
    if (use_boundary && boundary_layers_.empty())
        throw ConfigError("boundary branch requested but not built");

    for (int l = 0; l < structure_.layers; ++l) {
        if (use_boundary) boundary_layers_[static_cast<size_t>(l)].forward(q, x_s, x_e, valid_span);
        if (use_instance) instance_layers_[static_cast<size_t>(l)].forward(q, x_i, valid_span);

        if (active_level == QueryLevel::Dual && structure_.refine != RefineMode::Off) {
            RefinedPositions rp =
                mutual_refine_positions(q.i_pos, q.s_pos, q.e_pos, structure_.refine);
            q.i_pos = rp.i_pos;
            q.s_pos = rp.s_pos;
            q.e_pos = rp.e_pos;
            if (structure_.refine == RefineMode::PositionAndContent && !content_mix_.empty()) {
                TensorRef cat = concat_cols({q.i_con, q.s_con, q.e_con});
                TensorRef mixed = add(cat, content_mix_[static_cast<size_t>(l)].forward(cat));
                int iw = q.i_con->cols(), bw = q.s_con->cols();
                q.i_con = slice_cols(mixed, 0, iw);
                q.s_con = slice_cols(mixed, iw, iw + bw);
                q.e_con = slice_cols(mixed, iw + bw, iw + 2 * bw);
            }
        }

        out.push_back(detection_head(q, l, active_level));

        // iterative refinement: the next layer reads detached reference
        // points; gradients reach this layer through its own detection loss
        if (l + 1 < structure_.layers) {
            if (q.i_pos) q.i_pos = detach(q.i_pos);
            if (q.s_pos) q.s_pos = detach(q.s_pos);
            if (q.e_pos) q.e_pos = detach(q.e_pos);
        }
    }
    return out;
}

}  // namespace dualdetr
