#include "dualdetr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dualdetr {

FeaturePartition partition(const TensorRef& x_enc) {
    int d = x_enc->cols();
    if (d % 4 != 0) throw ConfigError("feature width must be divisible by 4 to partition");
    FeaturePartition p;
    p.start = slice_cols(x_enc, 0, d / 4);
    p.end = slice_cols(x_enc, d / 4, d / 2);
    p.instance = slice_cols(x_enc, d / 2, d);
    return p;
}

std::vector<int> select_topk(const std::vector<EncoderProposal>& proposals, int nq,
                             int valid_limit) {
    int t = static_cast<int>(proposals.size());
    if (nq > t) throw ConfigError("query count exceeds window length");
    std::vector<int> order(static_cast<size_t>(t));
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](int i) {
        bool valid = valid_limit < 0 || i < valid_limit;
        return valid ? proposals[static_cast<size_t>(i)].score : -1.0;
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double ka = key(a), kb = key(b);
        if (ka != kb) return ka > kb;
        return a < b;
    });
    order.resize(static_cast<size_t>(nq));
    return order;
}

DenseHead::DenseHead(Init& init, const std::string& prefix, int dim, int num_classes) {
    cls_ = Linear(init.linear_weight(prefix + ".cls.weight", num_classes, dim),
                  init.constant(prefix + ".cls.bias", {num_classes},
                                std::log(0.01 / 0.99)));  // low-probability class prior
    // two-layer regressor; final layer zeroed except the duration bias so the
    // initial proposal at every position is a 0.1-long interval centered there
    Linear hidden(init.linear_weight(prefix + ".reg.fc0.weight", dim, dim),
                  init.zeros(prefix + ".reg.fc0.bias", {dim}));
    Linear out(init.zeros(prefix + ".reg.fc1.weight", {2, dim}),
               init.registry().add(prefix + ".reg.fc1.bias", {2},
                                   {0.0, inverse_sigmoid_scalar(0.1)}));
    reg_ = Mlp({hidden, out});
}

std::pair<TensorRef, TensorRef> DenseHead::forward(const TensorRef& x_enc) const {
    int t = x_enc->rows();
    TensorRef scores = sigmoid(cls_.forward(x_enc));
    TensorRef reg = reg_.forward(x_enc);  // T x 2: (dc, dd)

    std::vector<double> anchors(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i)
        anchors[static_cast<size_t>(i)] =
            t == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(t - 1);
    std::vector<double> anchor_logits(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i)
        anchor_logits[i] = inverse_sigmoid_scalar(anchors[i]);
    TensorRef anchor_t = make_tensor({t, 1}, std::move(anchor_logits));

    TensorRef center = sigmoid(add(slice_cols(reg, 0, 1), anchor_t));
    TensorRef duration = sigmoid(slice_cols(reg, 1, 2));
    TensorRef half = scale(duration, 0.5);
    TensorRef start = clamp(sub(center, half), 0.0, 1.0);
    TensorRef end = clamp(add(center, half), 0.0, 1.0);
    return {concat_cols({start, end}), scores};
}

EncoderLayer::EncoderLayer(Init& init, const std::string& prefix, int dim, int heads, int points,
                           int ffn_dim) {
    DeformAttnConfig cfg{heads, points, dim};
    attn_ = DeformableAttention(init, prefix + ".attn", cfg, RefMode::Scalar);
    ln1_ = LayerNorm(init, prefix + ".ln1", dim);
    ln2_ = LayerNorm(init, prefix + ".ln2", dim);
    ffn_ = Mlp(init, prefix + ".ffn", {dim, ffn_dim, dim});
}

TensorRef EncoderLayer::forward(const TensorRef& x, const TensorRef& pos_embed,
                                const TensorRef& refs, double valid_span) const {
    TensorRef z = add(x, pos_embed);
    TensorRef attn_out = attn_.forward(z, refs, x, valid_span);
    TensorRef h = ln1_.forward(add(x, attn_out));
    TensorRef f = ffn_.forward(h);
    return ln2_.forward(add(h, f));
}

Encoder::Encoder(Init& init, int dim, int layers, int heads, int points, int ffn_dim,
                 int num_classes)
    : dim_(dim) {
    if (dim % 4 != 0) throw ConfigError("model width must be divisible by 4");
    for (int l = 0; l < layers; ++l)
        layers_.emplace_back(init, "encoder.layer" + std::to_string(l), dim, heads, points,
                             ffn_dim);
    dense_ = DenseHead(init, "encoder.dense", dim, num_classes);
}

EncoderOutput Encoder::forward(const TensorRef& x, int valid) const {
    int t = x->rows();
    if (t < 1) throw DataError("encoder input must have at least one snippet");
    if (x->cols() != dim_) throw ConfigError("encoder input width mismatch");
    if (valid < 1 || valid > t) valid = t;

    std::vector<double> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i)
        positions[static_cast<size_t>(i)] =
            t == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(t - 1);
    TensorRef pos_embed = sinusoid_embedding(positions, dim_);
    TensorRef refs = make_tensor({t, 1}, std::vector<double>(positions));
    double valid_span = t == 1 ? 1.0 : static_cast<double>(valid - 1) / static_cast<double>(t - 1);

    TensorRef h = x;
    for (const auto& layer : layers_) h = layer.forward(h, pos_embed, refs, valid_span);

    EncoderOutput out;
    out.features = h;
    FeaturePartition part = partition(h);
    out.start_features = part.start;
    out.end_features = part.end;
    out.instance_features = part.instance;
    auto [intervals, scores] = dense_.forward(h);
    out.dense_intervals = intervals;
    out.dense_scores = scores;
    out.valid = valid;

    int nc = scores->cols();
    out.proposals.resize(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        EncoderProposal& p = out.proposals[static_cast<size_t>(i)];
        p.start = intervals->val[static_cast<size_t>(i) * 2];
        p.end = intervals->val[static_cast<size_t>(i) * 2 + 1];
        p.score = 0;
        for (int c = 0; c < nc; ++c)
            p.score = std::max(p.score, scores->val[static_cast<size_t>(i) * nc + c]);
        p.feature.assign(h->val.begin() + static_cast<size_t>(i) * dim_,
                         h->val.begin() + static_cast<size_t>(i + 1) * dim_);
        p.source_index = i;
    }
    return out;
}

}  // namespace dualdetr
