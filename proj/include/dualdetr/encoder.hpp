#pragma once

#include <string>
#include <vector>

#include "dualdetr/attention.hpp"

namespace dualdetr {

struct EncoderProposal {
    double start = 0;
    double end = 0;
    double score = 0;  // max class probability
    std::vector<double> feature;
    int source_index = 0;
};

struct EncoderOutput {
    TensorRef features;           // T x D
    TensorRef start_features;     // T x D/4
    TensorRef end_features;       // T x D/4
    TensorRef instance_features;  // T x D/2
    TensorRef dense_intervals;    // T x 2, (start, end) in [0,1]
    TensorRef dense_scores;       // T x num_classes, sigmoid probabilities
    std::vector<EncoderProposal> proposals;  // one per position, plain values
    int valid = 0;                           // leading non-padded snippet count
};

// Channel split of the refined map: [0, D/4) start, [D/4, D/2) end,
// [D/2, D) instance. Concatenating the three slices reconstructs the input.
struct FeaturePartition {
    TensorRef start;
    TensorRef end;
    TensorRef instance;
};
FeaturePartition partition(const TensorRef& x_enc);

// Highest-score-first selection; ties broken by lower snippet index.
// Positions at or beyond valid_limit rank below every valid one.
std::vector<int> select_topk(const std::vector<EncoderProposal>& proposals, int nq,
                             int valid_limit = -1);

// Per-position classifier plus center/duration regressor producing dense
// proposals that are valid by construction.
class DenseHead {
public:
    DenseHead() = default;
    DenseHead(Init& init, const std::string& prefix, int dim, int num_classes);
    // returns (intervals T x 2, scores T x num_classes)
    std::pair<TensorRef, TensorRef> forward(const TensorRef& x_enc) const;

private:
    Linear cls_;
    Mlp reg_;
};

class EncoderLayer {
public:
    EncoderLayer(Init& init, const std::string& prefix, int dim, int heads, int points,
                 int ffn_dim);
    TensorRef forward(const TensorRef& x, const TensorRef& pos_embed, const TensorRef& refs,
                      double valid_span) const;

private:
    DeformableAttention attn_;
    LayerNorm ln1_, ln2_;
    Mlp ffn_;
};

class Encoder {
public:
    Encoder(Init& init, int dim, int layers, int heads, int points, int ffn_dim, int num_classes);
    // x: (T x D) snippet features; valid: count of non-padded rows.
    EncoderOutput forward(const TensorRef& x, int valid) const;

private:
    int dim_;
    std::vector<EncoderLayer> layers_;
    DenseHead dense_;
};

}  // namespace dualdetr
