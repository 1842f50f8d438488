#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dualdetr/queries.hpp"

namespace dualdetr {

enum class RefineMode {
    Parallel,       // simultaneous update from pre-update values
    BoundaryFirst,  // sequential: boundary updated first, instance sees new values
    InstanceFirst,
    Off,
    PositionAndContent,  // parallel positions plus a content-mixing feed-forward
};

struct DetectionSet {
    TensorRef intervals;  // N x 2 (start, end)
    TensorRef scores;     // N x num_classes probabilities
    // Aligned boundary-level intervals (N x 2) for target sharing; null when
    // the boundary branch is absent or already the reported level.
    TensorRef boundary_intervals;
    int count() const { return intervals ? intervals->rows() : 0; }
};

// Averaging synchronization of the two position parameterizations. Returns
// updated copies; stored inputs are never mutated.
struct RefinedPositions {
    TensorRef i_pos;
    TensorRef s_pos;
    TensorRef e_pos;
};
RefinedPositions mutual_refine_positions(const TensorRef& i_pos, const TensorRef& s_pos,
                                         const TensorRef& e_pos, RefineMode mode);

struct DecoderStructure {
    int layers = 5;
    int dim = 256;  // full model width D; regression hidden width
    int instance_width = 128;
    int boundary_width = 64;
    int heads = 8;
    int points = 4;
    int ffn_dim = 1024;
    int num_classes = 0;
    int nq = 0;
    QueryLevel level = QueryLevel::Dual;
    RefineMode refine = RefineMode::Parallel;
};

class BoundaryDecoderLayer {
public:
    BoundaryDecoderLayer(Init& init, const std::string& prefix, const DecoderStructure& s);
    // Jointly self-attends start+end queries as one 2N sequence, then
    // cross-attends each group into its own map and refines positions in
    // sigmoid space.
    void forward(DualQuerySet& q, const TensorRef& x_s, const TensorRef& x_e,
                 double valid_span) const;

private:
    MultiHeadSelfAttention self_attn_;
    DeformableAttention cross_attn_;
    LayerNorm ln1_, ln2_, ln3_;
    Mlp ffn_;
    Mlp reg_;  // shared between start and end offsets
};

class InstanceDecoderLayer {
public:
    InstanceDecoderLayer(Init& init, const std::string& prefix, const DecoderStructure& s);
    void forward(DualQuerySet& q, const TensorRef& x_i, double valid_span) const;

private:
    MultiHeadSelfAttention self_attn_;
    DeformableAttention cross_attn_;
    LayerNorm ln1_, ln2_, ln3_;
    Mlp ffn_;
    Mlp reg_;
};

class Decoder {
public:
    Decoder(Init& init, const DecoderStructure& s);

    // x_s/x_e/x_i are the per-branch value maps (all equal to the full map in
    // the shared-decoder configuration). Returns one DetectionSet per layer;
    // the last one is the model output.
    std::vector<DetectionSet> forward(DualQuerySet q, const TensorRef& x_s, const TensorRef& x_e,
                                      const TensorRef& x_i, double valid_span,
                                      QueryLevel active_level) const;

    const DecoderStructure& structure() const { return structure_; }

private:
    DetectionSet detection_head(const DualQuerySet& q, int layer, QueryLevel active_level) const;

    DecoderStructure structure_;
    std::vector<BoundaryDecoderLayer> boundary_layers_;
    std::vector<InstanceDecoderLayer> instance_layers_;
    std::vector<Linear> classifiers_;    // per layer
    std::vector<Mlp> content_mix_;       // per layer, PositionAndContent only
};

}  // namespace dualdetr
