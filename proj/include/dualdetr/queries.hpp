#pragma once

#include <string>
#include <vector>

#include "dualdetr/encoder.hpp"
#include "dualdetr/matching.hpp"

namespace dualdetr {

enum class InitMode {
    Joint,         // positions and channel-split content from matched proposals
    PositionOnly,  // positions from proposals, content learned
    Learned,       // both learned, no proposal alignment
};

enum class QueryLevel { Dual, Instance, Boundary };

// Index-aligned instance and boundary query groups. Index k of every array
// refers to the same detection slot; in aligned modes, also to the same
// encoder proposal (recorded in source_indices).
struct DualQuerySet {
    TensorRef i_con;  // N_q x instance width
    TensorRef i_pos;  // N_q x 2, (center, duration) in [0,1]
    TensorRef s_con;  // N_q x boundary width
    TensorRef e_con;
    TensorRef s_pos;  // N_q x 1
    TensorRef e_pos;
    std::vector<EncoderProposal> matched_proposals;  // empty in Learned mode
    std::vector<int> source_indices;
    int count = 0;
};

// Plain-value interval conversion: instance (c, d) -> (c - d/2, c + d/2);
// boundary returns the stored pair. Inverted pairs are swapped at conversion
// only and the result is clipped to [0, 1].
Interval positions_to_interval(const DualQuerySet& q, int k, QueryLevel level);

// Graph versions used by losses and the detection head; rows are queries.
TensorRef instance_interval_tensor(const TensorRef& i_pos);          // N x 2
TensorRef boundary_interval_tensor(const TensorRef& s_pos, const TensorRef& e_pos);

class QueryInit {
public:
    QueryInit() = default;
    // instance_width/boundary_width depend on the decoding structure.
    QueryInit(Init& init, int nq, int instance_width, int boundary_width, int feature_dim,
              InitMode mode, QueryLevel level);

    // selected: proposals chosen by select_topk, in rank order. Ignored in
    // Learned mode.
    DualQuerySet build(const std::vector<EncoderProposal>& selected) const;

    InitMode mode() const { return mode_; }

private:
    int nq_ = 0;
    int instance_width_ = 0;
    int boundary_width_ = 0;
    int feature_dim_ = 0;
    InitMode mode_ = InitMode::Joint;
    QueryLevel level_ = QueryLevel::Dual;
    // learned content / position parameters (only the ones the mode needs)
    TensorRef i_con_embed_, s_con_embed_, e_con_embed_;
    TensorRef i_pos_logits_, s_pos_logits_, e_pos_logits_;
};

}  // namespace dualdetr
