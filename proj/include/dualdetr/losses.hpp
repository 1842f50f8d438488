#pragma once

#include "dualdetr/decoder.hpp"
#include "dualdetr/matching.hpp"

namespace dualdetr {

// Final-loss weights (classification, iou, l1); distinct from the matching
// cost weights.
struct LossWeights {
    double cls = 2;
    double iou = 2;
    double l1 = 5;
};

// Window-normalized ground truth.
struct GtSet {
    std::vector<Interval> intervals;
    std::vector<int> classes;
    size_t size() const { return intervals.size(); }
};

struct LossTerms {
    double cls = 0;
    double iou = 0;
    double l1 = 0;
};

struct LossBreakdown {
    double cls = 0;
    double iou = 0;
    double l1 = 0;
    double total = 0;
    std::vector<LossTerms> per_layer;  // decoder layers in order, then encoder
};

// One assignment drives every aligned level; the boundary branch regresses
// to the same ground truth as the instance branch at each index.
struct SharedTargets {
    std::vector<int> instance_gt;  // per query, kNoAction when unmatched
    std::vector<int> boundary_gt;
};
SharedTargets share_targets(const MatchResult& match, int nq);

// Matching + focal classification over all queries + L1/IoU localization
// over matched queries (both levels when boundary intervals are present).
// Returns the weighted scalar; raw normalized sums go to *terms.
TensorRef detection_set_loss(const DetectionSet& det, const GtSet& gt, const CostWeights& cost_w,
                             const LossWeights& loss_w, const FocalParams& fp, LossTerms* terms);

// Sum of per-layer losses plus the encoder auxiliary loss.
std::pair<TensorRef, LossBreakdown> total_loss(const std::vector<DetectionSet>& layer_preds,
                                               const DetectionSet& encoder_preds, const GtSet& gt,
                                               const CostWeights& cost_w = {},
                                               const LossWeights& loss_w = {},
                                               const FocalParams& fp = {});

}  // namespace dualdetr
