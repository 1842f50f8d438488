#pragma once

#include <vector>

#include "dualdetr/common.hpp"

namespace dualdetr {

struct Interval {
    double start = 0;
    double end = 0;
};

// Temporal intersection-over-union. Zero-length conventions: two identical
// points give 1, disjoint points give 0. Degenerate ground truths are
// rejected earlier, at ingestion.
double tiou(const Interval& a, const Interval& b);

constexpr int kNoAction = -1;

struct MatchResult {
    // assignment[q] = ground-truth index, or kNoAction for unmatched queries
    std::vector<int> assignment;
    double total_cost = 0;
    std::vector<int> matched_queries() const;
};

// Matching-cost weights (classification, iou, l1).
struct CostWeights {
    double cls = 6;
    double iou = 2;
    double l1 = 5;
};

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

// Per-element focal terms used both by the matching cost and as the
// reference for loss unit tests.
double focal_term(double p, bool positive, const FocalParams& fp = {});

// cost(i, j) for query i against ground truth j. Inputs are plain values;
// the assignment itself is non-differentiable.
// scores: per query, per class probabilities. gt_class: class id per gt.
std::vector<std::vector<double>> cost_matrix(const std::vector<Interval>& pred_intervals,
                                             const std::vector<std::vector<double>>& pred_scores,
                                             const std::vector<Interval>& gt_intervals,
                                             const std::vector<int>& gt_classes,
                                             const CostWeights& w = {},
                                             const FocalParams& fp = {});

// Minimum-cost injective assignment of the M columns (ground truths) to the
// N rows (queries); requires N >= M. O(n^3) shortest augmenting paths.
MatchResult hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace dualdetr
