#include "dualdetr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualdetr {

double tiou(const Interval& a, const Interval& b) {
    if (a.start > a.end || b.start > b.end) throw NumericError("tiou: interval start > end");
    double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
    double uni = (a.end - a.start) + (b.end - b.start) - std::max(0.0, inter);
    if (uni <= 0.0) {
        // both zero-length: 1 when they coincide, 0 otherwise
        return a.start == b.start ? 1.0 : 0.0;
    }
    return std::max(0.0, inter) / uni;
}

std::vector<int> MatchResult::matched_queries() const {
    std::vector<int> out;
    for (size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] != kNoAction) out.push_back(static_cast<int>(i));
    return out;
}

double focal_term(double p, bool positive, const FocalParams& fp) {
    constexpr double eps = 1e-8;
    double pc = std::min(1.0 - eps, std::max(eps, p));
    if (positive) return -fp.alpha * std::pow(1.0 - pc, fp.gamma) * std::log(pc);
    return -(1.0 - fp.alpha) * std::pow(pc, fp.gamma) * std::log(1.0 - pc);
}

std::vector<std::vector<double>> cost_matrix(const std::vector<Interval>& pred_intervals,
                                             const std::vector<std::vector<double>>& pred_scores,
                                             const std::vector<Interval>& gt_intervals,
                                             const std::vector<int>& gt_classes,
                                             const CostWeights& w, const FocalParams& fp) {
    size_t nq = pred_intervals.size();
    size_t ng = gt_intervals.size();
    if (pred_scores.size() != nq) throw NumericError("cost_matrix: score count mismatch");
    if (gt_classes.size() != ng) throw NumericError("cost_matrix: gt class count mismatch");

    std::vector<std::vector<double>> cost(nq, std::vector<double>(ng, 0.0));
    for (size_t i = 0; i < nq; ++i) {
        for (size_t j = 0; j < ng; ++j) {
            double p = pred_scores[i][static_cast<size_t>(gt_classes[j])];
            // focal-style matching cost: positive term minus negative term on
            // the ground-truth class probability
            double c_cls = focal_term(p, true, fp) - focal_term(p, false, fp);
            double c_iou = 1.0 - tiou(pred_intervals[i], gt_intervals[j]);
            double c_l1 = std::fabs(pred_intervals[i].start - gt_intervals[j].start) +
                          std::fabs(pred_intervals[i].end - gt_intervals[j].end);
            cost[i][j] = w.cls * c_cls + w.iou * c_iou + w.l1 * c_l1;
            if (!std::isfinite(cost[i][j])) throw NumericError("cost_matrix: non-finite entry");
        }
    }
    return cost;
}

MatchResult hungarian(const std::vector<std::vector<double>>& cost) {
    int nq = static_cast<int>(cost.size());
    int ng = nq == 0 ? 0 : static_cast<int>(cost[0].size());
    MatchResult res;
    res.assignment.assign(static_cast<size_t>(nq), kNoAction);
    if (ng == 0) return res;
    if (ng > nq) throw NumericError("hungarian: more ground truths than queries");
    for (const auto& row : cost) {
        if (static_cast<int>(row.size()) != ng) throw NumericError("hungarian: ragged cost matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw NumericError("hungarian: non-finite cost");
    }

    // Shortest-augmenting-path assignment over rows = ground truths (ng),
    // columns = queries (nq), ng <= nq.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(ng) + 1, 0.0), v(static_cast<size_t>(nq) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(nq) + 1, 0), way(static_cast<size_t>(nq) + 1, 0);
    for (int i = 1; i <= ng; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(nq) + 1, inf);
        std::vector<char> used(static_cast<size_t>(nq) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= nq; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost[static_cast<size_t>(j - 1)][static_cast<size_t>(i0 - 1)] -
                             u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= nq; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    res.total_cost = 0;
    for (int j = 1; j <= nq; ++j) {
        int gt = p[static_cast<size_t>(j)];
        if (gt > 0) {
            res.assignment[static_cast<size_t>(j - 1)] = gt - 1;
            res.total_cost += cost[static_cast<size_t>(j - 1)][static_cast<size_t>(gt - 1)];
        }
    }
    return res;
}

}  // namespace dualdetr
