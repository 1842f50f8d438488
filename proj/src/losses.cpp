#include "dualdetr/losses.hpp"

#include <algorithm>

namespace dualdetr {

SharedTargets share_targets(const MatchResult& match, int nq) {
    if (static_cast<int>(match.assignment.size()) != nq)
        throw NumericError("share_targets: assignment size mismatch");
    SharedTargets st;
    st.instance_gt = match.assignment;
    st.boundary_gt = match.assignment;
    return st;
}

namespace {

// sum over matched rows of (1 - tiou) plus the L1 distance, both normalized
struct LocalizationLoss {
    TensorRef iou;
    TensorRef l1;
};

LocalizationLoss localization_terms(const TensorRef& intervals, const std::vector<int>& rows,
                                    const TensorRef& gt_targets, double norm) {
    int m = static_cast<int>(rows.size());
    TensorRef pred = gather_rows(intervals, rows);
    TensorRef ps = slice_cols(pred, 0, 1);
    TensorRef pe = slice_cols(pred, 1, 2);
    TensorRef gs = slice_cols(gt_targets, 0, 1);
    TensorRef ge = slice_cols(gt_targets, 1, 2);
    TensorRef inter = relu(sub(minimum(pe, ge), maximum(ps, gs)));
    TensorRef uni = sub(add(sub(pe, ps), sub(ge, gs)), inter);
    TensorRef iou = div(inter, uni);
    LocalizationLoss out;
    out.iou = scale(add_scalar(neg(sum(iou)), static_cast<double>(m)), 1.0 / norm);
    out.l1 = scale(sum(absval(sub(pred, gt_targets))), 1.0 / norm);
    return out;
}

}  // namespace

TensorRef detection_set_loss(const DetectionSet& det, const GtSet& gt, const CostWeights& cost_w,
                             const LossWeights& loss_w, const FocalParams& fp, LossTerms* terms) {
    int nq = det.count();
    int nc = det.scores->cols();
    size_t ng = gt.size();

    // matching runs on detached values
    std::vector<Interval> pred_iv(static_cast<size_t>(nq));
    std::vector<std::vector<double>> pred_sc(static_cast<size_t>(nq),
                                             std::vector<double>(static_cast<size_t>(nc)));
    for (int i = 0; i < nq; ++i) {
        pred_iv[static_cast<size_t>(i)] = {det.intervals->val[static_cast<size_t>(i) * 2],
                                           det.intervals->val[static_cast<size_t>(i) * 2 + 1]};
        for (int c = 0; c < nc; ++c)
            pred_sc[static_cast<size_t>(i)][static_cast<size_t>(c)] =
                det.scores->val[static_cast<size_t>(i) * nc + c];
    }

    MatchResult match;
    if (ng > 0) {
        auto cost = cost_matrix(pred_iv, pred_sc, gt.intervals, gt.classes, cost_w, fp);
        match = hungarian(cost);
    } else {
        match.assignment.assign(static_cast<size_t>(nq), kNoAction);
    }
    SharedTargets st = share_targets(match, nq);

    std::vector<int> matched_rows;
    std::vector<double> matched_targets;
    for (int i = 0; i < nq; ++i) {
        int j = st.instance_gt[static_cast<size_t>(i)];
        if (j == kNoAction) continue;
        matched_rows.push_back(i);
        matched_targets.push_back(gt.intervals[static_cast<size_t>(j)].start);
        matched_targets.push_back(gt.intervals[static_cast<size_t>(j)].end);
    }
    double norm = std::max<size_t>(1, matched_rows.size());

    // classification targets over every query; unmatched queries push all
    // classes toward zero
    std::vector<double> y(static_cast<size_t>(nq) * nc, 0.0);
    for (int i = 0; i < nq; ++i) {
        int j = st.instance_gt[static_cast<size_t>(i)];
        if (j != kNoAction)
            y[static_cast<size_t>(i) * nc + gt.classes[static_cast<size_t>(j)]] = 1.0;
    }
    TensorRef targets = make_tensor({nq, nc}, std::move(y));
    TensorRef cls = focal_loss_sum(det.scores, targets, fp.alpha, fp.gamma, norm);

    TensorRef total = scale(cls, loss_w.cls);
    double iou_val = 0, l1_val = 0;
    if (!matched_rows.empty()) {
        TensorRef gt_t =
            make_tensor({static_cast<int>(matched_rows.size()), 2}, std::move(matched_targets));
        LocalizationLoss inst = localization_terms(det.intervals, matched_rows, gt_t, norm);
        TensorRef iou_term = inst.iou;
        TensorRef l1_term = inst.l1;
        if (det.boundary_intervals) {
            LocalizationLoss bnd =
                localization_terms(det.boundary_intervals, matched_rows, gt_t, norm);
            iou_term = add(iou_term, bnd.iou);
            l1_term = add(l1_term, bnd.l1);
        }
        iou_val = iou_term->item();
        l1_val = l1_term->item();
        total = add(total, add(scale(iou_term, loss_w.iou), scale(l1_term, loss_w.l1)));
    }

    if (terms) {
        terms->cls = cls->item();
        terms->iou = iou_val;
        terms->l1 = l1_val;
    }
    return total;
}

std::pair<TensorRef, LossBreakdown> total_loss(const std::vector<DetectionSet>& layer_preds,
                                               const DetectionSet& encoder_preds, const GtSet& gt,
                                               const CostWeights& cost_w, const LossWeights& loss_w,
                                               const FocalParams& fp) {
    LossBreakdown bd;
    TensorRef total;
    auto accumulate = [&](const DetectionSet& det) {
        LossTerms t;
        TensorRef part = detection_set_loss(det, gt, cost_w, loss_w, fp, &t);
        bd.per_layer.push_back(t);
        bd.cls += t.cls;
        bd.iou += t.iou;
        bd.l1 += t.l1;
        total = total ? add(total, part) : part;
    };
    for (const auto& det : layer_preds) accumulate(det);
    if (encoder_preds.intervals) accumulate(encoder_preds);
    bd.total = loss_w.cls * bd.cls + loss_w.iou * bd.iou + loss_w.l1 * bd.l1;
    return {total, bd};
}

}  // namespace dualdetr
