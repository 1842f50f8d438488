#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dualdetr/losses.hpp"
#include "dualdetr/model.hpp"

using namespace dualdetr;

namespace {

DetectionSet detection_set(const std::vector<double>& intervals,
                           const std::vector<double>& scores, int nq, int nc,
                           const std::vector<double>* boundary = nullptr) {
    DetectionSet det;
    det.intervals = make_tensor({nq, 2}, intervals);
    det.scores = make_tensor({nq, nc}, scores);
    if (boundary) det.boundary_intervals = make_tensor({nq, 2}, *boundary);
    return det;
}

}  // namespace

TEST_CASE("focal loss hand values") {
    FocalParams fp;
    CHECK(focal_term(0.5, true, fp) == doctest::Approx(0.0433217).epsilon(1e-4));
    CHECK(std::fabs(focal_term(0.5, true, fp) - 0.04332) < 1e-5);
    CHECK(std::fabs(focal_term(0.5, false, fp) - 0.12996) < 1e-5);
    CHECK(focal_term(1.0 - 1e-9, true, fp) < 1e-8);  // confident-correct limit
}

TEST_CASE("focal loss is monotone in the predicted probability") {
    FocalParams fp;
    double prev_pos = focal_term(0.01, true, fp);
    double prev_neg = focal_term(0.01, false, fp);
    for (double p = 0.02; p < 1.0; p += 0.01) {
        double pos = focal_term(p, true, fp);
        double neg = focal_term(p, false, fp);
        CHECK(pos < prev_pos);  // decreasing for positives
        CHECK(neg > prev_neg);  // increasing for negatives
        prev_pos = pos;
        prev_neg = neg;
    }
}

TEST_CASE("share_targets copies one assignment to both levels") {
    MatchResult match;
    match.assignment = {2, kNoAction, 0};
    SharedTargets st = share_targets(match, 3);
    CHECK(st.instance_gt == st.boundary_gt);
    CHECK(st.instance_gt == std::vector<int>{2, kNoAction, 0});
    CHECK_THROWS_AS(share_targets(match, 4), NumericError);
}

TEST_CASE("zero ground truths leave only the classification term") {
    DetectionSet det = detection_set({0.1, 0.3, 0.5, 0.9}, {0.4, 0.2, 0.6, 0.3}, 2, 2);
    GtSet gts;
    LossTerms terms;
    TensorRef loss = detection_set_loss(det, gts, {}, {}, {}, &terms);
    CHECK(terms.iou == 0.0);
    CHECK(terms.l1 == 0.0);
    CHECK(terms.cls > 0.0);
    // all-negative focal sum normalized by max(1, matched) = 1
    FocalParams fp;
    double expect = focal_term(0.4, false, fp) + focal_term(0.2, false, fp) +
                    focal_term(0.6, false, fp) + focal_term(0.3, false, fp);
    CHECK(loss->item() == doctest::Approx(2.0 * expect).epsilon(1e-9));  // loss_cls = 2
}

TEST_CASE("perfect matched predictions drive every term toward zero") {
    double p = 1.0 - 1e-9;
    std::vector<double> intervals{0.2, 0.6, 0.7, 0.9};
    std::vector<double> scores{p, 1 - p, 1 - p, p};
    std::vector<double> boundary = intervals;
    DetectionSet det = detection_set(intervals, scores, 2, 2, &boundary);
    GtSet gts;
    gts.intervals = {{0.2, 0.6}, {0.7, 0.9}};
    gts.classes = {0, 1};
    LossTerms terms;
    TensorRef loss = detection_set_loss(det, gts, {}, {}, {}, &terms);
    CHECK(terms.l1 < 1e-9);
    CHECK(terms.iou < 1e-9);
    CHECK(terms.cls < 1e-6);
    CHECK(loss->item() < 1e-5);
}

TEST_CASE("total loss is additive over layers") {
    std::vector<double> intervals{0.1, 0.4, 0.6, 0.8};
    std::vector<double> scores{0.7, 0.2, 0.3, 0.6};
    DetectionSet det = detection_set(intervals, scores, 2, 2);
    GtSet gts;
    gts.intervals = {{0.15, 0.45}};
    gts.classes = {0};

    DetectionSet none;  // no encoder auxiliary set
    auto [l1, b1] = total_loss({det}, none, gts);
    auto [l2, b2] = total_loss({det, det}, none, gts);
    CHECK(l2->item() == doctest::Approx(2 * l1->item()).epsilon(1e-12));
    CHECK(b2.per_layer.size() == 2);
    CHECK(b2.total == doctest::Approx(2 * b1.total).epsilon(1e-12));

    // breakdown identity: total = sum of weighted raw terms
    LossWeights lw;
    CHECK(b1.total ==
          doctest::Approx(lw.cls * b1.cls + lw.iou * b1.iou + lw.l1 * b1.l1).epsilon(1e-12));
    CHECK(l1->item() == doctest::Approx(b1.total).epsilon(1e-12));
}

TEST_CASE("boundary intervals are supervised through the shared assignment") {
    std::vector<double> intervals{0.2, 0.6};
    std::vector<double> perfect_boundary{0.25, 0.55};
    std::vector<double> scores{0.9};
    DetectionSet with_boundary = detection_set(intervals, scores, 1, 1, &perfect_boundary);
    DetectionSet without = detection_set(intervals, scores, 1, 1);
    GtSet gts;
    gts.intervals = {{0.2, 0.6}};
    gts.classes = {0};

    LossTerms t_with, t_without;
    detection_set_loss(with_boundary, gts, {}, {}, {}, &t_with);
    detection_set_loss(without, gts, {}, {}, {}, &t_without);
    // instance interval is exact; the extra localization loss comes from the
    // boundary level regressing to the same ground truth
    CHECK(t_without.l1 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t_with.l1 == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(t_with.iou > t_without.iou);
}

TEST_CASE("windows with more ground truths than queries raise") {
    DetectionSet det = detection_set({0.1, 0.4}, {0.5}, 1, 1);
    GtSet gts;
    gts.intervals = {{0.1, 0.2}, {0.3, 0.4}};
    gts.classes = {0, 0};
    CHECK_THROWS_AS(detection_set_loss(det, gts, {}, {}, {}, nullptr), NumericError);
}

TEST_CASE("total_loss gradients agree with finite differences on a micro-instance") {
    // learned queries + randomized heads keep the detached selection and
    // matching away from ties, so the loss is differentiable along the path
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.num_queries = 2;
    cfg.heads = 2;
    cfg.points = 1;
    cfg.num_classes = 2;
    cfg.ffn_mult = 2;
    cfg.seed = 51;
    cfg.align = false;
    cfg.init = InitMode::Learned;
    DualDetrModel model(cfg);
    Rng wr(14);
    for (auto& p : model.params().all())
        if (p.name.find("reg.fc") != std::string::npos ||
            p.name.find("cls.weight") != std::string::npos)
            for (auto& v : p.tensor->val) v = wr.normal() * 0.2;
    // pin query positions well inside (0,1) so no clamp or interval kink sits
    // exactly at the evaluation point
    auto logit = [](double p) { return inverse_sigmoid_scalar(p); };
    model.params().find("queries.i_pos")->tensor->val = {logit(0.45), logit(0.24), logit(0.62),
                                                         logit(0.21)};
    model.params().find("queries.s_pos")->tensor->val = {logit(0.34), logit(0.52)};
    model.params().find("queries.e_pos")->tensor->val = {logit(0.57), logit(0.73)};

    Rng rng(4);
    std::vector<double> fv(8 * 8);
    for (auto& e : fv) e = rng.normal() * 0.5;
    TensorRef features = make_tensor({8, 8}, fv, true);
    GtSet gts;
    gts.intervals = {{0.25, 0.65}};
    gts.classes = {1};

    auto forward = [&] {
        ModelForward fwd = model.forward(features);
        auto [loss, bd] = total_loss(fwd.layer_outputs, fwd.encoder_detections, gts);
        return loss;
    };
    CHECK(grad_check(forward, features) < 1e-3);
    for (const char* name :
         {"decoder.layer0.cls.weight", "decoder.layer0.instance.reg.fc2.bias",
          "encoder.dense.reg.fc1.bias", "encoder.layer0.attn.value_proj.weight",
          "queries.i_pos"}) {
        CHECK(grad_check(forward, model.params().find(name)->tensor) < 1e-3);
    }
}
