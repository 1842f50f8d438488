#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dualdetr/config.hpp"
#include "dualdetr/losses.hpp"

using namespace dualdetr;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.enc_layers = 1;
    cfg.dec_layers = 2;
    cfg.num_queries = 5;
    cfg.heads = 2;
    cfg.points = 2;
    cfg.num_classes = 3;
    cfg.ffn_mult = 2;
    cfg.seed = 11;
    return cfg;
}

TensorRef random_features(Rng& rng, int t, int d) {
    std::vector<double> v(static_cast<size_t>(t) * d);
    for (auto& e : v) e = rng.normal();
    return make_tensor({t, d}, v);
}

}  // namespace

TEST_CASE("sigmoid-space refinement worked example") {
    TensorRef base = make_scalar(0.5);
    TensorRef delta = make_scalar(std::log(3.0));  // inv_sig(0.75) - inv_sig(0.5)
    TensorRef updated = sigmoid(add(delta, inverse_sigmoid(base)));
    CHECK(updated->item() == doctest::Approx(0.75).epsilon(1e-9));

    // zero offset leaves the position unchanged
    TensorRef same = sigmoid(add(make_scalar(0.0), inverse_sigmoid(base)));
    CHECK(same->item() == doctest::Approx(0.5).epsilon(1e-9));

    // any offset lands strictly inside (0,1); beyond |x| ~ 36 the double
    // representation of sigmoid saturates to the endpoints themselves
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        double d = rng.uniform(-30, 30);
        double v = sigmoid(add(make_scalar(d), inverse_sigmoid(make_scalar(0.37))))->item();
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("zero-initialized regression heads keep initial positions through a layer") {
    ModelConfig cfg = tiny_config();
    cfg.refine = RefineMode::Off;
    DualDetrModel model(cfg);
    Rng rng(5);
    ModelForward fwd = model.forward(random_features(rng, 12, cfg.dim));

    // boundary intervals of every layer equal the initial proposal intervals
    // (up to the inverse-sigmoid clamp for positions touching 0 or 1)
    const DualQuerySet& q0 = fwd.initial_queries;
    for (const auto& det : fwd.layer_outputs) {
        for (int k = 0; k < cfg.num_queries; ++k) {
            const EncoderProposal& p = q0.matched_proposals[static_cast<size_t>(k)];
            CHECK(std::fabs(det.boundary_intervals->val[static_cast<size_t>(k) * 2] - p.start) <
                  2e-5);
            CHECK(std::fabs(det.boundary_intervals->val[static_cast<size_t>(k) * 2 + 1] - p.end) <
                  2e-5);
        }
    }
}

TEST_CASE("mutual refinement: consistent states are fixed points") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        double c = rng.uniform(0.2, 0.8);
        double d = rng.uniform(0.0, std::min(2 * c, 2 * (1 - c)));
        double s = c - d / 2, e = c + d / 2;
        TensorRef i_pos = make_tensor({1, 2}, std::vector<double>{c, d});
        TensorRef s_pos = make_tensor({1, 1}, std::vector<double>{s});
        TensorRef e_pos = make_tensor({1, 1}, std::vector<double>{e});
        RefinedPositions rp = mutual_refine_positions(i_pos, s_pos, e_pos, RefineMode::Parallel);
        CHECK(std::fabs(rp.i_pos->val[0] - c) < 1e-12);
        CHECK(std::fabs(rp.i_pos->val[1] - d) < 1e-12);
        CHECK(std::fabs(rp.s_pos->val[0] - s) < 1e-12);
        CHECK(std::fabs(rp.e_pos->val[0] - e) < 1e-12);
    }
}

TEST_CASE("mutual refinement hand-derived parallel update") {
    TensorRef i_pos = make_tensor({1, 2}, std::vector<double>{0.5, 0.4});
    TensorRef s_pos = make_tensor({1, 1}, std::vector<double>{0.2});
    TensorRef e_pos = make_tensor({1, 1}, std::vector<double>{0.7});
    RefinedPositions rp = mutual_refine_positions(i_pos, s_pos, e_pos, RefineMode::Parallel);
    CHECK(std::fabs(rp.i_pos->val[0] - 0.475) < 1e-12);
    CHECK(std::fabs(rp.i_pos->val[1] - 0.45) < 1e-12);
    CHECK(std::fabs(rp.s_pos->val[0] - 0.25) < 1e-12);
    CHECK(std::fabs(rp.e_pos->val[0] - 0.7) < 1e-12);
}

TEST_CASE("mutual refinement stays in bounds and variants differ as specified") {
    TensorRef i_pos = make_tensor({1, 2}, std::vector<double>{0.5, 0.4});
    TensorRef s_pos = make_tensor({1, 1}, std::vector<double>{0.2});
    TensorRef e_pos = make_tensor({1, 1}, std::vector<double>{0.7});

    RefinedPositions off = mutual_refine_positions(i_pos, s_pos, e_pos, RefineMode::Off);
    CHECK(off.i_pos->val[0] == 0.5);

    RefinedPositions bf = mutual_refine_positions(i_pos, s_pos, e_pos, RefineMode::BoundaryFirst);
    // boundary updated from the original instance state
    CHECK(std::fabs(bf.s_pos->val[0] - 0.25) < 1e-12);
    CHECK(std::fabs(bf.e_pos->val[0] - 0.7) < 1e-12);
    // instance then sees the new boundary values: c = (0.5 + 0.475)/2
    CHECK(std::fabs(bf.i_pos->val[0] - 0.4875) < 1e-12);
    CHECK(std::fabs(bf.i_pos->val[1] - 0.425) < 1e-12);

    RefinedPositions inf = mutual_refine_positions(i_pos, s_pos, e_pos, RefineMode::InstanceFirst);
    // instance updated first (same as parallel), boundary sees it
    CHECK(std::fabs(inf.i_pos->val[0] - 0.475) < 1e-12);
    CHECK(std::fabs(inf.i_pos->val[1] - 0.45) < 1e-12);
    CHECK(std::fabs(inf.s_pos->val[0] - (0.2 + (0.475 - 0.225)) / 2) < 1e-12);

    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        TensorRef ip = make_tensor({1, 2}, std::vector<double>{rng.uniform(0, 1), rng.uniform(0, 1)});
        TensorRef sp = make_tensor({1, 1}, std::vector<double>{rng.uniform(0, 1)});
        TensorRef ep = make_tensor({1, 1}, std::vector<double>{rng.uniform(0, 1)});
        for (RefineMode m : {RefineMode::Parallel, RefineMode::BoundaryFirst,
                             RefineMode::InstanceFirst}) {
            RefinedPositions rp = mutual_refine_positions(ip, sp, ep, m);
            for (double v : rp.i_pos->val) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(rp.s_pos->val[0] >= 0.0);
            CHECK(rp.e_pos->val[0] <= 1.0);
        }
    }
}

TEST_CASE("detection head: zero classifier gives 0.5 scores, count is always N_q") {
    ModelConfig cfg = tiny_config();
    DualDetrModel model(cfg);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        std::string prefix = "decoder.layer" + std::to_string(l) + ".cls.";
        for (const char* part : {"weight", "bias"}) {
            TensorRef t = model.params().find(prefix + part)->tensor;
            std::fill(t->val.begin(), t->val.end(), 0.0);
        }
    }
    Rng rng(13);
    ModelForward fwd = model.forward(random_features(rng, 10, cfg.dim));
    for (const auto& det : fwd.layer_outputs) {
        CHECK(det.count() == cfg.num_queries);
        for (double v : det.scores->val) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("positions stay in [0,1] after every decoder layer on random passes") {
    ModelConfig cfg = tiny_config();
    DualDetrModel model(cfg);
    Rng rng(21);
    for (int pass = 0; pass < 10; ++pass) {
        ModelForward fwd = model.forward(random_features(rng, 14, cfg.dim));
        CHECK(static_cast<int>(fwd.layer_outputs.size()) == cfg.dec_layers);
        for (const auto& det : fwd.layer_outputs) {
            for (double v : det.intervals->val) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            for (double v : det.boundary_intervals->val) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            for (double v : det.scores->val) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
    }
}

TEST_CASE("decoder layer gradients pass finite-difference checks") {
    // learned queries keep the non-differentiable top-k selection out of the
    // checked path, and randomized final layers spread positions/scores so no
    // tie flips under the +-h perturbations
    ModelConfig cfg = tiny_config();
    cfg.dec_layers = 1;
    cfg.align = false;
    cfg.init = InitMode::Learned;
    DualDetrModel model(cfg);
    Rng wr(6);
    for (auto& p : model.params().all())
        if (p.name.find("reg.fc2") != std::string::npos ||
            p.name.find("cls.weight") != std::string::npos)
            for (auto& v : p.tensor->val) v = wr.normal() * 0.3;
    // pin query positions well inside (0,1): clamp and min/max kinks must not
    // sit exactly at the evaluation point
    auto logit = [](double p) { return inverse_sigmoid_scalar(p); };
    {
        std::vector<double> ipos, spos, epos;
        for (int k = 0; k < cfg.num_queries; ++k) {
            double c = 0.35 + 0.06 * k, d = 0.2 + 0.015 * k;
            ipos.push_back(logit(c));
            ipos.push_back(logit(d));
            spos.push_back(logit(c - d / 2 + 0.013));
            epos.push_back(logit(c + d / 2 - 0.017));
        }
        model.params().find("queries.i_pos")->tensor->val = ipos;
        model.params().find("queries.s_pos")->tensor->val = spos;
        model.params().find("queries.e_pos")->tensor->val = epos;
    }

    Rng rng(3);
    std::vector<double> fv(14 * static_cast<size_t>(cfg.dim));
    for (auto& e : fv) e = rng.normal() * 0.5;
    TensorRef features = make_tensor({14, cfg.dim}, fv, true);

    std::vector<double> mix;
    auto forward = [&] {
        ModelForward fwd = model.forward(features);
        const DetectionSet& det = fwd.layer_outputs.back();
        if (mix.empty()) {
            Rng mrng(8);
            mix.resize(det.scores->val.size());
            for (auto& e : mix) e = mrng.normal();
        }
        TensorRef mixer = make_tensor(det.scores->shape, mix);
        return add(sum(mul(det.scores, mixer)), add(sum(det.intervals), sum(det.boundary_intervals)));
    };
    CHECK(grad_check(forward, features) < 1e-4);
    for (const char* name :
         {"decoder.layer0.instance.cross_attn.offset.bias", "decoder.layer0.instance.reg.fc2.bias",
          "decoder.layer0.boundary.ln2.gamma", "decoder.layer0.cls.bias",
          "decoder.layer0.boundary.cross_attn.head_scale", "queries.i_con", "queries.s_pos"}) {
        TensorRef t = model.params().find(name)->tensor;
        CHECK(grad_check(forward, t) < 1e-4);
    }
}

TEST_CASE("disabling the boundary branch leaves its parameters without gradient") {
    ModelConfig cfg = tiny_config();
    DualDetrModel model(cfg);
    Rng rng(17);
    TensorRef features = random_features(rng, 12, cfg.dim);
    for (auto& p : model.params().all()) {
        p.tensor->ensure_grad();
        p.tensor->clear_grad();
    }
    ModelForward fwd = model.forward(features, -1, QueryLevel::Instance);
    GtSet gts;
    gts.intervals = {{0.2, 0.5}};
    gts.classes = {1};
    auto [loss, bd] = total_loss(fwd.layer_outputs, fwd.encoder_detections, gts);
    backward(loss);

    bool instance_touched = false;
    for (const auto& p : model.params().all()) {
        double mx = 0;
        for (double g : p.tensor->grad) mx = std::max(mx, std::fabs(g));
        if (p.name.find(".boundary.") != std::string::npos) {
            CHECK(mx == 0.0);
        } else if (p.name.find(".instance.") != std::string::npos && mx > 0) {
            instance_touched = true;
        }
    }
    CHECK(instance_touched);
}

TEST_CASE("every structural ablation variant trains a step") {
    const char* variants[] = {
        "",                                                        // full default
        "refine = boundary-first\n",
        "refine = instance-first\n",
        "refine = off\n",
        "refine = position-and-content\n",
        "level = instance\nrefine = off\n",
        "level = boundary\nrefine = off\n",
        "branch = shared\nalign = off\ninit = learned\n",          // simple combine
        "branch = two-branch\nalign = off\ninit = learned\n",
        "align = on\ninit = position-only\n",
    };
    for (const char* extra : variants) {
        INFO("variant: " << (std::string(extra).empty() ? "default" : extra));
        RunConfig cfg = RunConfig::from_text(
            std::string("dim = 16\nenc_layers = 1\ndec_layers = 2\nnum_queries = 6\n"
                        "heads = 2\npoints = 2\nnum_classes = 3\nwindow = 24\nffn_mult = 2\n") +
            extra);
        DualDetrModel model(cfg.model);
        Rng rng(7);
        std::vector<double> fv(24 * 16);
        for (auto& e : fv) e = rng.normal();
        ModelForward fwd = model.forward(make_tensor({24, 16}, fv));
        CHECK(static_cast<int>(fwd.layer_outputs.size()) == cfg.model.dec_layers);
        for (const auto& det : fwd.layer_outputs) {
            CHECK(det.count() == cfg.model.num_queries);
            for (double v : det.intervals->val) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
        GtSet gts;
        gts.intervals = {{0.2, 0.5}};
        gts.classes = {2};
        auto [loss, bd] = total_loss(fwd.layer_outputs, fwd.encoder_detections, gts);
        CHECK(std::isfinite(loss->item()));
        backward(loss);

        // boundary-only models carry no instance parameters and vice versa
        bool has_instance = false, has_boundary = false;
        for (const auto& p : model.params().all()) {
            if (p.name.find(".instance.") != std::string::npos) has_instance = true;
            if (p.name.find(".boundary.") != std::string::npos) has_boundary = true;
        }
        CHECK(has_instance == (cfg.model.level != QueryLevel::Boundary));
        CHECK(has_boundary == (cfg.model.level != QueryLevel::Instance));
    }
}

TEST_CASE("every trainable parameter receives gradient on a random batch") {
    // The zero-initialized offset heads block gradient into their trunks at
    // step 0, so warm the model with one small update first; afterwards no
    // branch may stay dead.
    ModelConfig cfg = tiny_config();
    DualDetrModel model(cfg);
    Rng rng(29);
    auto run_batch = [&] {
        for (int w = 0; w < 3; ++w) {
            TensorRef features = random_features(rng, 12, cfg.dim);
            ModelForward fwd = model.forward(features);
            GtSet gts;
            double a = rng.uniform(0.0, 0.5);
            gts.intervals = {{a, a + 0.3}, {0.6, 0.9}};
            gts.classes = {static_cast<int>(rng.uniform_int(0, 2)), 0};
            auto [loss, bd] = total_loss(fwd.layer_outputs, fwd.encoder_detections, gts);
            backward(loss);
        }
    };
    for (auto& p : model.params().all()) {
        p.tensor->ensure_grad();
        p.tensor->clear_grad();
    }
    run_batch();
    for (auto& p : model.params().all()) {  // plain gradient step as warm-up
        for (size_t i = 0; i < p.tensor->val.size(); ++i)
            p.tensor->val[i] -= 0.01 * p.tensor->grad[i];
        p.tensor->clear_grad();
    }
    run_batch();
    for (const auto& p : model.params().all()) {
        double mx = 0;
        for (double g : p.tensor->grad) mx = std::max(mx, std::fabs(g));
        INFO("parameter " << p.name);
        CHECK(mx > 0.0);
    }
}
