// Acceptance suite: one line per criterion, nonzero exit when a blocking
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>

#include "dualdetr/pipeline.hpp"
#include "oracles.hpp"

using namespace dualdetr;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail,
            bool blocking = true) {
    const char* tag = pass ? "[PASS]" : (blocking ? "[FAIL]" : "[WARN]");
    std::printf("%s criterion %d: %s — %s\n", tag, id, name, detail.c_str());
    std::fflush(stdout);
    if (!pass && blocking) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

void matcher_oracle() {
    auto t0 = Clock::now();
    Rng rng(20240501);
    int checked = 0;
    double max_diff = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int nq = 1 + static_cast<int>(rng.uniform_int(0, 5));
        int ng = 1 + static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(nq) - 1));
        std::vector<std::vector<double>> cost(static_cast<size_t>(nq),
                                              std::vector<double>(static_cast<size_t>(ng)));
        for (auto& row : cost)
            for (auto& v : row) v = rng.uniform(-20, 20);
        double fast = hungarian(cost).total_cost;
        double slow = oracles::brute_force_best_cost(cost);
        max_diff = std::max(max_diff, std::fabs(fast - slow));
        ++checked;
    }
    double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d matrices, max |fast - brute| = %.3g, %.2f s", checked,
                  max_diff, dt);
    report(1, "matcher equals exhaustive search", max_diff <= 1e-9 && dt < 10.0, buf);
}

// ---------------------------------------------------------------- criterion 2

void gradient_suite() {
    auto t0 = Clock::now();
    double worst = 0;
    std::string worst_name = "none";
    auto track = [&](const char* name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };

    Rng rng(71);
    auto randt = [&](std::vector<int> shape, double s, bool rg) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (auto& e : v) e = rng.normal() * s;
        return make_tensor(shape, v, rg);
    };

    {  // sigmoid / inverse sigmoid
        TensorRef x = randt({8}, 1.0, true);
        track("sigmoid", grad_check([&] { return sum(sigmoid(x)); }, x));
        std::vector<double> ys(6);
        for (auto& y : ys) y = rng.uniform(0.05, 0.95);
        TensorRef yt = make_tensor({6}, ys, true);
        track("inverse_sigmoid",
              grad_check([&] { return sum(mul(inverse_sigmoid(yt), yt)); }, yt));
    }
    {  // linear_sample w.r.t. map and positions
        TensorRef x = randt({9, 3}, 1.0, true);
        TensorRef pos = make_tensor({4}, std::vector<double>{0.13, 0.37, 0.61, 0.88}, true);
        TensorRef mix = randt({4, 3}, 1.0, false);
        auto f = [&] { return sum(mul(linear_sample(x, pos), mix)); };
        track("linear_sample/x", grad_check(f, x));
        track("linear_sample/pos", grad_check(f, pos));
    }
    {  // softmax
        TensorRef x = randt({2, 6}, 2.0, true);
        TensorRef mix = randt({2, 6}, 1.0, false);
        track("softmax", grad_check([&] { return sum(mul(softmax_rows(x), mix)); }, x));
    }
    {  // self attention
        ParamRegistry reg;
        Init init(reg, 5);
        MultiHeadSelfAttention sa(init, "sa", 8, 2);
        TensorRef content = randt({4, 8}, 0.5, true);
        TensorRef pos = randt({4, 8}, 0.5, false);
        TensorRef mix = randt({4, 8}, 1.0, false);
        auto f = [&] { return sum(mul(sa.forward(content, pos), mix)); };
        track("self_attn/content", grad_check(f, content));
        track("self_attn/q_proj", grad_check(f, reg.find("sa.q_proj.weight")->tensor));
        track("self_attn/out_proj", grad_check(f, reg.find("sa.out_proj.weight")->tensor));
    }
    {  // deformable attention
        ParamRegistry reg;
        Init init(reg, 6);
        DeformableAttention da(init, "da", DeformAttnConfig{2, 2, 8}, RefMode::Interval);
        TensorRef z = randt({3, 8}, 0.5, true);
        TensorRef x = randt({7, 8}, 0.5, true);
        TensorRef ref =
            make_tensor({3, 2}, std::vector<double>{0.3, 0.2, 0.55, 0.15, 0.7, 0.25}, true);
        TensorRef mix = randt({3, 8}, 1.0, false);
        auto f = [&] { return sum(mul(da.forward(z, ref, x), mix)); };
        track("deform_attn/z", grad_check(f, z));
        track("deform_attn/x", grad_check(f, x));
        track("deform_attn/ref", grad_check(f, ref));
        track("deform_attn/offsets", grad_check(f, reg.find("da.offset.bias")->tensor));
    }
    double decoder_worst = 0;
    {  // one full decoder layer through the model; learned queries keep the
       // detached top-k selection out of the differentiated path, randomized
       // heads spread positions away from ties and grid knots
        ModelConfig cfg;
        cfg.dim = 16;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.num_queries = 4;
        cfg.heads = 2;
        cfg.points = 2;
        cfg.num_classes = 2;
        cfg.ffn_mult = 2;
        cfg.seed = 31;
        cfg.align = false;
        cfg.init = InitMode::Learned;
        DualDetrModel model(cfg);
        Rng wr(6);
        for (auto& p : model.params().all())
            if (p.name.find("reg.fc2") != std::string::npos ||
                p.name.find("cls.weight") != std::string::npos)
                for (auto& v : p.tensor->val) v = wr.normal();
        TensorRef features = randt({10, 16}, 0.5, true);
        std::vector<double> mix;
        auto f = [&] {
            ModelForward fwd = model.forward(features);
            const DetectionSet& det = fwd.layer_outputs.back();
            if (mix.empty()) {
                Rng mr(3);
                mix.resize(det.scores->val.size());
                for (auto& e : mix) e = mr.normal();
            }
            return add(sum(mul(det.scores, make_tensor(det.scores->shape, mix))),
                       add(sum(det.intervals), sum(det.boundary_intervals)));
        };
        decoder_worst = std::max(decoder_worst, grad_check(f, features));
        for (const char* name :
             {"decoder.layer0.instance.cross_attn.offset.bias",
              "decoder.layer0.boundary.reg.fc2.bias", "decoder.layer0.instance.ln1.gamma",
              "decoder.layer0.cls.weight"}) {
            decoder_worst =
                std::max(decoder_worst, grad_check(f, model.params().find(name)->tensor));
        }
        track("decoder_layer", decoder_worst);
    }
    double loss_err = 0;
    {  // total_loss micro-instance (2 queries, 1 ground truth)
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
                for (auto& v : p.tensor->val) v = wr.normal() * 0.5;
        TensorRef features = randt({8, 8}, 0.5, true);
        GtSet gts;
        gts.intervals = {{0.25, 0.65}};
        gts.classes = {1};
        auto f = [&] {
            ModelForward fwd = model.forward(features);
            return total_loss(fwd.layer_outputs, fwd.encoder_detections, gts).first;
        };
        loss_err = std::max(loss_err, grad_check(f, features));
        for (const char* name : {"decoder.layer0.cls.weight", "encoder.dense.reg.fc1.bias",
                                 "decoder.layer0.boundary.cross_attn.value_proj.weight"}) {
            loss_err = std::max(loss_err, grad_check(f, model.params().find(name)->tensor));
        }
    }

    double dt = seconds_since(t0);
    bool pass = worst < 1e-4 && loss_err < 1e-3 && dt < 120.0;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "worst op/layer error %.3g (%s), loss-path error %.3g, %.1f s", worst,
                  worst_name.c_str(), loss_err, dt);
    report(2, "gradient suite vs central differences", pass, buf);
}

// ---------------------------------------------------------------- criterion 3

void refinement_fixed_point() {
    Rng rng(9);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        double c = rng.uniform(0.05, 0.95);
        double d = rng.uniform(0.0, std::min(2 * c, 2 * (1 - c)));
        double s = c - d / 2, e = c + d / 2;
        RefinedPositions rp = mutual_refine_positions(
            make_tensor({1, 2}, std::vector<double>{c, d}),
            make_tensor({1, 1}, std::vector<double>{s}),
            make_tensor({1, 1}, std::vector<double>{e}), RefineMode::Parallel);
        worst = std::max({worst, std::fabs(rp.i_pos->val[0] - c), std::fabs(rp.i_pos->val[1] - d),
                          std::fabs(rp.s_pos->val[0] - s), std::fabs(rp.e_pos->val[0] - e)});
    }
    RefinedPositions hand = mutual_refine_positions(
        make_tensor({1, 2}, std::vector<double>{0.5, 0.4}),
        make_tensor({1, 1}, std::vector<double>{0.2}),
        make_tensor({1, 1}, std::vector<double>{0.7}), RefineMode::Parallel);
    double hand_err =
        std::max({std::fabs(hand.i_pos->val[0] - 0.475), std::fabs(hand.i_pos->val[1] - 0.45),
                  std::fabs(hand.s_pos->val[0] - 0.25), std::fabs(hand.e_pos->val[0] - 0.7)});
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "1000 consistent states drift %.3g, hand-derived case error %.3g", worst,
                  hand_err);
    report(3, "mutual refinement fixed point", worst <= 1e-12 && hand_err <= 1e-12, buf);
}

// ---------------------------------------------------------------- criterion 4

void position_safety() {
    int violations = 0;
    for (int pass = 0; pass < 100; ++pass) {
        ModelConfig cfg;
        cfg.dim = 16;
        cfg.enc_layers = 1;
        cfg.dec_layers = 3;
        cfg.num_queries = 6;
        cfg.heads = 2;
        cfg.points = 2;
        cfg.num_classes = 3;
        cfg.ffn_mult = 2;
        cfg.seed = 1000 + static_cast<uint64_t>(pass);
        DualDetrModel model(cfg);
        // randomize the zero-initialized heads so position updates are live
        Rng wr(500 + static_cast<uint64_t>(pass));
        for (auto& p : model.params().all())
            if (p.name.find("reg.fc2") != std::string::npos)
                for (auto& v : p.tensor->val) v = wr.normal() * 2.0;
        std::vector<double> fv(12 * 16);
        for (auto& e : fv) e = wr.normal() * 2.0;
        ModelForward fwd = model.forward(make_tensor({12, 16}, fv));
        for (const auto& det : fwd.layer_outputs) {
            for (double v : det.intervals->val)
                if (v < 0.0 || v > 1.0) ++violations;
            for (double v : det.boundary_intervals->val)
                if (v < 0.0 || v > 1.0) ++violations;
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d violations over 100 random passes", violations);
    report(4, "positions stay in [0,1] after every layer", violations == 0, buf);
}

// ---------------------------------------------------------------- criterion 5

void metric_oracle() {
    Rng rng(123);
    int mismatches = 0;
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int num_classes = 1 + static_cast<int>(rng.uniform_int(0, 2));
        int num_videos = 1 + static_cast<int>(rng.uniform_int(0, 4));
        PredictionsByVideo preds;
        AnnotationsByVideo gts;
        std::map<std::string, double> durations;
        bool any_gt = false;
        for (int v = 0; v < num_videos; ++v) {
            std::string vid = "v" + std::to_string(v);
            double dur = rng.uniform(4, 12);
            durations[vid] = dur;
            int np = static_cast<int>(rng.uniform_int(0, 8));
            for (int i = 0; i < np; ++i) {
                double s = rng.uniform(0, dur - 0.5);
                Detection d;
                d.interval = {s, s + rng.uniform(0.2, dur - s)};
                d.scores.resize(static_cast<size_t>(num_classes));
                for (auto& sc : d.scores)
                    sc = rng.uniform(0, 1) < 0.2 ? 0.0 : std::round(rng.uniform(0, 1) * 4) / 4.0;
                preds[vid].push_back(d);
            }
            int ng = static_cast<int>(rng.uniform_int(0, 4));
            for (int i = 0; i < ng; ++i) {
                double s = rng.uniform(0, dur - 0.5);
                gts[vid].push_back({s, s + rng.uniform(0.2, dur - s),
                                    static_cast<int>(rng.uniform_int(0, num_classes - 1))});
                any_gt = true;
            }
        }
        if (!any_gt) gts["v0"].push_back({0.5, 1.5, 0});

        EvalReport rep = det_map(preds, gts, num_classes);
        double ref = oracles::reference_det_map_avg(preds, gts, num_classes);
        double seg = seg_map(preds, gts, durations, num_classes, 2.0);
        double seg_ref = oracles::reference_seg_map(preds, gts, durations, num_classes, 2.0);
        double diff = std::max(std::fabs(rep.average_map - ref), std::fabs(seg - seg_ref));
        worst = std::max(worst, diff);
        if (diff != 0.0) ++mismatches;
    }

    // worked case: one prediction at tiou 0.55 of the only ground truth
    PredictionsByVideo preds{{"v", {Detection{{0.0, 1.0}, {0.9}}}}};
    AnnotationsByVideo gts{{"v", {{0.45, 1.0, 0}}}};
    double avg = det_map(preds, gts, 1).average_map;
    bool worked = std::fabs(avg - 5.0 / 9.0) <= 1e-9;

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "200 micro-instances, %d mismatches (max diff %.3g); worked case avg %.9f",
                  mismatches, worst, avg);
    report(5, "metrics equal brute-force references", mismatches == 0 && worked, buf);
}

// ---------------------------------------------------------------- criterion 6

void loss_weight_conformance() {
    RunConfig cfg;
    bool weights_ok = cfg.cost_w.cls == 6 && cfg.cost_w.iou == 2 && cfg.cost_w.l1 == 5 &&
                      cfg.loss_w.cls == 2 && cfg.loss_w.iou == 2 && cfg.loss_w.l1 == 5;
    std::string echo = cfg.echo();
    bool echoed = echo.find("cost_cls = 6") != std::string::npos &&
                  echo.find("cost_iou = 2") != std::string::npos &&
                  echo.find("cost_l1 = 5") != std::string::npos &&
                  echo.find("loss_cls = 2") != std::string::npos &&
                  echo.find("loss_iou = 2") != std::string::npos &&
                  echo.find("loss_l1 = 5") != std::string::npos;

    double pos = focal_term(0.5, true);
    double neg = focal_term(0.5, false);
    bool focal_ok = std::fabs(pos - 0.04332) <= 1e-5 && std::fabs(neg - 0.12996) <= 1e-5;

    // the weights drive the breakdown identity
    DetectionSet det;
    det.intervals = make_tensor({2, 2}, std::vector<double>{0.1, 0.3, 0.5, 0.9});
    det.scores = make_tensor({2, 1}, std::vector<double>{0.5, 0.5});
    GtSet gt;
    gt.intervals = {{0.15, 0.35}};
    gt.classes = {0};
    LossTerms terms;
    double total = detection_set_loss(det, gt, cfg.cost_w, cfg.loss_w, cfg.focal, &terms)->item();
    bool identity = std::fabs(total - (2 * terms.cls + 2 * terms.iou + 5 * terms.l1)) < 1e-12;

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "defaults (6,2,5)/(2,2,5)=%s echoed=%s focal(0.5)=%.5f/%.5f identity=%s",
                  weights_ok ? "yes" : "no", echoed ? "yes" : "no", pos, neg,
                  identity ? "yes" : "no");
    report(6, "cost and loss weights conform", weights_ok && echoed && focal_ok && identity, buf);
}

// ------------------------------------------------------- criteria 7 through 9

// Recipe frozen from the calibration runs: single-window batches and a
// 4e-4 learning rate converge well within the 15-epoch budget.
std::string tiny_task_config(uint64_t seed, int videos, int epochs) {
    std::ostringstream os;
    os << "dim = 64\nenc_layers = 2\ndec_layers = 2\nnum_queries = 20\n"
          "heads = 4\npoints = 2\nnum_classes = 3\nwindow = 128\n"
          "synth_videos = " << videos << "\nsynth_length = 128\n"
          "synth_overlap_level = 2\nsynth_noise_sigma = 0.1\n"
          "epochs = " << epochs << "\nbatch_size = 1\nlr = 4e-4\nlr_drop_epochs = 3\n"
          "seed = " << seed << "\n";
    return os.str();
}

struct TrainedRun {
    double first_loss = 0;
    double final_loss = 0;
    EvalReport holdout;
    double seconds = 0;
};

TrainedRun run_tiny_task(uint64_t seed, int videos, int epochs, bool eval_holdout) {
    auto t0 = Clock::now();
    RunConfig cfg = RunConfig::from_text(tiny_task_config(seed, videos, epochs));
    auto train_videos = synth_generate(cfg.synth);
    auto windows = build_training_windows(train_videos, cfg);
    DualDetrModel model(cfg.model);
    TrainResult result = train(model, windows, cfg);

    TrainedRun out;
    out.first_loss = result.epochs.front().total;
    out.final_loss = result.epochs.back().total;

    if (eval_holdout) {
        SynthParams holdout = cfg.synth;
        holdout.video_offset = 1000000;  // same signatures, disjoint video stream
        holdout.num_videos = 40;
        auto holdout_videos = synth_generate(holdout);
        // evaluation uses the exponential-moving-average weights
        for (size_t i = 0; i < model.params().all().size(); ++i)
            model.params().all()[i].tensor->val = result.ema_values[i];
        out.holdout = evaluate_model(model, holdout_videos, cfg);
    }
    out.seconds = seconds_since(t0);
    return out;
}

void end_to_end_convergence() {
    TrainedRun run = run_tiny_task(42, 200, 15, true);
    double ratio = run.final_loss / run.first_loss;
    double map_at_05 = run.holdout.per_threshold_map[4];
    bool pass = ratio <= 0.3 && run.holdout.average_map >= 0.5 && map_at_05 >= 0.7;
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "loss %.4f -> %.4f (ratio %.3f <= 0.3), holdout avg det-mAP %.4f >= 0.5, "
                  "det-mAP@0.5 %.4f >= 0.7, seg-mAP %.4f, %.0f s",
                  run.first_loss, run.final_loss, ratio, run.holdout.average_map, map_at_05,
                  run.holdout.seg_map, run.seconds);
    report(7, "synthetic end-to-end convergence", pass, buf);
}

void ablation_direction() {
    // informational: dual-level vs instance-only ordering over 3 seeds at the
    // full training budget of the same task
    double dual_sum = 0, inst_sum = 0;
    char detail[256];
    std::string per_seed;
    for (uint64_t seed : {42ULL, 43ULL, 44ULL}) {
        RunConfig dual_cfg = RunConfig::from_text(tiny_task_config(seed, 200, 15));
        RunConfig inst_cfg = RunConfig::from_text(tiny_task_config(seed, 200, 15) +
                                                  "level = instance\nrefine = off\n");
        for (RunConfig* cfg : {&dual_cfg, &inst_cfg}) {
            auto videos = synth_generate(cfg->synth);
            auto windows = build_training_windows(videos, *cfg);
            DualDetrModel model(cfg->model);
            TrainResult result = train(model, windows, *cfg);
            SynthParams holdout = cfg->synth;
            holdout.video_offset = 1000000;
            holdout.num_videos = 30;
            for (size_t i = 0; i < model.params().all().size(); ++i)
                model.params().all()[i].tensor->val = result.ema_values[i];
            double avg = evaluate_model(model, synth_generate(holdout), *cfg).average_map;
            if (cfg == &dual_cfg)
                dual_sum += avg;
            else
                inst_sum += avg;
            per_seed += (cfg == &dual_cfg ? " dual=" : " inst=") + std::to_string(avg);
        }
    }
    bool ordered = dual_sum / 3 >= inst_sum / 3;
    std::snprintf(detail, sizeof detail,
                  "mean det-mAP over 3 seeds: dual %.4f vs instance-only %.4f (%s)%s",
                  dual_sum / 3, inst_sum / 3, ordered ? "dual ahead" : "inverted",
                  per_seed.c_str());
    report(8, "dual >= instance-only (informational, non-blocking)", ordered, detail,
           /*blocking=*/false);
}

void determinism() {
    RunConfig cfg = RunConfig::from_text(tiny_task_config(42, 12, 1));
    auto videos = synth_generate(cfg.synth);
    auto windows = build_training_windows(videos, cfg);
    DualDetrModel m1(cfg.model), m2(cfg.model);
    double l1 = train(m1, windows, cfg).epochs[0].total;
    double l2 = train(m2, windows, cfg).epochs[0].total;
    bool loss_same = std::memcmp(&l1, &l2, sizeof(double)) == 0;

    auto a = synth_generate(cfg.synth);
    auto b = synth_generate(cfg.synth);
    bool synth_same = a.size() == b.size();
    for (size_t i = 0; synth_same && i < a.size(); ++i)
        synth_same = a[i].features.values == b[i].features.values &&
                     a[i].annotations.size() == b[i].annotations.size();

    char buf[160];
    std::snprintf(buf, sizeof buf, "first-epoch loss %.17g %s, synthetic streams %s", l1,
                  loss_same ? "bitwise equal" : "DIFFERS", synth_same ? "identical" : "DIFFER");
    report(9, "seeded runs are bit-deterministic", loss_same && synth_same, buf);
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    auto want = [&](int id) { return selected.empty() || selected.count(id); };

    if (want(1)) matcher_oracle();
    if (want(2)) gradient_suite();
    if (want(3)) refinement_fixed_point();
    if (want(4)) position_safety();
    if (want(5)) metric_oracle();
    if (want(6)) loss_weight_conformance();
    if (want(7)) end_to_end_convergence();
    if (want(8)) ablation_direction();
    if (want(9)) determinism();

    if (g_failures) {
        std::printf("%d blocking criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all blocking criteria passed\n");
    return 0;
}
