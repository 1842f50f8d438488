// Command-line entry points: synth / train / eval / infer.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dualdetr/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dualdetr;

namespace {

void refuse_nonempty(const std::string& dir, bool overwrite) {
    if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir) && !overwrite)
        throw ConfigError("output directory " + dir + " is not empty (pass --overwrite to replace)");
    fs::create_directories(dir);
}

RunConfig load_run_config(const std::string& config_path, std::optional<uint64_t> seed_override) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.model.seed = *seed_override;
        cfg.synth.seed = *seed_override;
    }
    cfg.validate();
    return cfg;
}

std::vector<VideoRecord> load_or_synthesize(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_dataset(cfg.data_dir, cfg.model.num_classes);
    std::cout << "no data_dir set; generating " << cfg.synth.num_videos
              << " synthetic videos (seed " << cfg.synth.seed << ")\n";
    return synth_generate(cfg.synth);
}

int cmd_synth(const std::string& config_path, std::optional<uint64_t> seed,
              const std::string& out_dir, bool overwrite) {
    RunConfig cfg = load_run_config(config_path, seed);
    auto videos = synth_generate(cfg.synth);
    save_dataset(out_dir, videos, cfg.echo(), overwrite);
    std::cout << "wrote " << videos.size() << " videos to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
              const std::string& out_dir, bool overwrite) {
    RunConfig cfg = load_run_config(config_path, seed);
    refuse_nonempty(out_dir, overwrite);

    auto videos = load_or_synthesize(cfg);
    auto windows = build_training_windows(videos, cfg);
    std::cout << "training on " << windows.size() << " windows from " << videos.size()
              << " videos\n";

    DualDetrModel model(cfg.model);
    std::ofstream log(fs::path(out_dir) / "epoch_log.txt");
    {
        std::istringstream ss(cfg.echo());
        std::string line;
        while (std::getline(ss, line)) log << "# " << line << "\n";
    }
    log << "# epoch cls iou l1 total windows dropped\n";
    TrainResult result = train(model, windows, cfg, [&](const EpochStats& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f %d %d", e.epoch, e.cls, e.iou, e.l1,
                      e.total, e.windows, e.dropped);
        log << buf << "\n";
        log.flush();
        std::cout << "epoch " << e.epoch << " loss " << e.total << "\n";
    });

    std::string ckpt = (fs::path(out_dir) / "checkpoint.ddtr").string();
    save_checkpoint(ckpt, model.params(), cfg.echo());
    std::cout << "wrote " << ckpt << "\n";
    if (cfg.ema) {
        std::string ema_ckpt = (fs::path(out_dir) / "checkpoint_ema.ddtr").string();
        save_checkpoint_with_values(ema_ckpt, model.params(), result.ema_values, cfg.echo());
        std::cout << "wrote " << ema_ckpt << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_dir,
             bool overwrite) {
    LoadedCheckpoint ckpt = read_checkpoint(ckpt_path);
    RunConfig cfg = RunConfig::from_text(ckpt.config_echo);
    refuse_nonempty(out_dir, overwrite);

    DualDetrModel model(cfg.model);
    apply_checkpoint(ckpt, model.params());

    std::vector<VideoRecord> videos;
    if (!data_dir.empty())
        videos = load_dataset(data_dir, cfg.model.num_classes);
    else
        videos = load_or_synthesize(cfg);

    EvalReport rep = evaluate_model(model, videos, cfg);
    write_report_txt((fs::path(out_dir) / "report.txt").string(), rep, cfg.echo());
    write_report_jsonl((fs::path(out_dir) / "report.jsonl").string(), rep, cfg.echo());
    char buf[64];
    std::snprintf(buf, sizeof buf, "det_map_avg = %.4f, seg_map = %.4f", rep.average_map,
                  rep.seg_map);
    std::cout << buf << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& features_path,
              const std::string& out_dir, bool overwrite) {
    LoadedCheckpoint ckpt = read_checkpoint(ckpt_path);
    RunConfig cfg = RunConfig::from_text(ckpt.config_echo);
    DualDetrModel model(cfg.model);
    apply_checkpoint(ckpt, model.params());

    VideoRecord video;
    video.id = fs::path(features_path).stem().string();
    video.features = load_features(features_path);
    video.features.stride_sec = cfg.synth.stride_sec;
    video.duration_sec = video.features.t * video.features.stride_sec;

    PredictionsByVideo preds = predict_videos(model, {video}, cfg);
    const auto& dets = preds[video.id];

    struct Row {
        double start, end, score;
        int cls;
    };
    std::vector<Row> rows;
    for (const auto& d : dets)
        for (size_t c = 0; c < d.scores.size(); ++c)
            rows.push_back({d.interval.start, d.interval.end, d.scores[c], static_cast<int>(c)});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.score > b.score; });

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_dir.empty()) {
        refuse_nonempty(out_dir, overwrite);
        file.open(fs::path(out_dir) / "detections.csv");
        if (!file) throw IoError("cannot write detections in " + out_dir);
        os = &file;
    }
    {
        std::istringstream ss(cfg.echo());
        std::string line;
        while (std::getline(ss, line)) *os << "# " << line << "\n";
    }
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d,%.6f\n", r.start, r.end, r.cls, r.score);
        *os << buf;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-level query-based temporal action detector"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, data_dir, features_path;
    bool overwrite = false;
    std::optional<uint64_t> seed;

    auto add_common = [&](CLI::App* cmd, bool with_config) {
        if (with_config) cmd->add_option("--config", config_path, "run configuration file");
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_flag("--overwrite", overwrite, "replace non-empty output directories");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, true);
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, true);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd, false);
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory (defaults to the config data)");
    CLI::App* infer_cmd = app.add_subcommand("infer", "run detection on one feature file");
    infer_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    infer_cmd->add_option("--features", features_path, "binary feature file")->required();
    infer_cmd->add_option("--out", out_dir, "output directory (stdout when omitted)");
    infer_cmd->add_flag("--overwrite", overwrite, "replace non-empty output directories");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            if (out_dir.empty()) throw ConfigError("synth requires --out");
            return cmd_synth(config_path, seed, out_dir, overwrite);
        }
        if (train_cmd->parsed()) {
            if (out_dir.empty()) throw ConfigError("train requires --out");
            return cmd_train(config_path, seed, out_dir, overwrite);
        }
        if (eval_cmd->parsed()) {
            if (out_dir.empty()) throw ConfigError("eval requires --out");
            return cmd_eval(ckpt_path, data_dir, out_dir, overwrite);
        }
        if (infer_cmd->parsed()) return cmd_infer(ckpt_path, features_path, out_dir, overwrite);
    } catch (const ConfigError& e) {
        std::cerr << "config-error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io-error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data-error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric-error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
