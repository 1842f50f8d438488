#include "dualdetr/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dualdetr {

namespace {

uint64_t file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a(raw.data(), raw.size());
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<VideoRecord>& videos,
                  const std::string& config_echo, bool overwrite) {
    fs::path root(dir);
    if (fs::exists(root) && !fs::is_empty(root) && !overwrite)
        throw ConfigError("output directory " + dir + " is not empty (pass --overwrite to replace)");
    fs::create_directories(root / "features");

    int num_classes = 0;
    for (const auto& v : videos)
        for (const auto& a : v.annotations) num_classes = std::max(num_classes, a.class_id + 1);
    save_vocabulary((root / "classes.txt").string(), std::max(1, num_classes));
    save_annotations((root / "annotations.csv").string(), videos);

    std::ofstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    {
        std::istringstream ss(config_echo);
        std::string line;
        while (std::getline(ss, line)) manifest << "# " << line << "\n";
    }
    char buf[64];
    for (const auto& v : videos) {
        std::string rel = "features/" + v.id + ".feat";
        std::string path = (root / rel).string();
        save_features(path, v.features);
        std::snprintf(buf, sizeof buf, " %d %d %.10g %016llx\n", v.features.t, v.features.d,
                      v.features.stride_sec,
                      static_cast<unsigned long long>(file_digest(path)));
        manifest << v.id << " " << rel << buf;
    }
}

std::vector<VideoRecord> load_dataset(const std::string& dir, int num_classes) {
    fs::path root(dir);
    std::ifstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot open manifest in " + dir);

    auto vocab = load_vocabulary((root / "classes.txt").string());
    if (num_classes > 0 && static_cast<int>(vocab.size()) != num_classes)
        throw ConfigError("dataset has " + std::to_string(vocab.size()) +
                          " classes, config expects " + std::to_string(num_classes));
    auto annos =
        load_annotations((root / "annotations.csv").string(), static_cast<int>(vocab.size()));

    std::vector<VideoRecord> videos;
    std::string line;
    int line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string id, rel, digest;
        int t, d;
        double stride;
        if (!(ss >> id >> rel >> t >> d >> stride >> digest))
            throw DataError("manifest line " + std::to_string(line_no) + ": expected 6 fields");
        VideoRecord rec;
        rec.id = id;
        rec.features = load_features((root / rel).string());
        if (rec.features.t != t || rec.features.d != d)
            throw DataError("manifest shape disagrees with feature file for " + id);
        rec.features.stride_sec = stride;
        rec.duration_sec = t * stride;
        auto it = annos.find(id);
        if (it != annos.end()) rec.annotations = it->second;
        rec.validate(static_cast<int>(vocab.size()));
        videos.push_back(std::move(rec));
    }
    if (videos.empty()) throw DataError("dataset manifest lists no videos");
    return videos;
}

InferenceGuard::InferenceGuard(DualDetrModel& model) : model_(model) {
    for (auto& p : model_.params().all()) {
        saved_.push_back(p.tensor->requires_grad);
        p.tensor->requires_grad = false;
    }
}

InferenceGuard::~InferenceGuard() {
    auto& params = model_.params().all();
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor->requires_grad = saved_[i];
}

std::vector<Window> build_training_windows(const std::vector<VideoRecord>& videos,
                                           const RunConfig& cfg) {
    std::vector<Window> windows;
    for (const auto& v : videos) {
        auto w = make_windows(v, cfg.window, cfg.train_stride_ratio);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    return windows;
}

PredictionsByVideo predict_videos(DualDetrModel& model, const std::vector<VideoRecord>& videos,
                                  const RunConfig& cfg) {
    InferenceGuard guard(model);
    PredictionsByVideo out;
    int nc = model.config().num_classes;
    for (const auto& v : videos) {
        std::vector<WindowPredictions> wps;
        for (const auto& win : make_windows(v, cfg.window, cfg.infer_stride_ratio)) {
            TensorRef features = make_tensor({win.length, model.config().dim}, win.features);
            ModelForward fwd = model.forward(features, win.valid);
            const DetectionSet& det = fwd.layer_outputs.back();
            WindowPredictions wp;
            wp.offset_sec = win.offset_sec;
            wp.span_sec = win.span_sec;
            int n = det.count();
            wp.detections.reserve(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                Detection d;
                d.interval.start = det.intervals->val[static_cast<size_t>(i) * 2];
                d.interval.end = det.intervals->val[static_cast<size_t>(i) * 2 + 1];
                d.scores.assign(det.scores->val.begin() + static_cast<size_t>(i) * nc,
                                det.scores->val.begin() + static_cast<size_t>(i + 1) * nc);
                wp.detections.push_back(std::move(d));
            }
            wps.push_back(std::move(wp));
        }
        out[v.id] = assemble_predictions(wps);
    }
    return out;
}

AnnotationsByVideo annotations_of(const std::vector<VideoRecord>& videos) {
    AnnotationsByVideo out;
    for (const auto& v : videos) out[v.id] = v.annotations;
    return out;
}

EvalReport evaluate_model(DualDetrModel& model, const std::vector<VideoRecord>& videos,
                          const RunConfig& cfg) {
    PredictionsByVideo preds = predict_videos(model, videos, cfg);
    AnnotationsByVideo gts = annotations_of(videos);
    std::map<std::string, double> durations;
    for (const auto& v : videos) durations[v.id] = v.duration_sec;
    EvalReport rep = det_map(preds, gts, model.config().num_classes);
    rep.seg_map = seg_map(preds, gts, durations, model.config().num_classes, cfg.frame_rate);
    return rep;
}

}  // namespace dualdetr
