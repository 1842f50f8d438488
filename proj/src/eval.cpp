#include "dualdetr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace dualdetr {

std::vector<Detection> assemble_predictions(const std::vector<WindowPredictions>& windows) {
    std::vector<Detection> out;
    for (const auto& w : windows) {
        for (const auto& d : w.detections) {
            Detection g = d;
            g.interval.start = w.offset_sec + d.interval.start * w.span_sec;
            g.interval.end = w.offset_sec + d.interval.end * w.span_sec;
            out.push_back(std::move(g));
        }
    }
    return out;
}

std::vector<double> default_tiou_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
    return t;
}

namespace {

struct RankedEntry {
    double score;
    const std::string* video;
    size_t pred_index;
    const Detection* det;
};

// all-point interpolated average precision from a ranked TP/FP sequence
double interpolated_ap(const std::vector<char>& is_tp, int num_positives) {
    if (num_positives == 0) return 0.0;
    size_t n = is_tp.size();
    std::vector<double> precision(n);
    int tp = 0;
    for (size_t k = 0; k < n; ++k) {
        if (is_tp[k]) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    }
    // running max from the right
    for (size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0;
    for (size_t k = 0; k < n; ++k)
        if (is_tp[k]) ap += precision[k];  // each TP advances recall by 1/num_positives
    return ap / num_positives;
}

}  // namespace

EvalReport det_map(const PredictionsByVideo& preds, const AnnotationsByVideo& gts,
                   int num_classes, const std::vector<double>& thresholds_in) {
    EvalReport rep;
    rep.thresholds = thresholds_in.empty() ? default_tiou_thresholds() : thresholds_in;

    size_t total_gt = 0;
    for (const auto& [id, list] : gts) total_gt += list.size();
    if (total_gt == 0) throw DataError("det_map: no ground truth instances anywhere");

    // per class: ground truths grouped by video, and one global ranking
    rep.per_class_ap.assign(rep.thresholds.size(), std::vector<double>(num_classes, -1.0));
    rep.per_threshold_map.assign(rep.thresholds.size(), 0.0);

    for (int c = 0; c < num_classes; ++c) {
        std::map<std::string, std::vector<Interval>> class_gts;
        int num_pos = 0;
        for (const auto& [id, list] : gts)
            for (const auto& a : list)
                if (a.class_id == c) {
                    class_gts[id].push_back({a.start_sec, a.end_sec});
                    ++num_pos;
                }
        if (num_pos == 0) continue;  // class absent from ground truth

        std::vector<RankedEntry> entries;
        for (const auto& [id, list] : preds)
            for (size_t i = 0; i < list.size(); ++i)
                entries.push_back({list[i].scores[static_cast<size_t>(c)], &id, i, &list[i]});
        std::stable_sort(entries.begin(), entries.end(),
                         [](const RankedEntry& a, const RankedEntry& b) {
                             if (a.score != b.score) return a.score > b.score;
                             if (*a.video != *b.video) return *a.video < *b.video;
                             return a.pred_index < b.pred_index;
                         });

        for (size_t ti = 0; ti < rep.thresholds.size(); ++ti) {
            double tau = rep.thresholds[ti];
            std::map<std::string, std::vector<char>> used;
            for (const auto& [id, list] : class_gts)
                used[id].assign(list.size(), 0);
            std::vector<char> is_tp(entries.size(), 0);
            for (size_t k = 0; k < entries.size(); ++k) {
                auto it = class_gts.find(*entries[k].video);
                if (it == class_gts.end()) continue;
                const auto& candidates = it->second;
                auto& taken = used[*entries[k].video];
                int best = -1;
                double best_iou = 0;
                for (size_t j = 0; j < candidates.size(); ++j) {
                    if (taken[j]) continue;
                    double v = tiou(entries[k].det->interval, candidates[j]);
                    if (v >= tau && v > best_iou) {
                        best_iou = v;
                        best = static_cast<int>(j);
                    }
                }
                if (best >= 0) {
                    taken[static_cast<size_t>(best)] = 1;
                    is_tp[k] = 1;
                }
            }
            rep.per_class_ap[ti][static_cast<size_t>(c)] = interpolated_ap(is_tp, num_pos);
        }
    }

    for (size_t ti = 0; ti < rep.thresholds.size(); ++ti) {
        double sum = 0;
        int n = 0;
        for (double ap : rep.per_class_ap[ti])
            if (ap >= 0) {
                sum += ap;
                ++n;
            }
        rep.per_threshold_map[ti] = n ? sum / n : 0.0;
        rep.average_map += rep.per_threshold_map[ti];
    }
    rep.average_map /= static_cast<double>(rep.thresholds.size());
    return rep;
}

double seg_map(const PredictionsByVideo& preds, const AnnotationsByVideo& gts,
               const std::map<std::string, double>& durations_sec, int num_classes,
               double frame_rate) {
    struct Frame {
        double score;
        char positive;
    };
    // frames pooled across videos, one pool per class
    std::vector<std::vector<Frame>> pools(static_cast<size_t>(num_classes));
    std::vector<int> num_pos(static_cast<size_t>(num_classes), 0);

    for (const auto& [id, duration] : durations_sec) {
        int n_frames = static_cast<int>(std::floor(duration * frame_rate));
        if (n_frames <= 0) {
            std::cerr << "warning: skipping zero-length video " << id << "\n";
            continue;
        }
        auto git = gts.find(id);
        auto pit = preds.find(id);
        for (int f = 0; f < n_frames; ++f) {
            double t = (f + 0.5) / frame_rate;
            for (int c = 0; c < num_classes; ++c) {
                char pos = 0;
                if (git != gts.end())
                    for (const auto& a : git->second)
                        if (a.class_id == c && t >= a.start_sec && t < a.end_sec) pos = 1;
                double score = 0;
                if (pit != preds.end())
                    for (const auto& d : pit->second)
                        if (t >= d.interval.start && t <= d.interval.end)
                            score = std::max(score, d.scores[static_cast<size_t>(c)]);
                if (pos) ++num_pos[static_cast<size_t>(c)];
                if (pos || score > 0)
                    pools[static_cast<size_t>(c)].push_back({score, pos});
            }
        }
    }

    double sum = 0;
    int classes_counted = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (num_pos[static_cast<size_t>(c)] == 0) continue;
        auto& pool = pools[static_cast<size_t>(c)];
        std::stable_sort(pool.begin(), pool.end(),
                         [](const Frame& a, const Frame& b) { return a.score > b.score; });
        // frames with zero score are unretrieved: they contribute positives
        // to the recall denominator but never appear in the ranking
        double ap = 0;
        int tp = 0, retrieved = 0;
        for (const auto& f : pool) {
            if (f.score <= 0) break;
            ++retrieved;
            if (f.positive) {
                ++tp;
                ap += static_cast<double>(tp) / retrieved;
            }
        }
        ap /= num_pos[static_cast<size_t>(c)];
        sum += ap;
        ++classes_counted;
    }
    return classes_counted ? sum / classes_counted : 0.0;
}

namespace {
std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}
}  // namespace

void write_report_txt(const std::string& path, const EvalReport& report,
                      const std::string& config_echo) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (size_t i = 0; i < report.thresholds.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "det_map@%.1f", report.thresholds[i]);
        os << key << " = " << fixed4(report.per_threshold_map[i]) << "\n";
    }
    os << "det_map_avg = " << fixed4(report.average_map) << "\n";
    os << "seg_map = " << fixed4(report.seg_map) << "\n";
    os << "\n# config\n";
    std::istringstream ss(config_echo);
    std::string line;
    while (std::getline(ss, line)) os << "# " << line << "\n";
}

void write_report_jsonl(const std::string& path, const EvalReport& report,
                        const std::string& config_echo) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << nlohmann::json{{"record", "config"}, {"text", config_echo}}.dump() << "\n";
    for (size_t i = 0; i < report.thresholds.size(); ++i) {
        os << nlohmann::json{{"record", "det_map"},
                             {"tiou", report.thresholds[i]},
                             {"value", report.per_threshold_map[i]}}
                  .dump()
           << "\n";
        for (size_t c = 0; c < report.per_class_ap[i].size(); ++c) {
            if (report.per_class_ap[i][c] < 0) continue;
            os << nlohmann::json{{"record", "class_ap"},
                                 {"tiou", report.thresholds[i]},
                                 {"class", c},
                                 {"value", report.per_class_ap[i][c]}}
                      .dump()
               << "\n";
        }
    }
    os << nlohmann::json{{"record", "det_map_avg"}, {"value", report.average_map}}.dump() << "\n";
    os << nlohmann::json{{"record", "seg_map"}, {"value", report.seg_map}}.dump() << "\n";
}

}  // namespace dualdetr
