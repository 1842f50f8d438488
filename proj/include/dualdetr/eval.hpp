#pragma once

#include <map>
#include <string>
#include <vector>

#include "dualdetr/data.hpp"

namespace dualdetr {

// One prediction in global seconds with its full per-class score vector.
struct Detection {
    Interval interval;
    std::vector<double> scores;
};

using PredictionsByVideo = std::map<std::string, std::vector<Detection>>;
using AnnotationsByVideo = std::map<std::string, std::vector<ActionInstance>>;

struct WindowPredictions {
    double offset_sec = 0;
    double span_sec = 0;
    std::vector<Detection> detections;  // interval in window-normalized [0,1]
};

// Maps window-normalized detections to global seconds and concatenates all
// windows; no NMS, no deduplication.
std::vector<Detection> assemble_predictions(const std::vector<WindowPredictions>& windows);

struct EvalReport {
    std::vector<double> thresholds;
    std::vector<double> per_threshold_map;
    double average_map = 0;
    // per_class_ap[threshold][class]; -1 marks classes with no ground truth
    std::vector<std::vector<double>> per_class_ap;
    double seg_map = 0;
};

std::vector<double> default_tiou_thresholds();  // 0.1 .. 0.9 step 0.1

// Per class and threshold: score-ranked greedy matching at tiou >= threshold,
// all-point interpolated AP, mean over classes that appear in ground truth.
EvalReport det_map(const PredictionsByVideo& preds, const AnnotationsByVideo& gts,
                   int num_classes, const std::vector<double>& thresholds = {});

// Frame-wise AP after max-pooling sparse detections to dense per-frame
// scores; frames pooled across videos per class.
double seg_map(const PredictionsByVideo& preds, const AnnotationsByVideo& gts,
               const std::map<std::string, double>& durations_sec, int num_classes,
               double frame_rate);

void write_report_txt(const std::string& path, const EvalReport& report,
                      const std::string& config_echo);
void write_report_jsonl(const std::string& path, const EvalReport& report,
                        const std::string& config_echo);

}  // namespace dualdetr
